import pytest
from click.testing import CliRunner

from gridterm.cli import main


def run(*args):
    result = CliRunner().invoke(main, [str(a) for a in args])
    return result


@pytest.fixture(scope="session")
def small_config(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "small.toml"
    p.write_text(
        "seed = 11\n"
        "[generator]\nflows_per_class = 20\n"
        "[autoencoder]\nepochs = 40\n"
        "[classifier.gbt]\nstages = 30\n"
    )
    return p


@pytest.fixture(scope="session")
def small_data(tmp_path_factory, small_config):
    out = tmp_path_factory.mktemp("data")
    r = run("generate", "--config", small_config, "--out", out)
    assert r.exit_code == 0, r.output
    return out / "synth.pcap", out / "synth.labels.tsv", out / "synth.manifest.json"


@pytest.fixture(scope="session")
def small_model(tmp_path_factory, small_config, small_data):
    pcap, labels, _ = small_data
    out = tmp_path_factory.mktemp("model")
    model = out / "model.gtm"
    r = run("train", "--config", small_config, "--pcap", pcap, "--labels", labels, "--model-out", model)
    assert r.exit_code == 0, r.output
    return model, out / "model.gtm.report.json"
