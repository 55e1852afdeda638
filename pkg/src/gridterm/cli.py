"""Command line: generate, train, predict, evaluate, report.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 model error.
Failures print one line to stderr::

    error stage=<stage> kind=<ErrorClass> message=<text>
"""

import csv
import functools
import json
import logging
import sys

import click
from threadpoolctl import threadpool_limits

from . import __version__
from .config import CLASSES, load_config
from .errors import ConfigError, DataError, GridtermError, MissingLabel
from .flows import UNLABELED, FlowKey, LabelMap
from .metrics import evaluate, render_text, write_confusion

log = logging.getLogger("gridterm")


def _fail(stage, kind, message, code):
    message = " ".join(str(message).split())
    click.echo(f"error stage={stage} kind={kind} message={message}", err=True)
    sys.exit(code)


def _guard(stage):
    def deco(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except GridtermError as e:
                _fail(e.stage or stage, type(e).__name__, e, e.exit_code)
            except FileNotFoundError as e:
                _fail(stage, "FileNotFound", f"{e.filename}: {e.strerror}", DataError.exit_code)
            except OSError as e:
                _fail(stage, type(e).__name__, e, DataError.exit_code)
        return run
    return deco


def _setup(config, seed, threads, **overrides):
    cfg = load_config(config)
    if seed is not None:
        cfg.seed = seed
    if threads is not None:
        cfg.threads = threads
    for section, key, value in overrides.get("sets", ()):
        setattr(getattr(cfg, section), key, value)
    return cfg.validate()


def _limits(cfg):
    return threadpool_limits(cfg.threads) if cfg.threads else threadpool_limits(None)


def common(fn):
    fn = click.option("--config", "config", type=click.Path(dir_okay=False), default=None,
                      help="TOML configuration file.")(fn)
    fn = click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None,
                      help="Overrides the config seed.")(fn)
    fn = click.option("--threads", type=click.IntRange(1), default=None,
                      help="Cap on worker threads for numeric kernels.")(fn)
    return fn


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


@click.group()
@click.version_option(__version__, prog_name="gridterm")
@click.option("-v", "--verbose", count=True, help="More logging (-vv for debug).")
def main(verbose):
    """Terminal-type recognition from grid traffic captures."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@main.command()
@common
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--prefix", default="synth", show_default=True)
@click.option("--hard-mode/--easy-mode", default=None, help="Override generator.hard_mode.")
@click.option("--flows-per-class", type=click.IntRange(1), default=None)
@click.option("--long-fraction", type=click.FloatRange(0.0, 1.0), default=None)
@_guard("generate")
def generate(config, seed, threads, out_dir, prefix, hard_mode, flows_per_class, long_fraction):
    """Write a labeled synthetic capture, label map and manifest."""
    from .synthgen import generate_dataset

    sets = [("generator", k, v) for k, v in (("hard_mode", hard_mode), ("flows_per_class", flows_per_class),
                                             ("long_fraction", long_fraction)) if v is not None]
    cfg = _setup(config, seed, threads, sets=sets)
    with _limits(cfg):
        files, doc = generate_dataset(cfg, out_dir, prefix)
    for name in ("pcap", "labels", "manifest"):
        click.echo(f"{name}\t{files[name]}")
    click.echo(f"flows\t{doc['n_flows']}")


@main.command()
@common
@click.option("--pcap", required=True, type=click.Path(dir_okay=False))
@click.option("--labels", required=True, type=click.Path(dir_okay=False), help="ip<TAB>type label map.")
@click.option("--model-out", required=True, type=click.Path(dir_okay=False))
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default=None,
              help="Report JSON (default: <model-out>.report.json).")
@click.option("--classifier", "kind", type=click.Choice(["gbt", "lr", "rf", "adaboost", "nn"]), default=None)
@click.option("--flow-features-only", is_flag=True, default=False,
              help="Ablation: classify on flow statistics only, without the segment encoding.")
@click.option("--export-dir", type=click.Path(file_okay=False), default=None,
              help="Also write feature matrices, segment cluster assignments and the loss curve here.")
@_guard("train")
def train(config, seed, threads, pcap, labels, model_out, report_path, kind, flow_features_only, export_dir):
    """Fit the full pipeline on a labeled capture."""
    from .pipeline import export_tables, load_capture, train_pipeline

    sets = []
    if kind:
        sets.append(("classifier", "kind", kind))
    if flow_features_only:
        sets.append(("classifier", "flow_features_only", True))
    cfg = _setup(config, seed, threads, sets=sets)
    with _limits(cfg):
        capture = load_capture(pcap, cfg, LabelMap.from_file(labels))
        pipelines, report = train_pipeline(capture, cfg)
        pipe = pipelines[cfg.classifier.kind]
        if export_dir:
            export_tables(pipe, capture, export_dir, report)
    pipe.save(model_out)
    report_path = report_path or model_out + ".report.json"
    _write_json(report_path, report)
    m = report["models"][cfg.classifier.kind]["metrics"]
    split = "validation" if "validation" in m else "train"
    click.echo(f"model\t{model_out}")
    click.echo(f"report\t{report_path}")
    click.echo(render_text(_report_from_dict(m[split]), f"{cfg.classifier.kind} {split}"), nl=False)


@main.command(name="predict")
@click.option("--model", "model_path", required=True, type=click.Path(dir_okay=False))
@click.option("--pcap", required=True, type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--labels", type=click.Path(dir_okay=False), default=None,
              help="Optional label map; fills the 'true' column.")
@click.option("--threads", type=click.IntRange(1), default=None)
@_guard("predict")
def predict_cmd(model_path, pcap, out, labels, threads):
    """Apply a trained pipeline to a capture; nothing is refitted."""
    from .pipeline import TrainedPipeline, load_capture, prediction_rows

    pipe = TrainedPipeline.load(model_path)
    cfg = pipe.config
    if threads is not None:
        cfg.threads = threads
    with _limits(cfg):
        capture = load_capture(pcap, cfg, LabelMap.from_file(labels) if labels else None)
        rows = prediction_rows(pipe, capture)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_hash={pipe.config_hash}\n")
        w = csv.writer(fh)
        w.writerow(["flow_id", "true", "predicted", *[f"p_{c}" for c in pipe.classes]])
        for fid, true, pred, *p in rows:
            w.writerow([fid, "" if true == UNLABELED else true, pred, *[repr(v) for v in p]])
    click.echo(f"predictions\t{out}\t{len(rows)} flows")


def read_predictions(path):
    """``(config_hash, [(flow_id, predicted)])`` from a predictions file."""
    rows, h = [], None
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline()
        if first.startswith("# config_hash="):
            h = first.strip().split("=", 1)[1]
        else:
            fh.seek(0)
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"flow_id", "predicted"} <= set(reader.fieldnames):
            raise DataError(f"{path}: expected columns flow_id and predicted")
        for r in reader:
            rows.append((r["flow_id"], r["predicted"]))
    return h, rows


def _key_from_flow_id(flow_id):
    try:
        a, b, proto = flow_id.split("-")
        ip_a, port_a = a.rsplit(":", 1)
        ip_b, port_b = b.rsplit(":", 1)
        return FlowKey.of(ip_a, int(port_a), ip_b, int(port_b), proto)
    except ValueError:
        raise DataError(f"malformed flow id {flow_id!r}") from None


@main.command(name="evaluate")
@click.option("--predictions", required=True, type=click.Path(dir_okay=False))
@click.option("--labels", required=True, type=click.Path(dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Metrics JSON.")
@click.option("--confusion", type=click.Path(dir_okay=False), default=None, help="Confusion matrix CSV.")
@click.option("--literal-accuracy", is_flag=True, default=False,
              help="Accuracy as sum(tp) / sum(tp + fp + fn).")
@_guard("evaluate")
def evaluate_cmd(predictions, labels, out, confusion, literal_accuracy):
    """Score a predictions file against a label map."""
    h, rows = read_predictions(predictions)
    lm = LabelMap.from_file(labels)
    y_true, y_pred = [], []
    for fid, pred in rows:
        label = lm(_key_from_flow_id(fid))
        if label == UNLABELED:
            raise MissingLabel(f"no ground truth for flow {fid}")
        y_true.append(label)
        y_pred.append(pred)
    report = evaluate(y_true, y_pred, CLASSES, literal_accuracy)
    doc = {"config_hash": h, "n_flows": len(rows), **report.to_dict()}
    if out:
        _write_json(out, doc)
    if confusion:
        write_confusion(confusion, report, f"config_hash={h}")
    click.echo(render_text(report), nl=False)


def _report_from_dict(m):
    import numpy as np

    from .metrics import MetricsReport

    classes = tuple(m["classes"])
    per = m["per_class"]
    return MetricsReport(classes, np.array(m["confusion"]), m["accuracy"], m["precision_macro"],
                         m["recall_macro"], m["f1_macro"], np.array([per[c]["tp"] for c in classes]),
                         np.array([per[c]["fp"] for c in classes]), np.array([per[c]["fn"] for c in classes]))


def _pick_metrics(doc, split, model):
    if "models" in doc:  # training report
        models = doc["models"]
        kind = model or next(iter(models))
        if kind not in models:
            raise DataError(f"report has no model {kind!r}; available: {', '.join(models)}")
        m = models[kind]["metrics"]
        if split not in m:
            raise DataError(f"report has no {split!r} split")
        return m[split], f"{kind} {split}"
    if "confusion" in doc:  # evaluate output
        return doc, "evaluation"
    raise DataError("unrecognized metrics document")


@main.command(name="report")
@click.option("--input", "input_path", required=True, type=click.Path(dir_okay=False),
              help="Training report or evaluate JSON.")
@click.option("--split", default="validation", show_default=True,
              type=click.Choice(["train", "validation", "test"]))
@click.option("--model", default=None, help="Classifier kind within a training report.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Plain-text output.")
@click.option("--image", type=click.Path(dir_okay=False), default=None,
              help="Confusion-matrix PNG (needs matplotlib).")
@_guard("report")
def report_cmd(input_path, split, model, out, image):
    """Render metrics and the confusion matrix as text (and optionally an image)."""
    try:
        with open(input_path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise DataError(f"{input_path}: {e}") from None
    m, title = _pick_metrics(doc, split, model)
    rep = _report_from_dict(m)
    text = f"# config_hash={doc.get('config_hash')}\n" + render_text(rep, title)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    if image:
        _plot_confusion(rep, title, image)
    click.echo(text, nl=False)


def _plot_confusion(rep, title, path):
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise ConfigError("--image needs matplotlib (pip install gridterm[plot])") from None
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(rep.confusion, cmap="Blues")
    k = len(rep.classes)
    ax.set_xticks(range(k), rep.classes)
    ax.set_yticks(range(k), rep.classes)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i in range(k):
        for j in range(k):
            ax.text(j, i, int(rep.confusion[i, j]), ha="center", va="center")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


if __name__ == "__main__":
    main()
