import random
from fractions import Fraction

import numpy as np
import pytest

from gridterm.errors import EmptyInput, LengthMismatch
from gridterm.metrics import evaluate, render_text, write_confusion

CLASSES = ("LVRC", "TTU", "LMT")


def brute_metrics(y_true, y_pred, classes):
    """Exact rational recomputation from per-class counts."""
    prec, rec = [], []
    for c in classes:
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
        prec.append(Fraction(tp, tp + fp) if tp + fp else Fraction(0))
        rec.append(Fraction(tp, tp + fn) if tp + fn else Fraction(0))
    p = sum(prec) / len(classes)
    r = sum(rec) / len(classes)
    f1 = 2 * p * r / (p + r) if p + r else Fraction(0)
    acc = Fraction(sum(t == q for t, q in zip(y_true, y_pred)), len(y_true))
    return acc, p, r, f1


def test_worked_example():
    m = evaluate(list("AABB"), list("ABBB"), ("A", "B"))
    assert m.accuracy == 0.75
    assert m.precision == pytest.approx(5 / 6, abs=1e-12)
    assert m.recall == pytest.approx(3 / 4, abs=1e-12)
    assert m.f1 == pytest.approx(15 / 19, abs=1e-12)
    assert m.confusion.tolist() == [[1, 1], [0, 2]]


def test_perfect_and_all_wrong():
    y = ["LVRC", "TTU", "LMT", "TTU"]
    m = evaluate(y, y, CLASSES)
    assert (m.accuracy, m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0, 1.0)
    w = evaluate(list("ABAB"), list("BABA"), ("A", "B"))
    assert (w.accuracy, w.precision, w.recall, w.f1) == (0.0, 0.0, 0.0, 0.0)


def test_matches_brute_force_on_random_pairs():
    rnd = random.Random(12)
    for _ in range(1000):
        n = rnd.randint(1, 30)
        k = rnd.randint(2, 4)
        classes = tuple("ABCD"[:k])
        yt = [rnd.choice(classes) for _ in range(n)]
        yp = [rnd.choice(classes) for _ in range(n)]
        m = evaluate(yt, yp, classes)
        expect = brute_metrics(yt, yp, classes)
        for got, want in zip((m.accuracy, m.precision, m.recall, m.f1), expect):
            assert abs(got - float(want)) <= 1e-12


def test_macro_f1_is_not_mean_of_class_f1():
    m = evaluate(list("AABB"), list("ABBB"), ("A", "B"))
    per_class = np.mean([2 * 1 * 0.5 / 1.5, 2 * (2 / 3) / (5 / 3)])
    assert m.f1 != pytest.approx(per_class)


def test_absent_class_counts_as_zero():
    m = evaluate(["A", "A"], ["A", "A"], ("A", "B"))
    assert m.precision == 0.5 and m.recall == 0.5


def test_literal_accuracy_variant():
    m = evaluate(list("AABB"), list("ABBB"), ("A", "B"), literal_accuracy=True)
    # tp = 3, fp = 1, fn = 1
    assert m.accuracy == pytest.approx(3 / 5)


def test_errors():
    with pytest.raises(LengthMismatch):
        evaluate(["A"], ["A", "B"], ("A", "B"))
    with pytest.raises(EmptyInput):
        evaluate([], [], ("A", "B"))
    with pytest.raises(LengthMismatch):
        evaluate(["A"], ["Z"], ("A", "B"))


def test_outputs(tmp_path):
    m = evaluate(["LVRC", "TTU"], ["LVRC", "LMT"], CLASSES)
    p = tmp_path / "cm.csv"
    write_confusion(p, m, comment="config_hash=x")
    lines = p.read_text().splitlines()
    assert lines[0] == "# config_hash=x"
    assert lines[3] == "TTU,0,0,1"
    assert "f1_macro" in render_text(m)
    assert m.to_dict()["per_class"]["TTU"] == {"tp": 0, "fp": 0, "fn": 1}
