import itertools
import io

import numpy as np
import pytest

from cochceps.augment import MaskPolicy
from cochceps.contrastive import EncoderSpec, SSLConfig, encode, init_weights, train_simclr
from cochceps.probe import (
    ProbeConfig, ProbeModel, QuadrantLabel, confusion_matrix, evaluate, finetune, flatten_features,
    init_head, metrics_from_predictions, quadrant_label, train_linear_probe, write_report,
)


@pytest.mark.parametrize("a,v,expected", [
    (2, 2, QuadrantLabel.LALV), (3, 3, QuadrantLabel.HAHV), (1, 5, QuadrantLabel.LAHV),
    (5, 1, QuadrantLabel.HALV), (2, 3, QuadrantLabel.LAHV), (3, 2, QuadrantLabel.HALV),
])
def test_quadrant_examples(a, v, expected):
    assert quadrant_label(a, v) is expected


def test_quadrant_partition_sizes():
    counts = {q: 0 for q in QuadrantLabel}
    for a, v in itertools.product(range(1, 6), repeat=2):
        counts[quadrant_label(a, v)] += 1
    assert [counts[q] for q in QuadrantLabel] == [4, 6, 6, 9]


@pytest.mark.parametrize("a,v", [(0, 3), (6, 3), (3, 0), (3, 6)])
def test_quadrant_range_error(a, v):
    with pytest.raises(ValueError):
        quadrant_label(a, v)


def test_flatten(rng):
    x = rng.standard_normal((20, 239))
    f = flatten_features(x)
    assert f.shape == (4780,)
    np.testing.assert_array_equal(f.reshape(20, 239), x)
    assert f[239] == x[1, 0]
    assert flatten_features(np.ones((1, 1))).shape == (1,)


def separable_set(rng, n=200, dim=5):
    w = rng.standard_normal(dim)
    x = rng.standard_normal((4 * n, dim))
    margin = x @ w / np.linalg.norm(w)
    x = x[np.abs(margin) > 0.3][:n]
    return x, (x @ w > 0).astype(int)


def perceptron_separates(x, y, max_epochs=1000):
    xb = np.hstack([x, np.ones((len(x), 1))])
    s = np.where(y == 1, 1.0, -1.0)
    w = np.zeros(xb.shape[1])
    for _ in range(max_epochs):
        mistakes = 0
        for xi, si in zip(xb, s):
            if si * (xi @ w) <= 0:
                w += si * xi
                mistakes += 1
        if mistakes == 0:
            return True
    return False


def test_separable_set_is_learned(rng):
    x, y = separable_set(rng)
    assert len(y) == 200 and perceptron_separates(x, y)
    model = train_linear_probe(x, y, ProbeConfig(learning_rate=1e-2, epochs=200), seed=0)
    assert np.mean(model.predict(x) == y) >= 0.99
    assert model.weight.shape == (5, 4) and np.all(np.isfinite(model.weight))


def test_single_class_labels(rng):
    x = rng.standard_normal((40, 3))
    model = train_linear_probe(x, np.full(40, 2), ProbeConfig(learning_rate=1e-2, epochs=100))
    np.testing.assert_array_equal(model.predict(x), 2)


def test_zero_learning_rate(rng):
    x = rng.standard_normal((30, 6))
    y = rng.integers(0, 4, 30)
    model = train_linear_probe(x, y, ProbeConfig(learning_rate=0.0, epochs=5), seed=4)
    init = init_head((6, 4), 4)
    np.testing.assert_array_equal(model.weight, init["head.0.weight"])
    np.testing.assert_array_equal(model.bias, init["head.0.bias"])


def test_probe_deterministic(rng):
    x = rng.standard_normal((50, 6))
    y = rng.integers(0, 4, 50)
    cfg = ProbeConfig(learning_rate=1e-2, epochs=10)
    a, b = train_linear_probe(x, y, cfg, 7), train_linear_probe(x, y, cfg, 7)
    assert a.weight.tobytes() == b.weight.tobytes() and a.history == b.history


def test_probe_errors(rng):
    with pytest.raises(ValueError):
        train_linear_probe(rng.standard_normal((5, 2)), [0, 1, 2, 3, 4])
    with pytest.raises(ValueError):
        train_linear_probe(rng.standard_normal((5, 2)), [0, 1])
    x = rng.standard_normal((5, 2))
    x[0, 0] = np.inf
    with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
        train_linear_probe(x, [0, 1, 2, 3, 0], ProbeConfig(epochs=1))


def test_logit_shift_invariance(rng):
    x = rng.standard_normal((100, 4))
    w, b = rng.standard_normal((4, 4)), rng.standard_normal(4)
    base = ProbeModel(w, b).predict(x)
    np.testing.assert_array_equal(ProbeModel(w, b + 123.0).predict(x), base)


# --------------------------------------------------------------------------
# metrics

def test_metrics_perfect():
    m = metrics_from_predictions([0, 1, 2, 3, 3], [0, 1, 2, 3, 3])
    assert (m.weighted_accuracy, m.weighted_f1) == (1.0, 1.0)


def test_metrics_hand_case():
    m = metrics_from_predictions([0, 0, 0, 1], [0, 0, 0, 0])
    assert m.weighted_accuracy == 0.75
    assert abs(m.weighted_f1 - 0.75 * 6 / 7) < 1e-9
    assert m.weighted_f1 == pytest.approx(0.642857142857, abs=1e-9)
    np.testing.assert_array_equal(m.confusion[:2, :2], [[3, 0], [1, 0]])


def test_metrics_random_predictions():
    r = np.random.default_rng(0)
    y = np.repeat(np.arange(4), 2500)
    m = metrics_from_predictions(y, r.integers(0, 4, y.size))
    assert abs(m.weighted_accuracy - 0.25) <= 0.02


def test_weighted_accuracy_is_trace_ratio(rng):
    for _ in range(100):
        n = int(rng.integers(1, 60))
        y, p = rng.integers(0, 4, n), rng.integers(0, 4, n)
        m = metrics_from_predictions(y, p)
        assert m.weighted_accuracy == pytest.approx(np.trace(m.confusion) / n, abs=1e-12)
        assert 0 <= m.weighted_f1 <= 1 and 0 <= m.balanced_accuracy <= 1


def test_metrics_match_sklearn(rng):
    sk = pytest.importorskip("sklearn.metrics")
    y, p = rng.integers(0, 4, 300), rng.integers(0, 4, 300)
    p[:5] = 3
    m = metrics_from_predictions(y, p)
    assert m.weighted_f1 == pytest.approx(sk.f1_score(y, p, average="weighted", zero_division=0), abs=1e-12)
    assert m.balanced_accuracy == pytest.approx(sk.balanced_accuracy_score(y, p), abs=1e-12)


def test_confusion_layout():
    cm = confusion_matrix([0, 1, 1], [1, 1, 2])
    assert cm[0, 1] == 1 and cm[1, 1] == 1 and cm[1, 2] == 1 and cm.sum() == 3


def test_empty_evaluation():
    model = ProbeModel(np.zeros((2, 4)), np.zeros(4))
    with pytest.raises(ValueError):
        evaluate(model, np.zeros((0, 2)), [])


def test_write_report(tmp_path):
    buf = io.StringIO()
    write_report(tmp_path / "r.txt", {"weighted_accuracy": 0.5, "n": 3}, buf)
    assert (tmp_path / "r.txt").read_text() == buf.getvalue() == "weighted_accuracy=0.5\nn=3\n"


# --------------------------------------------------------------------------
# fine-tuning

def clusters(n, seed, dim=24):
    r = np.random.default_rng(seed)
    centres = np.random.default_rng(99).standard_normal((4, dim))
    y = np.arange(n) % 4
    return centres[y] + 0.6 * r.standard_normal((n, dim)), y


SPEC = EncoderSpec((24, 16, 8), projector_hidden=8, projector_dim=16)


def test_frozen_finetune_equals_probe():
    x, y = clusters(40, 1)
    xt, yt = clusters(40, 2)
    w = init_weights(SPEC, 0)
    cfg = ProbeConfig(learning_rate=1e-2, epochs=10)
    model, m = finetune(SPEC, w, x, y, xt, yt, head_hidden=(), config=cfg, seed=3, freeze_encoder=True)
    probe = train_linear_probe(encode(SPEC, w, x), y, cfg, seed=3)
    np.testing.assert_array_equal(model.head["head.0.weight"], probe.weight)
    pm = evaluate(probe, encode(SPEC, w, xt), yt)
    assert (m.weighted_accuracy, m.weighted_f1) == (pm.weighted_accuracy, pm.weighted_f1)
    for k in w:
        if k.startswith("encoder."):
            np.testing.assert_array_equal(model.encoder_weights[k], w[k])


def test_finetune_deterministic():
    x, y = clusters(32, 1)
    w = init_weights(SPEC, 0)
    cfg = ProbeConfig(learning_rate=1e-3, epochs=3)
    a = finetune(SPEC, w, x, y, x, y, config=cfg, seed=1)
    b = finetune(SPEC, w, x, y, x, y, config=cfg, seed=1)
    assert a[0].history == b[0].history and a[1].weighted_f1 == b[1].weighted_f1


def test_finetune_not_worse_than_probe():
    x, y = clusters(96, 1)
    xt, yt = clusters(200, 2)
    res = train_simclr(list(x.reshape(-1, 4, 6)), MaskPolicy(1, 1), SPEC,
                       SSLConfig(epochs=30, batch_size=16, learning_rate=0.05, temperature=0.2, image_size=None), seed=0)
    cfg = ProbeConfig(learning_rate=1e-2, epochs=50)
    probe = train_linear_probe(encode(SPEC, res.weights, x), y, cfg, seed=0)
    probe_acc = evaluate(probe, encode(SPEC, res.weights, xt), yt).weighted_accuracy
    _, m = finetune(SPEC, res.weights, x, y, xt, yt, head_hidden=(16,), config=ProbeConfig(learning_rate=1e-3, epochs=50), seed=0)
    assert m.weighted_accuracy >= probe_acc - 0.05
