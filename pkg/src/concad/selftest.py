"""Built-in checks of the numeric core, runnable without a test harness.

Each check is a small function that raises ``AssertionError`` on failure.
``run_all`` executes them in order and returns ``[(name, ok, detail)]``.
"""

import math
import os
import tempfile

import numpy as np

from .engine import ops
from .engine.gradcheck import grad_check
from .engine.init import RngStream, he_normal_init
from .engine.optim import AMSGrad, Parameter
from .losses import cosine_similarity, cross_entropy, hybrid, supervised_contrastive
from .model import CrossAttention, ModelConfig
from .signal.features import cubic_resample, median_smooth, raw_rri
from .signal.io import (
    APNEA,
    NORMAL,
    DataError,
    EcgRecord,
    decode_212,
    encode_212,
    read_annotations,
    read_record,
    write_csv_record,
    write_text_annotations,
)
from .signal.qrs import detect_r_peaks
from .signal.segments import SegmentConfig, segment_with_context
from .synthetic import pulse_train, score_detections

CHECKS = []


def check(fn):
    CHECKS.append(fn)
    return fn


def close(a, b, tol):
    assert np.allclose(a, b, rtol=0, atol=tol), f"{np.asarray(a)!r} != {np.asarray(b)!r}"


# --- engine ----------------------------------------------------------------

@check
def conv_examples():
    x = np.array([1.0, 2.0, 4.0]).reshape(1, 3, 1)
    close(ops.conv1d(x, np.array([-1.0, 1.0]).reshape(2, 1, 1), np.zeros(1)).ravel(), [1, 2], 0)
    y = RngStream(1).normal(size=(2, 5, 3))
    close(ops.conv1d(y, np.eye(3)[None], np.zeros(3)), y, 0)


@check
def conv_gradient():
    rng = RngStream(2)
    x = rng.normal(size=(2, 9, 2))
    w = rng.normal(size=(3, 2, 3))
    b = rng.normal(size=3)
    g = rng.normal(size=(2, 4, 3))

    def f(w_):
        out, cache = ops.conv1d_forward(x, w_, b, 2)
        return float((out * g).sum()), ops.conv1d_backward(g, cache)[1]

    err = grad_check(f, w)
    assert err < 1e-6, f"rel. err {err:.2e}"


@check
def batchnorm_examples():
    x = np.full((2, 4, 1), 3.0)
    out, _ = ops.batchnorm1d_forward(x, np.ones(1), np.zeros(1), np.zeros(1), np.ones(1), "train")
    close(out, 0.0, 0)
    # large spread so that eps moves the variance by far less than the tolerance
    y = RngStream(3).normal(2.0, 30.0, size=(8, 50, 3))
    out, _ = ops.batchnorm1d_forward(y, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), "train")
    close(out.mean(axis=(0, 1)), 0.0, 1e-6)
    close(out.var(axis=(0, 1)), 1.0, 1e-6)


@check
def pool_and_dropout():
    close(ops.maxpool1d_forward(np.array([1.0, 3, 2, 4]).reshape(1, 4, 1), 2)[0].ravel(), [3, 4], 0)
    out, cache = ops.maxpool1d_forward(np.array([2.0, 2.0]).reshape(1, 2, 1), 2)
    close(ops.maxpool1d_backward(np.ones_like(out), cache).ravel(), [1, 0], 0)
    x = np.ones(100_000)
    out, mask = ops.dropout_forward(x, 0.5, "train", RngStream(4))
    assert abs((out != 0).mean() - 0.5) < 0.01
    assert abs(out.mean() - 1.0) < 0.02
    close(ops.dropout_forward(x, 0.5, "infer")[0], x, 0)


@check
def dense_and_activations():
    out, _ = ops.dense_forward(np.array([[1.0, 2.0]]), np.array([[1.0, 0], [0, 2]]), np.ones(2))
    close(out, [[2, 5]], 0)
    close(ops.relu(np.array([-1.0, 0, 2])), [0, 0, 2], 0)
    close(ops.softmax(np.zeros(3)), [1 / 3] * 3, 1e-15)
    close(ops.l2_normalize(np.array([3.0, 4.0])), [0.6, 0.8], 1e-15)


@check
def he_variance():
    for fan_in, target in ((50, 0.04), (2, 1.0)):
        v = he_normal_init((100_000,), fan_in, RngStream(5)).var()
        assert abs(v / target - 1) < 0.05, f"fan_in {fan_in}: variance {v}"
    assert np.array_equal(he_normal_init((7,), 3, RngStream(9)), he_normal_init((7,), 3, RngStream(9)))


@check
def amsgrad_examples():
    p = Parameter(np.zeros(1))
    p.grad = np.ones(1)
    AMSGrad(lr=0.005).step([p])
    close(p.value, [-0.005], 1e-8)
    q = Parameter(np.array([0.7]))
    opt = AMSGrad(lr=0.005)
    for _ in range(10):
        q.grad = np.zeros(1)
        opt.step([q])
    close(q.value, [0.7], 0)
    r = Parameter(np.array([1.0]))
    for _ in range(2000):
        r.grad = 2 * r.value
        opt.step([r])
    assert abs(r.value[0]) < 0.01, f"theta = {r.value[0]}"


@check
def gradcheck_harness():
    assert grad_check(lambda x: (float((x ** 2).sum()), 2 * x), [1.0, 2.0]) < 1e-8


# --- losses ----------------------------------------------------------------

@check
def cross_entropy_examples():
    close(cross_entropy(np.array([[0.5, 0.5]]), np.array([1])).value, math.log(2), 1e-12)
    close(cross_entropy(np.array([[1.0, 0.0]]), np.array([0])).value, 0.0, 1e-12)
    v = cross_entropy(np.array([[0.9, 0.1], [0.2, 0.8]]), np.array([0, 1])).value
    close(v, (-math.log(0.9) - math.log(0.8)) / 2, 1e-12)
    close(round(v, 6), 0.164252, 0)


@check
def cosine_examples():
    close(cosine_similarity(np.array([1.0, 2]), np.array([1.0, 2])), 1.0, 1e-12)
    close(cosine_similarity(np.array([1.0, 0]), np.array([0.0, 1])), 0.0, 1e-12)
    close(cosine_similarity(np.array([1.0, 0]), np.array([-1.0, 0])), -1.0, 1e-12)


def _naive_sc(z, labels, tau):
    n = len(labels)
    total, anchors = 0.0, 0
    for i in range(n):
        pos = [j for j in range(n) if j != i and labels[j] == labels[i]]
        if not pos:
            continue
        denom = sum(math.exp(z[i] @ z[k] / tau) for k in range(n) if k != i)
        total += -sum(math.log(math.exp(z[i] @ z[j] / tau) / denom) for j in pos) / len(pos)
        anchors += 1
    return total / anchors


@check
def contrastive_examples():
    z = np.array([[1.0, 0.0], [1.0, 0.0]])
    close(supervised_contrastive(z, np.array([0, 0]), 1.0).value, 0.0, 1e-12)
    res = supervised_contrastive(np.eye(2), np.array([0, 1]), 1.0)
    assert res.value == 0.0 and res.degenerate
    labels = np.array([0, 0, 1, 1])
    close(supervised_contrastive(np.eye(4), labels, 0.5).value, _naive_sc(np.eye(4), labels, 0.5), 1e-10)


@check
def hybrid_examples():
    from .losses import LossResult

    ce = LossResult(0.6, np.ones(2))
    sc = LossResult(0.4, np.zeros(2))
    assert hybrid(ce, sc, 1.0).value == 0.6
    assert hybrid(ce, sc, 0.0).value == 0.4
    close(hybrid(ce, sc, 0.5).value, 0.5, 1e-15)


# --- model -----------------------------------------------------------------

@check
def attention_examples():
    rng = RngStream(6)
    att = CrossAttention([(3, 2), (4, 2), (2, 3)], 2, rng)
    for mod in ("ecg", "rri", "rpe"):
        att.params[f"att.{mod}.w"].value[:] = 0.0
    att.params["att.ecg.b"].value[:] = math.log(2)
    feats = [rng.normal(size=(5, 3, 2)), rng.normal(size=(5, 4, 2)), rng.normal(size=(5, 2, 3))]
    out = att.forward(feats)
    close(out.alpha, np.tile([0.5, 0.25, 0.25], (5, 1)), 1e-12)
    close(out.alpha.sum(axis=1), 1.0, 1e-9)


@check
def model_census():
    from .experiment import preset_path
    from .model import init_model

    cfg = ModelConfig.load(preset_path("toy"))
    a = init_model(cfg, 0)
    b = init_model(cfg, 0)
    for (na, pa), (nb, pb) in zip(a.parameters().items(), b.parameters().items()):
        assert na == nb and np.array_equal(pa.value, pb.value)
    proj = cfg.k * cfg.proj_dim + cfg.proj_dim
    assert a.parameter_count(include_proj=False) == a.parameter_count() - proj


# --- signal ----------------------------------------------------------------

@check
def record_io():
    with tempfile.TemporaryDirectory() as d:
        base = os.path.join(d, "r1")
        with open(base + ".hea", "w") as f:
            f.write("r1 1 100 3\nr1.dat 16 200 16 0 100 0 0 ECG\n")
        np.array([100, -100, 0], dtype="<i2").tofile(base + ".dat")
        close(read_record(base).samples, [0.5, -0.5, 0.0], 0)
        rec = EcgRecord("c1", 100.0, RngStream(7).normal(size=50))
        write_csv_record(os.path.join(d, "c1.csv"), rec)
        back = read_record(os.path.join(d, "c1.csv"))
        assert back.fs == rec.fs and np.array_equal(back.samples, rec.samples)
    assert list(decode_212(encode_212([1, -1]))) == [1, -1]


@check
def annotation_io():
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "a.txt")
        write_text_annotations(path, [(0, "N", ""), (6000, "A", "")])
        ann = read_annotations(path, "text", 100.0, 60.0)
        assert ann.labels == [(0, NORMAL), (1, APNEA)], ann.labels
        write_text_annotations(path, [(0, '"', "3 OA")])
        assert read_annotations(path, "text", 250.0, 30.0).labels == [(0, APNEA)]
        open(path, "w").close()
        try:
            read_annotations(path, "text", 100.0, 60.0)
        except DataError as e:
            assert "no labels" in str(e)
        else:
            raise AssertionError("empty annotation file accepted")


@check
def detector_examples():
    x, truth = pulse_train(100.0, 60.0, 60.0, 20.0, seed=0)
    peaks = detect_r_peaks(EcgRecord("p", 100.0, x))
    assert peaks.size == 60 and score_detections(peaks / 100.0, truth) == (60, 0, 0)
    x, truth = pulse_train(100.0, 60.0, 60.0, 20.0, seed=0, drop=[30])
    peaks = detect_r_peaks(EcgRecord("p", 100.0, x))
    assert peaks.size == 59 and score_detections(peaks / 100.0, truth) == (59, 0, 0)
    assert detect_r_peaks(EcgRecord("z", 100.0, np.zeros(6000))).size == 0


@check
def feature_examples():
    close(raw_rri(np.array([100, 200, 310]), 100.0), [1.0, 1.1], 1e-12)
    close(median_smooth(np.array([1.0, 1, 1, 5, 1, 1, 1]), 5), np.ones(7), 0)
    t = np.linspace(0, 2, 5)
    t_new = np.linspace(0, 2, 9)
    close(cubic_resample(t, t ** 3, t_new), t_new ** 3, 1e-9)


@check
def segmentation_examples():
    from .signal.io import AnnotationSet

    fs = 100.0
    rec = EcgRecord("s", fs, np.zeros(int(7 * 3600 * fs)))
    peaks = np.arange(50, rec.samples.size, 100)
    ann = AnnotationSet(60.0, [(e, NORMAL) for e in range(420)])
    assert len(segment_with_context(rec, ann, SegmentConfig(context=0), peaks)) == 420
    ramp = EcgRecord("r", fs, np.repeat(np.arange(5.0), 6000))
    b = segment_with_context(ramp, AnnotationSet(60.0, [(0, NORMAL)]), SegmentConfig(context=2),
                             np.arange(50, 30000, 100))[0]
    assert b.ecg.size == 30000
    close(b.ecg[::6000], [0, 0, 0, 1, 2], 0)


def run_all(stream=None):
    results = []
    for fn in CHECKS:
        try:
            fn()
            results.append((fn.__name__, True, ""))
        except Exception as e:  # report every failure, keep going
            results.append((fn.__name__, False, f"{type(e).__name__}: {e}"))
        if stream is not None:
            name, ok, detail = results[-1]
            print(f"{'PASS' if ok else 'FAIL'} {name}{'  ' + detail if detail else ''}", file=stream)
    return results
