import csv

import numpy as np
import pytest

from concad.engine.init import RngStream
from concad.engine.ops import NumericError
from concad.experiment import preset_path
from concad.model import ModelConfig, init_model
from concad.signal.segments import AugmentationSpec, SegmentBundle
from concad.synthetic import make_hr_dataset
from concad.training import (
    TrainConfig,
    confusion_matrix,
    evaluate,
    export_embeddings,
    kfold_split,
    make_batches,
    metrics_from_confusion,
    subset_fraction,
    train,
)


@pytest.fixture(scope="module")
def small_data():
    return make_hr_dataset(n_bundles=40, seed=3).bundles


def toy():
    return ModelConfig.load(preset_path("toy"))


def dummy(n, labels=None, records=None):
    labels = labels if labels is not None else [i % 2 for i in range(n)]
    records = records if records is not None else [f"r{i}" for i in range(n)]
    return [SegmentBundle(labels[i], np.full(4, float(i)), np.full(2, float(i)), np.full(2, float(i)),
                          records[i], i) for i in range(n)]


# --- config ---------------------------------------------------------------

def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, drop_epoch=20)
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, drop_epoch=5, batch_size=1)
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, drop_epoch=5, lam=2.0)


def test_lr_schedule():
    cfg = TrainConfig(epochs=300, drop_epoch=200)
    assert [cfg.lr(e) for e in (0, 199, 200, 299)] == [0.005, 0.005, 0.001, 0.001]


# --- batching -----------------------------------------------------------

def test_train_batches_double_with_views():
    data = dummy(12)
    batches = make_batches(data, 4, AugmentationSpec(), RngStream(0), "train")
    assert len(batches) == 3 and all(len(b) == 8 for b in batches)
    for b in batches:
        labels = [x.label for x in b]
        assert sorted(labels) == sorted(labels[:4] * 2)
        assert [x.record_id for x in b[:4]] == [x.record_id for x in b[4:]]
    seen = sorted(x.epoch_index for b in batches for x in b[:4])
    assert seen == list(range(12))


def test_train_batches_are_deterministic():
    data = dummy(12)
    one = make_batches(data, 5, AugmentationSpec(), RngStream(7).child("batches", 3), "train")
    two = make_batches(data, 5, AugmentationSpec(), RngStream(7).child("batches", 3), "train")
    for a, b in zip(one, two):
        assert [x.epoch_index for x in a] == [x.epoch_index for x in b]
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.ecg, y.ecg)


def test_eval_batches_keep_order():
    data = dummy(7)
    batches = make_batches(data, 3, mode="eval")
    assert [[x.epoch_index for x in b] for b in batches] == [[0, 1, 2], [3, 4, 5], [6]]


def test_oversized_batch_warns(caplog):
    batches = make_batches(dummy(3), 10, None, RngStream(0), "train")
    assert len(batches) == 1 and len(batches[0]) == 3
    assert "exceeds" in caplog.text


# --- metrics -------------------------------------------------------------

def test_perfect_predictions():
    y = np.array([0] * 10 + [1] * 10)
    m = metrics_from_confusion(confusion_matrix(y, y))
    assert m.accuracy == 1.0 and m.macro_f1 == 1.0 and m.n_eval == 20


def test_all_majority_predictor():
    y = np.array([0] * 70 + [1] * 30)
    m = metrics_from_confusion(confusion_matrix(y, np.zeros(100, dtype=int)))
    assert m.accuracy == pytest.approx(0.7)
    assert m.f1[0] == pytest.approx(140 / 170)  # 2 * 0.7 / 1.7
    assert m.macro_f1 == pytest.approx(0.4118, abs=1e-4)
    assert m.macro_f1 < m.accuracy


def test_scripted_confusion_oracle():
    cm = np.array([[50, 10], [5, 35]])
    m = metrics_from_confusion(cm)
    assert m.accuracy == pytest.approx(0.85)
    # per-class F1 written out by hand: 2TP / (2TP + FP + FN)
    f1_0 = 2 * 50 / (2 * 50 + 5 + 10)
    f1_1 = 2 * 35 / (2 * 35 + 10 + 5)
    assert m.macro_f1 == pytest.approx((f1_0 + f1_1) / 2, abs=1e-12)
    sklearn = pytest.importorskip("sklearn.metrics")
    y_true = np.repeat([0, 0, 1, 1], [50, 10, 5, 35])
    y_pred = np.repeat([0, 1, 0, 1], [50, 10, 5, 35])
    assert m.macro_f1 == pytest.approx(sklearn.f1_score(y_true, y_pred, average="macro"), abs=1e-12)
    assert sum(map(sum, m.confusion)) == m.n_eval == 100


def test_empty_eval_set():
    with pytest.raises(ValueError):
        metrics_from_confusion(np.zeros((2, 2), dtype=int))


# --- splits ---------------------------------------------------------------

def test_kfold_segment_level():
    plan = kfold_split(dummy(100), 10, "segment", seed=1)
    assert [f.size for f in plan.folds] == [10] * 10
    allidx = np.concatenate(plan.folds)
    assert np.array_equal(np.sort(allidx), np.arange(100))
    again = kfold_split(dummy(100), 10, "segment", seed=1)
    assert all(np.array_equal(a, b) for a, b in zip(plan.folds, again.folds))
    tr, ev = plan.split(3)
    assert np.intersect1d(tr, ev).size == 0 and tr.size + ev.size == 100


def test_kfold_uneven_sizes_differ_by_one():
    sizes = [f.size for f in kfold_split(dummy(23), 5, seed=0).folds]
    assert max(sizes) - min(sizes) <= 1 and sum(sizes) == 23


def test_kfold_recording_level():
    data = dummy(30, records=[f"rec{i // 5}" for i in range(30)])
    plan = kfold_split(data, 3, "recording", seed=2)
    for f in plan.folds:
        recs = {data[i].record_id for i in f}
        for g in plan.folds:
            if g is not f:
                assert recs.isdisjoint({data[i].record_id for i in g})
    with pytest.raises(ValueError):
        kfold_split(data, 7, "recording")


def test_kfold_errors():
    with pytest.raises(ValueError):
        kfold_split(dummy(5), 6)
    with pytest.raises(ValueError):
        kfold_split(dummy(5), 1)


def test_subset_fraction():
    data = dummy(1000, labels=[0] * 600 + [1] * 400)
    assert subset_fraction(data, 1.0) == data
    sub = subset_fraction(data, 0.1, seed=4)
    assert [b.label for b in sub].count(0) == 60 and [b.label for b in sub].count(1) == 40
    assert [b.epoch_index for b in sub] == sorted(b.epoch_index for b in sub)
    assert subset_fraction(data, 0.1, seed=4) == sub
    with pytest.raises(ValueError):
        subset_fraction(data, 0.0)


def test_subset_keeps_one_per_class(caplog):
    data = dummy(100, labels=[0] * 98 + [1] * 2)
    sub = subset_fraction(data, 0.1)
    assert [b.label for b in sub].count(1) == 1
    assert "empty" in caplog.text


# --- training --------------------------------------------------------------

def short_config(**kw):
    base = dict(epochs=2, drop_epoch=1, lam=0.5, tau=0.1, batch_size=20, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_lambda_one_matches_ce_only(small_data):
    _, hyb = train(init_model(toy(), 0), small_data, short_config(lam=1.0))
    _, ce_only = train(init_model(toy(), 0), small_data, short_config(use_contrastive=False))
    assert hyb[0].ce == ce_only[0].ce
    assert ce_only[0].sc == 0.0


def test_training_is_deterministic(small_data):
    _, a = train(init_model(toy(), 1), small_data, short_config())
    _, b = train(init_model(toy(), 1), small_data, short_config())
    assert [(x.loss, x.ce, x.sc) for x in a] == [(x.loss, x.ce, x.sc) for x in b]
    assert [x.lr for x in a] == [0.005, 0.001]


def test_training_writes_checkpoints(small_data, tmp_path):
    model, logs = train(init_model(toy(), 2), small_data, short_config(), small_data[:10], tmp_path)
    assert (tmp_path / "final.ckpt").exists() and (tmp_path / "best.ckpt").exists()
    assert logs[-1].eval_accuracy is not None and np.isfinite(logs[-1].loss)


def test_non_finite_loss_aborts(small_data):
    model = init_model(toy(), 0)
    model.parameters()["clf.1.bias"].value[:] = np.nan
    with pytest.raises(NumericError):
        train(model, small_data, short_config())


def test_export_embeddings(small_data, tmp_path):
    model = init_model(toy(), 0)
    path = tmp_path / "emb.csv"
    export_embeddings(model, small_data, path)
    rows = list(csv.reader(open(path)))
    assert len(rows) == len(small_data) + 1
    assert all(len(r) == toy().k + 3 for r in rows)
    first = path.read_bytes()
    export_embeddings(model, small_data, path)
    assert path.read_bytes() == first


def test_evaluate_reports_counts(small_data):
    m = evaluate(init_model(toy(), 0), small_data)
    assert m.n_eval == len(small_data)
    assert np.trace(m.confusion) == pytest.approx(m.accuracy * m.n_eval)
