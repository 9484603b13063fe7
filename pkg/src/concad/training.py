"""Batching with augmentation, the training loop, metrics and data splits."""

import csv
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .engine.init import RngStream
from .engine.ops import NumericError
from .engine.optim import AMSGrad
from .losses import HybridResult, cross_entropy_with_logits, hybrid, supervised_contrastive
from .model import Standardizer
from .signal.segments import AugmentationSpec, augment

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int
    lam: float = 0.5
    tau: float = 0.1
    batch_size: int = 64
    lr_initial: float = 0.005
    lr_after: float = 0.001
    drop_epoch: int = 200
    l2_coeff: float = 1e-4
    seed: int = 0
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    use_contrastive: bool = True
    sc_include_anchor: bool = False
    class_weights: Optional[List[float]] = None
    eval_every: int = 1

    def __post_init__(self):
        if isinstance(self.augmentation, dict):
            self.augmentation = AugmentationSpec(**self.augmentation)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.drop_epoch > self.epochs:
            raise ValueError(f"drop_epoch ({self.drop_epoch}) must not exceed epochs ({self.epochs})")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    def lr(self, epoch):
        return self.lr_initial if epoch < self.drop_epoch else self.lr_after

    def to_dict(self):
        d = asdict(self)
        d["augmentation"]["ops"] = list(d["augmentation"]["ops"])
        return d


@dataclass
class EpochLog:
    epoch: int
    loss: float
    ce: float
    sc: float
    lr: float
    eval_accuracy: Optional[float] = None
    eval_macro_f1: Optional[float] = None
    wall_time: float = 0.0


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    precision: list
    recall: list
    f1: list
    confusion: list
    n_eval: int

    def to_dict(self):
        return asdict(self)


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

def confusion_matrix(y_true, y_pred, n_classes=2):
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def metrics_from_confusion(cm):
    """Rows are true classes, columns predictions. Undefined F1 counts as 0."""
    cm = np.asarray(cm, dtype=np.int64)
    n = int(cm.sum())
    if n == 0:
        raise ValueError("empty evaluation set")
    tp = np.diag(cm).astype(float)
    pred = cm.sum(axis=0).astype(float)
    true = cm.sum(axis=1).astype(float)
    precision = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    recall = np.divide(tp, true, out=np.zeros_like(tp), where=true > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return MetricsReport(
        accuracy=float(tp.sum() / n),
        macro_f1=float(f1.mean()),
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
        confusion=cm.tolist(),
        n_eval=n,
    )


def predict(model, bundles, batch_size=256):
    probs = []
    for i in range(0, len(bundles), batch_size):
        probs.append(model.forward_bundles(bundles[i : i + batch_size], "infer").probs)
    return np.concatenate(probs)


def evaluate(model, bundles, batch_size=256):
    if not bundles:
        raise ValueError("empty evaluation set")
    pred = predict(model, bundles, batch_size).argmax(axis=1)
    labels = np.array([b.label for b in bundles])
    return metrics_from_confusion(confusion_matrix(labels, pred))


# --------------------------------------------------------------------------
# batching
# --------------------------------------------------------------------------

def make_batches(bundles, batch_size, aug_spec=None, rng=None, mode="train"):
    """Split ``bundles`` into batches.

    Train mode shuffles with ``rng`` and appends one augmented view per
    original, doubling each batch. Eval mode keeps input order and does not
    augment.
    """
    n = len(bundles)
    if n == 0:
        return []
    if batch_size > n:
        log.warning("batch size %d exceeds dataset size %d; using one batch", batch_size, n)
        batch_size = n
    if mode == "eval":
        return [list(bundles[i : i + batch_size]) for i in range(0, n, batch_size)]
    if rng is None:
        raise ValueError("train-mode batching needs an rng")
    order = rng.permutation(n)
    batches = []
    for i in range(0, n, batch_size):
        orig = [bundles[j] for j in order[i : i + batch_size]]
        views = [augment(b, aug_spec, rng) for b in orig] if aug_spec is not None and aug_spec.enabled else []
        batches.append(orig + views)
    return batches


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

def batch_loss(model, batch, config, rng):
    """Forward pass and loss for one batch, as a :class:`HybridResult`."""
    labels = np.array([b.label for b in batch])
    out = model.forward_bundles(batch, "train", rng, with_proj=config.use_contrastive)
    ce = cross_entropy_with_logits(out.logits, labels, config.class_weights)
    if config.use_contrastive:
        sc = supervised_contrastive(out.z, labels, config.tau, config.sc_include_anchor)
        return hybrid(ce, sc, config.lam)
    return HybridResult(ce.value, ce.value, 0.0, ce.grad, None)


def train(model, bundles, config, eval_bundles=None, out_dir=None, fit_standardizer=True,
          extra_meta=None):
    """Train ``model`` in place; returns ``(model, [EpochLog])``.

    With ``out_dir`` the final checkpoint is written to ``final.ckpt`` and,
    when ``eval_bundles`` are given, the best-by-macro-F1 checkpoint to
    ``best.ckpt``. ``extra_meta`` is merged into both checkpoints' metadata.
    """
    if not bundles:
        raise ValueError("no training data")
    if fit_standardizer:
        model.standardizer = Standardizer.fit(bundles)
    master = RngStream(config.seed)
    opt = AMSGrad(lr=config.lr_initial, l2=config.l2_coeff)
    params = model.parameters(include_proj=config.use_contrastive)
    logs = []
    best_f1 = -1.0
    batch_size = config.batch_size
    if batch_size > len(bundles):
        log.warning("batch size %d exceeds dataset size %d; using one batch", batch_size, len(bundles))
        batch_size = len(bundles)
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        lr = config.lr(epoch)
        batches = make_batches(bundles, batch_size, config.augmentation,
                               master.child("batches", epoch), "train")
        drop_rng = master.child("dropout", epoch)
        sums = np.zeros(3)
        count = 0
        for b_idx, batch in enumerate(batches):
            model.zero_grad()
            res = batch_loss(model, batch, config, drop_rng)
            if not np.isfinite(res.value):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} batch {b_idx}: "
                    f"hybrid={res.value} ce={res.ce} sc={res.sc}")
            model.backward(res.grad_logits, res.grad_z)
            opt.step(params, lr)
            sums += len(batch) * np.array([res.value, res.ce, res.sc])
            count += len(batch)
        means = sums / count
        entry = EpochLog(epoch, float(means[0]), float(means[1]), float(means[2]), lr)
        if eval_bundles and ((epoch + 1) % config.eval_every == 0 or epoch + 1 == config.epochs):
            report = evaluate(model, eval_bundles)
            entry.eval_accuracy = report.accuracy
            entry.eval_macro_f1 = report.macro_f1
            if report.macro_f1 > best_f1:
                best_f1 = report.macro_f1
                if out_dir:
                    model.save(os.path.join(out_dir, "best.ckpt"),
                               dict(extra_meta or {}, epoch=epoch, seed=config.seed, macro_f1=best_f1))
        entry.wall_time = time.perf_counter() - t0
        logs.append(entry)
        log.info("epoch %d loss %.4f ce %.4f sc %.4f", epoch, entry.loss, entry.ce, entry.sc)
    if out_dir:
        model.save(os.path.join(out_dir, "final.ckpt"),
                   dict(extra_meta or {}, epoch=config.epochs - 1, seed=config.seed))
    return model, logs


def write_epoch_logs(path, logs):
    fields = list(EpochLog.__dataclass_fields__)
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields)
        w.writeheader()
        for entry in logs:
            w.writerow(asdict(entry))


# --------------------------------------------------------------------------
# splits
# --------------------------------------------------------------------------

@dataclass
class FoldPlan:
    folds: list
    mode: str
    seed: int

    @property
    def k(self):
        return len(self.folds)

    def split(self, i):
        """Return ``(train_indices, eval_indices)`` for fold ``i``."""
        train = np.sort(np.concatenate([f for j, f in enumerate(self.folds) if j != i]))
        return train, self.folds[i]


def kfold_split(bundles, k, mode="segment", seed=0):
    n = len(bundles)
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError(f"cannot make {k} folds from {n} items")
    rng = RngStream(seed)
    if mode == "segment":
        perm = rng.permutation(n)
        folds = [np.sort(f) for f in np.array_split(perm, k)]
    elif mode == "recording":
        ids = sorted({b.record_id for b in bundles})
        if len(ids) < k:
            raise ValueError(f"recording-level folds need >= {k} recordings, found {len(ids)}")
        order = [ids[i] for i in rng.permutation(len(ids))]
        groups = np.array_split(np.arange(len(order)), k)
        rec_fold = {order[i]: f for f, g in enumerate(groups) for i in g}
        folds = [np.array([i for i, b in enumerate(bundles) if rec_fold[b.record_id] == f], dtype=np.int64)
                 for f in range(k)]
    else:
        raise ValueError(f"unknown fold mode {mode!r}")
    return FoldPlan(folds, mode, seed)


def subset_fraction(bundles, fraction, seed=0, stratified=True):
    """Deterministic (stratified) sample keeping input order."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    if fraction == 1.0:
        return list(bundles)
    rng = RngStream(seed)
    labels = np.array([b.label for b in bundles])
    if stratified:
        chosen = []
        for cls in np.unique(labels):
            idx = np.flatnonzero(labels == cls)
            take = int(round(fraction * idx.size))
            if take < 1:
                log.warning("fraction %g leaves class %d empty; keeping one instance", fraction, cls)
                take = 1
            chosen.append(idx[rng.permutation(idx.size)[:take]])
        chosen = np.sort(np.concatenate(chosen))
    else:
        take = max(1, int(round(fraction * len(bundles))))
        chosen = np.sort(rng.permutation(len(bundles))[:take])
    return [bundles[i] for i in chosen]


# --------------------------------------------------------------------------
# embeddings
# --------------------------------------------------------------------------

def export_embeddings(model, bundles, path, batch_size=256):
    """CSV of the fused vectors: ``record_id, epoch_index, label, c1..ck``."""
    k = model.config.k
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["record_id", "epoch_index", "label"] + [f"c{i + 1}" for i in range(k)])
        for i in range(0, len(bundles), batch_size):
            chunk = bundles[i : i + batch_size]
            ctx = model.forward_bundles(chunk, "infer").attention.context
            for b, row in zip(chunk, ctx):
                w.writerow([b.record_id, b.epoch_index, b.label] + [repr(float(v)) for v in row])
    return path
