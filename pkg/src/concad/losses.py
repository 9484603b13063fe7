"""Cross-entropy, supervised contrastive and hybrid objectives."""

from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-12


@dataclass
class LossConfig:
    lam: float = 0.5
    tau: float = 0.1
    class_weights: tuple = None
    sc_include_anchor: bool = False

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")


@dataclass
class LossResult:
    value: float
    grad: np.ndarray
    degenerate: bool = False


@dataclass
class HybridResult:
    value: float
    ce: float
    sc: float
    grad_logits: np.ndarray
    grad_z: np.ndarray
    degenerate: bool = False


def _sample_weights(labels, class_weights):
    if class_weights is None:
        return np.ones(len(labels))
    return np.asarray(class_weights, dtype=np.float64)[labels]


def cross_entropy(probs, labels, class_weights=None):
    """Mean (optionally class-weighted) negative log-likelihood.

    The gradient is with respect to ``probs``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n == 0:
        raise ValueError("cross entropy of an empty batch")
    wts = _sample_weights(labels, class_weights)
    total = wts.sum()
    p_true = probs[np.arange(n), labels]
    clamped = np.maximum(p_true, PROB_FLOOR)
    value = float((wts * -np.log(clamped)).sum() / total)
    grad = np.zeros_like(probs)
    grad[np.arange(n), labels] = np.where(p_true > PROB_FLOOR, -wts / (total * clamped), 0.0)
    return LossResult(value, grad)


def cross_entropy_with_logits(logits, labels, class_weights=None):
    """Softmax followed by cross entropy; the gradient is with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n == 0:
        raise ValueError("cross entropy of an empty batch")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    probs = np.exp(log_probs)
    wts = _sample_weights(labels, class_weights)
    total = wts.sum()
    nll = -np.maximum(log_probs[np.arange(n), labels], np.log(PROB_FLOOR))
    value = float((wts * nll).sum() / total)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), labels] = 1.0
    grad = (probs - onehot) * (wts / total)[:, None]
    return LossResult(value, grad)


def cosine_similarity(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity of a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def supervised_contrastive(z, labels, tau, include_anchor=False, norm_tol=1e-6):
    """Supervised contrastive loss on unit-norm rows of ``z``.

    Default convention: positives of anchor ``i`` are the other rows with the
    same label, the denominator runs over all rows except ``i``, each anchor
    is averaged over its positives and the loss is the mean over anchors that
    have at least one positive.

    ``include_anchor=True`` evaluates the literal form instead: the anchor's
    self-similarity joins the numerator sum inside the log, each anchor is
    divided by its class count (anchor included) and anchors are summed.

    Returns a :class:`LossResult` whose ``grad`` is with respect to ``z``.
    """
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    n = z.shape[0]
    if n < 2:
        raise ValueError("supervised contrastive loss needs at least two rows")
    if tau <= 0:
        raise ValueError("tau must be positive")
    norms = np.linalg.norm(z, axis=1)
    if np.any(np.abs(norms - 1.0) > norm_tol):
        raise ValueError("rows of z must be L2-normalized")

    sim = z @ z.T / tau
    eye = np.eye(n, dtype=bool)
    same = labels[:, None] == labels[None, :]
    pos = same & ~eye

    # log-softmax over k != i
    masked = np.where(eye, -np.inf, sim)
    row_max = masked.max(axis=1, keepdims=True)
    exp_others = np.where(eye, 0.0, np.exp(sim - row_max))
    denom = exp_others.sum(axis=1, keepdims=True)
    log_denom = row_max + np.log(denom)
    soft = exp_others / denom  # softmax over the denominator set

    dsim = np.zeros((n, n))
    if not include_anchor:
        n_pos = pos.sum(axis=1)
        anchors = n_pos > 0
        if not anchors.any():
            return LossResult(0.0, np.zeros_like(z), degenerate=True)
        log_prob = sim - log_denom
        per_anchor = -(np.where(pos, log_prob, 0.0).sum(axis=1)[anchors] / n_pos[anchors])
        value = float(per_anchor.mean())
        scale = 1.0 / anchors.sum()
        inv_pos = np.where(anchors, 1.0 / np.maximum(n_pos, 1), 0.0)
        dsim = scale * (soft * anchors[:, None] - pos * inv_pos[:, None])
    else:
        n_same = same.sum(axis=1)
        num_max = np.where(same, sim, -np.inf).max(axis=1, keepdims=True)
        exp_same = np.where(same, np.exp(sim - num_max), 0.0)
        num = exp_same.sum(axis=1, keepdims=True)
        log_num = num_max + np.log(num)
        per_anchor = -(log_num - log_denom)[:, 0] / n_same
        value = float(per_anchor.sum())
        dsim = (soft - exp_same / num) / n_same[:, None]

    # sim = z z^T / tau, so dL/dz = (dS + dS^T) z / tau
    grad = (dsim + dsim.T) @ z / tau
    return LossResult(value, grad)


def hybrid(ce, sc, lam):
    """Convex combination ``lam * CE + (1 - lam) * SC`` of values and gradients."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    value = lam * ce.value + (1.0 - lam) * sc.value
    return HybridResult(
        value=value,
        ce=ce.value,
        sc=sc.value,
        grad_logits=lam * ce.grad,
        grad_z=(1.0 - lam) * sc.grad,
        degenerate=sc.degenerate,
    )
