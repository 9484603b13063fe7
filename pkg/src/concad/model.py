"""Three-branch convolutional network with softmax-gated cross attention.

Per modality (ECG, RRI, RPE) a convolutional extractor maps the input to a
``[time, channels]`` feature map, the attention layer projects each map to a
shared ``k``-vector, gates the three vectors with a softmax over learned
scores and sums them into the fused vector ``c``. Two heads read ``c``: a
projection head (dense + L2 normalization) used only by the contrastive loss,
and a classifier (dense/ReLU stack ending in a 2-way softmax).
"""

import re
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
import yaml

from .engine import ops
from .engine.init import RngStream, he_normal_init
from .engine.optim import Parameter

MODALITIES = ("ecg", "rri", "rpe")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# extractor specs
# --------------------------------------------------------------------------

@dataclass
class Block:
    filters: int
    kernel: int
    stride: int
    pool: int = 0
    dropout: float = 0.0

    def __str__(self):
        s = f"ConvBlock({self.filters},{self.kernel},{self.stride})"
        if self.pool:
            s += f"-MaxPool({self.pool})"
        if self.dropout:
            s += f"-Dropout({self.dropout:g})"
        return s


_TOKEN = re.compile(r"^\s*(ConvBlock|MaxPool|Dropout)\s*\(([^)]*)\)\s*$")


def parse_extractor(text):
    """Parse ``ConvBlock(f,k,s)-MaxPool(p)-Dropout(r)-...`` into a block list."""
    blocks = []
    for raw in text.split("-"):
        if not raw.strip():
            continue
        m = _TOKEN.match(raw)
        if not m:
            raise ConfigError(f"cannot parse extractor token {raw!r}")
        kind, args = m.group(1), [a.strip() for a in m.group(2).split(",")]
        if kind == "ConvBlock":
            if len(args) != 3:
                raise ConfigError(f"ConvBlock needs 3 arguments, got {raw!r}")
            f, k, s = (int(a) for a in args)
            if min(f, k, s) < 1:
                raise ConfigError(f"ConvBlock arguments must be positive: {raw!r}")
            blocks.append(Block(f, k, s))
            continue
        if not blocks:
            raise ConfigError(f"{kind} before any ConvBlock")
        if kind == "MaxPool":
            blocks[-1].pool = int(args[0])
        else:
            rate = float(args[0])
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"dropout rate out of range in {raw!r}")
            blocks[-1].dropout = rate
    if not blocks:
        raise ConfigError("extractor spec has no ConvBlock")
    if blocks[-1].pool or blocks[-1].dropout:
        raise ConfigError("the last block must not pool or drop out")
    return blocks


def format_extractor(blocks):
    return "-".join(str(b) for b in blocks)


def extractor_output_shape(blocks, time):
    """Return ``(m, n)`` after the block stack, tracking valid-conv shrinkage."""
    channels = 1
    for i, b in enumerate(blocks):
        if time < b.kernel:
            raise ConfigError(f"block {i} ({b}): time length {time} < kernel {b.kernel}")
        time = (time - b.kernel) // b.stride + 1
        channels = b.filters
        if b.pool:
            if time < b.pool:
                raise ConfigError(f"block {i} ({b}): time length {time} < pool {b.pool}")
            time //= b.pool
    return time, channels


# --------------------------------------------------------------------------
# model config
# --------------------------------------------------------------------------

@dataclass
class ModelConfig:
    ecg: str
    rri: str
    rpe: str
    ecg_length: int
    expert_length: int
    k: int = 64
    proj_dim: int = 32
    clf_hidden: List[int] = field(default_factory=lambda: [64])

    def blocks(self, modality):
        return parse_extractor(getattr(self, modality))

    def input_length(self, modality):
        return self.ecg_length if modality == "ecg" else self.expert_length

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown model config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(yaml.safe_load(f))


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------

class Extractor:
    """Conv -> BN -> ReLU (-> MaxPool -> Dropout) per block."""

    def __init__(self, blocks, rng, name, in_channels=1):
        self.blocks = blocks
        self.name = name
        self.params = OrderedDict()
        self.buffers = OrderedDict()
        cin = in_channels
        for i, b in enumerate(blocks):
            pre = f"{name}.{i}"
            self.params[f"{pre}.kernel"] = Parameter(
                he_normal_init((b.kernel, cin, b.filters), b.kernel * cin, rng), decay=True)
            self.params[f"{pre}.gamma"] = Parameter(np.ones(b.filters))
            self.params[f"{pre}.beta"] = Parameter(np.zeros(b.filters))
            self.buffers[f"{pre}.running_mean"] = np.zeros(b.filters)
            self.buffers[f"{pre}.running_var"] = np.ones(b.filters)
            cin = b.filters
        self._caches = None

    def _p(self, i, what):
        return self.params[f"{self.name}.{i}.{what}"].value

    def forward(self, x, mode="infer", rng=None):
        caches = []
        for i, b in enumerate(self.blocks):
            pre = f"{self.name}.{i}"
            if x.shape[1] < b.kernel:
                raise ConfigError(
                    f"{self.name} block {i} ({b}): time length {x.shape[1]} < kernel {b.kernel}")
            # no conv bias: the batch-norm shift absorbs it
            x, c_conv = ops.conv1d_forward(x, self._p(i, "kernel"), np.zeros(b.filters), b.stride)
            x, c_bn = ops.batchnorm1d_forward(
                x, self._p(i, "gamma"), self._p(i, "beta"),
                self.buffers[f"{pre}.running_mean"], self.buffers[f"{pre}.running_var"], mode)
            x, c_relu = ops.relu_forward(x)
            c_pool = c_drop = None
            if b.pool:
                if x.shape[1] < b.pool:
                    raise ConfigError(
                        f"{self.name} block {i} ({b}): time length {x.shape[1]} < pool {b.pool}")
                x, c_pool = ops.maxpool1d_forward(x, b.pool)
            if b.dropout:
                x, c_drop = ops.dropout_forward(x, b.dropout, mode, rng)
            caches.append((c_conv, c_bn, c_relu, c_pool, c_drop))
        self._caches = caches
        return x

    def backward(self, dout):
        for i in reversed(range(len(self.blocks))):
            c_conv, c_bn, c_relu, c_pool, c_drop = self._caches[i]
            pre = f"{self.name}.{i}"
            dout = ops.dropout_backward(dout, c_drop)
            if c_pool is not None:
                dout = ops.maxpool1d_backward(dout, c_pool)
            dout = ops.relu_backward(dout, c_relu)
            dout, dgamma, dbeta = ops.batchnorm1d_backward(dout, c_bn)
            self.params[f"{pre}.gamma"].accumulate(dgamma)
            self.params[f"{pre}.beta"].accumulate(dbeta)
            dout, dw, _ = ops.conv1d_backward(dout, c_conv)
            self.params[f"{pre}.kernel"].accumulate(dw)
        return dout


@dataclass
class AttentionOutput:
    alpha: np.ndarray       # [B, 3]
    context: np.ndarray     # [B, k]
    projected: list         # 3 x [B, k]
    logits: np.ndarray      # [B, 3]


class CrossAttention:
    """Per modality ``x'' = u^T x' V``, scores ``w . x'' + b``, softmax gate, weighted sum."""

    def __init__(self, shapes, k, rng):
        self.k = k
        self.params = OrderedDict()
        for mod, (m, n) in zip(MODALITIES, shapes):
            self.params[f"att.{mod}.u"] = Parameter(he_normal_init((m,), m, rng))
            self.params[f"att.{mod}.V"] = Parameter(he_normal_init((n, k), n, rng))
            self.params[f"att.{mod}.w"] = Parameter(he_normal_init((k,), k, rng))
            self.params[f"att.{mod}.b"] = Parameter(np.zeros(1))
        self._cache = None

    def forward(self, features):
        out = cross_attention(self.params, *features)
        self._cache = (features, out)
        return out

    def backward(self, dcontext):
        features, out = self._cache
        alpha = out.alpha
        dalpha = np.stack([(dcontext * xp).sum(axis=1) for xp in out.projected], axis=1)
        dlogits = alpha * (dalpha - (dalpha * alpha).sum(axis=1, keepdims=True))
        dfeatures = []
        for i, mod in enumerate(MODALITIES):
            x = features[i]
            u = self.params[f"att.{mod}.u"].value
            V = self.params[f"att.{mod}.V"].value
            w = self.params[f"att.{mod}.w"].value
            xp = out.projected[i]
            dxp = alpha[:, i : i + 1] * dcontext + dlogits[:, i : i + 1] * w
            self.params[f"att.{mod}.w"].accumulate(dlogits[:, i] @ xp)
            self.params[f"att.{mod}.b"].accumulate(np.array([dlogits[:, i].sum()]))
            # xp[b] = sum_t sum_c u[t] x[b,t,c] V[c,:]
            pooled = np.einsum("t,btc->bc", u, x)
            self.params[f"att.{mod}.V"].accumulate(pooled.T @ dxp)
            dpooled = dxp @ V.T  # [B, n]
            self.params[f"att.{mod}.u"].accumulate(np.einsum("btc,bc->t", x, dpooled))
            dfeatures.append(u[None, :, None] * dpooled[:, None, :])
        return dfeatures


def cross_attention(params, x_ecg, x_rri, x_rpe):
    """Fuse three ``[B, m_i, n_i]`` feature maps into ``[B, k]`` context vectors."""
    projected, logits = [], []
    ks = set()
    for mod, x in zip(MODALITIES, (x_ecg, x_rri, x_rpe)):
        u = params[f"att.{mod}.u"].value
        V = params[f"att.{mod}.V"].value
        w = params[f"att.{mod}.w"].value
        b = params[f"att.{mod}.b"].value
        if x.ndim != 3 or x.shape[1] != u.shape[0] or x.shape[2] != V.shape[0]:
            raise ValueError(
                f"{mod} features of shape {x.shape} do not match u {u.shape} / V {V.shape}")
        ks.add(V.shape[1])
        xp = np.einsum("t,btc->bc", u, x) @ V
        projected.append(xp)
        logits.append(xp @ w + b[0])
    if len(ks) != 1:
        raise ValueError(f"modalities project to different sizes {sorted(ks)}")
    logits = np.stack(logits, axis=1)
    alpha = ops.softmax(logits, axis=1)
    context = sum(alpha[:, i : i + 1] * projected[i] for i in range(3))
    return AttentionOutput(alpha, context, projected, logits)


class Dense:
    def __init__(self, n_in, n_out, rng, name):
        self.name = name
        self.params = OrderedDict()
        self.params[f"{name}.weight"] = Parameter(he_normal_init((n_in, n_out), n_in, rng))
        self.params[f"{name}.bias"] = Parameter(np.zeros(n_out))
        self._cache = None

    def forward(self, x):
        out, self._cache = ops.dense_forward(
            x, self.params[f"{self.name}.weight"].value, self.params[f"{self.name}.bias"].value)
        return out

    def backward(self, dout):
        dx, dw, db = ops.dense_backward(dout, self._cache)
        self.params[f"{self.name}.weight"].accumulate(dw)
        self.params[f"{self.name}.bias"].accumulate(db)
        return dx


# --------------------------------------------------------------------------
# full model
# --------------------------------------------------------------------------

@dataclass
class Standardizer:
    """Per-modality z-scoring with statistics from the training set."""

    mean: dict = field(default_factory=lambda: {m: 0.0 for m in MODALITIES})
    std: dict = field(default_factory=lambda: {m: 1.0 for m in MODALITIES})

    @classmethod
    def fit(cls, bundles):
        mean, std = {}, {}
        for mod in MODALITIES:
            vals = np.concatenate([getattr(b, mod) for b in bundles])
            mean[mod] = float(vals.mean())
            s = float(vals.std())
            std[mod] = s if s > 0 else 1.0
        return cls(mean, std)

    def apply(self, mod, x):
        return (x - self.mean[mod]) / self.std[mod]


@dataclass
class ForwardOutput:
    z: Optional[np.ndarray]
    logits: np.ndarray
    probs: np.ndarray
    attention: AttentionOutput


class ConcadModel:
    def __init__(self, config, rng):
        self.config = config
        shapes = []
        self.extractors = OrderedDict()
        for mod in MODALITIES:
            blocks = config.blocks(mod)
            try:
                shapes.append(extractor_output_shape(blocks, config.input_length(mod)))
            except ConfigError as e:
                raise ConfigError(f"{mod} extractor: {e}") from None
            self.extractors[mod] = Extractor(blocks, rng, mod)
        self.feature_shapes = shapes
        self.attention = CrossAttention(shapes, config.k, rng)
        self.proj = Dense(config.k, config.proj_dim, rng, "proj")
        self.clf = []
        n_in = config.k
        for i, width in enumerate(list(config.clf_hidden) + [2]):
            self.clf.append(Dense(n_in, width, rng, f"clf.{i}"))
            n_in = width
        self.standardizer = Standardizer()
        self._cache = None

    # parameters ----------------------------------------------------------
    def parameters(self, include_proj=True):
        out = OrderedDict()
        for ex in self.extractors.values():
            out.update(ex.params)
        out.update(self.attention.params)
        if include_proj:
            out.update(self.proj.params)
        for layer in self.clf:
            out.update(layer.params)
        return out

    def buffers(self):
        out = OrderedDict()
        for ex in self.extractors.values():
            out.update(ex.buffers)
        return out

    def parameter_count(self, include_proj=True):
        return sum(p.size for p in self.parameters(include_proj).values())

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    # forward / backward --------------------------------------------------
    def forward(self, ecg, rri, rpe, mode="infer", rng=None, with_proj=None):
        """Run the network on raw ``[B, T]`` (or ``[B, T, 1]``) arrays.

        ``with_proj`` defaults to True in train mode and False in infer mode.
        """
        if with_proj is None:
            with_proj = mode == "train"
        feats = []
        for mod, x in zip(MODALITIES, (ecg, rri, rpe)):
            x = np.asarray(x, dtype=np.float64)
            if x.ndim == 2:
                x = x[:, :, None]
            x = self.standardizer.apply(mod, x)
            feats.append(self.extractors[mod].forward(x, mode, rng))
        att = self.attention.forward(feats)
        c = att.context
        z = None
        proj_cache = None
        if with_proj:
            h = self.proj.forward(c)
            z, proj_cache = ops.l2_normalize_forward(h, axis=1)
        h = c
        relu_caches = []
        for layer in self.clf[:-1]:
            h, mask = ops.relu_forward(layer.forward(h))
            relu_caches.append(mask)
        logits = self.clf[-1].forward(h)
        probs = ops.softmax(logits, axis=1)
        ops.check_finite(logits, "classifier logits")
        self._cache = (proj_cache, relu_caches)
        return ForwardOutput(z, logits, probs, att)

    def backward(self, grad_logits, grad_z=None):
        proj_cache, relu_caches = self._cache
        dh = self.clf[-1].backward(grad_logits)
        for layer, mask in zip(reversed(self.clf[:-1]), reversed(relu_caches)):
            dh = layer.backward(ops.relu_backward(dh, mask))
        dc = dh
        if grad_z is not None:
            if proj_cache is None:
                raise ValueError("projection head was not run in the forward pass")
            dc = dc + self.proj.backward(ops.l2_normalize_backward(grad_z, proj_cache))
        dfeats = self.attention.backward(dc)
        for mod, d in zip(MODALITIES, dfeats):
            self.extractors[mod].backward(d)

    def forward_bundles(self, bundles, mode="infer", rng=None, with_proj=None):
        ecg, rri, rpe = stack_bundles(bundles)
        return self.forward(ecg, rri, rpe, mode, rng, with_proj)

    # state ---------------------------------------------------------------
    def state_dict(self):
        state = OrderedDict((n, p.value) for n, p in self.parameters().items())
        state.update(self.buffers())
        return state

    def load_state_dict(self, state):
        params = self.parameters()
        bufs = self.buffers()
        missing = (set(params) | set(bufs)) - set(state)
        if missing:
            raise ValueError(f"checkpoint is missing tensors: {sorted(missing)[:5]}")
        for name, p in params.items():
            if state[name].shape != p.value.shape:
                raise ValueError(f"shape mismatch for {name}: {state[name].shape} vs {p.value.shape}")
            p.value[...] = state[name]
        for name, buf in bufs.items():
            buf[...] = state[name]

    def meta(self):
        return {
            "model_config": self.config.to_dict(),
            "standardizer": {"mean": self.standardizer.mean, "std": self.standardizer.std},
        }

    def save(self, path, extra_meta=None):
        from .engine.checkpoint import save_checkpoint

        meta = self.meta()
        meta.update(extra_meta or {})
        save_checkpoint(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path):
        from .engine.checkpoint import load_checkpoint

        state, meta = load_checkpoint(path)
        model = cls(ModelConfig.from_dict(meta["model_config"]), RngStream(0))
        model.load_state_dict(state)
        st = meta.get("standardizer")
        if st:
            model.standardizer = Standardizer(st["mean"], st["std"])
        return model, meta


def stack_bundles(bundles):
    ecg = np.stack([b.ecg for b in bundles])
    rri = np.stack([b.rri for b in bundles])
    rpe = np.stack([b.rpe for b in bundles])
    return ecg, rri, rpe


def init_model(config, rng):
    """He-normal weights, zero biases, unit BN scale."""
    if isinstance(rng, (int, np.integer)):
        rng = RngStream(rng)
    return ConcadModel(config, rng)


def heads_forward(model, c, mode="infer"):
    """Apply the heads to fused vectors ``c``; ``z`` is None in infer mode."""
    z = None
    if mode == "train":
        z = ops.l2_normalize(model.proj.forward(c), axis=1)
    h = c
    for layer in model.clf[:-1]:
        h = ops.relu(layer.forward(h))
    return z, ops.softmax(model.clf[-1].forward(h), axis=1)


def model_forward(model, bundles, mode="infer", rng=None):
    out = model.forward_bundles(bundles, mode, rng)
    return out.z, out.probs, out.attention


def extractor_forward(blocks, params, x, mode="infer", rng=None):
    """Run an extractor given a block list and a pre-built parameter container.

    ``params`` is an :class:`Extractor` instance (parameters and BN buffers).
    """
    if params.blocks != blocks:
        raise ConfigError("parameter container was built for a different block list")
    return params.forward(np.asarray(x, dtype=np.float64), mode, rng)
