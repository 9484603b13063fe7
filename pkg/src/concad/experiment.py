"""Manifest-driven experiments: train, cross-validate, limited-label runs.

A manifest is a YAML document with ``data``, ``model`` and ``train``
sections (plus optional ``crossval`` and ``subset``); see
``configs/desk.yaml``. ``train.epochs``, ``train.lam`` and ``train.tau`` must
be given explicitly. Every results file embeds the SHA-256 of the manifest
text and the seed.
"""

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np
import yaml

from .engine.init import RngStream
from .model import ConfigError, ModelConfig, init_model
from .signal.dataset import load_prepared
from .signal.io import DataError
from .synthetic import make_hr_dataset
from .training import (
    TrainConfig,
    evaluate,
    kfold_split,
    subset_fraction,
    train,
    write_epoch_logs,
)

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "configs")
REQUIRED_TRAIN_KEYS = ("epochs", "lam", "tau")


def preset_path(name):
    return os.path.join(CONFIG_DIR, f"{name}.yaml")


def load_model_config(ref, base_dir="."):
    if isinstance(ref, dict):
        return ModelConfig.from_dict(ref)
    path = ref if os.path.isabs(ref) else os.path.join(base_dir, ref)
    if not os.path.exists(path):
        path = preset_path(ref)
    if not os.path.exists(path):
        raise ConfigError(f"model config {ref!r} not found")
    return ModelConfig.load(path)


@dataclass
class Experiment:
    text: str
    spec: dict
    base_dir: str

    @classmethod
    def load(cls, path):
        with open(path) as f:
            text = f.read()
        return cls.from_text(text, os.path.dirname(os.path.abspath(path)))

    @classmethod
    def from_text(cls, text, base_dir="."):
        spec = yaml.safe_load(text)
        if not isinstance(spec, dict):
            raise ConfigError("manifest must be a mapping")
        for section in ("data", "model", "train"):
            if section not in spec:
                raise ConfigError(f"manifest lacks a '{section}' section")
        missing = [k for k in REQUIRED_TRAIN_KEYS if k not in spec["train"]]
        if missing:
            raise ConfigError(f"manifest train section must set {missing}")
        return cls(text, spec, base_dir)

    @property
    def config_hash(self):
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def train_config(self, **overrides):
        d = dict(self.spec["train"])
        d.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return TrainConfig(**d)
        except TypeError as e:
            raise ConfigError(f"bad train section: {e}") from None

    def model_config(self):
        return load_model_config(self.spec["model"], self.base_dir)

    def _path(self, p):
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    def datasets(self, data_dir=None):
        """Return ``(train_bundles, eval_bundles or None)``."""
        d = self.spec["data"]
        kind = d.get("kind", "prepared")
        if kind == "synthetic":
            tr = make_hr_dataset(n_bundles=d.get("n_bundles", 200), seed=d.get("seed", 0)).bundles
            ev = None
            if d.get("eval_n_bundles"):
                ev = make_hr_dataset(n_bundles=d["eval_n_bundles"], seed=d.get("eval_seed", 1)).bundles
            return tr, ev
        if kind != "prepared":
            raise ConfigError(f"unknown data kind {kind!r}")
        path = data_dir or d.get("path")
        if not path:
            raise ConfigError("prepared data needs a path (manifest data.path or --data-dir)")
        tr, _, _ = load_prepared(self._path(path) if not data_dir else path)
        ev = None
        if d.get("eval_path"):
            ev, _, _ = load_prepared(self._path(d["eval_path"]))
        return tr, ev

    def header(self, seed):
        return {"config_hash": self.config_hash, "seed": seed}


def _check_lengths(cfg, bundles):
    if bundles[0].ecg.size != cfg.ecg_length or bundles[0].rri.size != cfg.expert_length:
        raise DataError(
            f"data lengths (ecg {bundles[0].ecg.size}, expert {bundles[0].rri.size}) do not match "
            f"the model config (ecg {cfg.ecg_length}, expert {cfg.expert_length})")


def write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _prepare_out(exp, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "manifest.yaml"), "w") as f:
        f.write(exp.text)


def run_train(exp, out_dir, data_dir=None, seed=None, fraction=None, overrides=None):
    """Train once; with ``fraction`` the training set is first subsampled.

    ``overrides`` replaces keys of the manifest's train section.
    """
    cfg = exp.train_config(seed=seed, **(overrides or {}))
    mcfg = exp.model_config()
    train_b, eval_b = exp.datasets(data_dir)
    _check_lengths(mcfg, train_b)
    if fraction is not None:
        sub = exp.spec.get("subset", {})
        train_b = subset_fraction(train_b, fraction, cfg.seed, sub.get("stratified", True))
    _prepare_out(exp, out_dir)
    model = init_model(mcfg, RngStream(cfg.seed))
    model, logs = train(model, train_b, cfg, eval_b, out_dir, extra_meta=exp.header(cfg.seed))
    result = exp.header(cfg.seed)
    result["train_config"] = cfg.to_dict()
    result["n_train"] = len(train_b)
    if fraction is not None:
        result["fraction"] = fraction
    result["train_metrics"] = evaluate(model, train_b).to_dict()
    if eval_b:
        result["eval_metrics"] = evaluate(model, eval_b).to_dict()
        best = [l.eval_macro_f1 for l in logs if l.eval_macro_f1 is not None]
        result["best_eval_macro_f1"] = max(best) if best else None
    result["final_losses"] = {"hybrid": logs[-1].loss, "ce": logs[-1].ce, "sc": logs[-1].sc}
    write_json(os.path.join(out_dir, "metrics.json"), result)
    write_epoch_logs(os.path.join(out_dir, "epochs.csv"), logs)
    return result, model


def run_crossval(exp, out_dir, data_dir=None, seed=None, folds=None, fold_mode=None):
    cfg = exp.train_config(seed=seed)
    mcfg = exp.model_config()
    bundles, _ = exp.datasets(data_dir)
    _check_lengths(mcfg, bundles)
    cv = exp.spec.get("crossval", {})
    k = folds or cv.get("folds", 10)
    mode = fold_mode or cv.get("mode", "segment")
    plan = kfold_split(bundles, k, mode, cfg.seed)
    _prepare_out(exp, out_dir)
    fold_results = []
    for i in range(plan.k):
        tr_idx, ev_idx = plan.split(i)
        tr = [bundles[j] for j in tr_idx]
        ev = [bundles[j] for j in ev_idx]
        fold_dir = os.path.join(out_dir, f"fold{i:02d}")
        os.makedirs(fold_dir, exist_ok=True)
        model = init_model(mcfg, RngStream(cfg.seed).child("fold", i))
        model, logs = train(model, tr, cfg, ev, fold_dir, extra_meta=dict(exp.header(cfg.seed), fold=i))
        write_epoch_logs(os.path.join(fold_dir, "epochs.csv"), logs)
        fold_results.append(evaluate(model, ev).to_dict())
    acc = np.array([r["accuracy"] for r in fold_results])
    f1 = np.array([r["macro_f1"] for r in fold_results])
    result = exp.header(cfg.seed)
    result.update({
        "folds": k,
        "fold_mode": mode,
        "per_fold": fold_results,
        "mean_accuracy": float(acc.mean()),
        "std_accuracy": float(acc.std()),
        "mean_macro_f1": float(f1.mean()),
        "std_macro_f1": float(f1.std()),
    })
    write_json(os.path.join(out_dir, "metrics.json"), result)
    return result

