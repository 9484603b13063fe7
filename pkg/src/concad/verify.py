"""Whole-model finite-difference gradient check.

The loss is the hybrid objective evaluated in train mode (batch statistics
in batch norm, dropout active) on a small random batch. Dropout masks come
from a stream rebuilt on every evaluation so the function being
differentiated is fixed.
"""

from dataclasses import dataclass

import numpy as np

from .engine.gradcheck import check_parameters
from .engine.init import RngStream
from .losses import cross_entropy_with_logits, hybrid, supervised_contrastive
from .model import init_model


@dataclass
class GradcheckReport:
    errors: dict
    n_params: int
    n_checked: int

    @property
    def max_error(self):
        return max(self.errors.values())

    @property
    def worst(self):
        return max(self.errors, key=self.errors.get)


def random_batch(config, n, rng):
    ecg = rng.normal(size=(n, config.ecg_length))
    rri = rng.normal(size=(n, config.expert_length))
    rpe = rng.normal(size=(n, config.expert_length))
    labels = np.arange(n) % 2
    return ecg, rri, rpe, labels


def model_gradcheck(config, n=4, seed=0, lam=0.5, tau=0.5, max_coords=None, step=1e-5):
    """Compare every parameter gradient of the hybrid loss with central differences.

    ``max_coords`` caps the coordinates checked per tensor (chosen at random);
    None checks all of them.
    """
    root = RngStream(seed)
    model = init_model(config, root.child("init"))
    ecg, rri, rpe, labels = random_batch(config, n, root.child("data"))
    params = model.parameters(include_proj=True)

    def forward():
        out = model.forward(ecg, rri, rpe, "train", RngStream(seed).child("dropout"), with_proj=True)
        ce = cross_entropy_with_logits(out.logits, labels)
        sc = supervised_contrastive(out.z, labels, tau)
        return hybrid(ce, sc, lam)

    def loss_and_backward():
        res = forward()
        model.backward(res.grad_logits, res.grad_z)
        return res.value

    errors = check_parameters(loss_and_backward, params, step, max_coords, root.child("coords"),
                              loss=lambda: forward().value)
    n_params = sum(p.size for p in params.values())
    n_checked = sum(p.size if max_coords is None else min(p.size, max_coords) for p in params.values())
    return GradcheckReport(errors, n_params, n_checked)
