"""Trainable parameters and the AMSGrad optimizer."""

import numpy as np


class Parameter:
    """A trainable array with its gradient and AMSGrad state.

    ``decay`` marks parameters that receive the L2 penalty (extractor
    convolution kernels).
    """

    def __init__(self, value, decay=False):
        self.value = np.array(value, dtype=np.float64)
        self.grad = None
        self.decay = decay
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.v_hat = np.zeros_like(self.value)
        self.step = 0

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def accumulate(self, grad):
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.value.shape:
            raise ValueError(f"gradient shape {grad.shape} != parameter shape {self.value.shape}")
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Parameter(shape={self.value.shape}, decay={self.decay})"


class AMSGrad:
    """Adam with the running maximum of the second moment and bias correction.

    The L2 term ``2 * l2 * theta`` is added to the gradient of parameters
    flagged ``decay``.
    """

    def __init__(self, lr=0.005, beta1=0.9, beta2=0.999, epsilon=1e-7, l2=0.0):
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.l2 = l2

    def step(self, params, lr=None):
        lr = self.lr if lr is None else lr
        for name, p in _named(params):
            if p.grad is None:
                raise ValueError(f"parameter {name} has no gradient")
            g = p.grad
            if p.decay and self.l2:
                g = g + 2.0 * self.l2 * p.value
            p.step += 1
            p.m = self.beta1 * p.m + (1.0 - self.beta1) * g
            p.v = self.beta2 * p.v + (1.0 - self.beta2) * g * g
            p.v_hat = np.maximum(p.v_hat, p.v)
            m_hat = p.m / (1.0 - self.beta1 ** p.step)
            v_corr = p.v_hat / (1.0 - self.beta2 ** p.step)
            p.value -= lr * m_hat / (np.sqrt(v_corr) + self.epsilon)


def amsgrad_step(params, lr, beta1=0.9, beta2=0.999, epsilon=1e-7, weight_decay_l2=0.0):
    AMSGrad(lr, beta1, beta2, epsilon, weight_decay_l2).step(params)


def _named(params):
    if isinstance(params, dict):
        return params.items()
    return ((str(i), p) for i, p in enumerate(params))
