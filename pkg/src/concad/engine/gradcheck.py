"""Central finite-difference gradient checks."""

import numpy as np


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(f, x, step=1e-5, coords=None):
    """Central differences of scalar ``f`` at ``x``, perturbing ``x`` in place.

    ``coords`` optionally restricts the flat indices evaluated; the others are
    left at zero. The differences are taken in ``x``'s dtype.
    """
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size) if coords is None else coords:
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def grad_check(fn, point, step=1e-5, dtype=np.float64):
    """Max relative error between ``fn``'s analytic gradient and central differences.

    ``fn(x)`` must return ``(value, gradient)``. With ``dtype=np.longdouble``
    (and an ``fn`` that keeps its value unrounded) the differences lose less
    to cancellation, which matters for coordinates far below the gradient's
    overall scale.
    """
    value, analytic = fn(np.array(point, dtype=np.float64))
    if not np.isfinite(value) or not np.all(np.isfinite(analytic)):
        raise FloatingPointError("non-finite value or gradient at the check point")
    x = np.array(point, dtype=dtype)
    numeric = numeric_gradient(lambda: fn(x.copy())[0], x, step)
    return float(relative_error(analytic, numeric).max())


def check_parameters(loss_and_backward, params, step=1e-5, max_coords=None, rng=None, loss=None):
    """Compare analytic parameter gradients against central differences.

    ``loss_and_backward()`` runs a full forward/backward pass, leaving
    gradients on ``params`` (a name -> Parameter mapping), and returns the
    loss. ``loss()``, if given, evaluates the loss without the backward pass
    for the finite differences. Returns ``{name: max relative error}``.
    """
    for p in params.values():
        p.zero_grad()
    loss_and_backward()
    analytic = {name: p.grad.copy() for name, p in params.items()}

    def rerun():
        for p in params.values():
            p.zero_grad()
        return loss_and_backward()

    loss_only = loss if loss is not None else rerun

    errors = {}
    for name, p in params.items():
        coords = None
        if max_coords is not None and p.size > max_coords:
            coords = np.sort(rng.choice(p.size, size=max_coords, replace=False))
        numeric = numeric_gradient(loss_only, p.value, step, coords)
        a = analytic[name].reshape(-1)
        n = numeric.reshape(-1)
        if coords is not None:
            a, n = a[coords], n[coords]
        errors[name] = float(relative_error(a, n).max())
    return errors
