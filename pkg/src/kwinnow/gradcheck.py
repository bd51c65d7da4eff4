"""Finite-difference gradient checking.

The analytic gradient from backward() is compared against a central
difference computed by wiggling one entry of the underlying array at a
time. The comparison runs in float64; float32 does not have enough
mantissa for an h of 1e-5 to say anything useful.
"""

from __future__ import annotations

import numpy as np

from .errors import UsageError
from .tensor import Tensor


def numerical_gradient(build_loss, param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of build_loss() w.r.t. param.data.

    build_loss must be a zero-argument callable returning a scalar
    Tensor, recomputed from the current contents of param.data. Entries
    of param.data are perturbed in place and restored.
    """
    if param.data.dtype != np.float64:
        raise UsageError(
            f"numerical_gradient needs float64 parameters, "
            f"got {param.data.dtype}")
    flat = param.data.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        up = float(build_loss().data)
        flat[i] = saved - h
        down = float(build_loss().data)
        flat[i] = saved
        grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(param.data.shape)


def analytic_gradient(build_loss, param: Tensor) -> np.ndarray:
    """Gradient of build_loss() w.r.t. param via one backward pass."""
    param.zero_grad()
    loss = build_loss()
    loss.backward()
    if param.grad is None:
        return np.zeros_like(param.data)
    return param.grad.copy()


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max-norm relative disagreement, bounded away from 0/0."""
    num = float(np.max(np.abs(a - b))) if a.size else 0.0
    den = float(np.max(np.abs(a)) + np.max(np.abs(b))) if a.size else 0.0
    return num / max(den, 1e-12)


def check_gradients(build_loss, params, h: float = 1e-5) -> dict:
    """Compare analytic and numeric gradients for each named parameter.

    params is a mapping of name -> Tensor. Returns name -> relative
    error so callers can assert their own threshold.
    """
    report = {}
    for name, p in params.items():
        if not p.requires_grad:
            continue
        ana = analytic_gradient(build_loss, p)
        num = numerical_gradient(build_loss, p, h=h)
        report[name] = relative_error(ana, num)
    return report
