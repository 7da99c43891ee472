"""Finite-difference gradient checking.

The checker evaluates the scalar function twice per coordinate (central
differences) and never touches the reverse-mode machinery, so it serves
as an independent oracle for it.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor

__all__ = ["finite_difference_grad", "check_gradients", "relative_error"]


def finite_difference_grad(fn, tensors: dict[str, Tensor], name: str, step: float = 1e-5) -> np.ndarray:
    """Central-difference d fn / d tensors[name], evaluated elementwise."""
    target = tensors[name]
    grad = np.zeros_like(target.data)
    flat = target.data.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = float(fn(tensors).data)
        flat[i] = keep - step
        lo = float(fn(tensors).data)
        flat[i] = keep
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(fn, tensors: dict[str, Tensor], step: float = 1e-5,
                    rel_tol: float = 1e-4) -> dict[str, float]:
    """Compare reverse-mode grads of scalar ``fn`` against central differences.

    Returns the per-tensor relative errors; raises AssertionError when a
    tensor with requires_grad exceeds ``rel_tol``.
    """
    for t in tensors.values():
        t.zero_grad()
    out = fn(tensors)
    out.backward()
    errors = {}
    for name, t in tensors.items():
        if not t.requires_grad:
            continue
        numeric = finite_difference_grad(fn, tensors, name, step=step)
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        errors[name] = relative_error(analytic, numeric)
        if errors[name] > rel_tol:
            raise AssertionError(
                f"gradient mismatch for {name!r}: rel error {errors[name]:.3e} > {rel_tol:.1e}"
            )
    return errors
