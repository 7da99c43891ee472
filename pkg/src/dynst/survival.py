"""Deterministic survival quantities on discrete hourly time grids.

Curves are plain numpy arrays indexed by t = 1..t_max (array index 0 is
t = 1). Hazard curves hold per-step failure probabilities in [0, 1];
survival curves hold P(T > t) and are non-increasing.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DomainError

__all__ = [
    "validate_hazard",
    "validate_survival",
    "survival_from_hazard",
    "expected_survival_time",
    "rmst",
    "censored_mae",
    "restricted_observed",
]


def validate_hazard(h: np.ndarray) -> np.ndarray:
    """Check a hazard curve (or stack of curves) is elementwise in [0, 1]."""
    h = np.asarray(h, dtype=float)
    if h.size == 0:
        raise ContractError("hazard curve is empty")
    if np.any(h < 0.0) or np.any(h > 1.0):
        raise DomainError("hazard values must lie in [0, 1]")
    return h


def validate_survival(s: np.ndarray) -> np.ndarray:
    """Check a survival curve (or stack) is in [0, 1] and non-increasing in t."""
    s = np.asarray(s, dtype=float)
    if s.size == 0:
        raise ContractError("survival curve is empty")
    if np.any(s < 0.0) or np.any(s > 1.0):
        raise DomainError("survival probabilities must lie in [0, 1]")
    if s.shape[-1] > 1 and np.any(np.diff(s, axis=-1) > 1e-12):
        raise DomainError("survival curve must be non-increasing in t")
    return s


def survival_from_hazard(h: np.ndarray) -> np.ndarray:
    """S(t) = prod_{tau<=t} (1 - h(tau)) along the last axis."""
    h = validate_hazard(h)
    return np.cumprod(1.0 - h, axis=-1)


def expected_survival_time(s: np.ndarray) -> float | np.ndarray:
    """Expected survival time in hours: the sum of S(t) over t = 1..t_max."""
    s = validate_survival(s)
    return s.sum(axis=-1)


def rmst(s: np.ndarray, tau: int) -> float:
    """Mean restricted survival time of a cohort at cutoff ``tau``.

    ``s`` is one curve (t_max,) or a cohort stack (n, t_max). Each
    patient contributes sum_{t=1..tau} S(t); the result is the mean
    over patients.
    """
    s = validate_survival(s)
    t_max = s.shape[-1]
    tau = int(tau)
    if not 1 <= tau <= t_max:
        raise ContractError(f"tau={tau} outside 1..{t_max}")
    per_patient = s[..., :tau].sum(axis=-1)
    return float(np.mean(per_patient))


def censored_mae(t_hat: np.ndarray, observed: np.ndarray, event: np.ndarray) -> float:
    """Censoring-aware mean absolute error of predicted survival times.

    Uncensored patients (event=1) contribute |O - T_hat|. Censored
    patients contribute max(0, O - T_hat): a prediction at or beyond
    the censoring time incurs no loss, one that falls short counts in
    full.
    """
    t_hat = np.asarray(t_hat, dtype=float)
    observed = np.asarray(observed, dtype=float)
    event = np.asarray(event, dtype=float)
    if not (t_hat.shape == observed.shape == event.shape):
        raise ContractError(
            f"mismatched shapes {t_hat.shape}, {observed.shape}, {event.shape}"
        )
    err = observed - t_hat
    per_patient = np.abs(err) * event + np.maximum(0.0, err) * (1.0 - event)
    return float(np.mean(per_patient))


def restricted_observed(observed: np.ndarray, tau: int) -> np.ndarray:
    """Observed restricted outcome min(O, tau), as float."""
    return np.minimum(np.asarray(observed, dtype=float), float(tau))
