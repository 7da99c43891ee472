"""Censoring-aware training objective, differentiable end to end.

Two per-patient terms over the predicted survival curve S(1..t_max):

* survival cross-entropy: uncensored patients maximize log S(t) before
  the event and log(1 - S(t)) from the event on; censored patients
  maximize log S(t) through their observation window;
* time error: |O - T_pred| when the event was observed, and the hinge
  max(0, O - T_pred) under censoring, with T_pred the sum of the
  predicted curve so gradients flow through it.

The batch objective is the plain sum over patients of
(1 - alpha) * cross_entropy + alpha * time_error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError

__all__ = ["LossConfig", "survival_curve", "loss_l1", "loss_l2", "total_loss", "LOG_CLAMP"]

LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")


def survival_curve(step_probs: Tensor) -> Tensor:
    """Cumulative product of per-step survival probabilities, in-graph.

    log S(t) is a running sum of log q(tau), realized as one matrix
    product with an upper-triangular ones matrix; q is clamped away
    from {0, 1} so the logs stay finite.
    """
    squeeze = step_probs.ndim == 1
    q = ad.reshape(step_probs, (1, -1)) if squeeze else step_probs
    t_max = q.shape[-1]
    running = np.triu(np.ones((t_max, t_max)))
    log_s = ad.matmul(ad.log(ad.clip(q, LOG_CLAMP, 1.0 - LOG_CLAMP)), Tensor(running))
    s = ad.exp(log_s)
    return ad.reshape(s, (t_max,)) if squeeze else s


def _as_batch(curve: Tensor, observed, event):
    squeeze = curve.ndim == 1
    s = ad.reshape(curve, (1, -1)) if squeeze else curve
    o = np.atleast_1d(np.asarray(observed, dtype=int))
    d = np.atleast_1d(np.asarray(event, dtype=float))
    if o.shape != (s.shape[0],) or d.shape != (s.shape[0],):
        raise ContractError(
            f"observed/event shapes {o.shape}/{d.shape} do not match batch {s.shape[0]}"
        )
    t_max = s.shape[-1]
    if np.any(o < 1) or np.any(o > t_max):
        raise ContractError(f"observed times must lie in 1..{t_max}")
    return s, o, d, squeeze


def loss_l1(curve: Tensor, observed, event) -> Tensor:
    """Survival cross-entropy per patient.

    ``curve`` is S(1..t_max) for one patient (t_max,) or a batch
    (B, t_max); returns a scalar or (B,) tensor accordingly.
    """
    s, o, d, squeeze = _as_batch(curve, observed, event)
    t = np.arange(1, s.shape[-1] + 1)
    uncens = d[:, None] > 0.5
    w_alive = np.where(uncens, t[None, :] < o[:, None], t[None, :] <= o[:, None]).astype(float)
    w_dead = (uncens & (t[None, :] >= o[:, None])).astype(float)

    sc = ad.clip(s, LOG_CLAMP, 1.0 - LOG_CLAMP)
    term = ad.add(
        ad.mul(Tensor(w_alive), ad.log(sc)),
        ad.mul(Tensor(w_dead), ad.log(ad.add(ad.mul(sc, -1.0), 1.0))),
    )
    out = ad.mul(ad.tsum(term, axis=1), -1.0)
    return ad.reshape(out, ()) if squeeze else out


def loss_l2(t_pred: Tensor, observed, event) -> Tensor:
    """Censoring-aware time error per patient.

    |O - T_pred| for observed events; hinge max(0, O - T_pred) under
    censoring (a prediction beyond the censoring time costs nothing).
    """
    squeeze = t_pred.ndim == 0
    t_hat = ad.reshape(t_pred, (1,)) if squeeze else t_pred
    o = np.atleast_1d(np.asarray(observed, dtype=float))
    d = np.atleast_1d(np.asarray(event, dtype=float))
    if o.shape != t_hat.shape or d.shape != t_hat.shape:
        raise ContractError(
            f"observed/event shapes {o.shape}/{d.shape} do not match predictions {t_hat.shape}"
        )
    err = ad.add(Tensor(o), ad.mul(t_hat, -1.0))
    out = ad.add(
        ad.mul(ad.absolute(err), Tensor(d)),
        ad.mul(ad.max_with_zero(err), Tensor(1.0 - d)),
    )
    return ad.reshape(out, ()) if squeeze else out


def total_loss(step_probs: Tensor, observed, event, alpha: float) -> Tensor:
    """Batch objective: sum_i (1 - alpha) L1_i + alpha L2_i.

    ``step_probs`` is the model output q(1..t_max) per patient; the
    survival curve and predicted time are built in-graph. The sum is
    not averaged, so alpha keeps the same meaning at any batch size.
    """
    alpha = LossConfig(alpha=alpha).alpha
    s = survival_curve(step_probs)
    l1 = loss_l1(s, observed, event)
    t_pred = ad.tsum(s, axis=-1)
    l2 = loss_l2(t_pred, observed, event)
    combined = ad.add(ad.mul(l1, 1.0 - alpha), ad.mul(l2, alpha))
    return ad.tsum(combined)
