"""ATE-on-RMST estimators over observational cohorts.

The observed restricted outcome is Y = min(O, tau). Four estimators:

* unadjusted difference in arm means (the confounded benchmark);
* outcome regression: average of counterfactual RMST predictions from
  any fitted survival model, with treatment forced to 1 and to 0;
* inverse propensity weighting in Horvitz-Thompson form over scores
  from a cross-validated L2 logistic regression (or supplied scores);
* AIPW combining both nuisances, doubly robust.

Final reductions use math.fsum, so estimates are exactly invariant to
patient ordering once the nuisance models are fixed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import Cohort, DIAGNOSIS_COLS, Oracle
from .errors import ContractError, EstimationError
from .model import predict_step_probs, survival_from_step_probs
from .survival import restricted_observed

__all__ = [
    "AteReport",
    "PropensityModel",
    "fit_propensity",
    "propensity_scores",
    "unadjusted_difference",
    "ipw_estimate",
    "or_estimate",
    "aipw_estimate",
    "HazardModelOutcome",
    "OracleOutcome",
    "OraclePropensity",
    "DEFAULT_PENALTIES",
]

DEFAULT_PENALTIES = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0)
_SEPARATION_WEIGHT = 30.0


@dataclass
class AteReport:
    """One estimator result; bias fields only when an oracle was available."""

    method: str
    tau: int
    estimate: float
    true_ate: float | None = None
    bias: float | None = None
    replicate_sd: float | None = None

    def __post_init__(self):
        if (self.true_ate is None) != (self.bias is None):
            raise ContractError("true_ate and bias must be present together")

    def to_dict(self) -> dict:
        out = {"method": self.method, "tau": self.tau, "estimate": self.estimate}
        if self.true_ate is not None:
            out["true_ate"] = self.true_ate
            out["bias"] = self.bias
        if self.replicate_sd is not None:
            out["replicate_sd"] = self.replicate_sd
        return out


def make_report(method: str, tau: int, estimate: float, oracle: Oracle | None = None) -> AteReport:
    if oracle is None:
        return AteReport(method=method, tau=tau, estimate=estimate)
    truth = oracle.true_ate(tau)
    return AteReport(method=method, tau=tau, estimate=estimate,
                     true_ate=truth, bias=estimate - truth)


# --- propensity model ------------------------------------------------------


@dataclass
class PropensityModel:
    """L2-penalized logistic regression on a subset of static columns."""

    weights: np.ndarray  # intercept first
    feature_idx: tuple[int, ...]
    penalty: float
    separation_detected: bool = False
    cv_log_likelihoods: dict | None = None

    def predict(self, cohort_or_z) -> np.ndarray:
        z = cohort_or_z.z if isinstance(cohort_or_z, Cohort) else np.asarray(cohort_or_z)
        x = _design(z, self.feature_idx)
        scores = expit(x @ self.weights)
        return np.clip(scores, 1e-12, 1.0 - 1e-12)


def _design(z: np.ndarray, feature_idx) -> np.ndarray:
    feats = z[:, list(feature_idx)].astype(float)
    return np.column_stack([np.ones(len(feats)), feats])


def _irls(x: np.ndarray, a: np.ndarray, penalty: float,
          max_iter: int = 100, tol: float = 1e-10) -> tuple[np.ndarray, bool]:
    """Penalized Newton fit; returns (weights, separation_flag)."""
    k = x.shape[1]
    ridge = np.eye(k) * penalty
    ridge[0, 0] = 0.0  # intercept unpenalized
    w = np.zeros(k)
    converged = False
    for _ in range(max_iter):
        p = expit(x @ w)
        grad = x.T @ (a - p) - ridge @ w
        hess = (x * (p * (1.0 - p))[:, None]).T @ x + ridge
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        w = w + step
        if np.abs(step).max() < tol:
            converged = True
            break
    separated = (not converged) or np.abs(w).max() > _SEPARATION_WEIGHT
    return w, separated


def _log_likelihood(x: np.ndarray, a: np.ndarray, w: np.ndarray) -> float:
    p = np.clip(expit(x @ w), 1e-12, 1.0 - 1e-12)
    return float(np.sum(a * np.log(p) + (1.0 - a) * np.log(1.0 - p)))


def fit_propensity(cohort: Cohort, feature_idx=DIAGNOSIS_COLS,
                   penalties=DEFAULT_PENALTIES, n_folds: int = 5,
                   seed: int = 0) -> PropensityModel:
    """Cross-validated penalized logistic fit of P(A=1 | selected columns).

    The penalty is chosen by held-out log-likelihood over seeded folds.
    Perfect separation (non-convergence or exploding weights) is
    reported with a warning and falls back to the strongest penalty.
    """
    feature_idx = tuple(feature_idx)
    x = _design(cohort.z, feature_idx)
    a = cohort.a.astype(float)
    n = len(a)
    if n < n_folds:
        raise EstimationError(f"need at least {n_folds} patients for {n_folds}-fold CV")

    order = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(order, n_folds)
    cv_scores: dict[float, float] = {}
    for penalty in penalties:
        total = 0.0
        for fold in folds:
            mask = np.ones(n, dtype=bool)
            mask[fold] = False
            w, _ = _irls(x[mask], a[mask], penalty)
            total += _log_likelihood(x[~mask], a[~mask], w)
        cv_scores[penalty] = total / n

    best = max(sorted(cv_scores), key=lambda pen: cv_scores[pen])
    w, separated = _irls(x, a, best)
    if separated:
        strongest = max(penalties)
        warnings.warn(
            "perfect separation detected in propensity fit; "
            f"falling back to the strongest penalty {strongest}",
            stacklevel=2,
        )
        best = strongest
        w, _ = _irls(x, a, best)
    return PropensityModel(weights=w, feature_idx=feature_idx, penalty=best,
                           separation_detected=separated, cv_log_likelihoods=cv_scores)


class OraclePropensity:
    """True propensity scores looked up by patient id."""

    def __init__(self, oracle: Oracle):
        self._by_id = {int(i): float(p) for i, p in zip(oracle.ids, oracle.pi_true)}

    def predict(self, cohort: Cohort) -> np.ndarray:
        return np.array([self._by_id[int(i)] for i in cohort.ids])


def propensity_scores(propensity, cohort: Cohort) -> np.ndarray:
    """Normalize a model/array/constant propensity argument to scores."""
    if isinstance(propensity, (int, float)):
        return np.full(cohort.n, float(propensity))
    if isinstance(propensity, np.ndarray):
        if propensity.shape != (cohort.n,):
            raise ContractError(f"scores shape {propensity.shape} != ({cohort.n},)")
        return propensity
    return propensity.predict(cohort)


# --- outcome models -----------------------------------------------------------


class HazardModelOutcome:
    """Counterfactual RMSTs from a fitted survival model.

    Treatment is the last model-visible static column, so forcing A is a
    feature substitution before the forward pass. Predicted curves are
    cached per cohort, so repeated estimates at different cutoffs cost
    one pair of forward sweeps.
    """

    def __init__(self, model, batch_size: int = 64):
        self.model = model
        self.batch_size = batch_size
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    def _curves(self, cohort: Cohort, forced: int) -> np.ndarray:
        key = (id(cohort), forced)
        if key not in self._cache:
            z = cohort.static_inputs(force_treatment=forced)
            q = predict_step_probs(self.model, z, cohort.v, batch_size=self.batch_size)
            self._cache[key] = survival_from_step_probs(q)
        return self._cache[key]

    def rmst_pair(self, cohort: Cohort, tau: int) -> tuple[np.ndarray, np.ndarray]:
        s1 = self._curves(cohort, 1)
        s0 = self._curves(cohort, 0)
        return s1[:, :tau].sum(axis=1), s0[:, :tau].sum(axis=1)


class OracleOutcome:
    """Ground-truth counterfactual RMSTs looked up by patient id."""

    def __init__(self, oracle: Oracle):
        self._oracle = oracle
        self._row_by_id = {int(i): r for r, i in enumerate(oracle.ids)}

    def rmst_pair(self, cohort: Cohort, tau: int) -> tuple[np.ndarray, np.ndarray]:
        tau = int(tau)
        if tau not in self._oracle.rmst1:
            raise ContractError(f"oracle has no RMST at tau={tau}")
        rows = np.array([self._row_by_id[int(i)] for i in cohort.ids])
        return self._oracle.rmst1[tau][rows], self._oracle.rmst0[tau][rows]


# --- estimators ------------------------------------------------------------------


def _observed_outcome(cohort: Cohort, tau: int, outcome_fn=None) -> np.ndarray:
    if outcome_fn is None:
        return restricted_observed(cohort.o, tau)
    return np.asarray(outcome_fn(cohort, tau), dtype=float)


def _mean(values) -> float:
    return math.fsum(values) / len(values)


def unadjusted_difference(cohort: Cohort, tau: int, outcome_fn=None) -> float:
    """Difference in mean restricted outcomes between the two arms."""
    y = _observed_outcome(cohort, tau, outcome_fn)
    treated = y[cohort.a == 1]
    control = y[cohort.a == 0]
    if len(treated) == 0 or len(control) == 0:
        raise EstimationError("both treatment arms must be non-empty")
    return _mean(treated) - _mean(control)


def ipw_estimate(cohort: Cohort, propensity, tau: int, clip: float = 0.01,
                 outcome_fn=None) -> float:
    """Horvitz-Thompson inverse-propensity estimate with clipped scores."""
    y = _observed_outcome(cohort, tau, outcome_fn)
    pi = np.clip(propensity_scores(propensity, cohort), clip, 1.0 - clip)
    a = cohort.a.astype(float)
    terms = a * y / pi - (1.0 - a) * y / (1.0 - pi)
    return _mean(terms)


def or_estimate(cohort: Cohort, outcome_model, tau: int) -> float:
    """Outcome regression: averaged counterfactual RMST difference."""
    m1, m0 = outcome_model.rmst_pair(cohort, tau)
    return _mean(m1 - m0)


def aipw_estimate(cohort: Cohort, outcome_model, propensity, tau: int,
                  clip: float = 0.01, outcome_fn=None) -> float:
    """Doubly robust estimate: outcome regression plus weighted residuals."""
    y = _observed_outcome(cohort, tau, outcome_fn)
    m1, m0 = outcome_model.rmst_pair(cohort, tau)
    pi = np.clip(propensity_scores(propensity, cohort), clip, 1.0 - clip)
    a = cohort.a.astype(float)
    terms = m1 - m0 + a * (y - m1) / pi - (1.0 - a) * (y - m0) / (1.0 - pi)
    return _mean(terms)
