"""Confounded semi-synthetic cohort generator with a ground-truth oracle.

Covariates are fully synthetic: correlated binary diagnoses, a male bit,
and standardized AR(1) vitals whose level shifts down with illness
burden (that shift is what ties the vitals to treatment assignment and
creates confounding). Treatment is assigned from the severity bit at
two propensity levels. Hazards come from a five-factor multiplicative
model: a decaying baseline, a treatment factor, linear static effects,
a severity-by-time interaction that violates proportional hazards, and
clipped quadratic contributions from below-average vitals.

Observed trajectories are drawn by perturbing the logits of the
survival curve with a per-patient Gaussian frailty draw and drawing one
Bernoulli per time step at the conditional survival probability the
noisy curve implies for that step; the first zero is the event time,
and a patient with no zero through t_max is right-censored there. With
zero noise the per-step probability is exactly 1 - h(t), so the
sampled law matches the hazard model.

The oracle keeps what the models never see: noiseless curves,
counterfactual restricted mean survival times under both treatment
arms, and true propensities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy.special import expit, logit
from scipy.stats import multivariate_normal, norm

from .data import Cohort, Oracle, SEVERITY_COL
from .errors import ConfigError
from .survival import survival_from_hazard

__all__ = [
    "SimConfig",
    "HazardCoefficients",
    "SimResult",
    "draw_coefficients",
    "sample_covariates",
    "assign_treatment",
    "true_propensity",
    "vital_contribution",
    "hazard",
    "hazard_curves",
    "sample_trajectories",
    "generate",
    "true_ate",
]


@dataclass(frozen=True)
class SimConfig:
    """All generator constants. Defaults reproduce the reference setting."""

    n_patients: int = 5000
    t_max: int = 128
    # Baseline hazard H0 * exp(-rate * t), t = 1..t_max.
    baseline_scale: float = 0.001
    baseline_decay: float = 0.25
    # Additive effect of treatment on the log hazard (negative = protective).
    treatment_log_hazard: float = -0.5
    # Per-dataset coefficient draws for the four static bits and four vitals.
    static_coef_range: tuple[float, float] = (0.7, 1.2)
    vital_coef_range: tuple[float, float] = (0.1, 0.3)
    # Severely ill patients' hazard grows by this factor every hour.
    severity_growth: float = 1.02
    # Gaussian noise added to the logits of the survival curve.
    noise_sigma: float = 0.5
    # Hazards are clamped into this range for stability.
    hazard_floor: float = 1e-7
    hazard_ceiling: float = 0.1
    # Propensity levels for severely ill vs other patients.
    propensity_severe: float = 0.8
    propensity_mild: float = 0.2
    # Quadratic log-hazard contribution of below-average vitals, capped at
    # vital_cap. literal_max_cap=True applies max instead of min (a floor,
    # not a cap); kept as a switch for the alternative reading.
    vital_cap: float = 3.0
    literal_max_cap: bool = False
    # Synthetic covariate shape.
    diagnosis_prevalence: float = 0.3
    diagnosis_latent_corr: float = 0.3
    male_prevalence: float = 0.5
    vital_ar_coef: float = 0.9
    vital_illness_shift: float = 1.4
    vital_offset_scale: float = 1.5
    # Cutoffs at which the oracle stores counterfactual RMSTs.
    oracle_taus: tuple[int, ...] = (8, 12, 16)
    seed: int = 0

    def __post_init__(self):
        if self.n_patients < 1 or self.t_max < 1:
            raise ConfigError("n_patients and t_max must be positive")
        if self.baseline_scale <= 0:
            raise ConfigError("baseline_scale must be positive")
        if not 0.0 < self.hazard_floor < self.hazard_ceiling < 1.0:
            raise ConfigError("hazard bounds must satisfy 0 < floor < ceiling < 1")
        for p in (self.propensity_severe, self.propensity_mild):
            if not 0.0 < p < 1.0:
                raise ConfigError("propensity levels must lie strictly in (0, 1)")
        if not 0.0 <= self.diagnosis_prevalence <= 1.0:
            raise ConfigError("diagnosis_prevalence must lie in [0, 1]")
        if not 0.0 <= self.vital_ar_coef < 1.0:
            raise ConfigError("vital_ar_coef must lie in [0, 1)")
        if self.noise_sigma < 0.0:
            raise ConfigError("noise_sigma must be non-negative")

    def with_(self, **kwargs) -> "SimConfig":
        return replace(self, **kwargs)

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


@dataclass(frozen=True)
class HazardCoefficients:
    """Per-dataset draws: effects of the four static bits and four vitals."""

    static: np.ndarray  # (4,) male + three diagnoses
    vital: np.ndarray  # (4,)


@dataclass
class SimResult:
    cohort: Cohort
    oracle: Oracle
    coefficients: HazardCoefficients
    summary: dict


def draw_coefficients(config: SimConfig, rng: np.random.Generator) -> HazardCoefficients:
    lo, hi = config.static_coef_range
    static = rng.uniform(lo, hi, size=4)
    lo, hi = config.vital_coef_range
    vital = rng.uniform(lo, hi, size=4)
    return HazardCoefficients(static=static, vital=vital)


def _diagnosis_threshold(prevalence: float) -> float:
    # Latent standard normal exceeds this threshold with prob = prevalence.
    return norm.ppf(1.0 - prevalence)


def diagnosis_pair_prob(config: SimConfig) -> float:
    """P(two given diagnoses co-occur) under the latent Gaussian copula."""
    c = _diagnosis_threshold(config.diagnosis_prevalence)
    if not np.isfinite(c):
        return config.diagnosis_prevalence**2
    rho = config.diagnosis_latent_corr
    bvn = multivariate_normal(mean=[0.0, 0.0], cov=[[1.0, rho], [rho, 1.0]])
    return float(bvn.cdf([-c, -c]))


def _burden_moments(config: SimConfig) -> tuple[float, float]:
    # Mean and SD of the diagnosis count (sum of 3 correlated Bernoullis).
    p = config.diagnosis_prevalence
    p11 = diagnosis_pair_prob(config)
    mean = 3.0 * p
    var = 3.0 * p * (1.0 - p) + 6.0 * (p11 - p * p)
    return mean, math.sqrt(max(var, 0.0))


def sample_covariates(
    config: SimConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw static bits z (n, 5) and standardized vitals v (n, t_max, 4).

    The three diagnoses share a latent Gaussian correlation so the
    severity bit is nondegenerate. Each vital is a stationary AR(1)
    series around a patient-specific level made of two parts: an
    independent random offset (between-patient heterogeneity) and a
    downward shift proportional to standardized illness burden (the
    part that ties vitals to treatment assignment). The combination is
    rescaled so the cohort marginal stays mean 0, sd 1.
    """
    n, t_max = config.n_patients, config.t_max
    male = (rng.random(n) < config.male_prevalence).astype(float)

    rho = config.diagnosis_latent_corr
    cov = np.full((3, 3), rho)
    np.fill_diagonal(cov, 1.0)
    latent = rng.multivariate_normal(np.zeros(3), cov, size=n, method="cholesky")
    diagnoses = (latent > _diagnosis_threshold(config.diagnosis_prevalence)).astype(float)
    counts = diagnoses.sum(axis=1)
    severe = (counts >= 2).astype(float)
    z = np.column_stack([male, diagnoses, severe])

    # Stationary AR(1): x_1 ~ N(0,1), x_t = phi x_{t-1} + sqrt(1-phi^2) eps.
    phi = config.vital_ar_coef
    innovations = rng.standard_normal((n, t_max, 4))
    series = np.empty((n, t_max, 4))
    series[:, 0] = innovations[:, 0]
    scale = math.sqrt(1.0 - phi * phi)
    for t in range(1, t_max):
        series[:, t] = phi * series[:, t - 1] + scale * innovations[:, t]

    shift = config.vital_illness_shift
    offset = config.vital_offset_scale
    if shift != 0.0 or offset != 0.0:
        mean_k, sd_k = _burden_moments(config)
        burden = np.zeros(n) if sd_k == 0.0 else (counts - mean_k) / sd_k
        levels = rng.standard_normal((n, 4))
        series = (
            series + offset * levels[:, None, :] - shift * burden[:, None, None]
        ) / math.sqrt(1.0 + offset * offset + shift * shift)
    return z, series


def true_propensity(z: np.ndarray, config: SimConfig) -> np.ndarray:
    severe = np.asarray(z)[..., SEVERITY_COL]
    return np.where(severe > 0.5, config.propensity_severe, config.propensity_mild)


def assign_treatment(z: np.ndarray, config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli treatment with probability set by the severity bit."""
    pi = true_propensity(z, config)
    return (rng.random(len(pi)) < pi).astype(int)


def vital_contribution(v, cap: float = 3.0, literal_max_cap: bool = False) -> np.ndarray:
    """Quadratic log-hazard contribution of a below-average vital reading.

    Zero for readings at or above the average; v^2 otherwise, clipped at
    ``cap`` to avoid inflated hazards. ``literal_max_cap`` applies
    max(v^2, cap) instead, which floors rather than caps.
    """
    v = np.asarray(v, dtype=float)
    q = np.square(v)
    capped = np.maximum(q, cap) if literal_max_cap else np.minimum(q, cap)
    return np.where(v >= 0.0, 0.0, capped)


def _log_hazard(t, a, z4, severe, g_vals, coefs: HazardCoefficients, config: SimConfig):
    return (
        math.log(config.baseline_scale)
        - config.baseline_decay * t
        + config.treatment_log_hazard * a
        + z4 @ coefs.static
        + math.log(config.severity_growth) * t * severe
        + g_vals @ coefs.vital
    )


def hazard(t, a, z4, severe, v_t, coefs: HazardCoefficients, config: SimConfig):
    """Hazard at time(s) t for one patient, clamped into the config bounds.

    ``z4`` holds the four static bits entering linearly (male plus the
    three diagnoses); ``severe`` is the severity indicator; ``v_t`` the
    four vitals at time t (or a (len(t), 4) stack).
    """
    t = np.asarray(t, dtype=float)
    g_vals = vital_contribution(v_t, config.vital_cap, config.literal_max_cap)
    log_h = _log_hazard(t, float(a), np.asarray(z4, dtype=float), float(severe), g_vals, coefs, config)
    return np.clip(np.exp(log_h), config.hazard_floor, config.hazard_ceiling)


def hazard_curves(
    z: np.ndarray,
    a: np.ndarray,
    v: np.ndarray,
    coefs: HazardCoefficients,
    config: SimConfig,
) -> np.ndarray:
    """Clamped hazards for a whole cohort, shape (n, t_max), t = 1..t_max."""
    t = np.arange(1, config.t_max + 1, dtype=float)
    g_vals = vital_contribution(v, config.vital_cap, config.literal_max_cap)
    log_h = (
        math.log(config.baseline_scale)
        - config.baseline_decay * t[None, :]
        + config.treatment_log_hazard * np.asarray(a, dtype=float)[:, None]
        + (z[:, :4] @ coefs.static)[:, None]
        + math.log(config.severity_growth) * t[None, :] * z[:, SEVERITY_COL][:, None]
        + g_vals @ coefs.vital
    )
    return np.clip(np.exp(log_h), config.hazard_floor, config.hazard_ceiling)


def sample_trajectories(
    s_true: np.ndarray, noise_sigma: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw (observed time, event indicator) from noisy survival curves.

    The logits of the survival curve are shifted by one Gaussian draw
    per patient (an unexplained-frailty term), and each time step draws
    one Bernoulli at the conditional survival probability the noisy
    curve implies for that step (the ratio of consecutive curve
    values). The first zero is the event time; no zero through t_max
    means right-censoring at t_max. With noise_sigma=0 the per-step
    probability is exactly 1 - h(t).
    """
    n, t_max = s_true.shape
    logits = logit(s_true)
    if noise_sigma > 0.0:
        logits = logits + noise_sigma * rng.standard_normal((n, 1))
    noisy = expit(logits)
    survive_prob = np.empty_like(noisy)
    survive_prob[:, 0] = noisy[:, 0]
    survive_prob[:, 1:] = np.minimum(noisy[:, 1:] / noisy[:, :-1], 1.0)
    failed = rng.random((n, t_max)) >= survive_prob
    delta = failed.any(axis=1).astype(int)
    first = failed.argmax(axis=1)
    observed = np.where(delta == 1, first + 1, t_max)
    return observed.astype(int), delta


def generate(config: SimConfig) -> SimResult:
    """Run the full generator: cohort, oracle, coefficients, summary stats."""
    rng = np.random.default_rng(config.seed)
    coefs = draw_coefficients(config, rng)
    z, v = sample_covariates(config, rng)
    a = assign_treatment(z, config, rng)

    h_factual = hazard_curves(z, a, v, coefs, config)
    s_factual = survival_from_hazard(h_factual)
    observed, delta = sample_trajectories(s_factual, config.noise_sigma, rng)

    n = config.n_patients
    cohort = Cohort(
        ids=np.arange(n),
        z=z,
        v=v,
        a=a,
        o=observed,
        delta=delta,
    )

    s1 = survival_from_hazard(hazard_curves(z, np.ones(n), v, coefs, config))
    s0 = survival_from_hazard(hazard_curves(z, np.zeros(n), v, coefs, config))
    rmst1 = {int(tau): s1[:, :tau].sum(axis=1) for tau in config.oracle_taus}
    rmst0 = {int(tau): s0[:, :tau].sum(axis=1) for tau in config.oracle_taus}
    oracle = Oracle(
        ids=np.arange(n),
        s_true=s_factual,
        rmst1=rmst1,
        rmst0=rmst0,
        pi_true=true_propensity(z, config),
    )

    summary = {
        "n_patients": n,
        "censoring_rate": float(1.0 - delta.mean()),
        "mean_observed_time": float(observed.mean()),
        "treated_fraction": float(np.mean(a)),
        "severe_fraction": float(z[:, SEVERITY_COL].mean()),
    }
    return SimResult(cohort=cohort, oracle=oracle, coefficients=coefs, summary=summary)


def true_ate(config: SimConfig, tau: int | None = None):
    """Average treatment effect on RMST from the noiseless twin cohorts.

    Returns a float for a single tau, or a dict over config.oracle_taus
    when tau is None.
    """
    taus = config.oracle_taus if tau is None else (int(tau),)
    cfg = config if set(map(int, taus)) <= set(map(int, config.oracle_taus)) else config.with_(
        oracle_taus=tuple(sorted(set(map(int, taus)) | set(map(int, config.oracle_taus))))
    )
    oracle = generate(cfg).oracle
    if tau is not None:
        return oracle.true_ate(int(tau))
    return {int(t): oracle.true_ate(int(t)) for t in taus}
