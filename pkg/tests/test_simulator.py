import math

import numpy as np
import pytest
from scipy.stats import chisquare

from dynst.data import SEVERITY_COL, read_cohort_jsonl, read_oracle_jsonl, write_cohort_jsonl, write_oracle_jsonl
from dynst.errors import ConfigError
from dynst.simulator import (
    HazardCoefficients,
    SimConfig,
    assign_treatment,
    diagnosis_pair_prob,
    generate,
    hazard,
    hazard_curves,
    sample_covariates,
    sample_trajectories,
    true_ate,
    true_propensity,
    vital_contribution,
)
from dynst.survival import survival_from_hazard


def test_config_invariants():
    with pytest.raises(ConfigError):
        SimConfig(hazard_floor=0.2, hazard_ceiling=0.1)
    with pytest.raises(ConfigError):
        SimConfig(propensity_severe=1.0)
    with pytest.raises(ConfigError):
        SimConfig(baseline_scale=0.0)


# --- quadratic vital contribution ------------------------------------------


def test_vital_contribution_nonnegative_branch():
    assert vital_contribution(0.7) == 0.0
    assert vital_contribution(0.0) == 0.0


def test_vital_contribution_quadratic_below_cap():
    assert vital_contribution(-1.0) == pytest.approx(1.0)


def test_vital_contribution_cap_active():
    assert vital_contribution(-2.0) == pytest.approx(3.0)


def test_vital_contribution_literal_max_switch():
    assert vital_contribution(-0.5, literal_max_cap=True) == pytest.approx(3.0)
    assert vital_contribution(-2.5, literal_max_cap=True) == pytest.approx(6.25)


# --- hazard factors ----------------------------------------------------------


def neutral_coefs():
    return HazardCoefficients(static=np.full(4, 0.9), vital=np.full(4, 0.2))


def test_hazard_at_time_zero_is_baseline_scale():
    cfg = SimConfig()
    coefs = HazardCoefficients(static=np.zeros(4), vital=np.zeros(4))
    h = hazard(0, 0, np.zeros(4), 0, np.zeros(4), coefs, cfg)
    assert h == pytest.approx(0.001, rel=1e-12)


def test_treatment_multiplies_hazard_by_exp_of_effect():
    cfg = SimConfig()
    coefs = neutral_coefs()
    z4 = np.array([1.0, 1.0, 0.0, 0.0])
    v_t = np.full(4, -1.0)
    h0 = hazard(3, 0, z4, 0, v_t, coefs, cfg)
    h1 = hazard(3, 1, z4, 0, v_t, coefs, cfg)
    assert cfg.hazard_floor < h1 < h0 < cfg.hazard_ceiling
    assert h1 / h0 == pytest.approx(math.exp(-0.5), rel=1e-12)


def test_severity_factor_at_t10():
    cfg = SimConfig()
    coefs = neutral_coefs()
    z4 = np.array([0.0, 1.0, 1.0, 0.0])
    v_t = np.zeros(4)
    plain = hazard(10, 0, z4, 0, v_t, coefs, cfg)
    severe = hazard(10, 0, z4, 1, v_t, coefs, cfg)
    assert severe / plain == pytest.approx(1.02**10, rel=1e-12)
    assert severe / plain == pytest.approx(1.2190, abs=1e-4)


def test_proportional_hazards_violation_ratio_grows_exactly():
    # the severe/non-severe hazard ratio gains a factor 1.02 every step
    cfg = SimConfig()
    coefs = neutral_coefs()
    z = np.array([[1.0, 1.0, 1.0, 0.0, 1.0], [1.0, 1.0, 1.0, 0.0, 0.0]])
    v = np.zeros((2, cfg.t_max, 4))
    a = np.zeros(2)
    curves = hazard_curves(z, a, v, coefs, cfg)
    ratio = curves[0] / curves[1]
    inside = (curves > cfg.hazard_floor) & (curves < cfg.hazard_ceiling)
    usable = inside.all(axis=0)
    growth = ratio[1:][usable[1:] & usable[:-1]] / ratio[:-1][usable[1:] & usable[:-1]]
    assert len(growth) > 10
    np.testing.assert_allclose(growth, 1.02, rtol=1e-12)


def test_hazards_always_inside_clamp_bounds():
    cfg = SimConfig(n_patients=200, seed=5)
    result = generate(cfg)
    curves = hazard_curves(result.cohort.z, result.cohort.a, result.cohort.v,
                           result.coefficients, cfg)
    assert np.all(curves >= cfg.hazard_floor)
    assert np.all(curves <= cfg.hazard_ceiling)


# --- covariates and treatment -------------------------------------------------


def test_degenerate_prevalence_gives_mild_propensity_everywhere():
    cfg = SimConfig(n_patients=500, diagnosis_prevalence=0.0, seed=1)
    rng = np.random.default_rng(1)
    z, _ = sample_covariates(cfg, rng)
    assert z[:, 1:4].sum() == 0
    assert z[:, SEVERITY_COL].sum() == 0
    np.testing.assert_array_equal(true_propensity(z, cfg), 0.2)


def test_severity_bit_is_two_or_more_diagnoses():
    cfg = SimConfig(n_patients=5000, seed=2)
    z, _ = sample_covariates(cfg, np.random.default_rng(2))
    counts = z[:, 1:4].sum(axis=1)
    np.testing.assert_array_equal(z[:, SEVERITY_COL], (counts >= 2).astype(float))


def test_propensity_levels_and_empirical_frequency():
    cfg = SimConfig(n_patients=100_000, seed=3)
    rng = np.random.default_rng(3)
    z, _ = sample_covariates(cfg, rng)
    a = assign_treatment(z, cfg, rng)
    pi = true_propensity(z, cfg)
    np.testing.assert_array_equal(np.unique(pi), [0.2, 0.8])
    for level in (0.2, 0.8):
        sel = pi == level
        n = int(sel.sum())
        freq = a[sel].mean()
        half_width = 3.29 * math.sqrt(level * (1 - level) / n)  # 99.9% binomial CI
        assert abs(freq - level) < half_width


def test_vitals_marginal_moments():
    cfg = SimConfig(n_patients=100_000, t_max=8, seed=4)
    z, v = sample_covariates(cfg, np.random.default_rng(4))
    patient_means = v.mean(axis=(1, 2))
    pooled_mean = patient_means.mean()
    se_mean = patient_means.std(ddof=1) / math.sqrt(cfg.n_patients)
    assert abs(pooled_mean) < 3 * se_mean + 1e-12

    patient_sq = (v**2).mean(axis=(1, 2))
    pooled_sq = patient_sq.mean()
    se_sq = patient_sq.std(ddof=1) / math.sqrt(cfg.n_patients)
    assert abs(pooled_sq - 1.0) < 3 * (se_sq + 2 * se_mean)


def test_diagnoses_positively_correlated_at_configured_level():
    cfg = SimConfig(n_patients=100_000, t_max=2, seed=6)
    z, _ = sample_covariates(cfg, np.random.default_rng(6))
    p = cfg.diagnosis_prevalence
    p11 = diagnosis_pair_prob(cfg)
    target_phi = (p11 - p * p) / (p * (1 - p))
    assert target_phi > 0.05
    for i, j in ((1, 2), (1, 3), (2, 3)):
        r = np.corrcoef(z[:, i], z[:, j])[0, 1]
        assert r > 0
        assert abs(r - target_phi) < 4.0 / math.sqrt(cfg.n_patients) + 0.01


def test_vitals_shift_down_with_illness():
    cfg = SimConfig(n_patients=30_000, t_max=4, seed=7)
    z, v = sample_covariates(cfg, np.random.default_rng(7))
    burden = z[:, 1:4].sum(axis=1)
    lo = v[burden == 0].mean()
    hi = v[burden >= 2].mean()
    assert hi < lo - 0.3


# --- trajectory sampling --------------------------------------------------------


def test_constant_hazard_censoring_probability():
    # hazards pinned at the ceiling, no noise: P(censored) = 0.9^t_max
    t_max, n = 24, 100_000
    s = survival_from_hazard(np.full((1, t_max), 0.1)).repeat(n, axis=0)
    o, delta = sample_trajectories(s, 0.0, np.random.default_rng(8))
    p_cens = (delta == 0).mean()
    expected = 0.9**t_max
    se = math.sqrt(expected * (1 - expected) / n)
    assert abs(p_cens - expected) < 4 * se


def test_negligible_hazard_censors_everyone():
    s = survival_from_hazard(np.full((2000, 128), 1e-7))
    o, delta = sample_trajectories(s, 0.0, np.random.default_rng(9))
    assert (delta == 0).mean() > 0.999
    assert np.all(o[delta == 0] == 128)


def test_event_time_law_matches_analytic_distribution():
    # chi-squared at alpha=0.001 over 1e5 replicates of one hand-set curve
    h = np.array([0.10, 0.05, 0.08, 0.02, 0.06, 0.04])
    t_max = len(h)
    n = 100_000

    # independent analytic law for (O, delta)
    probs = []
    alive = 1.0
    for t in range(t_max):
        probs.append(alive * h[t])
        alive *= 1.0 - h[t]
    probs.append(alive)  # censored at t_max

    s = survival_from_hazard(h)[None, :].repeat(n, axis=0)
    o, delta = sample_trajectories(s, 0.0, np.random.default_rng(10))
    counts = np.zeros(t_max + 1)
    for t in range(1, t_max + 1):
        counts[t - 1] = int(((o == t) & (delta == 1)).sum())
    counts[t_max] = int((delta == 0).sum())
    result = chisquare(counts, f_exp=np.array(probs) * n)
    assert result.pvalue > 0.001


def test_noise_spreads_event_times_but_keeps_law_valid():
    h = np.full((5000, 16), 0.05)
    s = survival_from_hazard(h)
    o, delta = sample_trajectories(s, 0.5, np.random.default_rng(11))
    assert np.all((o >= 1) & (o <= 16))
    assert set(np.unique(delta)) <= {0, 1}


# --- full generation -------------------------------------------------------------


def test_generate_is_deterministic_down_to_bytes(tmp_path):
    cfg = SimConfig(n_patients=300, seed=123)
    r1 = generate(cfg)
    r2 = generate(cfg)
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_cohort_jsonl(r1.cohort, p1)
    write_cohort_jsonl(r2.cohort, p2)
    assert p1.read_bytes() == p2.read_bytes()
    o1, o2 = tmp_path / "oa.jsonl", tmp_path / "ob.jsonl"
    write_oracle_jsonl(r1.oracle, o1)
    write_oracle_jsonl(r2.oracle, o2)
    assert o1.read_bytes() == o2.read_bytes()


def test_dataset_roundtrip(tmp_path):
    cfg = SimConfig(n_patients=50, t_max=16, seed=17)
    result = generate(cfg)
    data_path = tmp_path / "data.jsonl"
    oracle_path = tmp_path / "oracle.jsonl"
    write_cohort_jsonl(result.cohort, data_path)
    write_oracle_jsonl(result.oracle, oracle_path)

    cohort = read_cohort_jsonl(data_path)
    np.testing.assert_array_equal(cohort.ids, result.cohort.ids)
    np.testing.assert_array_equal(cohort.z, result.cohort.z)
    np.testing.assert_allclose(cohort.v, result.cohort.v, atol=0)
    np.testing.assert_array_equal(cohort.o, result.cohort.o)

    oracle = read_oracle_jsonl(oracle_path)
    np.testing.assert_allclose(oracle.s_true, result.oracle.s_true, atol=0)
    np.testing.assert_allclose(oracle.rmst1[12], result.oracle.rmst1[12], atol=0)
    np.testing.assert_array_equal(oracle.pi_true, result.oracle.pi_true)


def test_oracle_curves_match_factual_hazards():
    cfg = SimConfig(n_patients=40, seed=19)
    result = generate(cfg)
    curves = survival_from_hazard(
        hazard_curves(result.cohort.z, result.cohort.a, result.cohort.v,
                      result.coefficients, cfg)
    )
    np.testing.assert_allclose(result.oracle.s_true, curves, atol=0)
    for tau in cfg.oracle_taus:
        assert result.oracle.rmst1[tau].shape == (40,)


def test_true_ate_zero_when_treatment_inert():
    cfg = SimConfig(n_patients=400, treatment_log_hazard=0.0, seed=21)
    assert true_ate(cfg, 12) == 0.0


def test_true_ate_positive_and_monotone():
    cfg = SimConfig(n_patients=3000, seed=23)
    values = true_ate(cfg)
    assert values[8] > 0 and values[12] > 0 and values[16] > 0
    assert values[8] <= values[12] <= values[16]


def test_summary_reports_rates():
    cfg = SimConfig(n_patients=500, seed=25)
    summary = generate(cfg).summary
    assert 0.0 <= summary["censoring_rate"] <= 1.0
    assert 1.0 <= summary["mean_observed_time"] <= cfg.t_max
    assert 0.0 < summary["treated_fraction"] < 1.0
