import json

import numpy as np
import pytest

import dynst.pipeline as pl
from dynst.data import Cohort
from dynst.errors import ConfigError, DivergenceError, NonFiniteError
from dynst.model import LinearHazardModel, ModelConfig
from dynst.pipeline import (
    ExperimentConfig,
    GridSpec,
    TrainConfig,
    emit_curves,
    evaluate_mae,
    grid_search,
    run_causal_experiment,
    run_invariant_checks,
    split_cohort,
    split_indices,
    train,
    write_report,
)
from dynst.simulator import SimConfig, generate


def tiny_sim(n=80, t_max=16, seed=3):
    return generate(SimConfig(n_patients=n, t_max=t_max, seed=seed, oracle_taus=(4, 8)))


# --- splits -----------------------------------------------------------------


def test_split_ratio_validation():
    with pytest.raises(ConfigError):
        split_indices(10, (0.5, 0.4), seed=0)
    with pytest.raises(ConfigError):
        split_indices(10, (0.5, -0.1, 0.6), seed=0)


def test_split_everything_into_train():
    (only,) = split_indices(25, (1.0,), seed=1)
    np.testing.assert_array_equal(only, np.arange(25))


def test_split_70_15_15_sizes():
    parts = split_indices(1000, (0.70, 0.15, 0.15), seed=2)
    assert [len(p) for p in parts] == [700, 150, 150]


def test_split_deterministic_disjoint_exhaustive():
    a = split_indices(503, (0.7, 0.15, 0.15), seed=9)
    b = split_indices(503, (0.7, 0.15, 0.15), seed=9)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    merged = np.concatenate(a)
    assert len(merged) == 503
    np.testing.assert_array_equal(np.sort(merged), np.arange(503))
    c = split_indices(503, (0.7, 0.15, 0.15), seed=10)
    assert any(not np.array_equal(x, y) for x, y in zip(a, c))


def test_split_cohort_carries_rows():
    sim = tiny_sim()
    tr, va = split_cohort(sim.cohort, (0.75, 0.25), seed=4)
    assert tr.n + va.n == sim.cohort.n
    assert set(tr.ids) & set(va.ids) == set()


# --- training ------------------------------------------------------------------


def test_zero_epochs_returns_initialized_model():
    sim = tiny_sim()
    tr, va = split_cohort(sim.cohort, (0.8, 0.2), seed=0)
    res = train("linear", tr, va, TrainConfig(epochs=0))
    assert res.history == []
    assert res.best_epoch is None
    assert res.model.kind == "linear"


def test_best_checkpoint_semantics():
    sim = tiny_sim(n=120)
    tr, va = split_cohort(sim.cohort, (0.8, 0.2), seed=1)
    res = train("linear", tr, va, TrainConfig(epochs=4, lr=0.03, seed=1))
    assert len(res.history) == 4
    best_recorded = min(h["val_mae"] for h in res.history)
    assert res.best_val_mae == pytest.approx(best_recorded, abs=0)
    assert evaluate_mae(res.model, va) == pytest.approx(best_recorded, rel=1e-12)


def test_single_patient_overfit_loss_decreases():
    sim = tiny_sim(n=30)
    one = sim.cohort.subset(np.array([0]))
    cfg = TrainConfig(d_model=8, n_layers=1, n_heads=2, batch_size=1, alpha=0.0,
                      epochs=3, dropout_p=0.0, lr=0.01, seed=2)
    res = train("dynst", one, one, cfg)
    losses = [h["train_loss"] for h in res.history]
    assert losses[1] < losses[0]
    assert losses[2] < losses[1]


def test_training_is_seed_deterministic():
    sim = tiny_sim(n=60)
    tr, va = split_cohort(sim.cohort, (0.8, 0.2), seed=5)
    cfg = TrainConfig(d_model=8, n_layers=1, n_heads=2, epochs=1, seed=11)
    r1 = train("dynst", tr, va, cfg)
    r2 = train("dynst", tr, va, cfg)
    for name in r1.model.params:
        assert r1.model.params[name].data.tobytes() == r2.model.params[name].data.tobytes()


def test_divergence_reports_batch_and_norms(monkeypatch):
    sim = tiny_sim(n=40)
    tr, va = split_cohort(sim.cohort, (0.8, 0.2), seed=0)

    def explode(*args, **kwargs):
        raise NonFiniteError("loss is not finite")

    monkeypatch.setattr(pl, "total_loss", explode)
    with pytest.raises(DivergenceError, match=r"epoch 1, batch 0.*parameter norms"):
        train("linear", tr, va, TrainConfig(epochs=1))


# --- grid search ------------------------------------------------------------------


def test_grid_cells_deterministic_and_deduped_for_linear():
    grid = GridSpec(d_model=(48, 32), n_layers=(3, 2), batch_size=(32,), alpha=(0.1, 0.0))
    cells = grid.cells("dynst")
    assert cells[0] == {"d_model": 32, "n_layers": 2, "batch_size": 32, "alpha": 0.0}
    assert len(cells) == 8
    linear_cells = grid.cells("linear")
    assert len(linear_cells) == 2  # only (batch, alpha) matter


def test_grid_search_tie_breaks_to_smaller_model(monkeypatch):
    sim = tiny_sim(n=40)
    tr, va = split_cohort(sim.cohort, (0.8, 0.2), seed=0)

    def fake_train(kind, tr_c, va_c, cfg):
        return pl.TrainResult(model=None, history=[], best_epoch=1,
                              best_val_mae=1.0, config=cfg)  # all tie

    monkeypatch.setattr(pl, "train", fake_train)
    grid = GridSpec(d_model=(64, 32), n_layers=(4, 2), batch_size=(32,), alpha=(0.1,))
    result, table = grid_search("dynst", tr, va, grid, TrainConfig())
    assert result.config.d_model == 32
    assert result.config.n_layers == 2
    assert len(table) == 4


def test_grid_search_budget_caps_cells(monkeypatch):
    sim = tiny_sim(n=40)
    tr, va = split_cohort(sim.cohort, (0.8, 0.2), seed=0)
    calls = []

    def fake_train(kind, tr_c, va_c, cfg):
        calls.append(cfg)
        return pl.TrainResult(model=None, history=[], best_epoch=1,
                              best_val_mae=float(len(calls)), config=cfg)

    monkeypatch.setattr(pl, "train", fake_train)
    grid_search("dynst", tr, va, GridSpec.full(), TrainConfig(), budget=3)
    assert len(calls) == 3


def test_named_grids():
    assert GridSpec.named("full") == GridSpec.full()
    assert len(GridSpec.named("smoke").cells("dynst")) == 1
    with pytest.raises(ConfigError):
        GridSpec.named("bogus")


# --- experiments ----------------------------------------------------------------


def micro_config(**overrides):
    base = dict(n_patients=150, n_seeds=2, base_seed=3, taus=(4, 8), grid="smoke",
                epochs=1, sim_overrides={"t_max": 16})
    base.update(overrides)
    return ExperimentConfig(**base)


def test_experiment_config_smoke_resolution():
    cfg = ExperimentConfig(base_seed=7, smoke=True).resolve()
    assert cfg.n_patients == 1000
    assert cfg.n_seeds == 2
    assert cfg.grid == "smoke"
    assert cfg.seeds == (7, 8)


def test_prediction_experiment_never_touches_test_before_eval(monkeypatch):
    cfg = micro_config()
    seen_by_search = []
    seen_by_eval = []

    stub = LinearHazardModel(
        ModelConfig(d_model=8, n_layers=1, d_ff=8, t_max=16, p_static=6,
                    q_temporal=4, n_heads=2),
        np.random.default_rng(0),
    )

    def fake_grid_search(kind, tr_c, va_c, grid, base, budget=None):
        seen_by_search.extend([tr_c, va_c])
        return pl.TrainResult(model=stub, history=[], best_epoch=1,
                              best_val_mae=1.0, config=base), []

    def fake_eval(model, cohort, batch_size=64):
        seen_by_eval.append(cohort)
        return 1.0

    monkeypatch.setattr(pl, "grid_search", fake_grid_search)
    monkeypatch.setattr(pl, "evaluate_mae", fake_eval)
    pl.run_prediction_experiment(cfg)

    for seed in cfg.seeds:
        sim = generate(cfg.sim_config(seed))
        _, _, test_c = split_cohort(sim.cohort, (0.70, 0.15, 0.15), seed)
        test_ids = set(test_c.ids)
        for cohort in seen_by_search:
            assert not (set(cohort.ids) & test_ids) or cohort.n != test_c.n
        # the test cohort reaches evaluation exactly once per kind
        matching = [c for c in seen_by_eval if set(c.ids) == test_ids]
        assert len(matching) == 3


def test_fit_cohorts_are_train_and_val_only(monkeypatch):
    cfg = micro_config(n_seeds=1)
    seen = []

    stub = LinearHazardModel(
        ModelConfig(d_model=8, n_layers=1, d_ff=8, t_max=16, p_static=6,
                    q_temporal=4, n_heads=2),
        np.random.default_rng(0),
    )

    def fake_grid_search(kind, tr_c, va_c, grid, base, budget=None):
        seen.append((kind, tr_c.n, va_c.n, set(tr_c.ids), set(va_c.ids)))
        return pl.TrainResult(model=stub, history=[], best_epoch=1,
                              best_val_mae=1.0, config=base), []

    monkeypatch.setattr(pl, "grid_search", fake_grid_search)
    pl.run_prediction_experiment(cfg)
    seed = cfg.seeds[0]
    sim = generate(cfg.sim_config(seed))
    tr_c, va_c, _ = split_cohort(sim.cohort, (0.70, 0.15, 0.15), seed)
    for kind, ntr, nva, ids_tr, ids_va in seen:
        assert ntr == tr_c.n and nva == va_c.n
        assert ids_tr == set(tr_c.ids) and ids_va == set(va_c.ids)


def test_causal_experiment_report_is_byte_deterministic():
    cfg = micro_config()
    r1 = run_causal_experiment(cfg)
    r2 = run_causal_experiment(cfg)
    assert json.dumps(r1, sort_keys=True) == json.dumps(r2, sort_keys=True)
    for method in ("unadjusted", "or_dynst", "ipw_logistic", "aipw_dynst_logistic", "or_linear"):
        assert method in r1["methods"]
        assert "bias" in r1["methods"][method]["8"]
    assert "sd" in r1["true_ate"]["8"]


def test_invariant_checks_pass():
    checks = run_invariant_checks()
    assert checks == {"gradients": True, "causal_masking": True, "survival_oracle": True}


def test_emit_curves_files(tmp_path):
    sim = tiny_sim(n=12)
    model = LinearHazardModel(
        ModelConfig(d_model=8, n_layers=1, d_ff=8, t_max=16, p_static=6,
                    q_temporal=4, n_heads=2),
        np.random.default_rng(1),
    )
    per_patient, mean_path = emit_curves(model, sim.cohort, tmp_path / "curves.csv")
    lines = per_patient.read_text().splitlines()
    assert lines[0] == "patient_id,t,s_hat"
    assert len(lines) == 1 + 12 * 16
    mean_lines = mean_path.read_text().splitlines()
    assert mean_lines[0] == "t,mean_s_hat"
    assert len(mean_lines) == 1 + 16
    s_vals = [float(row.split(",")[2]) for row in lines[1:17]]
    assert all(b <= a for a, b in zip(s_vals, s_vals[1:]))  # non-increasing


def test_write_report_deterministic(tmp_path):
    report = {"b": 1.5, "a": {"y": [1, 2], "x": 0.25}}
    p1 = write_report(report, tmp_path / "r1.json")
    p2 = write_report(report, tmp_path / "r2.json")
    assert p1.read_bytes() == p2.read_bytes()


def test_output_dir_env(tmp_path, monkeypatch):
    monkeypatch.setenv(pl.OUTPUT_DIR_ENV, str(tmp_path / "outs"))
    path = pl.output_dir(None)
    assert path == tmp_path / "outs"
    assert path.is_dir()
    explicit = pl.output_dir(str(tmp_path / "explicit"))
    assert explicit == tmp_path / "explicit"
