"""Training and experiment orchestration.

Covers seeded data splits, minibatch training with best-checkpoint
selection on validation MAE, exhaustive grid search, and the two
experiment drivers: survival-time prediction (three model kinds,
70/15/15 split) and causal estimation (outcome models on an 80/20
split, all estimators against the oracle). Reports are plain dicts
serialized with sorted keys and no timestamps, so a fixed master seed
reproduces them byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, fields, replace
from itertools import product
from pathlib import Path

import numpy as np

from . import __version__
from . import causal
from .autodiff import AdamState, adam_step, zero_grads
from .data import Cohort, Oracle
from .errors import ConfigError, DivergenceError, NonFiniteError
from .losses import total_loss
from .model import (
    ModelConfig,
    build_model,
    expected_time_from_step_probs,
    predict_step_probs,
    survival_from_step_probs,
)
from .simulator import SimConfig, generate
from .survival import censored_mae
from .gradcheck import check_gradients

__all__ = [
    "TrainConfig",
    "GridSpec",
    "ExperimentConfig",
    "TrainResult",
    "split_indices",
    "split_cohort",
    "train",
    "evaluate_mae",
    "grid_search",
    "run_prediction_experiment",
    "run_causal_experiment",
    "run_double_robustness_experiment",
    "emit_curves",
    "run_invariant_checks",
    "output_dir",
]

OUTPUT_DIR_ENV = "DYNST_OUT_DIR"


def output_dir(explicit: str | None = None) -> Path:
    """Output directory: flag value, else $DYNST_OUT_DIR, else cwd."""
    base = explicit or os.environ.get(OUTPUT_DIR_ENV) or "."
    path = Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


@dataclass(frozen=True)
class TrainConfig:
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 8
    d_ff: int = 0  # 0 means 4 * d_model
    batch_size: int = 32
    alpha: float = 0.1
    epochs: int = 5
    dropout_p: float = 0.1
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs cannot be negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")

    def with_(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)

    def model_config(self, t_max: int, p_static: int, q_temporal: int) -> ModelConfig:
        return ModelConfig(
            d_model=self.d_model,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            d_ff=self.d_ff or 4 * self.d_model,
            t_max=t_max,
            p_static=p_static,
            q_temporal=q_temporal,
            dropout_p=self.dropout_p,
        )

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


@dataclass(frozen=True)
class GridSpec:
    """Hyperparameter grid; the same space serves DynST and Static ST."""

    d_model: tuple[int, ...] = (32, 48, 64)
    n_layers: tuple[int, ...] = (2, 3, 4)
    batch_size: tuple[int, ...] = (16, 32)
    alpha: tuple[float, ...] = (0.0, 0.1, 0.2)

    @classmethod
    def full(cls) -> "GridSpec":
        return cls()

    @classmethod
    def reduced(cls) -> "GridSpec":
        return cls(d_model=(32,), n_layers=(2,), batch_size=(32,), alpha=(0.0, 0.1))

    @classmethod
    def smoke(cls) -> "GridSpec":
        return cls(d_model=(32,), n_layers=(2,), batch_size=(32,), alpha=(0.1,))

    @classmethod
    def named(cls, name: str) -> "GridSpec":
        try:
            return {"full": cls.full, "reduced": cls.reduced, "smoke": cls.smoke}[name]()
        except KeyError:
            raise ConfigError(f"unknown grid preset {name!r}") from None

    def cells(self, kind: str) -> list[dict]:
        """Deterministically ordered grid cells; width/depth axes are
        collapsed for the linear baseline, which has neither."""
        seen = []
        for d_model, n_layers, batch, alpha in product(
            sorted(self.d_model), sorted(self.n_layers),
            sorted(self.batch_size), sorted(self.alpha)
        ):
            cell = {"d_model": d_model, "n_layers": n_layers,
                    "batch_size": batch, "alpha": alpha}
            if kind == "linear":
                key = (batch, alpha)
                if any((c["batch_size"], c["alpha"]) == key for c in seen):
                    continue
            seen.append(cell)
        return seen


@dataclass
class TrainResult:
    model: object
    history: list
    best_epoch: int | None
    best_val_mae: float | None
    config: TrainConfig


def split_indices(n: int, ratios, seed: int) -> tuple[np.ndarray, ...]:
    """Disjoint, exhaustive, seed-deterministic index split."""
    ratios = tuple(float(r) for r in ratios)
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be non-negative and sum to 1, got {ratios}")
    order = np.random.default_rng(seed).permutation(n)
    bounds = np.floor(np.cumsum(ratios) * n + 0.5).astype(int)
    bounds[-1] = n
    parts = []
    start = 0
    for b in bounds:
        parts.append(np.sort(order[start:b]))
        start = b
    return tuple(parts)


def split_cohort(cohort: Cohort, ratios, seed: int) -> tuple[Cohort, ...]:
    return tuple(cohort.subset(idx) for idx in split_indices(cohort.n, ratios, seed))


def _model_inputs(cohort: Cohort) -> tuple[np.ndarray, np.ndarray]:
    return cohort.static_inputs(), cohort.v


def evaluate_mae(model, cohort: Cohort, batch_size: int = 64) -> float:
    """Censoring-aware MAE of predicted survival times on a cohort."""
    z, v = _model_inputs(cohort)
    q = predict_step_probs(model, z, v, batch_size=batch_size)
    t_hat = expected_time_from_step_probs(q)
    return censored_mae(t_hat, cohort.o.astype(float), cohort.delta.astype(float))


def _param_norms(params) -> str:
    norms = {name: float(np.linalg.norm(p.data)) for name, p in sorted(params.items())}
    worst = sorted(norms, key=lambda k: -norms[k])[:5]
    return ", ".join(f"{k}={norms[k]:.3g}" for k in worst)


def train(kind: str, train_cohort: Cohort, val_cohort: Cohort,
          config: TrainConfig) -> TrainResult:
    """Minibatch training with best-checkpoint selection on validation MAE.

    Runs up to ``config.epochs`` epochs of seeded, shuffled minibatches
    and returns the parameters from the epoch with the lowest
    validation MAE. Zero epochs returns the initialized model with an
    empty history. A non-finite loss aborts with a diagnostic naming
    the batch and the largest parameter norms.
    """
    p_static = train_cohort.z.shape[1] + 1  # treatment appended
    model_cfg = config.model_config(train_cohort.t_max, p_static, train_cohort.v.shape[2])
    init_rng = np.random.default_rng([config.seed, 1])
    shuffle_rng = np.random.default_rng([config.seed, 2])
    dropout_rng = np.random.default_rng([config.seed, 3])
    model = build_model(kind, model_cfg, init_rng)

    if config.epochs == 0:
        return TrainResult(model=model, history=[], best_epoch=None,
                           best_val_mae=None, config=config)

    z, v = _model_inputs(train_cohort)
    observed = train_cohort.o
    event = train_cohort.delta
    state = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                      eps=config.eps, weight_decay=config.weight_decay)

    history = []
    best = None  # (mae, epoch, params snapshot)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(train_cohort.n)
        epoch_loss = 0.0
        for bi, start in enumerate(range(0, train_cohort.n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            try:
                q = model.forward(z[idx], v[idx], train=True, rng=dropout_rng)
                loss = total_loss(q, observed[idx], event[idx], config.alpha)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise NonFiniteError("loss is not finite")
                zero_grads(model.params)
                loss.backward()
                adam_step(model.params, state)
            except NonFiniteError as exc:
                raise DivergenceError(
                    f"diverged in epoch {epoch}, batch {bi} ({exc}); "
                    f"parameter norms: {_param_norms(model.params)}"
                ) from exc
            epoch_loss += value
        val_mae = evaluate_mae(model, val_cohort) if val_cohort.n else float("nan")
        history.append({"epoch": epoch, "train_loss": epoch_loss, "val_mae": val_mae})
        if val_cohort.n and (best is None or val_mae < best[0]):
            best = (val_mae, epoch, {k: p.data.copy() for k, p in model.params.items()})

    if best is not None:
        for name, arr in best[2].items():
            model.params[name].data = arr
        return TrainResult(model=model, history=history, best_epoch=best[1],
                           best_val_mae=best[0], config=config)
    return TrainResult(model=model, history=history, best_epoch=None,
                       best_val_mae=None, config=config)


# The linear baseline stands in for a closed-form-fit model, so it gets a
# fixed convergence budget instead of the transformer epoch cap; its
# training cost is negligible either way.
LINEAR_EPOCHS = 40
LINEAR_LR = 0.03


def grid_search(kind: str, train_cohort: Cohort, val_cohort: Cohort,
                grid: GridSpec, base: TrainConfig, budget: int | None = None):
    """Exhaustive sweep; selection by validation MAE, ties to the
    smaller d_model then fewer layers. ``budget`` caps the cell count."""
    cells = grid.cells(kind)
    if budget is not None:
        cells = cells[:budget]
    if kind == "linear" and base.epochs > 0:
        base = base.with_(epochs=LINEAR_EPOCHS, lr=LINEAR_LR)
    results = []
    for i, cell in enumerate(cells):
        cfg = base.with_(seed=base.seed + i, **cell)
        res = train(kind, train_cohort, val_cohort, cfg)
        results.append((res.best_val_mae, cell["d_model"], cell["n_layers"], i, res, cell))
    results.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    best = results[0]
    table = [
        {"cell": cell, "val_mae": mae, "best_epoch": res.best_epoch}
        for mae, _, _, _, res, cell in sorted(results, key=lambda r: r[3])
    ]
    return best[4], table


@dataclass(frozen=True)
class ExperimentConfig:
    n_patients: int = 5000
    n_seeds: int = 6
    base_seed: int = 0
    taus: tuple[int, ...] = (8, 12, 16)
    grid: str = "reduced"
    epochs: int = 5
    budget: int | None = None
    smoke: bool = False
    sim_overrides: dict = field(default_factory=dict)

    def resolve(self) -> "ExperimentConfig":
        if self.smoke:
            return replace(self, n_patients=1000, n_seeds=2, grid="smoke", epochs=2)
        return self

    @property
    def seeds(self) -> tuple[int, ...]:
        return tuple(self.base_seed + i for i in range(self.n_seeds))

    def sim_config(self, seed: int) -> SimConfig:
        taus = tuple(sorted(set(self.taus) | {8, 12, 16}))
        return SimConfig(n_patients=self.n_patients, seed=seed,
                         oracle_taus=taus, **self.sim_overrides)

    def to_dict(self) -> dict:
        return {
            "n_patients": self.n_patients,
            "seeds": list(self.seeds),
            "taus": list(self.taus),
            "grid": self.grid,
            "epochs": self.epochs,
            "budget": self.budget,
            "smoke": self.smoke,
            "sim_overrides": dict(self.sim_overrides),
        }


def _mean_sd(values: list[float]) -> dict:
    out = {"mean": float(np.mean(values)), "per_seed": [float(v) for v in values]}
    if len(values) >= 2:
        out["sd"] = float(np.std(values, ddof=1))
    return out


def run_invariant_checks(model=None, cohort: Cohort | None = None) -> dict:
    """Fast self-checks: primitive+loss gradients, causal masking, and
    survival-math oracle agreement. Returns {name: bool}."""
    from . import autodiff as ad
    from .autodiff import Tensor
    from .survival import expected_survival_time, rmst, survival_from_hazard

    checks = {}
    rng = np.random.default_rng(0)

    def grad_ok():
        a = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        check_gradients(lambda t: ad.sigmoid(ad.matmul(t["a"], t["b"])).sum(),
                        {"a": a, "b": b}, rel_tol=1e-4)
        cfg = ModelConfig(d_model=4, n_layers=1, d_ff=8, t_max=6, p_static=2,
                          q_temporal=2, n_heads=2, dropout_p=0.0)
        toy = build_model("dynst", cfg, np.random.default_rng(1))
        z = rng.integers(0, 2, size=(3, 2)).astype(float)
        v = rng.standard_normal((3, 6, 2))
        o = np.array([2, 6, 4])
        d = np.array([1, 0, 1])
        check_gradients(lambda t: total_loss(toy.forward(z, v), o, d, 0.2),
                        toy.params, rel_tol=1e-3)
        return True

    def causality_ok():
        if model is not None and cohort is not None and hasattr(model, "use_temporal"):
            z, v = _model_inputs(cohort.subset(np.arange(min(10, cohort.n))))
            mdl = model
        else:
            cfg = ModelConfig(d_model=8, n_layers=2, d_ff=16, t_max=8, p_static=3,
                              q_temporal=2, n_heads=2)
            mdl = build_model("dynst", cfg, np.random.default_rng(2))
            z = rng.integers(0, 2, size=(10, 3)).astype(float)
            v = rng.standard_normal((10, 8, 2))
        base = predict_step_probs(mdl, z, v)
        t_cut = v.shape[1] // 2
        v2 = v.copy()
        v2[:, t_cut:, :] += 7.0
        out = predict_step_probs(mdl, z, v2)
        return bool(np.abs(out[:, :t_cut] - base[:, :t_cut]).max() < 1e-12)

    def survival_ok():
        for _ in range(100):
            h = rng.uniform(0, 1, size=12)
            s = survival_from_hazard(h)
            ref = np.array([np.prod(1 - h[: t + 1]) for t in range(12)])
            if np.abs(s - ref).max() > 1e-12:
                return False
            if abs(float(expected_survival_time(s)) - float(ref.sum())) > 1e-12:
                return False
            if abs(rmst(s, 6) - float(ref[:6].sum())) > 1e-12:
                return False
        return True

    for name, fn in (("gradients", grad_ok), ("causal_masking", causality_ok),
                     ("survival_oracle", survival_ok)):
        try:
            checks[name] = bool(fn())
        except Exception:
            checks[name] = False
    return checks


def run_prediction_experiment(config: ExperimentConfig) -> dict:
    """Simulate, split 70/15/15, grid-search every model kind, report
    held-out MAE per kind (mean and SD over seeds)."""
    config = config.resolve()
    grid = GridSpec.named(config.grid)
    kinds = ("dynst", "static", "linear")
    per_kind = {kind: {"test_mae": [], "selected": [], "best_epoch": []} for kind in kinds}

    for seed in config.seeds:
        sim = generate(config.sim_config(seed))
        train_c, val_c, test_c = split_cohort(sim.cohort, (0.70, 0.15, 0.15), seed)
        base = TrainConfig(epochs=config.epochs, seed=seed)
        for kind in kinds:
            result, _ = grid_search(kind, train_c, val_c, grid, base, budget=config.budget)
            mae = evaluate_mae(result.model, test_c)
            per_kind[kind]["test_mae"].append(mae)
            per_kind[kind]["selected"].append(
                {k: getattr(result.config, k) for k in ("d_model", "n_layers", "batch_size", "alpha")}
            )
            per_kind[kind]["best_epoch"].append(result.best_epoch)

    report = {
        "experiment": "predict",
        "version": __version__,
        "config": config.to_dict(),
        "models": {
            kind: {
                "test_mae": _mean_sd(stats["test_mae"]),
                "selected": stats["selected"],
                "best_epoch": stats["best_epoch"],
            }
            for kind, stats in per_kind.items()
        },
    }
    means = {kind: report["models"][kind]["test_mae"]["mean"] for kind in kinds}
    report["mae_ordering_ok"] = bool(means["dynst"] <= means["static"] <= means["linear"])
    if config.smoke:
        report["checks"] = run_invariant_checks()
    return report


_CAUSAL_METHODS = ("unadjusted", "or_linear", "ipw_logistic", "or_dynst", "aipw_dynst_logistic")


def _causal_estimates(cohort: Cohort, oracle: Oracle, dynst_model, linear_model,
                      propensity, taus) -> dict:
    out = {}
    dynst_outcome = causal.HazardModelOutcome(dynst_model)
    linear_outcome = causal.HazardModelOutcome(linear_model)
    for tau in taus:
        tau = int(tau)
        out[tau] = {
            "unadjusted": causal.unadjusted_difference(cohort, tau),
            "or_linear": causal.or_estimate(cohort, linear_outcome, tau),
            "ipw_logistic": causal.ipw_estimate(cohort, propensity, tau),
            "or_dynst": causal.or_estimate(cohort, dynst_outcome, tau),
            "aipw_dynst_logistic": causal.aipw_estimate(
                cohort, dynst_outcome, propensity, tau
            ),
        }
    return out


def run_causal_experiment(config: ExperimentConfig) -> dict:
    """Per seed: simulate with oracle, 80/20 split for outcome models,
    cross-validated logistic propensity, all estimators at every tau."""
    config = config.resolve()
    grid = GridSpec.named(config.grid)
    estimates = {m: {int(t): [] for t in config.taus} for m in _CAUSAL_METHODS}
    truths = {int(t): [] for t in config.taus}
    unadjusted_sign = []

    for seed in config.seeds:
        sim = generate(config.sim_config(seed))
        cohort, oracle = sim.cohort, sim.oracle
        train_c, val_c = split_cohort(cohort, (0.80, 0.20), seed)
        base = TrainConfig(epochs=config.epochs, seed=seed)
        dynst_res, _ = grid_search("dynst", train_c, val_c, grid, base, budget=config.budget)
        linear_res, _ = grid_search("linear", train_c, val_c, grid, base, budget=config.budget)
        propensity = causal.fit_propensity(cohort, seed=seed)
        per_tau = _causal_estimates(cohort, oracle, dynst_res.model,
                                    linear_res.model, propensity, config.taus)
        for tau in config.taus:
            tau = int(tau)
            truths[tau].append(oracle.true_ate(tau))
            for method in _CAUSAL_METHODS:
                estimates[method][tau].append(per_tau[tau][method])
        unadjusted_sign.append(per_tau[int(config.taus[len(config.taus) // 2])]["unadjusted"])

    methods_report = {}
    for method in _CAUSAL_METHODS:
        methods_report[method] = {}
        for tau in config.taus:
            tau = int(tau)
            biases = [est - t for est, t in zip(estimates[method][tau], truths[tau])]
            methods_report[method][str(tau)] = {
                "estimate": _mean_sd(estimates[method][tau]),
                "bias": _mean_sd(biases),
            }

    report = {
        "experiment": "causal",
        "version": __version__,
        "config": config.to_dict(),
        "true_ate": {str(int(t)): _mean_sd(truths[int(t)]) for t in config.taus},
        "methods": methods_report,
    }
    if config.smoke:
        checks = run_invariant_checks()
        checks["unadjusted_bias_negative"] = bool(np.mean(unadjusted_sign) < 0.0)
        report["checks"] = checks
    return report


def run_double_robustness_experiment(config: ExperimentConfig, tau: int = 12) -> dict:
    """Both double-robustness legs against the oracle at one cutoff.

    Leg A: true counterfactual RMSTs as the outcome model with a flat
    0.5 propensity. Leg B: true propensity with the deliberately
    misspecified linear outcome model (trained on an 80/20 split).
    Reports each leg's bias next to the unadjusted bias.
    """
    config = config.resolve()
    rows = {"unadjusted": [], "aipw_oracle_outcome_flat_propensity": [],
            "aipw_linear_outcome_true_propensity": [], "true_ate": []}
    for seed in config.seeds:
        sim = generate(config.sim_config(seed))
        cohort, oracle = sim.cohort, sim.oracle
        train_c, val_c = split_cohort(cohort, (0.80, 0.20), seed)
        linear_res, _ = grid_search("linear", train_c, val_c,
                                    GridSpec.named(config.grid), TrainConfig(epochs=config.epochs, seed=seed))
        truth = oracle.true_ate(tau)
        rows["true_ate"].append(truth)
        rows["unadjusted"].append(causal.unadjusted_difference(cohort, tau))
        rows["aipw_oracle_outcome_flat_propensity"].append(
            causal.aipw_estimate(cohort, causal.OracleOutcome(oracle), 0.5, tau)
        )
        rows["aipw_linear_outcome_true_propensity"].append(
            causal.aipw_estimate(cohort, causal.HazardModelOutcome(linear_res.model),
                                 causal.OraclePropensity(oracle), tau)
        )

    truth_mean = float(np.mean(rows["true_ate"]))
    report = {
        "experiment": "double_robustness",
        "version": __version__,
        "tau": int(tau),
        "config": config.to_dict(),
        "true_ate": _mean_sd(rows["true_ate"]),
    }
    for key in ("unadjusted", "aipw_oracle_outcome_flat_propensity",
                "aipw_linear_outcome_true_propensity"):
        biases = [est - t for est, t in zip(rows[key], rows["true_ate"])]
        report[key] = {"estimate": _mean_sd(rows[key]), "bias": _mean_sd(biases)}
    return report


def emit_curves(model, cohort: Cohort, out_path) -> tuple[Path, Path]:
    """Write per-patient and cohort-mean predicted survival curves as CSV.

    Returns (per-patient path, cohort-mean path); the mean file name
    derives from ``out_path`` with a ``_mean`` suffix.
    """
    out_path = Path(out_path)
    mean_path = out_path.with_name(out_path.stem + "_mean" + (out_path.suffix or ".csv"))
    z, v = _model_inputs(cohort)
    s = survival_from_step_probs(predict_step_probs(model, z, v))
    with out_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "t", "s_hat"])
        for i in range(cohort.n):
            for t in range(s.shape[1]):
                writer.writerow([int(cohort.ids[i]), t + 1, repr(float(s[i, t]))])
    with mean_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "mean_s_hat"])
        mean = s.mean(axis=0)
        for t in range(s.shape[1]):
            writer.writerow([t + 1, repr(float(mean[t]))])
    return out_path, mean_path


def write_report(report: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    return path
