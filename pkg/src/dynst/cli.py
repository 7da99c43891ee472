"""Command-line interface.

Subcommands: simulate, train, evaluate, estimate-ate,
experiment predict|causal, gradcheck. Every SimConfig/TrainConfig field
is exposed as a flag; a JSON config file may supply the same values,
with flags taking precedence. Output paths resolve against --out-dir,
then $DYNST_OUT_DIR, then the working directory. Exit codes: 0 on
success, 1 when a smoke/invariant check fails, 2 on usage or data
errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import MISSING, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import causal
from .autodiff import Tensor, tune_allocator
from .data import read_cohort_jsonl, read_oracle_jsonl, write_cohort_jsonl, write_oracle_jsonl
from .errors import DynstError
from .gradcheck import check_gradients
from .model import ModelConfig, build_model, load_model, save_model
from .pipeline import (
    ExperimentConfig,
    GridSpec,
    TrainConfig,
    emit_curves,
    evaluate_mae,
    output_dir,
    run_causal_experiment,
    run_prediction_experiment,
    split_cohort,
    train,
    write_report,
)
from .simulator import SimConfig, generate


def _flag_name(field_name: str, prefix: str = "") -> str:
    return "--" + prefix + field_name.replace("_", "-")


def _tuple_parser(elem):
    def parse(text: str):
        text = text.strip()
        if not text:
            return ()
        return tuple(elem(part) for part in text.split(","))

    return parse


def _add_dataclass_flags(parser: argparse.ArgumentParser, cls, prefix: str = "",
                         skip=()) -> None:
    for f in fields(cls):
        if f.name in skip:
            continue
        default = f.default if f.default is not MISSING else None
        kwargs = {"default": None, "dest": prefix.replace("-", "_") + f.name,
                  "help": f"{cls.__name__}.{f.name} (default {default!r})"}
        if f.type in ("bool", bool):
            parser.add_argument(_flag_name(f.name, prefix),
                                action=argparse.BooleanOptionalAction, **kwargs)
        elif isinstance(default, tuple):
            elem = float if any(isinstance(x, float) for x in default) else int
            parser.add_argument(_flag_name(f.name, prefix), type=_tuple_parser(elem), **kwargs)
        elif isinstance(default, int) and not isinstance(default, bool):
            parser.add_argument(_flag_name(f.name, prefix), type=int, **kwargs)
        else:
            parser.add_argument(_flag_name(f.name, prefix), type=float, **kwargs)


def _collect_overrides(args, cls, prefix: str = "") -> dict:
    out = {}
    for f in fields(cls):
        value = getattr(args, prefix.replace("-", "_") + f.name, None)
        if value is not None:
            out[f.name] = value
    return out


def _load_config_file(path: str | None, section: str | None = None) -> dict:
    if not path:
        return {}
    doc = json.loads(Path(path).read_text())
    if section and section in doc:
        return dict(doc[section])
    return dict(doc)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynst", description=__doc__)
    parser.add_argument("--version", action="version", version=f"dynst {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a cohort and its oracle")
    p_sim.add_argument("--config", help="JSON file with SimConfig fields (section 'sim' honored)")
    p_sim.add_argument("--out", required=True, help="dataset JSONL path")
    p_sim.add_argument("--oracle", help="oracle JSONL path (ground truth, kept apart)")
    p_sim.add_argument("--out-dir", help="directory for relative outputs")
    _add_dataclass_flags(p_sim, SimConfig)

    p_train = sub.add_parser("train", help="fit a hazard model on a dataset file")
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--model-kind", default="dynst", choices=("dynst", "static", "linear"))
    p_train.add_argument("--val-fraction", type=float, default=0.2)
    p_train.add_argument("--split-seed", type=int, default=0)
    p_train.add_argument("--config", help="JSON file with TrainConfig fields (section 'train')")
    p_train.add_argument("--out", required=True, help="checkpoint path")
    p_train.add_argument("--history", help="optional JSON path for the epoch history")
    p_train.add_argument("--out-dir")
    _add_dataclass_flags(p_train, TrainConfig)

    p_eval = sub.add_parser("evaluate", help="censoring-aware MAE of a checkpoint on a dataset")
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--out", help="report JSON path")
    p_eval.add_argument("--curves", help="CSV path for predicted survival curves")
    p_eval.add_argument("--out-dir")

    p_ate = sub.add_parser("estimate-ate", help="run ATE estimators on a dataset")
    p_ate.add_argument("--data", required=True)
    p_ate.add_argument("--oracle", help="oracle JSONL for bias-vs-truth reporting")
    p_ate.add_argument("--model", help="outcome-model checkpoint (needed for or/aipw)")
    p_ate.add_argument("--methods", default="unadjusted,or,ipw,aipw")
    p_ate.add_argument("--tau", default="8,12,16")
    p_ate.add_argument("--clip", type=float, default=0.01)
    p_ate.add_argument("--propensity-features", type=_tuple_parser(int), default=(1, 2, 3),
                       help="static-column indices for the propensity fit")
    p_ate.add_argument("--seed", type=int, default=0, help="cross-validation fold seed")
    p_ate.add_argument("--out", help="report JSON path (array of estimates)")
    p_ate.add_argument("--out-dir")

    p_exp = sub.add_parser("experiment", help="multi-seed experiment drivers")
    exp_sub = p_exp.add_subparsers(dest="experiment", required=True)
    for name in ("predict", "causal"):
        p = exp_sub.add_parser(name)
        p.add_argument("--config", help="JSON file; sections 'experiment' and 'sim' honored")
        p.add_argument("--n", type=int, help="patients per simulated cohort")
        p.add_argument("--seeds", type=int, help="number of replicate seeds")
        p.add_argument("--seed", type=int, help="base seed")
        p.add_argument("--taus", type=_tuple_parser(int))
        p.add_argument("--grid", choices=("full", "reduced", "smoke"))
        p.add_argument("--epochs", type=int)
        p.add_argument("--budget", type=int, help="cap on grid cells")
        p.add_argument("--smoke", action="store_true",
                       help="n=1000, 2 seeds, 1 grid cell, plus invariant checks")
        p.add_argument("--out", help="report file name")
        p.add_argument("--out-dir")
        _add_dataclass_flags(p, SimConfig, prefix="sim-", skip=("n_patients", "seed", "oracle_taus"))

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of every op and the loss")
    p_grad.add_argument("--rel-tol", type=float, default=1e-4)
    p_grad.add_argument("--loss-rel-tol", type=float, default=1e-3)
    return parser


def _cmd_simulate(args) -> int:
    overrides = {**_load_config_file(args.config, "sim"), **_collect_overrides(args, SimConfig)}
    config = SimConfig(**overrides)
    result = generate(config)
    out = output_dir(args.out_dir)
    data_path = Path(args.out) if Path(args.out).is_absolute() else out / args.out
    write_cohort_jsonl(result.cohort, data_path)
    summary = dict(result.summary)
    summary["data_path"] = str(data_path)
    if args.oracle:
        oracle_path = Path(args.oracle) if Path(args.oracle).is_absolute() else out / args.oracle
        write_oracle_jsonl(result.oracle, oracle_path)
        summary["oracle_path"] = str(oracle_path)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_train(args) -> int:
    cohort = read_cohort_jsonl(args.data)
    overrides = {**_load_config_file(args.config, "train"), **_collect_overrides(args, TrainConfig)}
    config = TrainConfig(**overrides)
    ratios = (1.0 - args.val_fraction, args.val_fraction)
    train_c, val_c = split_cohort(cohort, ratios, args.split_seed)
    result = train(args.model_kind, train_c, val_c, config)
    out = output_dir(args.out_dir)
    ckpt = Path(args.out) if Path(args.out).is_absolute() else out / args.out
    save_model(ckpt, result.model)
    if args.history:
        hist_path = Path(args.history) if Path(args.history).is_absolute() else out / args.history
        write_report({"history": result.history, "best_epoch": result.best_epoch}, hist_path)
    print(json.dumps({
        "checkpoint": str(ckpt),
        "best_epoch": result.best_epoch,
        "best_val_mae": result.best_val_mae,
    }, sort_keys=True))
    return 0


def _cmd_evaluate(args) -> int:
    cohort = read_cohort_jsonl(args.data)
    model = load_model(args.model)
    report = {
        "model_kind": model.kind,
        "n_patients": cohort.n,
        "censoring_rate": float(1.0 - cohort.delta.mean()),
        "censored_mae": evaluate_mae(model, cohort),
    }
    out = output_dir(args.out_dir)
    if args.curves:
        curves = Path(args.curves) if Path(args.curves).is_absolute() else out / args.curves
        per_patient, mean_path = emit_curves(model, cohort, curves)
        report["curves"] = str(per_patient)
        report["curves_mean"] = str(mean_path)
    if args.out:
        path = Path(args.out) if Path(args.out).is_absolute() else out / args.out
        write_report(report, path)
    print(json.dumps(report, sort_keys=True))
    return 0


def _cmd_estimate_ate(args) -> int:
    cohort = read_cohort_jsonl(args.data)
    oracle = read_oracle_jsonl(args.oracle) if args.oracle else None
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    taus = [int(t) for t in args.tau.split(",")]
    model = load_model(args.model) if args.model else None

    outcome = causal.HazardModelOutcome(model) if model is not None else None
    propensity = None
    if {"ipw", "aipw"} & set(methods):
        propensity = causal.fit_propensity(cohort, feature_idx=args.propensity_features,
                                           seed=args.seed)

    reports = []
    for tau in taus:
        for method in methods:
            if method == "unadjusted":
                est = causal.unadjusted_difference(cohort, tau)
            elif method == "or":
                if outcome is None:
                    raise DynstError("--model is required for the 'or' method")
                est = causal.or_estimate(cohort, outcome, tau)
            elif method == "ipw":
                est = causal.ipw_estimate(cohort, propensity, tau, clip=args.clip)
            elif method == "aipw":
                if outcome is None:
                    raise DynstError("--model is required for the 'aipw' method")
                est = causal.aipw_estimate(cohort, outcome, propensity, tau, clip=args.clip)
            else:
                raise DynstError(f"unknown method {method!r}")
            reports.append(causal.make_report(method, tau, est, oracle=oracle).to_dict())

    payload = json.dumps(reports, sort_keys=True, indent=2) + "\n"
    if args.out:
        out = output_dir(args.out_dir)
        path = Path(args.out) if Path(args.out).is_absolute() else out / args.out
        path.write_text(payload)
    print(payload, end="")
    return 0


def _cmd_experiment(args) -> int:
    tune_allocator()
    file_cfg = _load_config_file(args.config, "experiment")
    sim_overrides = dict(_load_config_file(args.config, "sim")) if args.config else {}
    sim_overrides = {k: v for k, v in sim_overrides.items()
                     if k in SimConfig.field_names() and k not in ("n_patients", "seed")}
    sim_overrides.update(_collect_overrides(args, SimConfig, prefix="sim-"))

    kwargs = dict(file_cfg)
    if args.n is not None:
        kwargs["n_patients"] = args.n
    if args.seeds is not None:
        kwargs["n_seeds"] = args.seeds
    if args.seed is not None:
        kwargs["base_seed"] = args.seed
    if args.taus is not None:
        kwargs["taus"] = tuple(args.taus)
    if args.grid is not None:
        kwargs["grid"] = args.grid
    if args.epochs is not None:
        kwargs["epochs"] = args.epochs
    if args.budget is not None:
        kwargs["budget"] = args.budget
    if args.smoke:
        kwargs["smoke"] = True
    kwargs["sim_overrides"] = {**kwargs.get("sim_overrides", {}), **sim_overrides}
    if "taus" in kwargs:
        kwargs["taus"] = tuple(kwargs["taus"])
    config = ExperimentConfig(**kwargs)

    runner = run_prediction_experiment if args.experiment == "predict" else run_causal_experiment
    report = runner(config)
    out = output_dir(args.out_dir)
    name = args.out or f"{args.experiment}_report.json"
    path = Path(name) if Path(name).is_absolute() else out / name
    write_report(report, path)
    print(json.dumps({"report": str(path)}, sort_keys=True))
    checks = report.get("checks", {})
    failed = [k for k, ok in checks.items() if not ok]
    if failed:
        print(f"invariant checks failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def _cmd_gradcheck(args) -> int:
    from . import autodiff as ad
    from .losses import total_loss

    rng = np.random.default_rng(0)

    def tensors(*shapes):
        return {name: Tensor(rng.standard_normal(shape), requires_grad=True)
                for name, shape in zip("abc", shapes)}

    cases = {
        "add": (lambda t: ad.add(t["a"], t["b"]).sum(), tensors((3, 4), (4,))),
        "mul": (lambda t: ad.mul(t["a"], t["b"]).sum(), tensors((3, 4), (3, 4))),
        "matmul": (lambda t: ad.matmul(t["a"], t["b"]).sum(), tensors((2, 3), (3, 4))),
        "matmul_batched": (lambda t: ad.matmul(t["a"], t["b"]).sum(), tensors((2, 3, 4), (2, 4, 2))),
        "linear": (lambda t: ad.linear(t["a"], t["b"], t["c"]).sum(), tensors((4, 3), (3, 2), (2,))),
        "sigmoid": (lambda t: ad.sigmoid(t["a"]).sum(), tensors((4, 4))),
        "log": (lambda t: ad.log(t["a"]).sum(),
                {"a": Tensor(rng.uniform(0.5, 2.0, (3, 3)), requires_grad=True)}),
        "exp": (lambda t: ad.exp(t["a"]).sum(), tensors((3, 3))),
        "abs": (lambda t: ad.absolute(t["a"]).sum(), tensors((4, 4))),
        "max_with_zero": (lambda t: ad.max_with_zero(t["a"]).sum(), tensors((4, 4))),
        "softmax": (lambda t: ad.mul(ad.softmax(t["a"], axis=-1), t["b"]).sum(),
                    tensors((3, 5), (3, 5))),
        "layer_norm": (lambda t: ad.mul(ad.layer_norm(t["a"], axis=-1), t["b"]).sum(),
                       tensors((3, 6), (3, 6))),
        "concat": (lambda t: ad.mul(ad.concat([t["a"], t["b"]], axis=1), t["c"]).sum(),
                   tensors((2, 3), (2, 2), (2, 5))),
        "slice": (lambda t: ad.slice_(t["a"], (slice(0, 2),)).sum(), tensors((4, 3))),
        "sum": (lambda t: ad.mul(ad.tsum(t["a"], axis=1), t["b"]).sum(), tensors((3, 4), (3,))),
        "mean": (lambda t: ad.mul(ad.tmean(t["a"], axis=0), t["b"]).sum(), tensors((3, 4), (4,))),
        "masked_fill": (lambda t: ad.masked_fill(t["a"], np.eye(4, dtype=bool), -2.0).sum(),
                        tensors((4, 4))),
        "dropout": (lambda t: ad.dropout(t["a"], 0.4, train=True,
                                         rng=np.random.default_rng(7)).sum(), tensors((5, 5))),
    }

    failures = 0
    for name, (fn, ts) in cases.items():
        try:
            errs = check_gradients(fn, ts, rel_tol=args.rel_tol)
            print(f"PASS {name:16s} max rel err {max(errs.values()):.2e}")
        except AssertionError as exc:
            failures += 1
            print(f"FAIL {name:16s} {exc}")

    cfg = ModelConfig(d_model=4, n_layers=1, d_ff=8, t_max=6, p_static=2,
                      q_temporal=2, n_heads=2, dropout_p=0.0)
    model = build_model("dynst", cfg, np.random.default_rng(1))
    z = rng.integers(0, 2, size=(3, 2)).astype(float)
    v = rng.standard_normal((3, 6, 2))
    o = np.array([2, 6, 4])
    d = np.array([1, 0, 1])
    try:
        errs = check_gradients(lambda t: total_loss(model.forward(z, v), o, d, 0.2),
                               model.params, rel_tol=args.loss_rel_tol)
        print(f"PASS {'model+loss':16s} max rel err {max(errs.values()):.2e}")
    except AssertionError as exc:
        failures += 1
        print(f"FAIL {'model+loss':16s} {exc}")

    return 1 if failures else 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "train": _cmd_train,
        "evaluate": _cmd_evaluate,
        "estimate-ate": _cmd_estimate_ate,
        "experiment": _cmd_experiment,
        "gradcheck": _cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except DynstError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
