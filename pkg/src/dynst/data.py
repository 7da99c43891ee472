"""Patient data containers and the line-delimited JSON dataset format.

A dataset file holds one patient per line:

    {"id": 0, "z": [0,1,1,0,1], "v": [[...], ...], "a": 1, "o": 17, "delta": 1}

``z`` carries the five static bits (male, hypertension, coronary
atherosclerosis, atrial fibrillation, severely_ill), ``v`` is the
t_max x 4 matrix of standardized vitals, ``a`` the treatment bit,
``o`` the observed time in hours, ``delta`` the event indicator.

The oracle file is a separate path never read by model training:

    {"id": 0, "s_true": [...], "rmst1": {"8": ...}, "rmst0": {...}, "pi_true": 0.8}

``s_true`` is the noiseless survival curve under the assigned
treatment; ``rmst1``/``rmst0`` are counterfactual restricted mean
survival times keyed by the cutoff tau; ``pi_true`` is the true
propensity score.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError

STATIC_FEATURES = (
    "male",
    "hypertension",
    "coronary_atherosclerosis",
    "atrial_fibrillation",
    "severely_ill",
)
TEMPORAL_FEATURES = ("hematocrit", "hemoglobin", "platelets", "mean_blood_pressure")

# Column index of the severity bit within z, and of the treatment bit once
# appended to the model-visible static features.
SEVERITY_COL = STATIC_FEATURES.index("severely_ill")
DIAGNOSIS_COLS = (1, 2, 3)


@dataclass
class PatientRecord:
    """One patient as stored on disk."""

    id: int
    z: list[int]
    v: list[list[float]]
    a: int
    o: int
    delta: int


@dataclass
class Cohort:
    """Column-oriented batch of patient records.

    Shapes: z (n, p), v (n, t_max, q), a/o/delta (n,).
    """

    ids: np.ndarray
    z: np.ndarray
    v: np.ndarray
    a: np.ndarray
    o: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        n = len(self.ids)
        for name in ("z", "v", "a", "o", "delta"):
            arr = getattr(self, name)
            if arr.shape[0] != n:
                raise ContractError(f"cohort field {name} has {arr.shape[0]} rows, expected {n}")
        if np.any(self.o < 1) or np.any(self.o > self.t_max):
            raise ContractError("observed times must lie in 1..t_max")
        if not np.isin(self.delta, (0, 1)).all():
            raise ContractError("event indicators must be 0 or 1")

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def t_max(self) -> int:
        return self.v.shape[1]

    def subset(self, idx) -> "Cohort":
        idx = np.asarray(idx)
        return Cohort(
            ids=self.ids[idx],
            z=self.z[idx],
            v=self.v[idx],
            a=self.a[idx],
            o=self.o[idx],
            delta=self.delta[idx],
        )

    def static_inputs(self, force_treatment: int | None = None) -> np.ndarray:
        """Model-visible static features: z bits with treatment appended.

        ``force_treatment`` substitutes a constant treatment column, which
        is how counterfactual predictions are requested.
        """
        if force_treatment is None:
            a = self.a.astype(float)
        else:
            a = np.full(self.n, float(force_treatment))
        return np.column_stack([self.z.astype(float), a])

    def records(self):
        for i in range(self.n):
            yield PatientRecord(
                id=int(self.ids[i]),
                z=[int(b) for b in self.z[i]],
                v=[[float(x) for x in row] for row in self.v[i]],
                a=int(self.a[i]),
                o=int(self.o[i]),
                delta=int(self.delta[i]),
            )


@dataclass
class Oracle:
    """Ground truth kept out of the model-visible dataset."""

    ids: np.ndarray
    s_true: np.ndarray  # (n, t_max) noiseless factual curves
    rmst1: dict[int, np.ndarray] = field(default_factory=dict)  # tau -> (n,)
    rmst0: dict[int, np.ndarray] = field(default_factory=dict)
    pi_true: np.ndarray = None

    @property
    def n(self) -> int:
        return len(self.ids)

    def true_ate(self, tau: int) -> float:
        tau = int(tau)
        if tau not in self.rmst1:
            raise ContractError(f"oracle has no RMST at tau={tau}; available: {sorted(self.rmst1)}")
        return float(np.mean(self.rmst1[tau] - self.rmst0[tau]))

    def subset(self, idx) -> "Oracle":
        idx = np.asarray(idx)
        return Oracle(
            ids=self.ids[idx],
            s_true=self.s_true[idx],
            rmst1={k: v[idx] for k, v in self.rmst1.items()},
            rmst0={k: v[idx] for k, v in self.rmst0.items()},
            pi_true=self.pi_true[idx],
        )


def write_cohort_jsonl(cohort: Cohort, path) -> None:
    path = Path(path)
    with path.open("w") as fh:
        for rec in cohort.records():
            fh.write(
                json.dumps(
                    {"id": rec.id, "z": rec.z, "v": rec.v, "a": rec.a, "o": rec.o, "delta": rec.delta},
                    separators=(",", ":"),
                )
            )
            fh.write("\n")


def read_cohort_jsonl(path) -> Cohort:
    ids, zs, vs, as_, os_, deltas = [], [], [], [], [], []
    with Path(path).open() as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            ids.append(row["id"])
            zs.append(row["z"])
            vs.append(row["v"])
            as_.append(row["a"])
            os_.append(row["o"])
            deltas.append(row["delta"])
    return Cohort(
        ids=np.asarray(ids, dtype=int),
        z=np.asarray(zs, dtype=float),
        v=np.asarray(vs, dtype=float),
        a=np.asarray(as_, dtype=int),
        o=np.asarray(os_, dtype=int),
        delta=np.asarray(deltas, dtype=int),
    )


def write_oracle_jsonl(oracle: Oracle, path) -> None:
    path = Path(path)
    taus = sorted(oracle.rmst1)
    with path.open("w") as fh:
        for i in range(oracle.n):
            row = {
                "id": int(oracle.ids[i]),
                "s_true": [float(x) for x in oracle.s_true[i]],
                "rmst1": {str(t): float(oracle.rmst1[t][i]) for t in taus},
                "rmst0": {str(t): float(oracle.rmst0[t][i]) for t in taus},
                "pi_true": float(oracle.pi_true[i]),
            }
            fh.write(json.dumps(row, separators=(",", ":")))
            fh.write("\n")


def read_oracle_jsonl(path) -> Oracle:
    ids, curves, pis = [], [], []
    rmst1: dict[int, list] = {}
    rmst0: dict[int, list] = {}
    with Path(path).open() as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            ids.append(row["id"])
            curves.append(row["s_true"])
            pis.append(row["pi_true"])
            for tau, val in row["rmst1"].items():
                rmst1.setdefault(int(tau), []).append(val)
            for tau, val in row["rmst0"].items():
                rmst0.setdefault(int(tau), []).append(val)
    return Oracle(
        ids=np.asarray(ids, dtype=int),
        s_true=np.asarray(curves, dtype=float),
        rmst1={k: np.asarray(v, dtype=float) for k, v in rmst1.items()},
        rmst0={k: np.asarray(v, dtype=float) for k, v in rmst0.items()},
        pi_true=np.asarray(pis, dtype=float),
    )
