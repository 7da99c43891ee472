"""Parameter checkpoints: a single self-describing JSON document.

Layout:

    {
      "format": "dynst-checkpoint-v1",
      "header": {...arbitrary JSON, e.g. the model config...},
      "params": {"name": {"shape": [r, c], "values": [row-major floats]}}
    }

Values are written with full float64 precision (Python repr), keys are
sorted, so the same parameters always serialize to the same bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import ContractError

FORMAT = "dynst-checkpoint-v1"


def save_checkpoint(path, params: dict[str, Tensor], header: dict | None = None) -> None:
    doc = {
        "format": FORMAT,
        "header": header or {},
        "params": {
            name: {"shape": list(p.data.shape), "values": p.data.ravel().tolist()}
            for name, p in params.items()
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Returns (header, {name: array})."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT:
        raise ContractError(f"not a {FORMAT} file: {path}")
    arrays = {
        name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["params"].items()
    }
    return doc.get("header", {}), arrays
