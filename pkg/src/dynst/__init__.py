"""Discrete-time survival modeling, simulation, and causal estimation.

The package splits into:

* ``autodiff``   reverse-mode tensor engine and Adam with decoupled decay
* ``model``      transformer / static / linear hazard-complement models
* ``survival``   hazard-survival conversions, RMST, censoring-aware MAE
* ``losses``     the differentiable censoring-aware training objective
* ``simulator``  confounded synthetic cohorts with a ground-truth oracle
* ``causal``     unadjusted / OR / IPW / AIPW estimators of ATE on RMST
* ``pipeline``   splits, training, grid search, experiment drivers
* ``cli``        the ``dynst`` command
"""

__version__ = "0.1.0"

from .data import Cohort, Oracle, PatientRecord  # noqa: F401
from .model import ModelConfig, build_model, load_model, save_model  # noqa: F401
from .simulator import SimConfig, generate, true_ate  # noqa: F401
from .survival import censored_mae, expected_survival_time, rmst, survival_from_hazard  # noqa: F401
