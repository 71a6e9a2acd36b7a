"""Sensitivity analysis for treatment effects under unmeasured confounding.

Sharp bounds on E[Y(1)], E[Y(0)] and the ATE when the propensity ratio
e(X)/e(X,Y) is bounded (L-infinity) or has bounded second moment (L2),
estimated with cross-fitted one-step estimators and multiplier-bootstrap
confidence bands.
"""

from .data import AnalysisConfig, FoldPlan, ObservationalDataset, load_csv, make_folds, save_csv
from .errors import (
    ConfigurationError,
    DegenerateGridError,
    DomainError,
    ExtrapolationError,
    FitError,
    FoldError,
    InfeasibleTargetError,
    MSMError,
    ParseError,
    SchemaError,
    ValidationError,
)
from .l2 import estimate_l2_curve, estimate_psi0
from .linf import estimate_psi, weight_bounds
from .nuisance import cross_fit, fit_nuisance, fit_propensity

__version__ = "0.1.0"
