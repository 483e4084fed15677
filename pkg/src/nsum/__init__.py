"""Network scale-up estimation of hidden-population sizes.

Library layout:

* :mod:`nsum.data`: survey dataset, Beta(mean, dispersion) priors, model specs
* :mod:`nsum.numerics`: special functions and seeded samplers
* :mod:`nsum.models`: the four hierarchical models and their conditionals
* :mod:`nsum.engine`: Metropolis-within-Gibbs runner and pilot tuning
* :mod:`nsum.postprocess`: scale-up estimators, summaries, recall adjustment,
  convergence diagnostics
* :mod:`nsum.harness`: simulation studies and back estimation
* :mod:`nsum.cli`: the ``nsum`` command line front end
"""

__version__ = "0.1.0"

from .data import BetaMR, ModelSpec, SurveyDataset, validate_dataset  # noqa: E402
from .engine import ChainConfig, fit_model, pooled_draws  # noqa: E402
from .harness import SimRegime, back_estimate, run_study, simulate_dataset  # noqa: E402
from .numerics import RandomStream  # noqa: E402
from .postprocess import (  # noqa: E402
    RecallCalibration,
    fit_recall_calibration,
    gelman_rubin,
    recall_adjust_draws,
    scaleup_degrees,
    scaleup_size,
    summarize,
)

__all__ = [
    "__version__",
    "BetaMR",
    "ModelSpec",
    "SurveyDataset",
    "validate_dataset",
    "ChainConfig",
    "fit_model",
    "pooled_draws",
    "SimRegime",
    "simulate_dataset",
    "run_study",
    "back_estimate",
    "RandomStream",
    "RecallCalibration",
    "fit_recall_calibration",
    "recall_adjust_draws",
    "gelman_rubin",
    "scaleup_degrees",
    "scaleup_size",
    "summarize",
]
