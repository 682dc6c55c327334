"""Zero-inflated lognormal uplift modeling with numpy and scipy.

Modules
-------
distributions  ZILN mixture parameters, mean, density and sampling.
losses         Focal propensity, ZILN regression and value-weighted ranking losses.
gated_net      Treatment-gated toy network trained with the hybrid loss.
forest         Robust ZILN uplift forest with smoothed leaf estimates.
metrics        Uplift curve, AUUC, Qini, Lift@k, Kendall tau-b, latency.
datagen        Synthetic zero-inflated benchmark generator and CSV I/O.
cli            ``ziln-uplift`` command-line entry point.
"""

__version__ = "0.1.0"

from .distributions import ZilnParams, expected_value, log_density, sample, ziln_mean
from .errors import ConfigurationError, DomainError, ParseError, ShapeError, ZilnOverflowError

__all__ = [
    "ZilnParams", "expected_value", "log_density", "sample", "ziln_mean",
    "ConfigurationError", "DomainError", "ParseError", "ShapeError", "ZilnOverflowError",
    "__version__",
]
