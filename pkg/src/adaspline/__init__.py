"""Smoothing splines with a spatially varying roughness penalty."""

__version__ = "0.1.0"

from .rkhs import PiecewisePenalty  # noqa: E402
from .solver import Design, SplineFit, fit, predict, select_lambda  # noqa: E402
from .adapt import AdaptConfig, adapt_fit  # noqa: E402

__all__ = [
    "__version__",
    "PiecewisePenalty",
    "Design",
    "SplineFit",
    "fit",
    "predict",
    "select_lambda",
    "AdaptConfig",
    "adapt_fit",
]
