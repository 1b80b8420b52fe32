"""Meta-learned short-term stock trend prediction pipeline."""

__version__ = "0.1.0"

from metatrend.labeling import TrendLabel

__all__ = ["TrendLabel", "__version__"]
