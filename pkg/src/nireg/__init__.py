"""Non-i.i.d. regularized logistic regression.

Subpopulations are discovered with per-class k-means, a logistic model is fit
on each of them, and the joint model is penalized for drifting away from those
per-cluster weights.
"""

__version__ = "0.1.0"

from nireg.errors import ConfigError, DataError, NiregError, NumericError

__all__ = ["ConfigError", "DataError", "NiregError", "NumericError", "__version__"]
