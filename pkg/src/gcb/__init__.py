"""Multi-step next-item trajectory generation over learned Semantic-IDs."""

from ._accel import BACKEND, HAVE_NUMBA
from .config import ConfigError, RunConfig, load_config
from .data_model import FutureTarget, GCBError, RankedStepList, UserHistory

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigError",
    "FutureTarget",
    "GCBError",
    "HAVE_NUMBA",
    "RankedStepList",
    "RunConfig",
    "UserHistory",
    "load_config",
    "__version__",
]
