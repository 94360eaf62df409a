"""Meta ordinal regression forests (MORF) and the DORF baseline."""

from .estimators import DORFClassifier, MORFClassifier
from .meta import TrainConfig, fit_dorf, fit_morf

__all__ = ["DORFClassifier", "MORFClassifier", "TrainConfig", "fit_dorf", "fit_morf"]
__version__ = "0.1.0"
