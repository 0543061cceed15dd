"""Multi-label image recognition with structural and semantic relation graphs, in numpy."""
from .config import Config
from .model import TDRG

__all__ = ["Config", "TDRG"]
__version__ = "0.1.0"
