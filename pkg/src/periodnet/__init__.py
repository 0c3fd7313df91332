"""Period-attention time-series forecasting on a small float64 autodiff engine."""

from .model import ModelConfig, PeriodNet

__all__ = ["ModelConfig", "PeriodNet"]
__version__ = "0.1.0"
