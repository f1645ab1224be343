"""Detect consumer IoT devices in sparsely sampled flow records."""

from ._accel import BACKEND
from .errors import IoTFlowError

__version__ = "0.1.0"

__all__ = ["BACKEND", "IoTFlowError", "__version__"]
