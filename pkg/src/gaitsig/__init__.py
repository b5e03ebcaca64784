"""Gait signatures learned from stacked optical flow.

Submodules: :mod:`videoio`, :mod:`optflow`, :mod:`cuboid`, :mod:`nnet`,
:mod:`gaitnet`, :mod:`classify` and :mod:`evalcli`.
"""

from .errors import ConfigError, DataError, GaitError, NumericalError, ShapeError

__version__ = "0.1.0"
__all__ = ["ConfigError", "DataError", "GaitError", "NumericalError", "ShapeError", "__version__"]
