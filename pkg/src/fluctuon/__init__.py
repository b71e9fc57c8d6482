"""Fluctuator noise models, telegraph-noise simulation and qubit dephasing.

Units are microseconds for time, inverse microseconds for rates and rad/us
for angular frequencies throughout.
"""
__version__ = "0.1.0"

from .errors import (AccuracyError, ConfigError, ConvergenceError, DatasetError, FluctuonError, IntegrationError,
                     QuadratureError)
from .special import *  # noqa: F401,F403
from .noise import *  # noqa: F401,F403
from .curves import DecayCurve
from .rtp import *  # noqa: F401,F403
from .dephasing import *  # noqa: F401,F403
from .qubit import *  # noqa: F401,F403
from .fit import *  # noqa: F401,F403
