"""Room impulse response reconstruction on a virtual grid from moving microphones."""

from .analysis import *  # noqa: F401,F403
from .config import ConfigError, ExperimentConfig, load_config, parse_config  # noqa: F401
from .estimator import DynamicFieldEstimator  # noqa: F401
from .geometry import *  # noqa: F401,F403
from .interp import *  # noqa: F401,F403
from .room import *  # noqa: F401,F403
from .signals import *  # noqa: F401,F403
from .solve import *  # noqa: F401,F403
from .system import *  # noqa: F401,F403

__version__ = "0.1.0"
