"""Optimum, equilibrium and day-by-day dynamics for urban service choice."""
from .city import *  # noqa: F401,F403
from .config import *  # noqa: F401,F403
from .csvio import *  # noqa: F401,F403
from .dynamics import *  # noqa: F401,F403
from .equilibrium import *  # noqa: F401,F403
from .optimum import *  # noqa: F401,F403
from .presets import *  # noqa: F401,F403
from .queues import *  # noqa: F401,F403
from .threshold import *  # noqa: F401,F403
from .transport import *  # noqa: F401,F403

__version__ = "0.1.0"
