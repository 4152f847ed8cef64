"""rotinv: a Monte Carlo laboratory for rotation-invariant semimartingales.

Simulates R^n continuous semimartingales on uniform grids, applies
predictable random-rotation transforms, and verifies at desk scale that
rotation-invariant processes decompose as time-changed Brownian motions
with volatility independent of the driver.
"""

__version__ = "0.1.0"

from .paths import Path, TimeGrid  # noqa: F401
from .simulators import ProcessSpec, SimJob, VolatilitySpec  # noqa: F401
from .rotations import RotationPolicy, RotationSchedule  # noqa: F401
