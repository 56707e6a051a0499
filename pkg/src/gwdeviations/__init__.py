"""Exact and simulated deviation probabilities for branching-indexed sums.

Modules: offspring (law constants and classification), distengine (exact
generation pmfs), limits (Schroeder/Boettcher limit objects), increments
(partial-sum tails and concentration bounds), deviations (regime targets
and experiments), montecarlo (reproducible validation), config + cli
(orchestration).
"""

__version__ = "0.1.0"

from . import (cli, config, deviations, distengine, errors, increments,
               limits, montecarlo, offspring)

__all__ = ["cli", "config", "deviations", "distengine", "errors",
           "increments", "limits", "montecarlo", "offspring", "__version__"]
