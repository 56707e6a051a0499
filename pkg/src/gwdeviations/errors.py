"""Semantic exception hierarchy.

Every failure mode that callers are expected to branch on gets its own
class; generic ValueError is reserved for plain misuse of an API.
"""


class GWError(Exception):
    """Base class for all package errors."""


class DegenerateLaw(GWError):
    """Offspring law is concentrated on a single point."""


class Subcritical(GWError):
    """Offspring mean is <= 1; the process dies out and nothing here applies."""


class MassDeficit(GWError):
    """Probability masses do not sum to 1 within tolerance."""


class NoConvergence(GWError):
    """A fixed-point or limit iteration hit its cap without meeting tolerance."""


class SpanMismatch(GWError):
    """Two lattice distributions with different spans cannot be convolved."""


class SupportOverflow(GWError):
    """Requested support exceeds the configured memory budget."""


class NotSchroder(GWError):
    """Operation requires p0 + p1 > 0 (a positive derivative at the fixed point)."""


class NotBottcher(GWError):
    """Operation requires p0 = p1 = 0 (minimum family size >= 2)."""


class DepthTooShallow(GWError):
    """Generation depth n is too small for the requested local-limit evaluation."""


class VarianceZero(GWError):
    """Increment law has zero variance; nothing to normalize by."""


class TailTooHeavy(GWError):
    """Tail index must exceed 2 so that the variance is finite."""


class BudgetExceeded(GWError):
    """A compute or draw budget was exhausted before the result converged."""


class MissingMomentFlag(GWError):
    """Requested bound needs a moment (e.g. an exponential one) the law lacks."""


class DivergentIntegral(GWError):
    """The requested integral diverges for this law/parameter combination."""


class RegimePreconditionViolated(GWError):
    """Experiment parameters do not satisfy the requested regime's hypotheses."""


class ConfigInvalid(GWError):
    """Configuration file failed validation; message names the field path."""


class IoFailure(GWError):
    """Filesystem read/write failed."""
