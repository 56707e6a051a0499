"""Offspring laws of supercritical branching processes.

Validates an offspring pmf {p_k} with mean m > 1 and derives the structural
constants everything downstream keys on: extinction probability q (smallest
fixed point of the generating function f), the derivative gamma = f'(q),
the Schroder exponent alpha with gamma = m^(-alpha), the lattice span d
(gcd of support differences), the minimum family size mu, and in the
Bottcher case (p0 = p1 = 0) the exponent beta = log mu / log m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLaw, MassDeficit, NoConvergence, Subcritical

MASS_TOL = 1e-12
FIXED_POINT_TOL = 1e-14
FIXED_POINT_CAP = 10**6
FAMILY_TAIL_TOL = 1e-15  # parametric families keep atoms until the tail is below this


@dataclass(frozen=True)
class OffspringLaw:
    """A validated offspring pmf together with its derived constants.

    Fields are all derived by validate_offspring; construct through that.
    ks/ps hold the support (increasing) and masses, zero-mass atoms removed.
    truncated_mass is whatever a parametric family dropped to finite support.
    """

    ks: tuple[int, ...]
    ps: tuple[float, ...]
    truncated_mass: float
    mean: float
    variance: float
    stddev: float
    extinction_prob: float
    gamma: float
    schroder_alpha: float
    lattice_span: int
    min_offspring: int
    max_offspring: int
    bottcher_beta: float | None
    name: str = ""
    _dense: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def is_schroder(self) -> bool:
        return self.gamma > 0.0

    @property
    def is_bottcher(self) -> bool:
        return self.min_offspring >= 2

    def dense(self) -> np.ndarray:
        """Masses on 0..max_offspring (coefficient array of f)."""
        return self._dense

    def pgf(self, s: float) -> float:
        """f(s) = sum p_k s^k, Horner on the dense coefficients."""
        acc = 0.0
        for c in self._dense[::-1]:
            acc = acc * s + c
        return acc

    def pgf_prime(self, s: float) -> float:
        acc = 0.0
        top = len(self._dense) - 1
        for j in range(top, 0, -1):
            acc = acc * s + j * self._dense[j]
        return acc

    def pgf_factor(self, s: float) -> float:
        """g(s) with f(s) = s^mu g(s); g(0) = p_mu > 0."""
        acc = 0.0
        for c in self._dense[self.min_offspring:][::-1]:
            acc = acc * s + c
        return acc

    def log_pgf(self, log_s: float) -> float:
        """log f(e^l), stable for very negative l.

        Uses f(s) = s^mu g(s); when e^l underflows, g(e^l) = p_mu exactly.
        Only meaningful when p0 = 0 (otherwise f(0) > 0 and log f(e^l) -> log p0).
        """
        s = math.exp(log_s) if log_s > -745.0 else 0.0
        g = self.pgf_factor(s)
        return self.min_offspring * log_s + math.log(g)

    def iterate_pgf(self, s: float, n: int) -> float:
        """n-fold composition f_n(s)."""
        x = s
        for _ in range(n):
            x = self.pgf(x)
        return x


def _gcd_span(ks: tuple[int, ...]) -> int:
    mu = ks[0]
    d = 0
    for k in ks[1:]:
        d = math.gcd(d, k - mu)
    return d if d > 0 else 1


def _extinction(dense: np.ndarray) -> float:
    """Smallest fixed point of f on [0,1], by iteration from 0."""
    if dense[0] == 0.0:
        return 0.0
    s = 0.0
    for _ in range(FIXED_POINT_CAP):
        nxt = 0.0
        for c in dense[::-1]:
            nxt = nxt * s + c
        if abs(nxt - s) < FIXED_POINT_TOL:
            return nxt
        s = nxt
    raise NoConvergence("extinction fixed-point iteration did not converge")


def validate_offspring(pmf: dict[int, float], *, truncated_mass: float = 0.0,
                       name: str = "") -> OffspringLaw:
    """Validate a pmf {k: p_k} and derive all structural constants.

    Raises MassDeficit unless sum(p) + truncated_mass is 1 within 1e-12,
    DegenerateLaw for single-atom laws, Subcritical unless the mean
    exceeds 1.
    """
    items = sorted((int(k), float(p)) for k, p in pmf.items())
    for k, p in items:
        if k < 0:
            raise MassDeficit(f"negative offspring count {k}")
        if p < 0.0:
            raise MassDeficit(f"negative mass at k={k}")
    items = [(k, p) for k, p in items if p > 0.0]
    total = math.fsum(p for _, p in items) + truncated_mass
    if abs(total - 1.0) > MASS_TOL:
        raise MassDeficit(f"masses sum to {total!r}, not 1")
    if len(items) < 2:
        raise DegenerateLaw("offspring law concentrated on a single point")

    ks = tuple(k for k, _ in items)
    ps = tuple(p for _, p in items)
    mean = math.fsum(k * p for k, p in items)
    if mean <= 1.0:
        raise Subcritical(f"offspring mean {mean} <= 1")
    second = math.fsum(k * k * p for k, p in items)
    variance = max(second - mean * mean, 0.0)

    dense = np.zeros(ks[-1] + 1)
    for k, p in items:
        dense[k] = p

    q = _extinction(dense)
    # gamma = f'(q); in the Bottcher case q = 0 and p1 = 0 give exactly 0
    gamma = 0.0
    for j in range(len(dense) - 1, 0, -1):
        gamma = gamma * q + j * dense[j]
    alpha = -math.log(gamma) / math.log(mean) if gamma > 0.0 else math.inf
    mu = ks[0]
    beta = math.log(mu) / math.log(mean) if mu >= 2 else None

    return OffspringLaw(
        ks=ks, ps=ps, truncated_mass=truncated_mass,
        mean=mean, variance=variance, stddev=math.sqrt(variance),
        extinction_prob=q, gamma=gamma, schroder_alpha=alpha,
        lattice_span=_gcd_span(ks), min_offspring=mu, max_offspring=ks[-1],
        bottcher_beta=beta, name=name, _dense=dense,
    )


def extinction_probability(law: OffspringLaw) -> float:
    """q = smallest root of f(s) = s in [0,1]; |f(q) - q| <= 1e-14."""
    return _extinction(law.dense())


@dataclass(frozen=True)
class Classification:
    case: str              # "schroder" or "bottcher"
    lattice_type: tuple[int, int]   # (d, mu)
    gamma: float
    alpha: float
    beta: float | None
    extinction_prob: float


def classify(law: OffspringLaw) -> Classification:
    """Case descriptor: Schroder (p0 + p1 > 0) vs Bottcher (mu >= 2)."""
    case = "bottcher" if law.is_bottcher else "schroder"
    return Classification(
        case=case,
        lattice_type=(law.lattice_span, law.min_offspring),
        gamma=law.gamma,
        alpha=law.schroder_alpha,
        beta=law.bottcher_beta,
        extinction_prob=law.extinction_prob,
    )


# ---------------------------------------------------------------- families

def linear_fractional(m: float) -> OffspringLaw:
    """p_k = (m-1)^(k-1) / m^k for k >= 1; f(s) = s / (m - (m-1)s).

    Geometric on {1, 2, ...}; q = 0, gamma = 1/m, alpha = 1, and the
    iterates f_n stay linear fractional, which makes every limit object
    closed-form. Truncated once the remaining tail is below 1e-15.
    """
    if m <= 1.0:
        raise Subcritical(f"linear_fractional needs m > 1, got {m}")
    r = (m - 1.0) / m
    pmf = {}
    k, mass, tail = 1, 1.0 / m, 1.0
    while tail > FAMILY_TAIL_TOL:
        pmf[k] = mass
        tail -= mass
        mass *= r
        k += 1
    return validate_offspring(pmf, truncated_mass=max(tail, 0.0),
                              name=f"linear_fractional(m={m:g})")


def geometric(p: float) -> OffspringLaw:
    """p_k = (1-p) p^k for k >= 0; supercritical iff p > 1/2."""
    if not 0.0 < p < 1.0:
        raise MassDeficit(f"geometric parameter must lie in (0,1), got {p}")
    pmf = {}
    k, mass, tail = 0, 1.0 - p, 1.0
    while tail > FAMILY_TAIL_TOL:
        pmf[k] = mass
        tail -= mass
        mass *= p
        k += 1
    return validate_offspring(pmf, truncated_mass=max(tail, 0.0),
                              name=f"geometric(p={p:g})")


def two_point(k1: int, k2: int, p1: float, p2: float) -> OffspringLaw:
    return validate_offspring({k1: p1, k2: p2},
                              name=f"two_point({k1},{k2};{p1:g},{p2:g})")


def explicit(pmf: dict[int, float], name: str = "explicit") -> OffspringLaw:
    return validate_offspring(pmf, name=name)
