"""Limit objects of the branching process.

All of these are limits along generation depth n:

* Schroder function S(s) = lim gamma^-n (f_n(s) - q), with coefficients
  nu_k = lim gamma^-n P(Z_n = k);
* Bottcher function B(s) = lim f_n(s)^(mu^-n), computed in log-domain;
* Laplace transform phi(h) = lim f_n(exp(-h m^-n)) of the martingale
  limit W;
* density w(u) of W on (0, infinity), via the local limit
  w(u) ~ (m^n/d) P(Z_n = k_u);
* extrema V_*, V^* of u^(1-alpha) w(u) over a log grid.

Scalar iterations run in survival form: iterating u -> 1 - f(1-u) through
expm1/log1p keeps full relative precision where s is exponentially close
to 1, which direct pgf iteration loses (f_n has derivative ~m^n there, so
the 1e-16 rounding of 1 - h m^-n alone would swamp tolerances below
~m^n * 1e-16). Same device for f(q+e) - q when q > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import distengine as de
from .errors import DepthTooShallow, NoConvergence, NotBottcher, NotSchroder
from .offspring import OffspringLaw

DEPTH_CAP = 60


def survival_map(law: OffspringLaw, u: float) -> float:
    """1 - f(1 - u), with relative accuracy down to tiny u."""
    if u <= 0.0:
        return 0.0
    if u >= 1.0:
        return 1.0 - law.pgf(0.0)
    l = math.log1p(-u)
    acc = 0.0
    for k, p in zip(law.ks, law.ps):
        if k == 0:
            continue
        acc -= p * math.expm1(k * l)
    return acc


def _pgf_shifted(law: OffspringLaw, q: float, e: float) -> float:
    """f(q + e) - q with relative accuracy in e (uses f(q) = q)."""
    if q == 0.0:
        return law.pgf(e)
    if q + e <= 0.0:
        return law.pgf(0.0) - q
    lr = math.log1p(e / q)
    acc = 0.0
    for k, p in zip(law.ks, law.ps):
        if k == 0:
            continue
        acc += p * q ** k * math.expm1(k * lr)
    return acc


def schroder_function(law: OffspringLaw, s: float, tol: float = 1e-12,
                      max_depth: int = DEPTH_CAP) -> float:
    """S(s) = lim gamma^-n (f_n(s) - q) for s in [0, 1)."""
    if not law.is_schroder:
        raise NotSchroder("Schroder function needs gamma > 0")
    if not 0.0 <= s < 1.0:
        raise ValueError(f"s must lie in [0,1), got {s}")
    q, g = law.extinction_prob, law.gamma
    e = s - q
    scale = 1.0
    prev = None
    for _ in range(max_depth):
        e = _pgf_shifted(law, q, e)
        scale *= g
        y = e / scale
        if prev is not None and abs(y - prev) <= tol * max(1.0, abs(y)):
            return y
        prev = y
    raise NoConvergence(
        f"schroder_function gap above {tol} after {max_depth} iterations")


class SchroderCoeffs(NamedTuple):
    nu: np.ndarray          # nu[k-1] ~ nu_k for k = 1..k_max
    rel_gap: np.ndarray     # |nu_n - nu_(n-1)| / nu_n
    depth: int


def schroder_coeffs(law: OffspringLaw, n: int, k_max: int) -> SchroderCoeffs:
    """nu_k = lim gamma^-n P(Z_n = k), approximated at depth n with the
    last-two-depth relative gap."""
    if not law.is_schroder:
        raise NotSchroder("Schroder coefficients need gamma > 0")
    cur = de.generation_pmf(law, n)
    prv = de.generation_pmf(law, n - 1)
    ks = np.arange(1, k_max + 1)
    nu = np.array([cur.mass_at(int(k)) for k in ks]) * law.gamma ** (-n)
    nu_p = np.array([prv.mass_at(int(k)) for k in ks]) * law.gamma ** (-(n - 1))
    with np.errstate(divide="ignore", invalid="ignore"):
        gap = np.where(nu > 0.0, np.abs(nu - nu_p) / np.where(nu > 0, nu, 1.0),
                       np.inf)
    return SchroderCoeffs(nu=nu, rel_gap=gap, depth=n)


def bottcher_function(law: OffspringLaw, s: float, tol: float = 1e-12,
                      max_depth: int = DEPTH_CAP) -> float:
    """B(s) = lim f_n(s)^(mu^-n) for s in [0, 1], via mu^-n log f_n(s)."""
    if not law.is_bottcher:
        raise NotBottcher("Bottcher function needs min_offspring >= 2")
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [0,1], got {s}")
    if s == 0.0:
        return 0.0
    if s == 1.0:
        return 1.0
    mu = law.min_offspring
    l = math.log(s)
    scale = 1.0
    prev = None
    for _ in range(max_depth):
        l = law.log_pgf(l)
        scale /= mu
        b = l * scale
        if prev is not None and abs(b - prev) <= tol:
            return math.exp(b)
        prev = b
    raise NoConvergence(
        f"bottcher_function gap above {tol} after {max_depth} iterations")


def log_bottcher(law: OffspringLaw, s: float, tol: float = 1e-12,
                 max_depth: int = DEPTH_CAP) -> float:
    """log B(s) for s in (0, 1); stays finite where B underflows."""
    if not law.is_bottcher:
        raise NotBottcher("Bottcher function needs min_offspring >= 2")
    if not 0.0 < s < 1.0:
        raise ValueError(f"s must lie in (0,1), got {s}")
    mu = law.min_offspring
    l = math.log(s)
    scale = 1.0
    prev = None
    for _ in range(max_depth):
        l = law.log_pgf(l)
        scale /= mu
        b = l * scale
        if prev is not None and abs(b - prev) <= tol:
            return b
        prev = b
    raise NoConvergence(
        f"log_bottcher gap above {tol} after {max_depth} iterations")


def laplace_W(law: OffspringLaw, h: float, tol: float = 1e-12,
              max_depth: int = DEPTH_CAP) -> float:
    """phi(h) = lim f_n(exp(-h m^-n)) = E exp(-hW)."""
    if h < 0.0:
        raise ValueError(f"h must be >= 0, got {h}")
    if h == 0.0:
        return 1.0
    prev = None
    for n in range(1, max_depth + 1):
        u = -math.expm1(-h * law.mean ** (-n))
        for _ in range(n):
            u = survival_map(law, u)
        phi = 1.0 - u
        if prev is not None and abs(phi - prev) <= tol:
            return phi
        prev = phi
    raise NoConvergence(
        f"laplace_W gap above {tol} after depth {max_depth}")


class WDensity(NamedTuple):
    value: float
    instability: float      # relative gap between depths n-1 and n
    lattice_point: int


def w_density(law: OffspringLaw, u: float, n: int, *,
              pmf: de.ProbVector | None = None,
              pmf_prev: de.ProbVector | None = None) -> WDensity:
    """w(u) ~ (m^n/d) P(Z_n = k_u), k_u the lattice point = mu (mod d)
    nearest u m^n.

    Requires k_u >= m^(n/2) (local-limit validity heuristic); the
    instability field compares against depth n-1.
    """
    if not law.is_schroder:
        raise NotSchroder("local-limit density route needs the Schroder case")
    if u <= 0.0:
        raise ValueError(f"u must be > 0, got {u}")
    d, mu = law.lattice_span, law.min_offspring
    if u * law.mean ** n < 1.0:
        raise DepthTooShallow(f"u*m^n = {u * law.mean ** n:.3g} < 1")

    def nearest_k(nn: int) -> int:
        target = u * law.mean ** nn
        k = mu + d * round((target - mu) / d)
        while k < 1:
            k += d
        return int(k)

    def one(nn: int, pv) -> float:
        if pv is None:
            pv = de.generation_pmf(law, nn)
        k = nearest_k(nn)
        return law.mean ** nn / d * pv.mass_at(k)

    k_n = nearest_k(n)
    if k_n < law.mean ** (n / 2.0):
        raise DepthTooShallow(
            f"k_u = {k_n} below validity threshold m^(n/2) = "
            f"{law.mean ** (n / 2.0):.3g}")
    val = one(n, pmf)
    try:
        prev = one(n - 1, pmf_prev)
        inst = abs(val - prev) / abs(val) if val != 0.0 else math.inf
    except (DepthTooShallow, ValueError):
        inst = math.nan
    return WDensity(value=val, instability=inst, lattice_point=k_n)


@dataclass(frozen=True)
class VBounds:
    v_lower: float
    v_upper: float
    depth: int
    u_grid: np.ndarray
    values: np.ndarray
    instability_max: float


def v_bounds(law: OffspringLaw, u_min: float, u_max: float, *,
             n: int | None = None, grid_points: int = 64,
             pmf: de.ProbVector | None = None,
             pmf_prev: de.ProbVector | None = None) -> VBounds:
    """Extrema of u^(1-alpha) w(u) over a log-spaced grid.

    Estimates from a finite grid at finite depth, not certified bounds.
    Needs at least one multiplicative period: u_max / u_min >= m.
    """
    if not law.is_schroder:
        raise NotSchroder("V bounds need the Schroder case")
    if not 0.0 < u_min < u_max:
        raise ValueError("need 0 < u_min < u_max")
    if u_max / u_min < law.mean:
        raise ValueError("u_max / u_min must cover one period (>= m)")
    if n is None:
        # smallest depth making the whole grid pass the validity heuristic
        n = max(8, math.ceil(2.0 * math.log(1.0 / u_min) / math.log(law.mean)) + 1)
    if pmf is None:
        pmf = de.generation_pmf(law, n)
    if pmf_prev is None:
        pmf_prev = de.generation_pmf(law, n - 1)
    grid = np.exp(np.linspace(math.log(u_min), math.log(u_max), grid_points))
    vals = np.empty(grid_points)
    inst = 0.0
    a = law.schroder_alpha
    for i, u in enumerate(grid):
        wd = w_density(law, float(u), n, pmf=pmf, pmf_prev=pmf_prev)
        vals[i] = u ** (1.0 - a) * wd.value
        if not math.isnan(wd.instability):
            inst = max(inst, wd.instability)
    return VBounds(v_lower=float(vals.min()), v_upper=float(vals.max()),
                   depth=n, u_grid=grid, values=vals, instability_max=inst)


class VCondition(NamedTuple):
    holds: bool
    v0: float
    spread: float
    h_grid: np.ndarray
    values: np.ndarray


def v_condition_check(law: OffspringLaw, h_min: float = 0.5, h_max: float = 2.0,
                      points: int = 9, tol: float = 1e-6,
                      iter_tol: float = 1e-12) -> VCondition:
    """Is S(phi(h)) h^alpha constant in h? If so its value V0 replaces the
    V_*/V^* bracket (the deviation targets collapse to a point)."""
    if not law.is_schroder:
        raise NotSchroder("V condition needs the Schroder case")
    hs = np.exp(np.linspace(math.log(h_min), math.log(h_max), points))
    a = law.schroder_alpha
    vals = np.array([
        schroder_function(law, laplace_W(law, float(h), iter_tol), iter_tol)
        * float(h) ** a
        for h in hs
    ])
    mid = float(np.median(vals))
    spread = float(vals.max() - vals.min())
    holds = spread <= tol * max(1.0, abs(mid))
    return VCondition(holds=holds, v0=mid, spread=spread, h_grid=hs,
                      values=vals)


@dataclass
class LimitReport:
    """Grids of every limit object plus per-object convergence gaps."""

    schroder_values: list | None
    nu_coeffs: list | None
    bottcher_values: list | None
    phi_values: list
    w_values: list | None
    v_lower: float | None
    v_upper: float | None
    convergence_diagnostics: dict

    def to_json_dict(self) -> dict:
        return {
            "schroder_values": self.schroder_values,
            "nu_coeffs": self.nu_coeffs,
            "bottcher_values": self.bottcher_values,
            "phi_values": self.phi_values,
            "w_values": self.w_values,
            "v_lower": self.v_lower,
            "v_upper": self.v_upper,
            "convergence_diagnostics": self.convergence_diagnostics,
        }


def _final_gap(fn, *args, tol) -> float:
    """Observed stability of an iteration result under a tolerance change."""
    a = fn(*args, tol)
    b = fn(*args, tol * 100.0)
    return abs(a - b)


def build_limit_report(law: OffspringLaw, *, tol: float = 1e-12,
                       depth: int | None = None, k_max: int = 10,
                       s_grid=None, h_grid=None, u_grid=None) -> LimitReport:
    if s_grid is None:
        s_grid = np.linspace(0.05, 0.95, 10)
    if h_grid is None:
        h_grid = np.exp(np.linspace(math.log(0.25), math.log(4.0), 9))
    diags: dict[str, float] = {}

    phi_values = [(float(h), laplace_W(law, float(h), tol)) for h in h_grid]
    diags["phi"] = _final_gap(lambda h, t: laplace_W(law, h, t),
                              float(h_grid[len(h_grid) // 2]), tol=tol)

    schroder_values = nu_coeffs = w_values = None
    bottcher_values = None
    v_lo = v_hi = None
    if law.is_schroder:
        schroder_values = [(float(s), schroder_function(law, float(s), tol))
                           for s in s_grid]
        diags["schroder"] = _final_gap(
            lambda s, t: schroder_function(law, s, t), 0.5, tol=tol)
        n = depth if depth is not None else 12
        sc = schroder_coeffs(law, n, k_max)
        nu_coeffs = [float(x) for x in sc.nu]
        diags["nu_max_rel_gap"] = float(np.nanmax(sc.rel_gap))
        if u_grid is None:
            u_grid = np.exp(np.linspace(math.log(0.25),
                                        math.log(0.25 * law.mean ** 2), 17))
        pmf = de.generation_pmf(law, n)
        pmf_prev = de.generation_pmf(law, n - 1)
        w_values = []
        inst = 0.0
        for u in u_grid:
            try:
                wd = w_density(law, float(u), n, pmf=pmf, pmf_prev=pmf_prev)
            except DepthTooShallow:
                continue
            w_values.append((float(u), wd.value))
            if not math.isnan(wd.instability):
                inst = max(inst, wd.instability)
        diags["w_instability_max"] = inst
        vb = v_bounds(law, float(u_grid[0]), float(u_grid[0]) * law.mean,
                      n=n, pmf=pmf, pmf_prev=pmf_prev)
        v_lo, v_hi = vb.v_lower, vb.v_upper
    else:
        bottcher_values = [(float(s), bottcher_function(law, float(s), tol))
                           for s in s_grid]
        diags["bottcher"] = _final_gap(
            lambda s, t: bottcher_function(law, s, t), 0.5, tol=tol)

    return LimitReport(
        schroder_values=schroder_values, nu_coeffs=nu_coeffs,
        bottcher_values=bottcher_values, phi_values=phi_values,
        w_values=w_values, v_lower=v_lo, v_upper=v_hi,
        convergence_diagnostics=diags,
    )
