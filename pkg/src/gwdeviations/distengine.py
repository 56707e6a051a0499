"""Exact lattice distributions of generation sizes.

A ProbVector is a sub-probability mass function on an integer lattice
{offset + span*i}. Mass lost to truncation is tracked explicitly so that
sum(masses) + truncated_mass stays 1 within float accumulation error at
every step.

generation_pmf has two exact routes:

* the default spectral route: one rfft of the current vector, a Horner
  evaluation of the offspring generating polynomial on the spectrum, one
  irfft. This computes sum_k p_k v^(*k) in a single pass. Transform length
  is validated by a top-of-window guard band and doubled on failure, so
  cyclic wraparound cannot contaminate the result silently.

* a windowed direct route for laws with min_offspring >= 2: the pmf on
  [mu^n, mu^n + W] is an exact function of the previous window
  [mu^(n-1), mu^(n-1) + W], and direct convolution of non-negative
  vectors has per-entry relative accuracy, so entries of size 1e-300
  remain trustworthy. The spectral route's absolute noise floor
  (~1e-16 * peak) would destroy them.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import fft as sfft

from .errors import IoFailure, NotBottcher, SpanMismatch, SupportOverflow
from .offspring import OffspringLaw

DIRECT_CROSSOVER = 256          # below this output length, np.convolve beats FFT
DEFAULT_TRUNC_TOL = 1e-15
DEFAULT_MAX_LEN = 1 << 23       # lattice points per vector (64 MiB of float64)
WRAP_GUARD = 64                 # top entries checked against cyclic wraparound


@dataclass(frozen=True)
class ProbVector:
    """Sub-pmf on the lattice {offset + span*i : i = 0..len(masses)-1}.

    truncated_mass is everything deliberately dropped (trimming, windowing,
    inherited family truncation). clip_register tracks float repair mass
    (negatives clipped after an FFT, total-mass clamp), which bounds the
    numerical error separately from the deliberate truncation.
    """

    offset: int
    masses: np.ndarray
    span: int = 1
    truncated_mass: float = 0.0
    clip_register: float = 0.0

    def __post_init__(self):
        if self.span < 1:
            raise SpanMismatch(f"span must be a positive integer, got {self.span}")
        if len(self.masses) == 0:
            raise ValueError("empty mass vector")

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @property
    def support_min(self) -> int:
        return self.offset

    @property
    def support_max(self) -> int:
        return self.offset + self.span * (len(self.masses) - 1)

    def values(self) -> np.ndarray:
        return self.offset + self.span * np.arange(len(self.masses))

    def mass_at(self, k: int) -> float:
        r, rem = divmod(k - self.offset, self.span)
        if rem or not 0 <= r < len(self.masses):
            return 0.0
        return float(self.masses[r])

    def cdf_at(self, k: int) -> float:
        """P(V <= k), exact over the stored window."""
        if k < self.offset:
            return 0.0
        r = min((k - self.offset) // self.span, len(self.masses) - 1)
        return float(self.masses[: r + 1].sum())

    def ccdf_at(self, k: int) -> float:
        """P(V >= k) over the stored window (truncated mass not imputed)."""
        if k <= self.offset:
            return self.total_mass
        r = -(-(k - self.offset) // self.span)  # ceil division
        if r >= len(self.masses):
            return 0.0
        return float(self.masses[r:].sum())

    def check(self, tol: float = 1e-10) -> None:
        """Assert the accounting invariants."""
        if np.any(self.masses < 0):
            raise ValueError("negative mass survived clipping")
        tot = self.total_mass + self.truncated_mass
        if not (1.0 - tol <= tot <= 1.0 + 1e-14):
            raise ValueError(f"mass accounting broken: total + truncated = {tot!r}")


def delta(k: int, span: int = 1) -> ProbVector:
    return ProbVector(offset=k, masses=np.array([1.0]), span=span)


def from_law(law: OffspringLaw) -> ProbVector:
    dense = law.dense()
    return ProbVector(offset=0, masses=dense.copy(), span=1,
                      truncated_mass=law.truncated_mass)


def _trim(offset: int, masses: np.ndarray, span: int, tol: float):
    """Drop leading/trailing entries with cumulative mass < tol/2 per end."""
    dropped = 0.0
    if tol > 0.0 and len(masses) > 1:
        half = 0.5 * tol
        pre = np.cumsum(masses)
        suf = np.cumsum(masses[::-1])
        lo = int(np.searchsorted(pre, half, side="left"))
        cut = int(np.searchsorted(suf, half, side="left"))
        hi = max(len(masses) - cut, lo + 1)
        if lo > 0 or hi < len(masses):
            dropped = float(masses[:lo].sum() + masses[hi:].sum())
            masses = masses[lo:hi]
            offset += span * lo
    return offset, masses, dropped


def trim(pv: ProbVector, tol: float) -> ProbVector:
    offset, masses, dropped = _trim(pv.offset, pv.masses.copy(), pv.span, tol)
    return replace(pv, offset=offset, masses=masses,
                   truncated_mass=pv.truncated_mass + dropped)


def _clip_and_clamp(masses: np.ndarray, budget: float):
    """Clip FFT negatives to 0; scale down if total exceeds the mass budget.

    Returns (masses, repair) where repair bounds the absolute mass moved.
    """
    neg = masses < 0.0
    repair = 0.0
    if np.any(neg):
        repair = float(-masses[neg].sum())
        masses[neg] = 0.0
    tot = float(masses.sum())
    if tot > budget > 0.0:
        scale = budget / tot
        masses *= scale
        repair += tot - budget
    return masses, repair


def convolve(a: ProbVector, b: ProbVector) -> ProbVector:
    """Distribution of the sum of independents with pmfs a and b."""
    if a.span != b.span:
        raise SpanMismatch(f"spans {a.span} and {b.span} differ")
    la, lb = len(a.masses), len(b.masses)
    out_len = la + lb - 1
    if out_len <= DIRECT_CROSSOVER or min(la, lb) <= 8:
        out = np.convolve(a.masses, b.masses)
        repair = 0.0
    else:
        m = sfft.next_fast_len(out_len)
        fa = sfft.rfft(a.masses, m)
        fb = sfft.rfft(b.masses, m)
        out = sfft.irfft(fa * fb, m)[:out_len]
        budget = a.total_mass * b.total_mass
        out, repair = _clip_and_clamp(out, budget)
    trunc = (a.truncated_mass + b.truncated_mass
             - a.truncated_mass * b.truncated_mass)
    return ProbVector(offset=a.offset + b.offset, masses=out, span=a.span,
                      truncated_mass=trunc,
                      clip_register=a.clip_register + b.clip_register + repair)


def _spectral_step(masses: np.ndarray, offset: int, coeffs: np.ndarray,
                   need_len: int, trunc_tol: float, max_len: int):
    """One generation step: coefficients of f(v(s)) where v has the given
    masses at s^offset..; returns (masses, guard_mass) with absolute offsets.

    Embeds the offset as leading zeros so that all powers v^k share one
    transform. Doubles the transform length until the top guard band is
    clean (cyclic wraparound detection).
    """
    dense_len = offset + len(masses)
    top_deg = (len(coeffs) - 1) * (dense_len - 1)  # true max output degree
    want = min(need_len, top_deg + 1)
    while True:
        m = sfft.next_fast_len(max(want, dense_len))
        if m > max_len:
            raise SupportOverflow(
                f"transform length {m} exceeds budget {max_len}")
        buf = np.zeros(m)
        buf[offset:dense_len] = masses
        spec = sfft.rfft(buf)
        acc = np.zeros_like(spec)
        for c in coeffs[::-1]:
            acc = acc * spec + c
        out = sfft.irfft(acc, m)
        if m >= top_deg + 1:
            return out[: top_deg + 1], 0.0
        guard = float(np.abs(out[-WRAP_GUARD:]).sum())
        # the guard cannot resolve below the transform's own roundoff floor
        noise = 32 * WRAP_GUARD * np.finfo(float).eps * float(np.abs(out).max())
        if guard < max(trunc_tol * 1e-2, noise):
            out = out[:-WRAP_GUARD]
            return out, guard
        want = min(2 * m, top_deg + 1)


def generation_pmf(law: OffspringLaw, n: int, trunc_tol: float = DEFAULT_TRUNC_TOL,
                   *, window: int | None = None,
                   max_len: int = DEFAULT_MAX_LEN) -> ProbVector:
    """Exact pmf of the generation size Z_n (Z_0 = 1).

    window: maximum retained width above the minimum support; requires
    min_offspring >= 2 (the windowed route is exact there). None selects the
    spectral route with trimming at trunc_tol per step.
    """
    if n < 0:
        raise ValueError("generation index must be >= 0")
    if window is not None:
        return _windowed_pmf(law, n, window, max_len=max_len)
    if n == 0:
        return delta(1)
    pv = from_law(law)
    coeffs = law.dense()
    mean_sd = law.stddev
    for _ in range(n - 1):
        # statistical estimate of the needed length, verified by the guard
        est = int(pv.support_max * law.mean + 12 * mean_sd * math.sqrt(pv.support_max * law.mean)) + law.max_offspring + 64
        masses, guard = _spectral_step(pv.masses, pv.offset, coeffs,
                                       est, trunc_tol, max_len)
        masses, repair = _clip_and_clamp(masses, 1.0 - pv.truncated_mass)
        offset, masses, dropped = _trim(0, masses, 1, trunc_tol)
        pv = ProbVector(offset=offset, masses=masses, span=1,
                        truncated_mass=pv.truncated_mass + dropped + guard,
                        clip_register=pv.clip_register + repair + guard)
        if len(pv.masses) > max_len:
            raise SupportOverflow(f"support {len(pv.masses)} exceeds budget")
    pv.check(tol=max(1e-10, n * len(coeffs) * trunc_tol * 10))
    return pv


def _windowed_pmf(law: OffspringLaw, n: int, width: int, *,
                  max_len: int = DEFAULT_MAX_LEN) -> ProbVector:
    """Exact pmf of Z_n on [mu^n, mu^n + width] by direct convolution.

    Closure: for i <= mu^(j+1) + W every product of k >= mu parent terms
    has each factor inside [mu^j, mu^j + W], so constant-width windows
    propagate exactly. Beyond-window mass goes to truncated_mass.
    """
    if not law.is_bottcher:
        raise NotBottcher("windowed route requires min_offspring >= 2")
    if width < 0:
        raise ValueError("window width must be >= 0")
    if width + 1 > max_len:
        raise SupportOverflow(f"window {width} exceeds budget {max_len}")
    mu = law.min_offspring
    if n == 0:
        return delta(1)
    cur = law.dense()[mu:].copy()          # window at j=1, offset mu^1
    if len(cur) > width + 1:
        cur = cur[: width + 1]
    lo = mu
    for _ in range(n - 1):
        nxt_lo = lo * mu
        nxt = np.zeros(min(width + 1, (law.max_offspring * (lo + len(cur) - 1)) - nxt_lo + 1))
        power = cur                         # cur^(conv k), offset k*lo
        k = 1
        while k < mu:
            power = np.convolve(power, cur)[: width + 1]
            k += 1
        for kk in range(mu, law.max_offspring + 1):
            p = law.dense()[kk]
            if kk > mu:
                power = np.convolve(power, cur)[: width + 1]
            if p == 0.0:
                continue
            rel = kk * lo - nxt_lo          # window start of cur^(conv kk)
            if rel > width:
                continue                    # entirely above the kept window
            seg = power[: len(nxt) - rel]
            nxt[rel: rel + len(seg)] += p * seg
        cur, lo = nxt, nxt_lo
    tot = float(cur.sum())
    return ProbVector(offset=lo, masses=cur, span=1,
                      truncated_mass=max(1.0 - tot, 0.0))


def lower_tail(pv: ProbVector, k: int, *, include_zero: bool = False) -> float:
    """P(0 < Z <= k) over the stored window; include_zero adds the atom at 0."""
    base = pv.cdf_at(k)
    if not include_zero:
        base -= pv.mass_at(0)
    return max(base, 0.0)


def harmonic_moment(pv: ProbVector, r: float) -> float:
    """E[Z^(-r); Z > 0] over the stored window."""
    vals = pv.values().astype(float)
    pos = vals > 0
    return float((pv.masses[pos] * vals[pos] ** (-r)).sum())


# ------------------------------------------------------------------ export

def to_json_dict(pv: ProbVector) -> dict:
    return {
        "offset": pv.offset,
        "span": pv.span,
        "truncated_mass": pv.truncated_mass,
        "clip_register": pv.clip_register,
        "masses": [float(x) for x in pv.masses],
    }


def write_csv(pv: ProbVector, path) -> None:
    """Two columns (value, mass), 15 significant digits, stable order."""
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["value", "mass"])
            for v, p in zip(pv.values(), pv.masses):
                w.writerow([int(v), f"{p:.15g}"])
    except OSError as e:
        raise IoFailure(str(e)) from e


def write_json(pv: ProbVector, path) -> None:
    try:
        with open(path, "w") as fh:
            json.dump(to_json_dict(pv), fh, indent=1)
            fh.write("\n")
    except OSError as e:
        raise IoFailure(str(e)) from e
