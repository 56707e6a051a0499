"""Seeded simulation of (Z_n, S_{Z_n}) for validating the exact engine.

Replications run in fixed blocks of BLOCK_REPS; block b draws all of its
randomness from one Philox stream keyed by (seed, b), in a fixed order.
Workers may therefore split work at block granularity and merge tallies
by addition without changing a single draw: parallel schedules are
bit-reproducible by construction, not by locking.

Offspring and increment draws both go through alias tables built once
per law (O(1) per draw). Budgets cap total offspring draws, not wall
time. There is no importance sampling: rare-event regimes belong to the
exact engine, and the simulator is a validator with Wilson intervals,
not a rare-event instrument.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import special as ss

from . import distengine as de
from .errors import BudgetExceeded, IoFailure
from .increments import THRESHOLD_GUARD, IncrementLaw
from .offspring import OffspringLaw

BLOCK_REPS = 1 << 13
DRAW_BUDGET = 1 << 28
_MASK64 = (1 << 64) - 1


def _philox(seed: int, block: int) -> np.random.Generator:
    key = np.array([seed & _MASK64, block & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# ------------------------------------------------------------ alias tables

@dataclass(frozen=True)
class AliasTable:
    values: np.ndarray      # lattice values, int64
    prob: np.ndarray        # acceptance probability per column
    alias: np.ndarray       # fallback column


def alias_table(values: Sequence[int], weights: Sequence[float]) -> AliasTable:
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0.0) or w.sum() <= 0.0:
        raise ValueError("alias table needs nonnegative weights with mass")
    k = len(w)
    scaled = w * (k / w.sum())
    prob = np.ones(k)
    alias = np.arange(k)
    small = [i for i in range(k) if scaled[i] < 1.0]
    large = [i for i in range(k) if scaled[i] >= 1.0]
    while small and large:
        s, l = small.pop(), large.pop()
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] += scaled[s] - 1.0
        (small if scaled[l] < 1.0 else large).append(l)
    return AliasTable(values=np.asarray(values, dtype=np.int64),
                      prob=prob, alias=alias)


def alias_draw(table: AliasTable, rng: np.random.Generator,
               size: int) -> np.ndarray:
    idx = rng.integers(len(table.prob), size=size)
    keep = rng.random(size) < table.prob[idx]
    return table.values[np.where(keep, idx, table.alias[idx])]


# ------------------------------------------------------------ block engine

def _blocks(n_reps: int):
    for b in range((n_reps + BLOCK_REPS - 1) // BLOCK_REPS):
        yield b, min(BLOCK_REPS, n_reps - b * BLOCK_REPS)


def _segment_sums(draws: np.ndarray, lens: np.ndarray) -> np.ndarray:
    starts = np.zeros(len(lens), dtype=np.int64)
    np.cumsum(lens[:-1], out=starts[1:])
    return np.add.reduceat(draws, starts)


def _gw_block(table: AliasTable, n: int, rng: np.random.Generator,
              reps: int, spent: list, budget: int) -> np.ndarray:
    z = np.ones(reps, dtype=np.int64)
    for _ in range(n):
        total = int(z.sum())
        if total == 0:
            break
        spent[0] += total
        if spent[0] > budget:
            raise BudgetExceeded(
                f"offspring draws {spent[0]} exceed budget {budget}")
        draws = alias_draw(table, rng, total)
        alive = z > 0
        out = np.zeros(reps, dtype=np.int64)
        out[alive] = _segment_sums(draws, z[alive])
        z = out
    return z


def _offspring_table(law: OffspringLaw) -> AliasTable:
    dense = law.dense()
    return alias_table(np.arange(len(dense)), dense)


# ------------------------------------------------------------ estimators

class TailEstimate(NamedTuple):
    value: float
    ci_low: float
    ci_high: float


def wilson_interval(hits: int, total: int, level: float = 0.95) -> TailEstimate:
    """Wilson score interval for a Bernoulli proportion."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"ci level must be in (0,1), got {level}")
    if total <= 0:
        return TailEstimate(math.nan, 0.0, 1.0)
    z = float(ss.ndtri(0.5 + level / 2.0))
    p = hits / total
    denom = 1.0 + z * z / total
    center = (p + z * z / (2.0 * total)) / denom
    half = z * math.sqrt(p * (1.0 - p) / total
                         + z * z / (4.0 * total * total)) / denom
    # the edges are exact at degenerate proportions; don't let roundoff in
    lo = 0.0 if hits == 0 else max(0.0, center - half)
    hi = 1.0 if hits == total else min(1.0, center + half)
    return TailEstimate(p, lo, hi)


@dataclass(frozen=True)
class SimBatch:
    """Tallies of one seeded run; identical (seed, config) gives
    bit-identical tallies for any worker partition of the blocks."""

    seed: int
    n: int
    replications: int
    survival_conditioning: bool
    ci_level: float
    eps: tuple[float, ...]
    hits: np.ndarray            # one tally per eps, int64
    survivors: int
    zn_counts: np.ndarray       # bincount of Z_n over replications
    draws_used: int

    def estimate(self, i: int = 0) -> TailEstimate:
        denom = self.survivors if self.survival_conditioning \
            else self.replications
        return wilson_interval(int(self.hits[i]), denom, self.ci_level)


def simulate_zn(law: OffspringLaw, n: int, seed: int, n_reps: int, *,
                draw_budget: int = DRAW_BUDGET) -> de.ProbVector:
    """Empirical pmf of Z_n from n_reps generation-wise replications.

    Samples the stored atoms of the law (family truncation at 1e-15 is
    far beneath MC resolution). Masses sum to 1 over the observed range.
    """
    if n < 0 or n_reps < 1:
        raise ValueError("need n >= 0 and at least one replication")
    table = _offspring_table(law)
    counts = np.zeros(1, dtype=np.int64)
    spent = [0]
    for b, reps in _blocks(n_reps):
        z = _gw_block(table, n, _philox(seed, b), reps, spent, draw_budget)
        c = np.bincount(z)
        if len(c) > len(counts):
            c[: len(counts)] += counts
            counts = c
        else:
            counts[: len(c)] += c
    support = np.flatnonzero(counts)
    lo, hi = int(support[0]), int(support[-1])
    return de.ProbVector(offset=lo, masses=counts[lo:hi + 1] / n_reps)


def estimate_rn_tail(law: OffspringLaw, X: IncrementLaw, n: int,
                     eps, seed: int, n_reps: int, *,
                     ci_level: float = 0.95,
                     survival_conditioning: bool = False,
                     draw_budget: int = DRAW_BUDGET) -> SimBatch:
    """Tally {Z_n > 0, S_{Z_n} >= eps Z_n} over n_reps replications.

    eps may be a scalar or a sequence; all entries are evaluated on the
    same sample paths (shared draws), so estimates are non-increasing in
    eps by construction. -inf is the full-event sentinel: the tally
    reduces to survival. Thresholds use the exact engine's lattice
    convention, so the comparison is integer-exact.
    """
    eps_t = tuple(float(e) for e in np.atleast_1d(eps))
    if not eps_t:
        raise ValueError("need at least one epsilon")
    z_table = _offspring_table(law)
    jpmf = X.pmf
    j_table = alias_table(jpmf.values(), jpmf.masses)
    hits = np.zeros(len(eps_t), dtype=np.int64)
    counts = np.zeros(1, dtype=np.int64)
    survivors = 0
    spent = [0]
    for b, reps in _blocks(n_reps):
        rng = _philox(seed, b)
        z = _gw_block(z_table, n, rng, reps, spent, draw_budget)
        c = np.bincount(z)
        if len(c) > len(counts):
            c[: len(counts)] += counts
            counts = c
        else:
            counts[: len(c)] += c
        za = z[z > 0]
        if len(za) == 0:
            continue
        survivors += len(za)
        total = int(za.sum())
        spent[0] += total
        if spent[0] > draw_budget:
            raise BudgetExceeded(
                f"increment draws push {spent[0]} past budget {draw_budget}")
        sj = _segment_sums(alias_draw(j_table, rng, total), za)
        for i, e in enumerate(eps_t):
            if math.isinf(e) and e < 0.0:
                hits[i] += len(za)
                continue
            v = za * ((e - X.shift) / X.step)
            t = np.ceil(v - THRESHOLD_GUARD * np.maximum(1.0, np.abs(v)))
            hits[i] += int(np.count_nonzero(sj >= t))
    return SimBatch(seed=seed, n=n, replications=n_reps,
                    survival_conditioning=survival_conditioning,
                    ci_level=ci_level, eps=eps_t, hits=hits,
                    survivors=survivors, zn_counts=counts,
                    draws_used=spent[0])


def write_mc_csv(batches: Sequence[SimBatch], path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", "N", "estimate", "ci_low", "ci_high"])
            for b in batches:
                for i in range(len(b.eps)):
                    est = b.estimate(i)
                    w.writerow([b.seed, b.replications]
                               + [f"{v:.15g}" for v in est])
    except OSError as e:
        raise IoFailure(str(e)) from e
