"""Centered i.i.d. increment laws and exact tails of their partial sums.

An IncrementLaw lives on an affine integer lattice: X = shift + step*J
where J is integer with pmf stored as a ProbVector. Centering forces the
real-valued affine map; every x-threshold converts to a J-lattice
threshold through one guarded ceiling.

sum_tail tiers:

* closed_binomial: Rademacher sums reduce to a Binomial(k, 1/2) tail
  (S_k = 2H - k), evaluated by the regularized incomplete beta.
* exact_conv: iterative self-convolution. For heavy-tailed laws a direct
  sweep over a ~2.6e5-point pmf is infeasible, so J splits at a threshold
  T into a light part (iterated directly) and a rare part entering
  through at most a few "big jumps" with binomial weights; the neglected
  remainder is the exact binomial tail P(#jumps > J_max) and goes into
  the value's error bar. With no heavy tail the split degenerates to the
  plain sweep.
* gauss: the normal tail, explicitly labeled, never silently substituted.

All error-bar contributions are certified upper bounds: law quantile
truncation (k * truncated_mass), per-step convolution trims, and the
big-jump remainder.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import special as ss
from scipy import stats as sst

from . import distengine as de
from .errors import (BudgetExceeded, IoFailure, MissingMomentFlag,
                     TailTooHeavy, VarianceZero)

PARETO_DEFAULT_CUTOFF = 1e-14      # quantile mass dropped from the far tail
FIT_WINDOW_SCALE = (100.0, 3000.0)  # tail-constant calibration, in step units
THRESHOLD_GUARD = 1e-9


@dataclass(frozen=True)
class IncrementLaw:
    """Centered finite-variance lattice law X = shift + step*J."""

    kind: str
    pmf: de.ProbVector          # pmf of the integer variable J
    step: float
    shift: float
    sigma: float
    tail_index: float | None = None
    tail_const: float | None = None
    exp_moment: bool = True
    fit_window: tuple[float, float] | None = None
    fit_max_rel_err: float | None = None

    @property
    def mean_x(self) -> float:
        js = self.pmf.values().astype(float)
        kept = self.pmf.total_mass
        return self.shift + self.step * float((self.pmf.masses * js).sum()) / kept

    @property
    def min_x(self) -> float:
        return self.shift + self.step * self.pmf.support_min

    @property
    def max_x(self) -> float:
        return self.shift + self.step * self.pmf.support_max

    def x_values(self) -> np.ndarray:
        return self.shift + self.step * self.pmf.values().astype(float)

    def j_threshold(self, x: float, k: int) -> int:
        """Smallest integer t with k*shift + step*t >= x (up to a guard)."""
        v = (x - k * self.shift) / self.step
        return int(math.ceil(v - THRESHOLD_GUARD * max(1.0, abs(v))))

    def ccdf_x(self, x: float) -> float:
        """P(X >= x) for a single increment."""
        return self.pmf.ccdf_at(self.j_threshold(x, 1))

    def truncated_moment(self, t: float, lo: float, hi: float) -> float:
        """E[X^t; lo <= X <= hi]."""
        xs = self.x_values()
        sel = (xs >= lo) & (xs <= hi)
        return float((self.pmf.masses[sel] * xs[sel] ** t).sum())


def gauss_ccdf(z: float | np.ndarray):
    return 0.5 * ss.erfc(np.asarray(z, dtype=float) / math.sqrt(2.0))


# ------------------------------------------------------------ construction

def _center(jpmf: de.ProbVector, step: float, kind: str, **extra) -> IncrementLaw:
    js = jpmf.values().astype(float)
    kept = jpmf.total_mass
    ej = float((jpmf.masses * js).sum()) / kept
    shift = -step * ej
    xs = shift + step * js
    var = float((jpmf.masses * xs ** 2).sum()) / kept
    if var <= 0.0:
        raise VarianceZero(f"{kind}: zero variance after centering")
    law = IncrementLaw(kind=kind, pmf=jpmf, step=step, shift=shift,
                       sigma=math.sqrt(var), **extra)
    assert abs(law.mean_x) <= 1e-12
    return law


def _fit_tail_constant(law_kind: str, jpmf: de.ProbVector, step: float,
                       shift: float, theta: float):
    """Least squares for log a with the slope pinned at -theta."""
    lo = FIT_WINDOW_SCALE[0] * step
    hi = min(FIT_WINDOW_SCALE[1] * step,
             0.5 * (shift + step * jpmf.support_max))
    xs = np.exp(np.linspace(math.log(lo), math.log(hi), 25))
    suffix = np.cumsum(jpmf.masses[::-1])[::-1]
    ccdf = np.empty(len(xs))
    for i, x in enumerate(xs):
        v = (x - shift) / step
        t = int(math.ceil(v - THRESHOLD_GUARD * max(1.0, abs(v))))
        r = t - jpmf.offset
        ccdf[i] = suffix[r] if 0 <= r < len(suffix) else 0.0
    good = ccdf > 0.0
    log_a = float(np.mean(np.log(ccdf[good]) + theta * np.log(xs[good])))
    a = math.exp(log_a)
    rel = np.abs(a * xs[good] ** (-theta) / ccdf[good] - 1.0)
    return a, (float(lo), float(hi)), float(rel.max())


def make_increment_law(kind: str, **params) -> IncrementLaw:
    """Build a named increment law.

    kinds: rademacher; two_point_indicator(p); lattice_pmf(pmf, step=1.0);
    centered_pareto_lattice(theta, scale=1.0, cutoff=1e-14).
    """
    if kind == "rademacher":
        pmf = de.ProbVector(offset=0, masses=np.array([0.5, 0.5]))
        return IncrementLaw(kind=kind, pmf=pmf, step=2.0, shift=-1.0,
                            sigma=1.0, exp_moment=True)

    if kind == "two_point_indicator":
        p = float(params["p"])
        if not 0.0 < p < 1.0:
            raise ValueError(f"p must lie in (0,1), got {p}")
        pmf = de.ProbVector(offset=0, masses=np.array([1.0 - p, p]))
        return _center(pmf, 1.0, kind, exp_moment=True)

    if kind == "lattice_pmf":
        raw = params["pmf"]
        step = float(params.get("step", 1.0))
        js = sorted(int(j) for j in raw)
        lo, hi = js[0], js[-1]
        masses = np.zeros(hi - lo + 1)
        for j in js:
            if raw[j] < 0.0:
                raise ValueError(f"negative mass at {j}")
            masses[j - lo] = float(raw[j])
        tot = masses.sum()
        if abs(tot - 1.0) > 1e-12:
            raise ValueError(f"masses sum to {tot}, not 1")
        pmf = de.ProbVector(offset=lo, masses=masses)
        return _center(pmf, step, kind, exp_moment=True)

    if kind == "centered_pareto_lattice":
        theta = float(params["theta"])
        if theta <= 2.0:
            raise TailTooHeavy(f"tail index must exceed 2, got {theta}")
        scale = float(params.get("scale", 1.0))
        cutoff = float(params.get("cutoff", PARETO_DEFAULT_CUTOFF))
        c = 1.0 / float(ss.zeta(theta + 1.0, 1.0))
        jmax = int(math.ceil((c / (theta * cutoff)) ** (1.0 / theta)))
        js = np.arange(1, jmax + 1, dtype=float)
        masses = c * js ** (-(theta + 1.0))
        trunc = c * float(ss.zeta(theta + 1.0, jmax + 1.0))
        pmf = de.ProbVector(offset=1, masses=masses, truncated_mass=trunc)
        kept = pmf.total_mass
        ej = float((masses * js).sum()) / kept
        shift = -scale * ej
        a, window, rel = _fit_tail_constant(kind, pmf, scale, shift, theta)
        law = _center(pmf, scale, kind, exp_moment=False, tail_index=theta,
                      tail_const=a, fit_window=window, fit_max_rel_err=rel)
        return law

    raise ValueError(f"unknown increment kind {kind!r}")


# ------------------------------------------------------------ tail values

class TailValue(NamedTuple):
    value: float
    tier: str
    error_bar: float
    log_value: float


def binom_logsf(t: int, k: int, p: float = 0.5, cap: int = 8000) -> float:
    """log P(Bin(k, p) >= t), exact summation in the log domain.

    Stays finite far below float underflow; past the threshold the terms
    decay geometrically, so `cap` terms lose nothing at double precision
    for any tail small enough to need this route.
    """
    if t <= 0:
        return 0.0
    if t > k:
        return -math.inf
    v = float(ss.bdtrc(t - 1, k, p))
    if v > 1e-280:
        return math.log(v)
    h = np.arange(t, min(k, t + cap) + 1, dtype=float)
    lp = (ss.gammaln(k + 1) - ss.gammaln(h + 1) - ss.gammaln(k - h + 1)
          + h * math.log(p) + (k - h) * math.log1p(-p))
    return float(ss.logsumexp(lp))


def _rademacher_tail(ks: np.ndarray, xs: np.ndarray, want_log: bool = True):
    """P(S_k >= x) and (optionally) its log for Rademacher sums.

    The log is exact far below float underflow, but costs a per-entry
    summation there, so batch callers that never read it skip it.
    """
    ks = np.asarray(ks, dtype=np.int64)
    xs = np.asarray(xs, dtype=float)
    v = (xs + ks) / 2.0
    t = np.ceil(v - THRESHOLD_GUARD * np.maximum(1.0, np.abs(v))).astype(np.int64)
    vals = np.empty(len(ks))
    logs = np.empty(len(ks))
    below = t <= 0
    above = t > ks
    mid = ~(below | above)
    vals[below], logs[below] = 1.0, 0.0
    vals[above], logs[above] = 0.0, -np.inf
    if np.any(mid):
        vals[mid] = ss.bdtrc(t[mid] - 1, ks[mid], 0.5)
        logs[mid] = np.log(np.maximum(vals[mid], 1e-300))
        if want_log:
            for i in np.flatnonzero(mid):
                if vals[i] <= 1e-280:
                    logs[i] = binom_logsf(int(t[i]), int(ks[i]))
        else:
            logs[mid] = np.where(vals[mid] > 0.0, logs[mid], -np.inf)
    return vals, logs


class TailSweep:
    """Exact P(S_k >= x) for a batch of queries sharing one G-sweep.

    G_k = (light part)^(conv k) iterates by direct convolution; heavy-tail
    laws add up to j_max_cap big jumps with binomial weights. queries()
    consumes (k, x) pairs, runs one sweep to max k, and returns TailValues
    in input order.
    """

    def __init__(self, X: IncrementLaw, *, jump_budget: float = 1.0,
                 g_tol: float = 1e-18, j_max_cap: int = 24,
                 y_budget: int = 4_000_000, flop_budget: float = 2e11):
        self.X = X
        self.jump_budget = jump_budget
        self.g_tol = g_tol
        self.j_max_cap = j_max_cap
        self.y_budget = y_budget
        self.flop_budget = flop_budget

    def queries(self, pairs) -> list[TailValue]:
        X = self.X
        pairs = [(int(k), float(x)) for k, x in pairs]
        if not pairs:
            return []
        k_max = max(k for k, _ in pairs)
        ts = {}
        for k, x in pairs:
            ts.setdefault(k, set()).add(X.j_threshold(x, k))

        jp = X.pmf.masses
        j0 = X.pmf.offset
        jtop = X.pmf.support_max
        law_trunc = X.pmf.truncated_mass

        # split point: rare part must stay rare over the whole sweep
        suffix = np.concatenate((np.cumsum(jp[::-1])[::-1], [0.0]))
        T = jtop
        if X.tail_index is not None:
            for cand in range(j0, jtop + 1):
                if k_max * suffix[cand - j0 + 1] <= self.jump_budget:
                    T = cand
                    break
        g = jp[: T - j0 + 1]
        p_big = float(suffix[T - j0 + 1]) if T < jtop else 0.0
        n_jump = 0
        cc = None
        if p_big > 0.0:
            # jumps beyond n_jump are exactly the binomial tail (error bar)
            n_jump = min(self.j_max_cap,
                         int(sst.binom.isf(1e-17, k_max, p_big)) + 1)
            bhat = jp[T - j0 + 1:] / p_big
            b0 = T + 1
            # cc_j is evaluated at y = t - s with s >= offset of G_{k-j},
            # and that offset never sits below the raw support floor
            y_max = max((t - (k - n_jump) * j0) if j0 >= 0 else (t - k * j0)
                        for k, tk in ts.items() for t in tk)
            y_max = max(int(y_max), 0)
            if y_max > self.y_budget:
                raise BudgetExceeded(
                    f"jump window {y_max} exceeds budget {self.y_budget}")
            cc = self._jump_ccdfs(bhat, b0, n_jump, y_max)

        if len(g) * 1.0 * k_max * (X.sigma / X.step + 1.0) * math.sqrt(k_max) \
                > self.flop_budget:
            raise BudgetExceeded("projected sweep cost exceeds flop budget")

        # sweep G_k keeping the last n_jump+1 vectors
        ring: deque[tuple[int, np.ndarray]] = deque(maxlen=n_jump + 1)
        ring.append((0, np.array([1.0])))       # G_0 = delta at 0
        out: dict[tuple[int, int], tuple[float, float]] = {}
        go, gm = 0, np.array([1.0])
        trim_acc = 0.0
        for k in range(1, k_max + 1):
            full = np.convolve(gm, g)
            go2 = go + j0
            go2, gm2, dropped = de._trim(go2, full, 1, self.g_tol)
            trim_acc += dropped
            go, gm = go2, gm2
            ring.append((go, gm))
            if k in ts:
                for t in ts[k]:
                    val = self._one_query(k, t, ring, p_big, n_jump, cc)
                    err = k * law_trunc + trim_acc
                    if p_big > 0.0:
                        err += float(sst.binom.sf(n_jump, k, p_big))
                    out[(k, t)] = (val, err)

        res = []
        for k, x in pairs:
            t = X.j_threshold(x, k)
            val, err = out[(k, t)]
            lv = math.log(val) if val > 0.0 else -math.inf
            res.append(TailValue(value=val, tier="exact_conv",
                                 error_bar=err, log_value=lv))
        return res

    def _jump_ccdfs(self, bhat: np.ndarray, b0: int, n_jump: int, y_max: int):
        """cc[j-1][y] = P(sum of j big jumps >= y) for y in [0, y_max+1].

        Each j-fold pmf is windowed to [j*b0, y_max]; the mass beyond the
        window sits above every queried threshold and enters the ccdf as a
        constant, so the windowing loses nothing.
        """
        cc = []
        cur = None
        for j in range(1, n_jump + 1):
            off = j * b0
            if cur is None:
                win = bhat[: max(y_max - off + 1, 0)].copy()
            else:
                win = np.convolve(cur, bhat)[: max(y_max - off + 1, 0)]
            farm = 1.0 - float(win.sum())
            dense = np.zeros(y_max + 1)
            if len(win):
                dense[off: off + len(win)] = win
            ccj = np.concatenate((np.cumsum(dense[::-1])[::-1], [0.0])) + farm
            cc.append(ccj)
            cur = win
            if len(win) == 0:
                # all later sums lie above every queried threshold
                cc.extend(np.full(y_max + 2, 1.0)
                          for _ in range(j + 1, n_jump + 1))
                break
        return cc

    def _one_query(self, k, t, ring, p_big, n_jump, cc) -> float:
        go, gm = ring[-1]
        r = t - go
        if r <= 0:
            acc = float(gm.sum())
        elif r >= len(gm):
            acc = 0.0
        else:
            acc = float(gm[r:].sum())
        if p_big <= 0.0:
            return acc
        w = 1.0
        for j in range(1, min(n_jump, k) + 1):
            w *= p_big * (k - j + 1) / j
            go_j, gm_j = ring[-1 - j]
            if w * float(gm_j.sum()) < 1e-18 * acc:
                break
            ccj = cc[j - 1]
            # y = t - s over s = go_j + i; clamp y into [0, y_max+1]
            y_hi = t - go_j
            if y_hi <= 0:
                acc += w * float(gm_j.sum())
                continue
            n_g = len(gm_j)
            y_lo = y_hi - (n_g - 1)
            ys = np.clip(np.arange(y_hi, y_lo - 1, -1), 0, len(ccj) - 1)
            acc += w * float(np.dot(gm_j, ccj[ys]))
        return acc


def sum_tail(X: IncrementLaw, k: int, x: float, *, tier: str = "auto",
             allow_gauss: bool = False, **sweep_opts) -> TailValue:
    """P(S_k >= x) for S_k the sum of k independent copies of X."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if tier == "auto":
        tier = "closed_binomial" if X.kind == "rademacher" else "exact_conv"
    if tier == "closed_binomial":
        if X.kind != "rademacher":
            raise ValueError("closed binomial tier is Rademacher-only")
        vals, logs = _rademacher_tail(np.array([k]), np.array([x]))
        return TailValue(value=float(vals[0]), tier="closed_binomial",
                         error_bar=0.0, log_value=float(logs[0]))
    if tier == "exact_conv":
        try:
            return TailSweep(X, **sweep_opts).queries([(k, x)])[0]
        except BudgetExceeded:
            if not allow_gauss:
                raise
            tier = "gauss"
    if tier == "gauss":
        z = x / (X.sigma * math.sqrt(k))
        v = float(gauss_ccdf(z))
        return TailValue(value=v, tier="gauss", error_bar=math.nan,
                         log_value=math.log(v) if v > 0 else -math.inf)
    raise ValueError(f"unknown tier {tier!r}")


def tail_batch(X: IncrementLaw, ks, xs, want_log: bool = False,
               **sweep_opts) -> list[TailValue]:
    """sum_tail for aligned arrays of k and x, sharing one sweep."""
    if X.kind == "rademacher":
        vals, logs = _rademacher_tail(np.asarray(ks), np.asarray(xs),
                                      want_log=want_log)
        return [TailValue(value=float(v), tier="closed_binomial",
                          error_bar=0.0, log_value=float(l))
                for v, l in zip(vals, logs)]
    return TailSweep(X, **sweep_opts).queries(list(zip(ks, xs)))


def tail_arrays(X: IncrementLaw, ks, xs, **sweep_opts):
    """(values, error_bars) arrays for aligned k and x; the bulk interface
    for decompositions over a whole generation support."""
    ks = np.asarray(ks, dtype=np.int64)
    xs = np.asarray(xs, dtype=float)
    if X.kind == "rademacher":
        vals, _ = _rademacher_tail(ks, xs, want_log=False)
        return vals, np.zeros(len(ks))
    res = TailSweep(X, **sweep_opts).queries(list(zip(ks, xs)))
    return (np.array([t.value for t in res]),
            np.array([t.error_bar for t in res]))


def write_tail_table(rows, path) -> None:
    """CSV with columns (k, x, P, tier, error_bar), 15 significant digits."""
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "x", "P", "tier", "error_bar"])
            for k, x, tv in rows:
                w.writerow([int(k), f"{x:.15g}", f"{tv.value:.15g}", tv.tier,
                            f"{tv.error_bar:.15g}"])
    except OSError as e:
        raise IoFailure(str(e)) from e


# ------------------------------------------------------------ bound suite

@dataclass(frozen=True)
class BoundRecord:
    k: int
    epsilon: float
    exact: float | None
    fuk_nagaev_1: float | None
    fuk_nagaev_2: float | None
    bernstein_upper: float | None
    kolmogorov_lower: float | None
    big_jump_ratio: float | None
    notes: tuple[str, ...]


def bound_suite(X: IncrementLaw, k: int, eps: float, *, r: float = 2.0,
                t: float = 2.0, delta: float = 0.1,
                which: tuple[str, ...] | None = None,
                exact_value: float | None = None) -> BoundRecord:
    """Concentration bounds for P(S_k >= eps*k), plus the exact value.

    Bounds needing a moment the law lacks are skipped with a note, unless
    named in `which`, in which case MissingMomentFlag is raised. The
    Kolmogorov lower bound is a diagnostic valid only for k above an
    uncertified threshold.
    """
    if eps <= 0.0:
        raise ValueError("eps must be > 0")
    if r <= 1.0:
        raise ValueError("Fuk-Nagaev forms need r > 1")
    if t < 2.0:
        raise ValueError("the second Fuk-Nagaev form needs t >= 2")
    notes = []
    s2 = X.sigma ** 2
    ek = eps * k

    fn1 = k * X.ccdf_x(ek / r) + (math.e * r * s2) ** r * eps ** (-2 * r) * k ** (-r)
    mom = X.truncated_moment(t, 0.0, ek)
    fn2 = (k * X.ccdf_x(ek / r)
           + math.exp(-2.0 * eps ** 2 * k / ((t + 2.0) ** 2 * math.exp(t) * s2))
           + ((t + 2.0) * r ** (t - 1.0) * mom
              / (t * eps ** t * k ** (t - 1.0))) ** (t * r / (t + 2.0)))

    bern = kolm = None
    if X.exp_moment:
        bern = math.exp(-(1.0 - delta) * eps ** 2 * k / (2.0 * s2))
        kolm = math.exp(-(1.0 + delta) * eps ** 2 * k / (2.0 * s2))
        notes.append("kolmogorov_lower valid only for k above an "
                     "uncertified threshold")
    elif which and ("bernstein_upper" in which or "kolmogorov_lower" in which):
        raise MissingMomentFlag("Bernstein/Kolmogorov need an exponential moment")
    else:
        notes.append("no exponential moment: Bernstein/Kolmogorov skipped")

    if exact_value is None:
        exact_value = sum_tail(X, k, ek).value

    ratio = None
    if X.tail_index is not None:
        single = X.ccdf_x(ek)
        ratio = exact_value / (k * single) if single > 0.0 else math.inf
    elif which and "big_jump_ratio" in which:
        raise MissingMomentFlag("big_jump_ratio needs a tail index")

    return BoundRecord(k=k, epsilon=eps, exact=exact_value,
                       fuk_nagaev_1=fn1, fuk_nagaev_2=fn2,
                       bernstein_upper=bern, kolmogorov_lower=kolm,
                       big_jump_ratio=ratio, notes=tuple(notes))


def locate_kolmogorov_threshold(X: IncrementLaw, eps: float, k_grid,
                                delta: float = 0.1):
    """Smallest grid k above which exact >= exp[-(1+delta) eps^2 k / 2 sigma^2]
    holds for the whole remaining grid; None if nowhere. Reported, never
    asserted a priori."""
    if not X.exp_moment:
        raise MissingMomentFlag("Kolmogorov diagnostic needs an exponential moment")
    ks = sorted(int(k) for k in k_grid)
    s2 = X.sigma ** 2
    ok = []
    for k in ks:
        exact = sum_tail(X, k, eps * k).value
        lower = math.exp(-(1.0 + delta) * eps ** 2 * k / (2.0 * s2))
        ok.append(exact >= lower)
    for i in range(len(ks)):
        if all(ok[i:]):
            return ks[i]
    return None
