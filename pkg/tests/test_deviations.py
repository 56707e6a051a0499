"""Deviation decomposition, regime predictions, and limit constants.

Frozen oracles (derivations):

* Gamma_a closed forms: Gamma_{1/2}(1) = sqrt(2/pi), Gamma_1(1) = 1/2,
  Gamma_2(1/2) = 2 Gamma(5/2) (1/2)^4 / (2 sqrt(pi)) = 3/64.
* J for the linear-fractional m=2 law equals log 2: with S(s) = s/(1-s)
  and phi(v) = 1/(1+v), S(phi(v)) = 1/v, so the integrand is v^{a-2}
  with a = 1 and the integral over [1, 2] is log 2 (Gamma(1) = 1).
* I_3 for the {2,3} half-half law: quadrature value 1.2410887787102605
  (reported error 9.8e-10). Independent route: m^{2n} E[Z_n^{-2}] from
  the depth-12 exact pmf gives ratio 1 + 4.1e-6.
* I_2.5 for {1: .2, 2: .8}: 1.5039698674244888 (reported error 1.1e-9).
* Crossover exponent for {1: .2, 2: .8} at theta = 2.5:
  (1 + a - th)/(2a - th) = 0.4160021169627056 with a = 2.738132741922805.
* Boettcher rate for {2,3} rademacher: L = log B(phi(1/2))
  = -0.8731582211978475, bracket [2L, L/2]; beta = log 2 / log 2.5.
* Hand decomposition {1: .5, 2: .5}, n=1, rademacher, eps=1:
  .5 * P(S_1 >= 1) + .5 * P(S_2 >= 2) = .5*.5 + .5*.25 = 0.375 exactly.
* exp(-u) density (the lf(2) martingale limit W ~ Exp(1)):
  integral of Phi(sqrt(u)) e^{-u} du = (1 + 1/sqrt(3))/2.
* ddev smoke, lf(2) + rademacher, eps_n = 2^{-n/4}, n in {10,11,12}:
  normalized values 0.47150581226883226, 0.47877250869556803,
  0.49170465322609846; independently reproduced from the closed-form
  geometric pmf P(Z_n = k) = 2^{-n} (1 - 2^{-n})^{k-1} against bdtrc.
* Schroeder series at eps = 1/2 for lf(2) + rademacher: nu_k = 1 for
  every k (geometric pmf), series value 2.2288352518628005; the scaled
  decomposition 2^n P(R_n >= 1/2) approaches it from below.
"""

import csv
import json
import math

import numpy as np
import pytest

from gwdeviations import deviations as dev
from gwdeviations import distengine as de
from gwdeviations import increments as inc
from gwdeviations import limits
from gwdeviations import offspring as off
from gwdeviations.errors import (DivergentIntegral, NotBottcher,
                                 RegimePreconditionViolated)

I3_REF = 1.2410887787102605
I25_REF = 1.5039698674244888
KAPPA_REF = 0.4160021169627056
L23_REF = -0.8731582211978475
SMOKE_NORMS = (0.47150581226883226, 0.47877250869556803, 0.49170465322609846)
SERIES_REF = 2.2288352518628005


@pytest.fixture(scope="module")
def lf2():
    return off.linear_fractional(2.0)


@pytest.fixture(scope="module")
def law18():
    return off.explicit({1: 0.2, 2: 0.8})


@pytest.fixture(scope="module")
def law23():
    return off.explicit({2: 0.5, 3: 0.5})


@pytest.fixture(scope="module")
def rademacher():
    return inc.make_increment_law("rademacher")


@pytest.fixture(scope="module")
def pareto():
    return inc.make_increment_law("centered_pareto_lattice", theta=2.5)


# ------------------------------------------------------------ constants

def test_gamma_alpha_closed_forms():
    assert abs(dev.gamma_alpha(0.5, 1.0) - math.sqrt(2.0 / math.pi)) < 1e-15
    assert abs(dev.gamma_alpha(1.0, 1.0) - 0.5) < 1e-15
    assert abs(dev.gamma_alpha(2.0, 0.5) - 3.0 / 64.0) < 1e-15
    with pytest.raises(ValueError):
        dev.gamma_alpha(0.0, 1.0)
    with pytest.raises(ValueError):
        dev.gamma_alpha(1.0, -1.0)


def test_gamma_alpha_partial_matches_closed_form():
    for a in (0.5, 1.0, 2.0, 2.7381):
        for s in (0.5, 1.0, 2.0):
            full = dev.gamma_alpha_partial(a, s)
            assert abs(full - dev.gamma_alpha(a, s)) < 1e-10 * full


def test_gamma_alpha_partial_additivity():
    a, s = 1.7, 1.3
    lo = dev.gamma_alpha_partial(a, s, 0.0, 1.0)
    hi = dev.gamma_alpha_partial(a, s, 1.0, math.inf)
    assert abs(lo + hi - dev.gamma_alpha(a, s)) < 1e-10


def test_j_alpha_linear_fractional_is_log2(lf2):
    v = dev.j_alpha(lf2)
    assert abs(v.value - math.log(2.0)) < 5e-10
    assert v.error_estimate < 1e-8


def test_i_theta_frozen_values(law23, law18):
    v3 = dev.i_theta(law23, 3.0)
    assert abs(v3.value - I3_REF) < 1e-7
    assert v3.error_estimate < 1e-7
    v25 = dev.i_theta(law18, 2.5)
    assert abs(v25.value - I25_REF) < 1e-7


def test_i_theta_tolerance_stability(law23):
    loose = dev.i_theta(law23, 3.0, iter_tol=1e-9, quad_tol=1e-6)
    assert abs(loose.value - I3_REF) < 1e-6


def test_i_theta_harmonic_moment_route(law23):
    # m^{2n} E[Z_n^{-2}] converges to I_3; depth 12 is already 4e-6 close
    pmf = de.generation_pmf(law23, 12)
    ks = pmf.values().astype(float)
    harm = float(np.dot(pmf.masses, ks ** -2.0)) * law23.mean ** 24
    assert abs(harm / I3_REF - 1.0) < 0.15
    assert abs(harm / I3_REF - 1.0) < 1e-4


def test_i_theta_gates(lf2, law18):
    with pytest.raises(ValueError):
        dev.i_theta(law18, 2.0)
    # lf(2) has alpha = 1: theta = 2.5 >= 1 + alpha diverges
    with pytest.raises(DivergentIntegral):
        dev.i_theta(lf2, 2.5)


def test_kappa_exponent(law18):
    k = dev.kappa_exponent(law18.schroder_alpha, 2.5)
    assert abs(k - KAPPA_REF) < 1e-12
    # theta -> 1 + alpha collapses the crossover to rho = 0
    assert abs(dev.kappa_exponent(1.5, 2.5) - 0.0) < 1e-15


# ------------------------------------------------------------ decomposition

def test_hand_decomposition_exact(rademacher):
    law = off.explicit({1: 0.5, 2: 0.5})
    d = dev.decomposition_tail(law, rademacher, 1, 1.0)
    assert d.value == 0.375
    assert d.error_bar == 0.0
    assert d.exact_terms == 2


def test_eps_above_max_is_exactly_zero(rademacher):
    law = off.explicit({1: 0.5, 2: 0.5})
    d = dev.decomposition_tail(law, rademacher, 3, 1.5)
    assert d.value == 0.0
    assert d.error_bar < 1e-12


def test_decomposition_additive_in_k(lf2, rademacher):
    pmf = de.generation_pmf(lf2, 8)
    full = dev.decomposition_tail(lf2, rademacher, 8, 0.3, pmf=pmf)
    lo = dev.decomposition_tail(lf2, rademacher, 8, 0.3, (1, 40), pmf=pmf)
    hi = dev.decomposition_tail(lf2, rademacher, 8, 0.3,
                                (41, pmf.support_max), pmf=pmf)
    assert abs(lo.value + hi.value - full.value) < 1e-15


def test_decomposition_monotone_in_eps(lf2, rademacher):
    pmf = de.generation_pmf(lf2, 6)
    vals = [dev.decomposition_tail(lf2, rademacher, 6, e, pmf=pmf).value
            for e in (0.1, 0.2, 0.4, 0.8)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_exact_cap_covered_by_fuk_nagaev_bar(lf2, rademacher):
    pmf = de.generation_pmf(lf2, 8)
    full = dev.decomposition_tail(lf2, rademacher, 8, 0.25, pmf=pmf)
    capped = dev.decomposition_tail(lf2, rademacher, 8, 0.25, pmf=pmf,
                                    exact_k_cap=500, fn_r=2.0)
    assert capped.value <= full.value
    assert full.value - capped.value <= capped.error_bar


def test_schroder_series_consistency(lf2, rademacher):
    s = dev.schroder_series_tail(lf2, rademacher, 0.5)
    assert abs(s - SERIES_REF) < 1e-9
    gaps = []
    for n in (10, 12):
        d = dev.decomposition_tail(lf2, rademacher, n, 0.5)
        gaps.append(abs(d.value * 2.0 ** n - s) / s)
    assert gaps[1] < gaps[0]
    assert gaps[1] < 2e-3


def test_bottcher_log_tail_matches_linear_route(law23, rademacher):
    # shallow depths keep everything above the float floor, so the full
    # spectral pmf + linear bdtrc route is an independent oracle
    for n, eps, tol in [(4, 0.5, 1e-12), (5, 0.4, 1e-12), (6, 0.25, 1e-12)]:
        lin = dev.decomposition_tail(law23, rademacher, n, eps)
        bt = dev.bottcher_log_tail(law23, rademacher, n, eps)
        assert abs(math.exp(bt.log_value) - lin.value) <= tol * lin.value
        assert bt.log_error_bar < bt.log_value - 40.0


def test_bottcher_log_tail_deep(law23, rademacher):
    eps = 2.5 ** -1.5
    bt = dev.bottcher_log_tail(law23, rademacher, 10, eps)
    assert abs(bt.log_value - -115.56363295703967) < 1e-8
    # the certificate is insensitive to the window choice
    wide = dev.bottcher_log_tail(law23, rademacher, 10, eps,
                                 window=2 * bt.window)
    assert abs(wide.log_value - bt.log_value) < 1e-10
    deeper = dev.bottcher_log_tail(law23, rademacher, 12, eps)
    assert abs(deeper.log_value - -454.5971157501777) < 1e-6
    # the window bottom sits below the float floor (P(Z_12 = 4096) is
    # about e^-2800): the log route sums past those floored entries
    assert deeper.terms < deeper.window + 1
    assert deeper.log_error_bar < deeper.log_value - 40.0


def test_bottcher_log_tail_gates(lf2, law23, rademacher, pareto):
    with pytest.raises(NotBottcher):
        dev.bottcher_log_tail(lf2, rademacher, 8, 0.25)
    with pytest.raises(ValueError):
        dev.bottcher_log_tail(law23, pareto, 8, 0.25)
    with pytest.raises(ValueError):
        dev.bottcher_log_tail(law23, rademacher, 8, 0.0)
    bt = dev.bottcher_log_tail(law23, rademacher, 6, 1.5)
    assert bt.log_value == -math.inf


# ------------------------------------------------------------ epsilon families

def test_epsilon_family_power_classification():
    fam = dev.EpsilonFamily(form="power", c=2.0, rho=0.25)
    assert fam.vanishes() and fam.sq_blows_up()
    assert fam.value(8, 2.0) == 2.0 * 2.0 ** -2.0
    assert dev.EpsilonFamily(rho=0.0, kappa=-1.0).vanishes()
    assert not dev.EpsilonFamily(rho=0.0).vanishes()
    assert not dev.EpsilonFamily(rho=0.6).sq_blows_up()
    assert dev.EpsilonFamily(rho=0.5, kappa=1.0).sq_blows_up()
    assert not dev.EpsilonFamily(rho=0.5).sq_blows_up()


def test_epsilon_family_crossover():
    fam = dev.EpsilonFamily(form="power", c=3.0, rho=0.4)
    assert fam.crossover_limit(0.5) == math.inf
    assert fam.crossover_limit(0.3) == 0.0
    assert fam.crossover_limit(0.4) == 3.0
    assert dev.EpsilonFamily(rho=0.4, kappa=-2.0).crossover_limit(0.4) == 0.0


def test_epsilon_family_bottcher_integer():
    fam = dev.EpsilonFamily(form="bottcher_integer", lam_frac=0.25)
    assert fam.lam(8) == 2
    assert fam.value(8, 2.5) == 2.5 ** -1.0
    assert fam.lam(9) == 3
    assert fam.vanishes() and fam.sq_blows_up()
    with pytest.raises(ValueError):
        fam.crossover_limit(0.4)


def test_epsilon_family_validation():
    with pytest.raises(ValueError):
        dev.EpsilonFamily(form="exotic")
    with pytest.raises(ValueError):
        dev.EpsilonFamily(form="power", c=0.0)


# ------------------------------------------------------------ predictions

def test_ddev_prediction_point_target(lf2, rademacher):
    exp = dev.DeviationExperiment(law=lf2, increments=rademacher,
                                  n_range=(8, 9, 10),
                                  epsilon=dev.EpsilonFamily(rho=0.25),
                                  regime="ddev")
    p = dev.predict_regime(exp)
    assert p.point_target
    assert abs(p.target_low - 0.5) < 1e-9
    assert "m^(alpha n)" in p.normalization


def test_v_condition_verdicts(lf2, law18):
    vc = limits.v_condition_check(lf2)
    assert vc.holds and abs(vc.v0 - 1.0) < 1e-9
    # {1:.2, 2:.8}: genuine spread 4.5e-6, five orders above iteration noise
    assert not limits.v_condition_check(law18).holds


def test_ddev_preconditions(law23, law18, rademacher, pareto):
    fam = dev.EpsilonFamily(rho=0.25)
    with pytest.raises(RegimePreconditionViolated):
        dev.predict_regime(dev.DeviationExperiment(
            law=law23, increments=rademacher, n_range=(8, 9, 10),
            epsilon=fam, regime="ddev"))
    # tail index 2.5 < 1 + alpha = 3.74: the (1+alpha)-moment flag fails
    with pytest.raises(RegimePreconditionViolated):
        dev.predict_regime(dev.DeviationExperiment(
            law=law18, increments=pareto, n_range=(8, 9, 10),
            epsilon=fam, regime="ddev"))
    lf = off.linear_fractional(2.0)
    for bad in (dev.EpsilonFamily(rho=0.0), dev.EpsilonFamily(rho=0.6)):
        with pytest.raises(RegimePreconditionViolated):
            dev.predict_regime(dev.DeviationExperiment(
                law=lf, increments=rademacher, n_range=(8, 9, 10),
                epsilon=bad, regime="ddev"))


def test_ldev_crossover_routing(law18, pareto):
    ns = (8, 9, 10)
    jump = dev.predict_regime(dev.DeviationExperiment(
        law=law18, increments=pareto, n_range=ns,
        epsilon=dev.EpsilonFamily(rho=0.25), regime="ldev_b"))
    assert jump.point_target
    a = pareto.tail_const
    assert abs(jump.target_low - a * I25_REF) < 1e-6
    assert abs(jump.constants["kappa"] - KAPPA_REF) < 1e-12
    # rho beyond the crossover belongs to ldev_a, not ldev_b
    with pytest.raises(RegimePreconditionViolated):
        dev.predict_regime(dev.DeviationExperiment(
            law=law18, increments=pareto, n_range=ns,
            epsilon=dev.EpsilonFamily(rho=0.45), regime="ldev_b"))
    with pytest.raises(RegimePreconditionViolated):
        dev.predict_regime(dev.DeviationExperiment(
            law=law18, increments=pareto, n_range=ns,
            epsilon=dev.EpsilonFamily(rho=0.25), regime="ldev_a"))


def test_ldev_c_mixed_bracket(law18, pareto):
    fam = dev.EpsilonFamily(rho=KAPPA_REF)
    exp = dev.DeviationExperiment(law=law18, increments=pareto,
                                  n_range=(8, 9, 10), epsilon=fam,
                                  regime="ldev_c", tau=1.0)
    p = dev.predict_regime(exp)
    assert not p.point_target
    assert abs(p.target_low - 2.4392759238768957) < 1e-6
    assert abs(p.target_high - 2.677787123794132) < 1e-6
    # the jump part is common to both edges; the spread is the V bracket
    g = p.constants["gamma_alpha"]
    vw = p.constants["v_upper"] - p.constants["v_lower"]
    assert abs((p.target_high - p.target_low) - vw * g) < 1e-12
    with pytest.raises(RegimePreconditionViolated):
        dev.predict_regime(dev.DeviationExperiment(
            law=law18, increments=pareto, n_range=(8, 9, 10),
            epsilon=fam, regime="ldev_c", tau=2.0))


def test_bottcher_prediction_bracket(law23, rademacher, pareto):
    fam = dev.EpsilonFamily(form="bottcher_integer", lam_frac=0.25)
    exp = dev.DeviationExperiment(law=law23, increments=rademacher,
                                  n_range=(8, 10, 12), epsilon=fam,
                                  regime="bottcher")
    p = dev.predict_regime(exp)
    assert abs(p.constants["big_l"] - L23_REF) < 1e-9
    assert abs(p.target_low - 2.0 * L23_REF) < 1e-8
    assert abs(p.target_high - L23_REF / 2.0) < 1e-8
    assert abs(p.constants["beta"] - math.log(2.0) / math.log(2.5)) < 1e-10
    lat = dev.predict_regime(dev.DeviationExperiment(
        law=law23, increments=rademacher, n_range=(8, 10, 12),
        epsilon=fam, regime="bottcher_lattice"))
    assert lat.point_target and lat.target_low == lat.target_high
    with pytest.raises(RegimePreconditionViolated):
        dev.predict_regime(dev.DeviationExperiment(
            law=law23, increments=pareto, n_range=(8, 10, 12),
            epsilon=fam, regime="bottcher"))


def test_ldev1_prediction(law23, pareto, rademacher):
    exp = dev.DeviationExperiment(law=law23, increments=pareto,
                                  n_range=(6, 7, 8),
                                  epsilon=dev.EpsilonFamily(rho=0.25),
                                  regime="ldev1")
    p = dev.predict_regime(exp)
    assert abs(p.target_low - 0.4023175304349574) < 1e-6
    assert abs(p.constants["i_theta"] - 1.1435320431714031) < 1e-6
    with pytest.raises(RegimePreconditionViolated):
        dev.predict_regime(dev.DeviationExperiment(
            law=law23, increments=rademacher, n_range=(6, 7, 8),
            epsilon=dev.EpsilonFamily(rho=0.25), regime="ldev1"))
    with pytest.raises(RegimePreconditionViolated):
        dev.predict_regime(dev.DeviationExperiment(
            law=law23, increments=pareto, n_range=(6, 7, 8),
            epsilon=dev.EpsilonFamily(rho=0.5), regime="ldev1"))


def test_experiment_validation(lf2, rademacher):
    fam = dev.EpsilonFamily(rho=0.25)
    with pytest.raises(ValueError):
        dev.DeviationExperiment(law=lf2, increments=rademacher,
                                n_range=(8, 9), epsilon=fam, regime="ddev")
    with pytest.raises(ValueError):
        dev.DeviationExperiment(law=lf2, increments=rademacher,
                                n_range=(9, 8, 10), epsilon=fam,
                                regime="ddev")
    with pytest.raises(ValueError):
        dev.DeviationExperiment(law=lf2, increments=rademacher,
                                n_range=(8, 9, 10), epsilon=fam,
                                regime="no_such")


# ------------------------------------------------------------ experiments

def test_bracket_distance():
    assert dev.bracket_distance(1.5, 1.0, 2.0) == 0.0
    assert abs(dev.bracket_distance(0.5, 1.0, 2.0) - 0.25) < 1e-15
    assert abs(dev.bracket_distance(3.0, 1.0, 2.0) - 0.5) < 1e-15


def test_run_experiment_ddev_smoke(lf2, rademacher):
    exp = dev.DeviationExperiment(law=lf2, increments=rademacher,
                                  n_range=(10, 11, 12),
                                  epsilon=dev.EpsilonFamily(rho=0.25),
                                  regime="ddev")
    res = dev.run_experiment(exp)
    assert res.trend_ok and res.final_ok and res.passed
    for row, ref in zip(res.rows, SMOKE_NORMS):
        assert abs(row.normalized_value - ref) < 1e-9
        assert row.error_bar < 1e-12
        assert row.target_low == res.prediction.target_low
    assert res.distances[-1] < 0.02


def test_experiment_csv_roundtrip(tmp_path, lf2, rademacher):
    exp = dev.DeviationExperiment(law=lf2, increments=rademacher,
                                  n_range=(6, 7, 8),
                                  epsilon=dev.EpsilonFamily(rho=0.25),
                                  regime="ddev")
    res = dev.run_experiment(exp)
    p = tmp_path / "rows.csv"
    dev.write_experiment_csv(res, p)
    with open(p, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["n", "epsilon", "raw_probability", "log_probability",
                       "error_bar", "normalized_value", "target_low",
                       "target_high"]
    assert len(rows) == 4
    assert int(rows[1][0]) == 6
    got = float(rows[3][5])
    assert abs(got - res.rows[2].normalized_value) < 1e-14
    assert abs(float(rows[1][3]) - math.log(float(rows[1][2]))) < 1e-12

    j = tmp_path / "rows.json"
    dev.write_experiment_json(res, j)
    with open(j) as fh:
        d = json.load(fh)
    assert d["regime"] == "ddev"
    assert d["passed"] == res.passed
    assert len(d["rows"]) == 3


def test_run_experiment_bottcher_bracket(law23, rademacher):
    exp = dev.DeviationExperiment(
        law=law23, increments=rademacher, n_range=(8, 9, 10),
        epsilon=dev.EpsilonFamily(form="bottcher_integer", lam_frac=0.25),
        regime="bottcher", final_tolerance=0.35)
    res = dev.run_experiment(exp)
    assert res.passed
    norms = [r.normalized_value for r in res.rows]
    for got, ref in zip(norms, (-0.9309858814, -0.9192706322,
                                -0.9028408825)):
        assert abs(got - ref) < 1e-8
    assert res.distances == (0.0, 0.0, 0.0)
    assert res.rows[0].target_low == pytest.approx(2.0 * L23_REF)
    assert res.rows[0].target_high == pytest.approx(L23_REF / 2.0)
    assert math.isfinite(res.rows[-1].log_probability)


def test_run_experiment_bottcher_lattice_trend(law23, rademacher):
    exp = dev.DeviationExperiment(
        law=law23, increments=rademacher, n_range=(8, 9, 10),
        epsilon=dev.EpsilonFamily(form="bottcher_integer", lam_frac=0.25),
        regime="bottcher_lattice", final_tolerance=0.35)
    res = dev.run_experiment(exp)
    assert res.prediction.point_target
    assert res.prediction.target_low == pytest.approx(L23_REF)
    d = res.distances
    assert d[0] > d[1] > d[2]
    assert res.passed


# ------------------------------------------------------------ normal zone

def test_normal_cdf_exponential_closed_form(lf2):
    w = lambda u: math.exp(-u)
    v1 = dev.normal_deviation_cdf(lf2, 1.0, 1.0, w_fn=w)
    assert abs(v1.value - (1.0 + 1.0 / math.sqrt(3.0)) / 2.0) < 1e-9
    v0 = dev.normal_deviation_cdf(lf2, 1.0, 0.0, w_fn=w)
    assert abs(v0.value - 0.5) < 1e-12
    vm = dev.normal_deviation_cdf(lf2, 1.0, -1.0, w_fn=w)
    assert abs(v1.value + vm.value - 1.0) < 1e-9
    vb = dev.normal_deviation_cdf(lf2, 1.0, 40.0, w_fn=w)
    assert vb.value > 0.999


def test_normal_cdf_grid_route(lf2):
    got = dev.normal_deviation_cdf(lf2, 1.0, 1.0)
    target = (1.0 + 1.0 / math.sqrt(3.0)) / 2.0
    assert abs(got.value - target) <= got.error_estimate + 2e-3
    assert got.error_estimate < 0.02
