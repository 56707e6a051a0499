"""Lattice distribution engine.

Independent oracles used below, computed before any engine call:

* linear_fractional(2): P(Z_n = k) = 2^-n (1 - 2^-n)^(k-1), k >= 1.
* {1:.5, 2:.5} at n = 2, by hand: P(1) = 1/4, P(2) = 3/8, P(3) = 1/4,
  P(4) = 1/8.
* {2:.5, 3:.5}: P(Z_n = 2^n) = (1/2)^(2^n - 1), since the minimal tree has
  2^n - 1 internal binary nodes.
* brute-force polynomial composition via numpy.polynomial for a 3-atom law.
"""

import math

import numpy as np
import pytest
from numpy.polynomial import polynomial as P

from gwdeviations import distengine as de
from gwdeviations.errors import NotBottcher, SpanMismatch, SupportOverflow
from gwdeviations.offspring import explicit, linear_fractional, two_point


def lf2_pmf(n, k):
    mn = 2.0 ** n
    return (1.0 / mn) * (1.0 - 1.0 / mn) ** (k - 1)


def compose_pgf_bruteforce(coeffs, n):
    """Coefficient array of f_n by repeated polynomial composition (Horner
    with polynomial arithmetic)."""
    cur = np.array([0.0, 1.0])
    for _ in range(n):
        acc = np.array([coeffs[-1]])
        for c in coeffs[-2::-1]:
            acc = P.polyadd(P.polymul(acc, cur), [c])
        cur = acc
    return cur


class TestProbVector:
    def test_accessors(self):
        pv = de.ProbVector(offset=3, masses=np.array([0.2, 0.3, 0.5]), span=2)
        assert pv.support_min == 3
        assert pv.support_max == 7
        assert list(pv.values()) == [3, 5, 7]
        assert pv.mass_at(5) == 0.3
        assert pv.mass_at(4) == 0.0
        assert pv.mass_at(9) == 0.0
        assert abs(pv.cdf_at(5) - 0.5) < 1e-15
        assert abs(pv.ccdf_at(5) - 0.8) < 1e-15
        assert abs(pv.ccdf_at(6) - 0.5) < 1e-15
        assert abs(pv.ccdf_at(99) - 0.0) < 1e-15
        assert abs(pv.ccdf_at(-1) - 1.0) < 1e-15
        pv.check()

    def test_span_validation(self):
        with pytest.raises(SpanMismatch):
            de.ProbVector(offset=0, masses=np.array([1.0]), span=0)

    def test_check_detects_deficit(self):
        pv = de.ProbVector(offset=0, masses=np.array([0.4, 0.4]))
        with pytest.raises(ValueError):
            pv.check()


class TestConvolve:
    def test_hand_example(self):
        a = de.ProbVector(offset=1, masses=np.array([0.5, 0.5]))
        b = de.ProbVector(offset=2, masses=np.array([0.25, 0.75]))
        c = de.convolve(a, b)
        assert c.offset == 3
        np.testing.assert_allclose(c.masses, [0.125, 0.5, 0.375], atol=1e-15)

    def test_span_mismatch(self):
        a = de.ProbVector(offset=0, masses=np.array([1.0]), span=1)
        b = de.ProbVector(offset=0, masses=np.array([1.0]), span=2)
        with pytest.raises(SpanMismatch):
            de.convolve(a, b)

    def test_fft_matches_direct(self):
        rng = np.random.default_rng(7)
        x = rng.random(2000)
        x /= x.sum()
        y = rng.random(1500)
        y /= y.sum()
        a = de.ProbVector(offset=0, masses=x)
        b = de.ProbVector(offset=5, masses=y)
        got = de.convolve(a, b)          # large: FFT path
        want = np.convolve(x, y)
        np.testing.assert_allclose(got.masses, want, atol=1e-13)
        assert abs(got.total_mass - 1.0) < 1e-12
        assert got.clip_register < 1e-12

    def test_mass_conservation_with_deficits(self):
        a = de.ProbVector(offset=0, masses=np.array([0.5, 0.4]),
                          truncated_mass=0.1)
        b = de.ProbVector(offset=0, masses=np.array([0.7, 0.2]),
                          truncated_mass=0.1)
        c = de.convolve(a, b)
        c.check(tol=1e-12)

    def test_span_preserved(self):
        a = de.ProbVector(offset=-1, masses=np.array([0.5, 0.5]), span=2)
        c = de.convolve(a, a)
        assert c.offset == -2 and c.span == 2
        np.testing.assert_allclose(c.masses, [0.25, 0.5, 0.25], atol=1e-15)


class TestTrim:
    def test_trim_accounting(self):
        m = np.array([1e-18, 0.5, 0.5 - 2e-18, 1e-18])
        pv = de.ProbVector(offset=10, masses=m)
        out = de.trim(pv, 1e-15)
        assert out.offset == 11
        assert len(out.masses) == 2
        assert abs(out.truncated_mass - 2e-18) < 1e-30
        out.check()

    def test_trim_keeps_everything_when_tol_zero(self):
        pv = de.ProbVector(offset=0, masses=np.array([0.5, 0.5]))
        out = de.trim(pv, 0.0)
        assert len(out.masses) == 2


class TestGenerationPmf:
    def test_depth_zero_and_one(self):
        law = explicit({1: 0.5, 2: 0.5})
        z0 = de.generation_pmf(law, 0)
        assert z0.mass_at(1) == 1.0
        z1 = de.generation_pmf(law, 1)
        assert abs(z1.mass_at(1) - 0.5) < 1e-15
        assert abs(z1.mass_at(2) - 0.5) < 1e-15

    def test_depth_two_by_hand(self):
        law = explicit({1: 0.5, 2: 0.5})
        z2 = de.generation_pmf(law, 2)
        want = {1: 0.25, 2: 0.375, 3: 0.25, 4: 0.125}
        for k, p in want.items():
            assert abs(z2.mass_at(k) - p) < 1e-14

    def test_linear_fractional_closed_form(self):
        # spectral route: relative accuracy down to the FFT noise floor
        # (absolute, ~1e-16 * peak), absolute accuracy below it
        law = linear_fractional(2.0)
        for n in (3, 6):
            pv = de.generation_pmf(law, n)
            pv.check()
            ks = np.arange(1, pv.support_max + 1)
            want = lf2_pmf(n, ks)
            got = np.array([pv.mass_at(int(k)) for k in ks])
            np.testing.assert_allclose(got, want, atol=1e-14)
            big = want > 1e-10
            np.testing.assert_allclose(got[big], want[big], rtol=1e-6)

    def test_against_bruteforce_composition(self):
        law = explicit({0: 0.25, 1: 0.25, 2: 0.5})
        coeffs = law.dense()
        want = compose_pgf_bruteforce(coeffs, 4)
        pv = de.generation_pmf(law, 4)
        got = np.zeros(len(want))
        for i in range(len(want)):
            got[i] = pv.mass_at(i)
        np.testing.assert_allclose(got, want, atol=1e-14)

    def test_truncation_monotone(self):
        law = linear_fractional(2.0)
        prev = 0.0
        for n in range(1, 7):
            pv = de.generation_pmf(law, n)
            assert pv.truncated_mass >= prev - 1e-30
            prev = pv.truncated_mass

    def test_budget_guard(self):
        law = linear_fractional(2.0)
        with pytest.raises(SupportOverflow):
            de.generation_pmf(law, 14, max_len=1 << 10)


class TestWindowedPmf:
    def test_requires_bottcher(self):
        with pytest.raises(NotBottcher):
            de.generation_pmf(explicit({1: 0.5, 2: 0.5}), 3, window=100)

    def test_matches_spectral_on_full_window(self):
        law = two_point(2, 3, 0.5, 0.5)
        n = 6
        full = de.generation_pmf(law, n)
        w = de.generation_pmf(law, n, window=3 ** n - 2 ** n)
        assert w.offset == 2 ** n
        for k in range(2 ** n, 3 ** n + 1):
            assert abs(w.mass_at(k) - full.mass_at(k)) < 1e-13
        w.check()

    def test_minimal_tree_probability_deep(self):
        # P(Z_n = 2^n) = (1/2)^(2^n - 1): the all-binary tree
        law = two_point(2, 3, 0.5, 0.5)
        for n in (5, 8):
            w = de.generation_pmf(law, n, window=256)
            want = 0.5 ** (2 ** n - 1)
            got = w.mass_at(2 ** n)
            assert got > 0.0
            assert abs(got / want - 1.0) < 1e-12

    def test_window_mass_accounting(self):
        law = two_point(2, 3, 0.5, 0.5)
        w = de.generation_pmf(law, 7, window=500)
        assert abs(w.total_mass + w.truncated_mass - 1.0) < 1e-12


class TestTailOps:
    def test_lower_tail_and_harmonic(self):
        pv = de.ProbVector(offset=0, masses=np.array([0.1, 0.2, 0.3, 0.4]))
        assert abs(de.lower_tail(pv, 2) - 0.5) < 1e-15
        assert abs(de.lower_tail(pv, 2, include_zero=True) - 0.6) < 1e-15
        want = 0.2 + 0.3 / 2.0 + 0.4 / 3.0
        assert abs(de.harmonic_moment(pv, 1.0) - want) < 1e-15
        want2 = 0.2 + 0.3 / 4.0 + 0.4 / 9.0
        assert abs(de.harmonic_moment(pv, 2.0) - want2) < 1e-15


class TestExport:
    def test_csv_json_round(self, tmp_path):
        pv = de.ProbVector(offset=2, masses=np.array([0.25, 0.75]),
                           truncated_mass=0.0)
        cp = tmp_path / "pv.csv"
        jp = tmp_path / "pv.json"
        de.write_csv(pv, cp)
        de.write_json(pv, jp)
        lines = cp.read_text().strip().splitlines()
        assert lines[0] == "value,mass"
        assert lines[1] == "2,0.25"
        import json
        d = json.loads(jp.read_text())
        assert d["offset"] == 2 and d["masses"] == [0.25, 0.75]
