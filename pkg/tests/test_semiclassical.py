"""Bessel-series damping landscape, limit-cycle location, relaxation rate."""

import math

import numpy as np
import pytest

from omlc.fock import SystemParams
from omlc.semiclassical import (
    SeriesConfig,
    damping_landscape,
    find_limit_cycles,
    gamma_ba,
    gamma_rel,
    h_n,
    offset_fixed_point,
)


def _params(**kw):
    base = dict(delta=0.36, omega=1.0, g0=0.36, alpha_laser=0.3,
                kappa=1.5, gamma=0.00125, n_ph=0.0)
    base.update(kw)
    return SystemParams(**base)


class TestHn:
    def test_resonant_floor(self):
        p = _params(delta=0.0)
        assert h_n(0, p, 0.0) == pytest.approx(p.kappa ** 2 / 4.0, abs=1e-15)

    def test_reference_value(self):
        # kappa^2/4 + delta^2 = 0.5625 + 0.1296
        assert h_n(0, _params(), 0.0) == pytest.approx(0.6921, abs=1e-10)

    def test_reflection_symmetry(self):
        p_plus = _params(delta=0.42)
        p_minus = _params(delta=-0.42)
        for n in range(-4, 5):
            assert h_n(n, p_plus, 0.0) == pytest.approx(h_n(-n, p_minus, 0.0), rel=1e-14)

    def test_strictly_positive(self):
        p = _params(delta=-2.0)
        assert all(h_n(n, p, 0.0) > 0 for n in range(-30, 31))


class TestGammaBA:
    def test_vanishes_without_drive(self):
        p = _params(alpha_laser=0.0)
        for r in (0.0, 0.3, 1.7, 4.0):
            assert gamma_ba(r, p) == 0.0

    def test_removable_singularity_at_zero(self):
        p = _params()
        limit = gamma_ba(0.0, p)
        near = gamma_ba(1e-6, p)
        # J_n J_{n+1} / r -> +1/2 (n=0), -1/2 (n=-1), else 0
        expected = p.kappa * p.g0 ** 2 * p.alpha_laser ** 2 * (
            1.0 / (h_n(0, p) * h_n(1, p)) - 1.0 / (h_n(-1, p) * h_n(0, p)))
        assert limit == pytest.approx(expected, rel=1e-12)
        assert near == pytest.approx(limit, rel=1e-5)

    def test_quadratic_scaling_in_drive_and_coupling(self):
        p1 = _params()
        p2 = _params(alpha_laser=0.6)   # doubled drive
        p3 = _params(g0=0.72)           # doubled coupling
        r = 1.9
        base = gamma_ba(r, p1, 0.1)
        # the drive enters only through the |alpha|^2 prefactor
        assert gamma_ba(r, p2, 0.1) == pytest.approx(4.0 * base, rel=1e-12)
        # g0^2 scaling is exact at zero offset (g0 also shifts the effective
        # detuning inside h_n whenever Re beta_bar != 0)
        base0 = gamma_ba(r, p1, 0.0)
        assert gamma_ba(r, p3, 0.0) == pytest.approx(4.0 * base0, rel=1e-12)

    def test_series_converged_under_doubling(self):
        p = _params()
        for r in (0.5, 2.304, 5.0):
            a = gamma_ba(r, p, 0.2, SeriesConfig(n_max=40))
            b = gamma_ba(r, p, 0.2, SeriesConfig(n_max=80))
            assert a == pytest.approx(b, rel=1e-10)


class TestGammaRel:
    def test_reduces_to_mechanical_damping_without_drive(self):
        p = _params(alpha_laser=0.0, gamma=0.004)
        assert gamma_rel(1.3, p) == pytest.approx(0.004, abs=1e-15)

    def test_derivative_identity(self):
        # gamma_rel - gamma = d/dr [ r * gamma_ba(r) ] at fixed beta_bar
        p = _params()
        beta = 0.15
        step = 1e-5
        for r in (0.9, 2.304, 3.7):
            lhs = gamma_rel(r, p, beta) - p.gamma
            up = (r + step) * gamma_ba(r + step, p, beta)
            dn = (r - step) * gamma_ba(r - step, p, beta)
            assert lhs == pytest.approx((up - dn) / (2 * step), rel=1e-6)


class TestOffset:
    def test_no_coupling_no_offset(self):
        assert offset_fixed_point(1.0, _params(g0=0.0)) == 0.0

    def test_static_displacement_is_positive(self):
        beta = offset_fixed_point(2.3, _params())
        assert beta.real > 0.0

    def test_fixed_point_is_self_consistent(self):
        p = _params()
        r = 2.304
        beta = offset_fixed_point(r, p)
        # re-running from the converged value must not move it
        assert offset_fixed_point(r, p) == pytest.approx(beta, abs=1e-10)


class TestLimitCycles:
    def test_reference_amplitude(self):
        sols = find_limit_cycles(_params(), 12.0)
        stable = [s for s in sols if s.stable]
        assert len(stable) == 1
        assert stable[0].b_ss == pytest.approx(3.2, abs=0.1)

    def test_amplitude_consistent_with_r(self):
        p = _params()
        for s in find_limit_cycles(p, 12.0):
            assert s.b_ss == pytest.approx(s.r * p.omega / (2 * p.g0), rel=1e-12)

    def test_roots_balance_damping(self):
        p = _params()
        for s in find_limit_cycles(p, 12.0):
            assert abs(s.gamma_ba + p.gamma) < 1e-8

    def test_stability_flag_matches_slope(self):
        p = _params()
        for s in find_limit_cycles(p, 12.0):
            step = 1e-4
            beta = s.beta_bar_ss
            slope = (gamma_ba(s.r + step, p, beta) - gamma_ba(s.r - step, p, beta)) / (2 * step)
            assert s.stable == (slope > 0)

    def test_relaxation_time_is_inverse_rate(self):
        for s in find_limit_cycles(_params(), 12.0):
            if s.stable:
                assert s.t_rel == pytest.approx(1.0 / s.gamma_rel, rel=1e-12)

    def test_overdamped_mechanics_has_no_cycle(self):
        assert find_limit_cycles(_params(gamma=10.0), 12.0) == []

    def test_undamped_mechanics_roots_at_zero_crossings(self):
        p = _params(gamma=0.0)
        sols = find_limit_cycles(p, 12.0)
        assert len(sols) >= 1
        for s in sols:
            assert abs(s.gamma_ba) < 1e-8


class TestLandscape:
    def test_table_shape_and_content(self):
        p = _params()
        r_values = np.linspace(0.0, 6.0, 25)
        rows = damping_landscape(p, r_values)
        assert len(rows) == 25
        for (r, ba, rel), r_in in zip(rows, r_values):
            assert r == pytest.approx(r_in)
            assert np.isfinite(ba) and np.isfinite(rel)

    def test_matches_pointwise_evaluation(self):
        p = _params()
        rows = damping_landscape(p, [1.1], self_consistent=False)
        assert rows[0][1] == pytest.approx(gamma_ba(1.1, p, 0.0), rel=1e-12)
