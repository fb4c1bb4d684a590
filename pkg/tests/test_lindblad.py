"""Master-equation generator, steady states, deterministic evolution."""

import math

import numpy as np
import pytest

from conftest import random_density
from omlc.fock import (
    SystemParams,
    build_hamiltonian,
    build_space,
    cavity_destroy,
    coherent_state,
    dissipator_apply,
    fock_state,
    mech_destroy,
    mech_number_moments,
    partial_trace_cavity,
    thermal_state,
)
from omlc.lindblad import (
    SteadyStateError,
    build_liouvillian,
    evolve,
    steady_metrics,
    steady_state,
)


def _params(**kw):
    base = dict(delta=0.36, omega=1.0, g0=0.36, alpha_laser=0.3,
                kappa=1.5, gamma=0.00125, n_ph=0.0)
    base.update(kw)
    return SystemParams(**base)


def _reference_generator(space, params, rho):
    """Definition-level master equation for cross-checking the fused kernels."""
    h = build_hamiltonian(space, params).toarray()
    a = cavity_destroy(space).toarray()
    b = mech_destroy(space).toarray()
    out = -1j * (h @ rho - rho @ h)
    out += params.kappa * dissipator_apply(a, rho)
    out += (params.n_ph + 1.0) * params.gamma * dissipator_apply(b, rho)
    out += params.n_ph * params.gamma * dissipator_apply(b.conj().T, rho)
    return out


class TestGenerator:
    @pytest.mark.parametrize("kw", [
        {},
        {"n_ph": 0.7, "gamma": 0.02},
        {"delta": -0.4, "alpha_laser": 0.8},
        {"g0": 0.0, "alpha_laser": 0.0},
    ])
    def test_matches_definition(self, rng, kw):
        space = build_space(3, 5)
        params = _params(**kw)
        liou = build_liouvillian(space, params)
        for _ in range(20):
            rho = random_density(space.dim, rng)
            want = _reference_generator(space, params, rho)
            got = liou.apply(rho)
            assert np.abs(got - want).max() < 1e-12

    def test_trace_free(self, rng):
        space = build_space(3, 4)
        liou = build_liouvillian(space, _params(n_ph=0.3, gamma=0.05))
        for _ in range(10):
            rho = random_density(space.dim, rng)
            assert abs(np.trace(liou.apply(rho))) < 1e-12 * max(1.0, np.linalg.norm(rho))

    def test_matrix_and_matrix_free_agree(self, rng):
        space = build_space(3, 4)
        liou = build_liouvillian(space, _params(n_ph=0.4, gamma=0.01))
        mat = liou.to_matrix()
        rho = random_density(space.dim, rng)
        got = (mat @ rho.reshape(-1)).reshape(space.dim, space.dim)
        assert np.abs(got - liou.apply(rho)).max() < 1e-12

    def test_undriven_undamped_mechanics_reduces_to_cavity_decay(self, rng):
        space = build_space(3, 4)
        params = _params(g0=0.0, alpha_laser=0.0, delta=0.5, gamma=0.0, omega=1.0)
        liou = build_liouvillian(space, params)
        h = build_hamiltonian(space, params).toarray()
        a = cavity_destroy(space).toarray()
        rho = random_density(space.dim, rng)
        want = -1j * (h @ rho - rho @ h) + params.kappa * dissipator_apply(a, rho)
        assert np.abs(liou.apply(rho) - want).max() < 1e-12

    @pytest.mark.slow
    def test_spectrum_is_contractive(self):
        space = build_space(4, 8)
        liou = build_liouvillian(space, _params(n_ph=0.2, gamma=0.04))
        ev = np.linalg.eigvals(liou.to_matrix().toarray())
        scale = float(np.abs(ev).max())
        assert ev.real.max() <= 1e-10 * scale


class TestSteadyState:
    def test_thermal_detailed_balance(self):
        # n_b large enough that the truncated geometric tail is below the
        # tolerance (0.6^40 ~ 1e-9)
        space = build_space(2, 40)
        params = _params(g0=0.0, alpha_laser=0.0, gamma=0.05, n_ph=1.5)
        rho = steady_state(build_liouvillian(space, params))
        n1, _ = mech_number_moments(space, rho)
        assert n1 == pytest.approx(1.5, abs=1e-6)

    def test_driven_cavity_coherent_amplitude(self):
        space = build_space(12, 2)
        params = _params(g0=0.0, alpha_laser=0.4, delta=0.3, kappa=0.8,
                         gamma=0.05, n_ph=0.0)
        liou = build_liouvillian(space, params)
        rho = steady_state(liou)
        a = cavity_destroy(space).toarray()
        amp = abs(np.trace(a @ rho))
        expected = params.alpha_laser / math.sqrt(params.kappa ** 2 / 4 + params.delta ** 2)
        assert amp == pytest.approx(expected, rel=1e-6)

    def test_residual_certificate(self):
        space = build_space(3, 10)
        liou = build_liouvillian(space, _params())
        rho = steady_state(liou)
        resid = float(np.linalg.norm(liou.apply(rho))) / liou.norm_bound()
        assert resid < 1e-10
        assert abs(np.trace(rho) - 1.0) < 1e-12
        assert np.abs(rho - rho.conj().T).max() < 1e-12

    def test_undamped_cavity_rejected(self):
        space = build_space(2, 2)
        with pytest.raises(ValueError, match="kappa"):
            SystemParams(delta=0.0, omega=1.0, g0=0.1, alpha_laser=0.1,
                         kappa=0.0, gamma=0.0, n_ph=0.0)

    def test_non_unique_steady_state_reported(self):
        # undamped, undriven mechanics: every mechanical number state is
        # stationary, so the nullspace is degenerate
        space = build_space(2, 3)
        params = _params(g0=0.0, alpha_laser=0.0, gamma=0.0, n_ph=0.0)
        liou = build_liouvillian(space, params)
        with pytest.raises(SteadyStateError) as err:
            steady_state(liou)
        assert err.value.nullspace_dimension is None or err.value.nullspace_dimension > 1


class TestEvolve:
    def test_stationary_input_stays_fixed(self):
        space = build_space(3, 4)
        params = _params(g0=0.0, alpha_laser=0.0, delta=0.2, gamma=0.0)
        liou = build_liouvillian(space, params)
        rho0 = np.kron(fock_state(3, 0), np.diag([0.5, 0.3, 0.2, 0.0]).astype(complex))
        assert np.abs(liou.apply(rho0)).max() < 1e-14
        rho = evolve(liou, rho0, 3.0)
        assert np.abs(rho - rho0).max() < 1e-12

    def test_second_order_convergence(self):
        space = build_space(3, 6)
        liou = build_liouvillian(space, _params(gamma=0.05, n_ph=0.1))
        rho0 = np.kron(coherent_state(3, 0.6), thermal_state(6, 0.4))
        t = 1.5
        fine = evolve(liou, rho0, t, dt=t / 400, hermitize_every=0)
        err = [np.linalg.norm(evolve(liou, rho0, t, dt=t / n, hermitize_every=0) - fine)
               for n in (25, 50, 100)]
        assert err[0] / err[1] > 3.3
        assert err[1] / err[2] > 3.3

    def test_relaxes_to_steady_state(self):
        space = build_space(2, 10)
        params = _params(g0=0.0, alpha_laser=0.0, gamma=0.4, n_ph=0.8)
        liou = build_liouvillian(space, params)
        rho_ss = steady_state(liou)
        rho0 = np.kron(fock_state(2, 0), fock_state(10, 4))
        rho = evolve(liou, rho0, 60.0)
        # trace distance = half the nuclear norm of the difference
        dist = 0.5 * np.abs(np.linalg.eigvalsh(rho - rho_ss)).sum()
        assert dist < 1e-6

    def test_trace_and_hermiticity_drift(self):
        space = build_space(3, 6)
        liou = build_liouvillian(space, _params())
        rho0 = np.kron(fock_state(3, 0), coherent_state(6, 1.0))
        rho = evolve(liou, rho0, 10.0, hermitize_every=0)
        assert abs(np.trace(rho) - 1.0) < 1e-8
        assert np.abs(rho - rho.conj().T).max() < 1e-8

    def test_observer_sampling(self):
        space = build_space(2, 4)
        liou = build_liouvillian(space, _params(g0=0.0, alpha_laser=0.0, gamma=0.1))
        seen = []
        rho0 = np.kron(fock_state(2, 0), thermal_state(4, 0.3))
        evolve(liou, rho0, 1.0, dt=0.1, sample_every=5,
               observer=lambda i, t, r: seen.append((i, t)))
        assert [i for i, _ in seen] == [5, 10]


class TestSteadyMetrics:
    def test_thermal_decoupled(self):
        space = build_space(2, 40)
        params = _params(g0=0.0, alpha_laser=0.0, gamma=0.05, n_ph=1.0)
        liou = build_liouvillian(space, params)
        rho = np.kron(fock_state(2, 0), thermal_state(40, 1.0))
        met = steady_metrics(liou, rho)
        assert met.n_ss == pytest.approx(1.0, abs=1e-9)
        assert met.f_ss == pytest.approx(2.0, abs=1e-8)
        # the bath's own stationary state: residual only from truncation
        assert met.residual < 1e-10

    def test_pure_state_entropy(self):
        space = build_space(2, 12)
        liou = build_liouvillian(space, _params())
        rho = np.kron(fock_state(2, 0), coherent_state(12, 1.2))
        met = steady_metrics(liou, rho)
        assert met.s_ss == pytest.approx(0.0, abs=1e-8)
        assert met.residual > 0.0
