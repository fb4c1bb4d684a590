"""Fused numerical kernels for master-equation and trajectory stepping.

States are dense complex (dim, dim) arrays viewed as (n_a, n_b, n_a, n_b)
tensors; every operator application exploits the Kronecker shift structure of
the two-mode ladder operators instead of materializing superoperator
matrices.  The generator implemented by :func:`l_apply` is

    d rho/dt = -i[H, rho] + kappa_dec * (decay part of D[a]) + kappa_rec * a rho a'
               + gamma (n_ph+1) D[b] + gamma n_ph D[b']

with H = -delta_eff a'a + omega b'b - g0 a'a (b'+b) + alpha (a'+a) + mu b + mu* b'.

Splitting the cavity decay (kappa_dec) from the recycling coefficient
(kappa_rec) lets the same kernel realize the full Liouvillian
(kappa_rec = kappa) and the photon-counting no-jump generator
(kappa_rec = (1-eta) kappa).  The mu drive and the delta_eff shift carry the
displaced-frame corrections when trajectories run in a frame displaced by a
mechanical amplitude beta: mu = beta* (omega + i gamma_total/2) and
delta_eff = delta + 2 g0 Re beta.

All kernels are deterministic (no fastmath) so identical inputs reproduce
bit-identical trajectories.
"""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = [
    "l_apply",
    "implicit_solve",
    "quad_apply",
    "commutator_displace",
    "frame_mu",
]


def frame_mu(beta: complex, omega: float, gamma: float) -> complex:
    """Linear mechanical drive induced by displacing b -> b + beta.

    Collects the Hamiltonian term Omega(beta* b + beta b') and the
    displacement correction of the thermal dissipators, which together give
    H += mu b + mu* b' with mu = beta* (omega + i gamma/2).
    """
    return np.conj(beta) * (omega + 0.5j * gamma)


@njit(cache=True)
def l_apply(rho, out, sa, sb, delta_eff, omega, g0, alpha,
            kappa_dec, kappa_rec, gp, gm, mu):
    """out <- generator applied to rho; both shaped (n_a, n_b, n_a, n_b).

    sa[k] = sqrt(k) up to n_a, sb[k] = sqrt(k) up to n_b; gp = gamma*(n_ph+1),
    gm = gamma*n_ph.
    """
    na, nb = rho.shape[0], rho.shape[1]
    for ka in range(na):
        for kb in range(nb):
            # truncated b b' has a vanishing last diagonal entry (the raising
            # operator annihilates the top truncated level); using it keeps
            # the generator exactly trace-free on the truncation
            bbk = kb + 1.0 if kb + 1 < nb else 0.0
            for ja in range(na):
                for jb in range(nb):
                    bbj = jb + 1.0 if jb + 1 < nb else 0.0
                    r = rho[ka, kb, ja, jb]
                    v = (-1j * (-delta_eff * (ka - ja) + omega * (kb - jb))
                         - 0.5 * kappa_dec * (ka + ja)
                         - 0.5 * gp * (kb + jb)
                         - 0.5 * gm * (bbk + bbj)) * r
                    # -i [H_offdiag, rho]; cavity-mechanics coupling first
                    if kb + 1 < nb:
                        v += 1j * g0 * ka * sb[kb + 1] * rho[ka, kb + 1, ja, jb]
                    if kb > 0:
                        v += 1j * g0 * ka * sb[kb] * rho[ka, kb - 1, ja, jb]
                    if jb + 1 < nb:
                        v += -1j * g0 * ja * sb[jb + 1] * rho[ka, kb, ja, jb + 1]
                    if jb > 0:
                        v += -1j * g0 * ja * sb[jb] * rho[ka, kb, ja, jb - 1]
                    # cavity drive alpha (a' + a)
                    if ka + 1 < na:
                        v += -1j * alpha * sa[ka + 1] * rho[ka + 1, kb, ja, jb]
                    if ka > 0:
                        v += -1j * alpha * sa[ka] * rho[ka - 1, kb, ja, jb]
                    if ja + 1 < na:
                        v += 1j * alpha * sa[ja + 1] * rho[ka, kb, ja + 1, jb]
                    if ja > 0:
                        v += 1j * alpha * sa[ja] * rho[ka, kb, ja - 1, jb]
                    # displaced-frame drive mu b + mu* b'
                    if mu != 0.0:
                        if kb + 1 < nb:
                            v += -1j * mu * sb[kb + 1] * rho[ka, kb + 1, ja, jb]
                        if kb > 0:
                            v += -1j * np.conj(mu) * sb[kb] * rho[ka, kb - 1, ja, jb]
                        if jb > 0:
                            v += 1j * mu * sb[jb] * rho[ka, kb, ja, jb - 1]
                        if jb + 1 < nb:
                            v += 1j * np.conj(mu) * sb[jb + 1] * rho[ka, kb, ja, jb + 1]
                    # recycling terms
                    if ka + 1 < na and ja + 1 < na:
                        v += kappa_rec * sa[ka + 1] * sa[ja + 1] * rho[ka + 1, kb, ja + 1, jb]
                    if kb + 1 < nb and jb + 1 < nb:
                        v += gp * sb[kb + 1] * sb[jb + 1] * rho[ka, kb + 1, ja, jb + 1]
                    if gm != 0.0 and kb > 0 and jb > 0:
                        v += gm * sb[kb] * sb[jb] * rho[ka, kb - 1, ja, jb - 1]
                    out[ka, kb, ja, jb] = v


@njit(cache=True)
def implicit_solve(rhs, y, tmp, minv, sa, sb, delta_eff, omega, g0, alpha,
                   kappa_dec, kappa_rec, gp, gm, mu, h, tol, maxit):
    """Solve (1 - h*L) y = rhs by preconditioned Richardson iteration.

    h may be complex (Cayley/Pade stages use complex shifts).  minv holds the
    elementwise inverse of (1 - h*L_diagonal); y enters holding the initial
    guess.  Returns the iteration count, or -1 if tol was not reached within
    maxit (callers treat that as a step failure).
    """
    na, nb = rhs.shape[0], rhs.shape[1]
    nrhs = 0.0
    for ka in range(na):
        for kb in range(nb):
            for ja in range(na):
                for jb in range(nb):
                    x = rhs[ka, kb, ja, jb]
                    nrhs += x.real * x.real + x.imag * x.imag
    thresh = tol * tol * nrhs
    for it in range(maxit):
        l_apply(y, tmp, sa, sb, delta_eff, omega, g0, alpha,
                kappa_dec, kappa_rec, gp, gm, mu)
        rn = 0.0
        for ka in range(na):
            for kb in range(nb):
                for ja in range(na):
                    for jb in range(nb):
                        r = (rhs[ka, kb, ja, jb] - y[ka, kb, ja, jb]
                             + h * tmp[ka, kb, ja, jb])
                        rn += r.real * r.real + r.imag * r.imag
                        y[ka, kb, ja, jb] += minv[ka, kb, ja, jb] * r
        if rn <= thresh:
            return it + 1
    return -1


@njit(cache=True)
def quad_apply(rho, out, sa, phase):
    """out <- c rho + rho c' with c = phase * a (phase a unit-modulus complex)."""
    na, nb = rho.shape[0], rho.shape[1]
    pc = np.conj(phase)
    for ka in range(na):
        for kb in range(nb):
            for ja in range(na):
                for jb in range(nb):
                    v = 0.0 + 0.0j
                    if ka + 1 < na:
                        v += phase * sa[ka + 1] * rho[ka + 1, kb, ja, jb]
                    if ja + 1 < na:
                        v += pc * sa[ja + 1] * rho[ka, kb, ja + 1, jb]
                    out[ka, kb, ja, jb] = v


@njit(cache=True)
def commutator_displace(rho, out, sb, dbeta):
    """out <- [G, rho] with G = dbeta b' - dbeta* b (generator of displacement)."""
    na, nb = rho.shape[0], rho.shape[1]
    dc = np.conj(dbeta)
    for ka in range(na):
        for kb in range(nb):
            for ja in range(na):
                for jb in range(nb):
                    v = 0.0 + 0.0j
                    # G rho
                    if kb > 0:
                        v += dbeta * sb[kb] * rho[ka, kb - 1, ja, jb]
                    if kb + 1 < nb:
                        v -= dc * sb[kb + 1] * rho[ka, kb + 1, ja, jb]
                    # - rho G
                    if jb + 1 < nb:
                        v -= dbeta * sb[jb + 1] * rho[ka, kb, ja, jb + 1]
                    if jb > 0:
                        v += dc * sb[jb] * rho[ka, kb, ja, jb - 1]
                    out[ka, kb, ja, jb] = v
