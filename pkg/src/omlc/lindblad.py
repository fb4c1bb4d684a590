"""Master-equation generator, steady state, and deterministic evolution.

The generator acts matrix-free through the fused kernels in
:mod:`omlc._kernels`; a sparse superoperator matrix is materialized only for
small dimensions (tests, direct solves, spectral diagnostics).

Steady-state strategy
---------------------
The superoperator with one row replaced by the trace constraint is a
nonsingular sparse system.  For Hilbert dimensions up to ``direct_dim_max``
it is solved by sparse LU.  Above that, LU fill-in explodes (the generator is
a four-index stencil), so the system is solved by diagonally preconditioned
GMRES with a restart length as long as memory allows: the spectrum is a
moderately conditioned bulk plus a handful of near-zero metastable outliers,
and short restarts lose exactly those outlier directions.  A physics-informed
seed (classical cavity amplitude times the semiclassical limit-cycle ring)
starts the iteration; every cycle is certificate-checked.  If the matrix
cannot even be assembled, a matrix-free relaxation march is the last resort.
The output is certified against the scaled-residual postcondition in every
path.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .fock import (
    SpaceDescriptor,
    SystemParams,
    check_density_matrix,
    mech_number_moments,
    thermal_state,
    von_neumann_entropy,
)
from .semiclassical import find_limit_cycles

logger = logging.getLogger(__name__)

__all__ = [
    "Liouvillian",
    "SteadyMetrics",
    "SteadyStateError",
    "build_liouvillian",
    "steady_state",
    "evolve",
    "steady_metrics",
]

#: largest Hilbert dimension for which the sparse-direct path is attempted
DIRECT_DIM_MAX = 150

#: largest Hilbert dimension for which a dense nullspace count is attempted
_NULLSPACE_DENSE_MAX = 64


class SteadyStateError(RuntimeError):
    """Raised when the steady state cannot be certified.

    Carries ``nullspace_dimension`` when a non-unique steady state was
    diagnosed (None when the dimension could not be determined).
    """

    def __init__(self, message: str, nullspace_dimension: int | None = None):
        super().__init__(message)
        self.nullspace_dimension = nullspace_dimension


class Liouvillian:
    """Matrix-free action of the master-equation generator.

    ``apply`` implements the nominal generator.  ``apply_into`` exposes the
    generalized form used by trajectory steppers: a frame-shifted detuning, a
    linear mechanical drive ``mu``, and a cavity recycling coefficient that
    may differ from the decay coefficient (photon-counting no-jump evolution
    keeps only the undetected fraction of the recycling term).
    """

    def __init__(self, space: SpaceDescriptor, params: SystemParams):
        self.space = space
        self.params = params
        self._sa = np.sqrt(np.arange(space.n_a + 1, dtype=float))
        self._sb = np.sqrt(np.arange(space.n_b + 1, dtype=float))
        self._gp = params.gamma * (params.n_ph + 1.0)
        self._gm = params.gamma * params.n_ph

    # -- core actions -----------------------------------------------------
    def apply_into(self, rho: np.ndarray, out: np.ndarray, *,
                   delta_eff: float | None = None, mu: complex = 0.0,
                   kappa_rec: float | None = None) -> None:
        """out <- generalized generator applied to rho (both (dim, dim))."""
        sd, p = self.space, self.params
        de = p.delta if delta_eff is None else delta_eff
        kr = p.kappa if kappa_rec is None else kappa_rec
        _kernels.l_apply(
            rho.reshape(sd.n_a, sd.n_b, sd.n_a, sd.n_b),
            out.reshape(sd.n_a, sd.n_b, sd.n_a, sd.n_b),
            self._sa, self._sb, de, p.omega, p.g0, p.alpha_laser,
            p.kappa, kr, self._gp, self._gm, complex(mu),
        )

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """Return the generator applied to a (dim, dim) density-like matrix."""
        out = np.empty_like(rho, dtype=np.complex128)
        self.apply_into(np.ascontiguousarray(rho, dtype=np.complex128), out)
        return out

    # -- structure --------------------------------------------------------
    def diagonal(self, *, delta_eff: float | None = None) -> np.ndarray:
        """Flat diagonal of the superoperator (basis: row-major vec of rho)."""
        sd, p = self.space, self.params
        de = p.delta if delta_eff is None else delta_eff
        ka = np.arange(sd.n_a)
        kb = np.arange(sd.n_b)
        bb = (kb + 1.0).astype(float)
        bb[-1] = 0.0  # truncated b b' (see kernel note)
        e = -de * ka[:, None] + p.omega * kb[None, :]
        g = (0.5 * p.kappa * ka[:, None]
             + 0.5 * self._gp * kb[None, :]
             + 0.5 * self._gm * bb[None, :])
        ef, gf = e.ravel(), g.ravel()
        return (-1j * (ef[:, None] - ef[None, :])
                - (gf[:, None] + gf[None, :])).ravel()

    def norm_bound(self) -> float:
        """Upper bound on the superoperator 2-norm (triangle inequality over
        the shift-structured terms); used to scale residual certificates."""
        sd, p = self.space, self.params
        na, nb = sd.n_a, sd.n_b
        sqa = math.sqrt(na - 1) if na > 1 else 0.0
        sqb = math.sqrt(nb - 1) if nb > 1 else 0.0
        bound = float(np.abs(self.diagonal()).max())
        bound += 4.0 * p.g0 * (na - 1) * sqb      # coupling, both sides
        bound += 4.0 * abs(p.alpha_laser) * sqa   # drive, both sides
        bound += p.kappa * (na - 1)               # cavity recycling
        bound += self._gp * (nb - 1) + self._gm * nb
        return bound

    def to_matrix(self) -> sp.csr_matrix:
        """Sparse superoperator on vec(rho) (row-major).  Memory-guarded."""
        sd, p = self.space, self.params
        na, nb = sd.n_a, sd.n_b
        d2 = (na * nb) ** 2
        # ~10 structural terms; COO build needs ~32 B/entry transiently
        if d2 * 10 * 32 > 3.5e9:
            raise MemoryError(
                f"superoperator matrix at dim {na * nb} needs more memory "
                "than available; use the matrix-free interface")
        sa, sb = self._sa, self._sb
        ia = sp.identity(na, format="csr")
        ib = sp.identity(nb, format="csr")
        a = sp.diags(sa[1:], 1, shape=(na, na), format="csr")
        b = sp.diags(sb[1:], 1, shape=(nb, nb), format="csr")
        am = sp.kron(a, ib, format="csr")
        bm = sp.kron(ia, b, format="csr")
        nam = am.conj().T @ am
        h = (-p.delta * nam + p.omega * (bm.conj().T @ bm)
             - p.g0 * nam @ (bm + bm.conj().T)
             + p.alpha_laser * (am + am.conj().T)).tocsr()
        dim = na * nb
        idm = sp.identity(dim, format="csr")

        def lr(left, right):
            return sp.kron(left, right.T, format="csr")

        sup = -1j * (lr(h, idm) - lr(idm, h))
        for rate, c in ((p.kappa, am), (self._gp, bm),
                        (self._gm, bm.conj().T)):
            if rate == 0.0:
                continue
            cd = c.conj().T.tocsr()
            cdc = (cd @ c).tocsr()
            sup = sup + rate * (lr(c, cd) - 0.5 * lr(cdc, idm)
                                - 0.5 * lr(idm, cdc))
        return sup.tocsr()


def build_liouvillian(space: SpaceDescriptor, params: SystemParams) -> Liouvillian:
    """Assemble the master-equation generator for the given truncation."""
    return Liouvillian(space, params)


# ---------------------------------------------------------------------------
# steady state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SteadyMetrics:
    """Unconditional steady-state figures and the certifying residual."""
    n_ss: float      #: mechanical occupation
    f_ss: float      #: mechanical Fano factor
    s_ss: float      #: von Neumann entropy (dimensionless, k_B units)
    residual: float  #: ||L rho_ss||_F, absolute


def steady_metrics(liou: Liouvillian, rho: np.ndarray) -> SteadyMetrics:
    n1, n2 = mech_number_moments(liou.space, rho)
    return SteadyMetrics(n_ss=n1, f_ss=(n2 - n1 * n1) / n1,
                         s_ss=von_neumann_entropy(rho),
                         residual=float(np.linalg.norm(liou.apply(rho))))


def _trace_flat(space: SpaceDescriptor, v: np.ndarray) -> complex:
    dim = space.dim
    return v.reshape(dim, dim).trace()


def _hermitize_unit_trace(space: SpaceDescriptor, rho: np.ndarray) -> np.ndarray:
    rho = 0.5 * (rho + rho.conj().T)
    return rho / rho.trace().real


def _physics_seed(space: SpaceDescriptor, params: SystemParams) -> np.ndarray:
    """Product seed: classical-amplitude coherent cavity x mechanical ring.

    The mechanical factor is the phase-averaged coherent ring at the
    semiclassical limit-cycle amplitude when one exists (a Poissonian
    diagonal), otherwise a thermal state at the bath occupation.
    """
    from .fock import coherent_amplitudes  # local to avoid cycle at import

    na, nb = space.n_a, space.n_b
    b_amp = 0.0
    try:
        sols = [s for s in find_limit_cycles(params) if s.stable]
        if sols:
            b_amp = max(s.b_ss for s in sols)
    except Exception:
        b_amp = 0.0
    if b_amp > 0.0:
        kb = np.arange(nb)
        log_p = kb * np.log(b_amp ** 2) - b_amp ** 2 - np.array(
            [math.lgamma(k + 1.0) for k in kb])
        pb = np.exp(log_p)
    else:
        pb = np.diag(thermal_state(nb, params.n_ph)).real.copy()
    pb = pb / pb.sum()
    denom = params.kappa ** 2 / 4.0 + params.delta ** 2
    amp = params.alpha_laser / math.sqrt(denom) if denom > 0 else 0.0
    ca = coherent_amplitudes(na, amp)
    rho_c = np.outer(ca, ca.conj())
    rho4 = np.zeros((na, nb, na, nb), dtype=np.complex128)
    for k in range(nb):
        rho4[:, k, :, k] = rho_c * pb[k]
    rho = rho4.reshape(na * nb, na * nb)
    return rho / rho.trace().real


def _nullspace_dimension_dense(liou: Liouvillian, tol: float) -> int:
    mat = liou.to_matrix().toarray()
    ev = np.linalg.eigvals(mat)
    scale = max(1.0, float(np.abs(ev).max()))
    return int(np.sum(np.abs(ev) <= tol * scale))


def _certify(liou: Liouvillian, rho: np.ndarray, tol: float) -> float:
    """Return the scaled residual ||L rho|| / ||L|| for trace-1 rho."""
    res = float(np.linalg.norm(liou.apply(rho)))
    return res / liou.norm_bound()


def _steady_direct(liou: Liouvillian, tol: float) -> np.ndarray:
    space = liou.space
    dim = space.dim
    mat = liou.to_matrix().tolil()
    weight = float(np.abs(liou.diagonal()).mean())
    if weight == 0.0:
        weight = 1.0
    trace_row = np.zeros(dim * dim, dtype=np.complex128)
    trace_row[:: dim + 1] = weight
    mat[0, :] = trace_row
    rhs = np.zeros(dim * dim, dtype=np.complex128)
    rhs[0] = weight
    try:
        lu = spla.splu(mat.tocsc())
        x = lu.solve(rhs)
    except RuntimeError as exc:  # singular factorization
        nd = None
        if dim <= _NULLSPACE_DENSE_MAX:
            nd = _nullspace_dimension_dense(liou, 1e-9)
        raise SteadyStateError(
            f"direct steady-state solve failed ({exc}); "
            f"nullspace dimension {nd if nd is not None else 'undetermined'}",
            nullspace_dimension=nd) from exc
    rho = _hermitize_unit_trace(space, x.reshape(dim, dim))
    resid = _certify(liou, rho, tol)
    if resid >= tol or not np.isfinite(resid):
        nd = None
        if dim <= _NULLSPACE_DENSE_MAX:
            nd = _nullspace_dimension_dense(liou, 1e-9)
        if nd is not None and nd > 1:
            raise SteadyStateError(
                f"steady state is not unique: nullspace dimension {nd}",
                nullspace_dimension=nd)
        raise SteadyStateError(
            f"steady-state residual {resid:.3e} exceeds tolerance {tol:.1e}",
            nullspace_dimension=nd)
    return rho


class _MarchWorkspace:
    """Implicit-midpoint relaxation toward the stationary state."""

    def __init__(self, liou: Liouvillian, dt: float):
        self.liou = liou
        self.h = 0.5 * dt
        dim = liou.space.dim
        self.minv = (1.0 / (1.0 - self.h * liou.diagonal())).reshape(dim, dim)
        self.tmp = np.empty((dim, dim), dtype=np.complex128)
        self.y = np.empty((dim, dim), dtype=np.complex128)
        self.rhs = np.empty((dim, dim), dtype=np.complex128)

    def step(self, rho: np.ndarray, tol: float = 1e-11, maxit: int = 200) -> np.ndarray:
        liou, sd = self.liou, self.liou.space
        liou.apply_into(rho, self.tmp)
        np.multiply(self.tmp, self.h, out=self.rhs)
        self.rhs += rho
        self.y[:] = self.rhs
        view = lambda m: m.reshape(sd.n_a, sd.n_b, sd.n_a, sd.n_b)
        p = liou.params
        its = _kernels.implicit_solve(
            view(self.rhs), view(self.y), view(self.tmp), view(self.minv),
            liou._sa, liou._sb, p.delta, p.omega, p.g0, p.alpha_laser,
            p.kappa, p.kappa, liou._gp, liou._gm, 0.0 + 0.0j,
            complex(self.h), tol, maxit)
        if its < 0:
            raise SteadyStateError(
                "implicit relaxation step failed to converge; "
                "the truncated generator may be too stiff at this dt")
        return self.y.copy()


def _trace_replaced_system(liou: Liouvillian):
    """Sparse trace-constrained system ``A x = b`` plus diagonal preconditioner.

    Row 0 of the assembled superoperator is replaced by ``w * trace(.)`` with
    a matching right side, pinning the nullspace direction; ``w`` is scaled to
    the mean diagonal magnitude so the replacement does not skew conditioning.
    """
    dim = liou.space.dim
    d2 = dim * dim
    mat = liou.to_matrix().tolil()
    weight = float(np.abs(liou.diagonal()).mean())
    if weight == 0.0:
        weight = 1.0
    trace_row = np.zeros(d2, dtype=np.complex128)
    trace_row[:: dim + 1] = weight
    mat[0, :] = trace_row
    rhs = np.zeros(d2, dtype=np.complex128)
    rhs[0] = weight
    pdiag = liou.diagonal().copy()
    pdiag[0] = weight
    small = np.abs(pdiag) < 1e-3
    pdiag[small] = 1e-3
    precond = sp.diags(1.0 / pdiag, format="csr")
    return mat.tocsr(), rhs, precond


#: memory budget for the Krylov basis of the long-recurrence solve (bytes)
_KRYLOV_BASIS_BYTES = 1.6e9


def _steady_gmres(liou: Liouvillian, tol: float, maxiter: int) -> np.ndarray:
    """Certified stationary state via long-recurrence GMRES on the assembled
    trace-constrained system.

    The spectrum of the generator at limit-cycle parameters has a handful of
    near-zero outliers (the metastable amplitude/phase relaxation ladder) in
    front of a moderately conditioned bulk.  Restarted Krylov iterations lose
    the slow outlier directions at each restart and stagnate, so the restart
    length here is made as long as the memory budget allows; each cycle is
    followed by hermitization and an exact residual certificate, and the best
    certified iterate wins.
    """
    space = liou.space
    dim = space.dim
    d2 = dim * dim
    A, rhs, precond = _trace_replaced_system(liou)
    restart = int(min(800, max(64, _KRYLOV_BASIS_BYTES / (16 * d2))))
    x = _physics_seed(space, liou.params).reshape(-1)
    best = None
    best_res = math.inf
    iters_done = 0
    while iters_done < maxiter:
        x, _ = spla.gmres(A, rhs, x0=x, M=precond,
                          restart=min(restart, maxiter - iters_done),
                          maxiter=1, rtol=1e-13, atol=1e-30)
        iters_done += restart
        cand = _hermitize_unit_trace(space, x.reshape(dim, dim))
        res = _certify(liou, cand, tol)
        improving = res < 0.75 * best_res
        if res < best_res:
            best, best_res = cand, res
        logger.debug("steady Krylov: %d iterations, scaled residual %.3e "
                     "(best %.3e)", iters_done, res, best_res)
        if best_res < tol:
            return best
        if not improving:
            break
        x = cand.reshape(-1)
    raise SteadyStateError(
        f"steady-state residual {best_res:.3e} exceeds tolerance {tol:.1e} "
        f"after {iters_done} Krylov iterations (restart length {restart}); "
        "the slow relaxation spectrum at this dimension limits the "
        "attainable certificate — relax tol to what the observable error "
        "budget requires, or reduce the truncation to diagnose "
        "non-uniqueness")


def _steady_marched(liou: Liouvillian, tol: float) -> np.ndarray:
    """Matrix-free fallback: implicit-midpoint relaxation, then certify.

    Used only when the superoperator is too large to assemble; the march
    damps everything except the slowest relaxation modes, so certification
    at tight tolerances may legitimately fail here.
    """
    space = liou.space
    dt = 2.0 * math.pi / 200.0
    t_total = max(20.0, 20.0 / liou.params.kappa)
    rho = _physics_seed(space, liou.params)
    ws = _MarchWorkspace(liou, dt)
    for step in range(max(1, int(round(t_total / dt)))):
        rho = ws.step(rho)
        if (step + 1) % 100 == 0:
            rho = _hermitize_unit_trace(space, rho)
    rho = _hermitize_unit_trace(space, rho)
    resid = _certify(liou, rho, tol)
    logger.debug("steady march fallback: scaled residual %.3e after %.0f "
                 "units", resid, t_total)
    if resid >= tol or not np.isfinite(resid):
        raise SteadyStateError(
            f"relaxation-march steady-state residual {resid:.3e} exceeds "
            f"tolerance {tol:.1e} (superoperator too large to assemble; "
            "matrix-free fallback cannot certify tight tolerances)")
    return rho


def _steady_iterative(liou: Liouvillian, tol: float, maxiter: int) -> np.ndarray:
    try:
        return _steady_gmres(liou, tol, maxiter)
    except MemoryError:
        return _steady_marched(liou, tol)


def steady_state(liou: Liouvillian, *, tol: float = 1e-10,
                 method: str = "auto", maxiter: int = 3200,
                 validate: bool = True) -> np.ndarray:
    """Stationary density matrix of the generator, residual-certified.

    Postconditions: ``||L rho|| < tol * ||L||`` (norm-bound scaled), unit
    trace, Hermitian.  Raises :class:`SteadyStateError` when certification
    fails, reporting the nullspace dimension when it can be determined.

    At large dimensions the slow metastable spectrum makes very tight
    certificates expensive; because slow modes contribute to the residual in
    proportion to their (tiny) eigenvalues, observable accuracy is typically
    far better than the certificate suggests.  Callers with a known error
    budget may pass a correspondingly relaxed ``tol``.
    """
    if liou.params.kappa <= 0.0:
        raise ValueError("steady_state requires a damped cavity (kappa > 0)")
    if method not in ("auto", "direct", "iterative"):
        raise ValueError(f"unknown steady-state method {method!r}")
    if method == "direct" or (method == "auto" and liou.space.dim <= DIRECT_DIM_MAX):
        rho = _steady_direct(liou, tol)
    else:
        rho = _steady_iterative(liou, tol, maxiter)
    if validate:
        check_density_matrix(rho)
    return rho


# ---------------------------------------------------------------------------
# deterministic evolution
# ---------------------------------------------------------------------------

def evolve(liou: Liouvillian, rho0: np.ndarray, t_final: float, *,
           dt: float = 2.0 * math.pi / 200.0,
           hermitize_every: int = 100,
           sample_every: int = 0,
           observer=None):
    """Propagate the master equation with the implicit-midpoint stepper.

    ``observer(step_index, t, rho)`` is invoked every ``sample_every`` steps
    (and at the final step) when provided.  Returns the final density matrix.
    The same implicit machinery drives the deterministic part of trajectory
    stepping, so dt conventions match.
    """
    if t_final < 0.0:
        raise ValueError("t_final must be nonnegative")
    space = liou.space
    rho = np.ascontiguousarray(rho0, dtype=np.complex128).copy()
    n_steps = int(round(t_final / dt))
    if n_steps == 0:
        if observer is not None:
            observer(0, 0.0, rho)
        return rho
    ws = _MarchWorkspace(liou, dt)
    for step in range(1, n_steps + 1):
        rho = ws.step(rho)
        if hermitize_every and step % hermitize_every == 0:
            rho = _hermitize_unit_trace(space, rho)
        if observer is not None and sample_every and (
                step % sample_every == 0 or step == n_steps):
            observer(step, step * dt, rho)
    return _hermitize_unit_trace(space, rho)
