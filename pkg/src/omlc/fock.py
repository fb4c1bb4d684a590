"""Truncated two-mode Fock space: operators, Hamiltonian, dissipators, state metrics.

The tensor-product basis is row-major with the cavity as the outer factor:
basis index ``i = k_a * n_b + k_b`` for cavity Fock level ``k_a`` and
mechanical Fock level ``k_b``.  All operators are scipy CSR matrices on that
basis; density matrices are dense complex arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = [
    "SpaceDescriptor",
    "SystemParams",
    "build_space",
    "destroy",
    "cavity_destroy",
    "mech_destroy",
    "build_hamiltonian",
    "dissipator_apply",
    "expect",
    "mech_number_moments",
    "fano",
    "von_neumann_entropy",
    "partial_trace_mech",
    "partial_trace_cavity",
    "truncation_tail",
    "check_density_matrix",
    "fock_state",
    "coherent_amplitudes",
    "coherent_state",
    "thermal_state",
    "displacement_matrix",
]

ENTROPY_EIGENVALUE_FLOOR = 1e-12


@dataclass(frozen=True)
class SpaceDescriptor:
    """Dimensions of the truncated cavity (x) mechanics product space."""

    n_a: int
    n_b: int

    def __post_init__(self):
        if self.n_a < 2 or self.n_b < 2:
            raise ValueError(
                f"truncation dimensions must be >= 2, got ({self.n_a}, {self.n_b})"
            )

    @property
    def dim(self) -> int:
        return self.n_a * self.n_b

    def index(self, fock_a: int, fock_b: int) -> int:
        """Basis index of |fock_a, fock_b> (cavity outer, row-major)."""
        if not (0 <= fock_a < self.n_a and 0 <= fock_b < self.n_b):
            raise IndexError(f"Fock labels ({fock_a}, {fock_b}) outside truncation")
        return fock_a * self.n_b + fock_b

    def labels(self, index: int) -> tuple[int, int]:
        """Inverse of :meth:`index`."""
        if not 0 <= index < self.dim:
            raise IndexError(f"basis index {index} outside space of dim {self.dim}")
        return divmod(index, self.n_b)


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of the driven optomechanical system.

    All rates and frequencies are in the same units (the CLI uses units of the
    mechanical frequency).  ``alpha_laser`` is real and nonnegative: a global
    drive phase is a gauge choice absorbed into the cavity frame.
    """

    delta: float
    omega: float
    g0: float
    alpha_laser: float
    kappa: float
    gamma: float
    n_ph: float = 0.0

    def __post_init__(self):
        errors = []
        if not self.omega > 0:
            errors.append(f"omega must be > 0, got {self.omega}")
        if not self.kappa > 0:
            errors.append(f"kappa must be > 0, got {self.kappa}")
        if self.gamma < 0:
            errors.append(f"gamma must be >= 0, got {self.gamma}")
        if self.n_ph < 0:
            errors.append(f"n_ph must be >= 0, got {self.n_ph}")
        if self.alpha_laser < 0:
            errors.append(
                f"alpha_laser must be >= 0 (phase is gauged away), got {self.alpha_laser}"
            )
        if errors:
            raise ValueError("; ".join(errors))


def build_space(n_a: int, n_b: int) -> SpaceDescriptor:
    return SpaceDescriptor(n_a=n_a, n_b=n_b)


def destroy(n: int) -> sp.csr_matrix:
    """Single-mode annihilation operator on an n-level truncation."""
    return sp.diags(np.sqrt(np.arange(1, n)), 1, format="csr", dtype=complex)


def cavity_destroy(space: SpaceDescriptor) -> sp.csr_matrix:
    return sp.kron(destroy(space.n_a), sp.identity(space.n_b, dtype=complex), format="csr")


def mech_destroy(space: SpaceDescriptor) -> sp.csr_matrix:
    return sp.kron(sp.identity(space.n_a, dtype=complex), destroy(space.n_b), format="csr")


def build_hamiltonian(space: SpaceDescriptor, params: SystemParams) -> sp.csr_matrix:
    """H = -delta a'a + omega b'b - g0 a'a (b' + b) + alpha_laser (a' + a), hbar = 1."""
    a = cavity_destroy(space)
    b = mech_destroy(space)
    ad, bd = a.conj().T.tocsr(), b.conj().T.tocsr()
    h = (
        -params.delta * (ad @ a)
        + params.omega * (bd @ b)
        - params.g0 * (ad @ a) @ (bd + b)
        + params.alpha_laser * (ad + a)
    ).tocsr()
    # symmetrize away floating-point asymmetry from the sparse products
    return (0.5 * (h + h.conj().T)).tocsr()


def dissipator_apply(op: sp.spmatrix | np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Lindblad dissipator D[O] rho = O rho O' - (O'O rho + rho O'O)/2."""
    if op.shape[0] != rho.shape[0]:
        raise ValueError(f"operator dim {op.shape} does not match state dim {rho.shape}")
    od = op.conj().T
    odo = od @ op
    return op @ rho @ od - 0.5 * (odo @ rho + rho @ odo)


def expect(op: sp.spmatrix | np.ndarray, rho: np.ndarray) -> complex:
    """Tr(O rho)."""
    if op.shape[1] != rho.shape[0]:
        raise ValueError(f"operator dim {op.shape} does not match state dim {rho.shape}")
    if sp.issparse(op):
        return complex((op.multiply(rho.T)).sum())
    return complex(np.einsum("ij,ji->", op, rho))


def mech_number_moments(space: SpaceDescriptor, rho: np.ndarray) -> tuple[float, float]:
    """(<n>, <n^2>) of the mechanical mode, n = b'b, on the full state."""
    pops = np.einsum("kiki->i", rho.reshape(space.n_a, space.n_b, space.n_a, space.n_b)).real
    levels = np.arange(space.n_b, dtype=float)
    return float(levels @ pops), float((levels**2) @ pops)


def fano(space: SpaceDescriptor, rho: np.ndarray) -> float:
    """Mechanical Fano factor (<n^2> - <n>^2)/<n>."""
    n1, n2 = mech_number_moments(space, rho)
    if n1 <= 0:
        raise ValueError("Fano factor undefined: <n> = 0")
    return (n2 - n1 * n1) / n1


def von_neumann_entropy(rho: np.ndarray, floor: float = ENTROPY_EIGENVALUE_FLOOR) -> float:
    """-Tr(rho ln rho) in units of k_B; eigenvalues below the floor contribute 0."""
    lam = np.linalg.eigvalsh(rho)
    lam = lam[lam > floor]
    return float(-(lam * np.log(lam)).sum())


def partial_trace_mech(space: SpaceDescriptor, rho: np.ndarray) -> np.ndarray:
    """Trace out the cavity, leaving the mechanical density matrix."""
    t = rho.reshape(space.n_a, space.n_b, space.n_a, space.n_b)
    return np.einsum("kikj->ij", t)


def partial_trace_cavity(space: SpaceDescriptor, rho: np.ndarray) -> np.ndarray:
    """Trace out the mechanics, leaving the cavity density matrix."""
    t = rho.reshape(space.n_a, space.n_b, space.n_a, space.n_b)
    return np.einsum("ikjk->ij", t)


def truncation_tail(space: SpaceDescriptor, rho: np.ndarray) -> tuple[float, float]:
    """Population of the top two Fock levels of each mode: (cavity, mechanics).

    The shipped runs are considered adequately truncated when both stay
    below 1e-6.
    """
    t = rho.reshape(space.n_a, space.n_b, space.n_a, space.n_b)
    pops_b = np.einsum("kiki->i", t).real
    pops_a = np.einsum("kiki->k", t).real
    return float(pops_a[-2:].sum()), float(pops_b[-2:].sum())


def check_density_matrix(
    rho: np.ndarray,
    trace_tol: float = 1e-8,
    herm_tol: float = 1e-10,
    min_eig: float = -1e-8,
) -> None:
    """Raise ValueError if rho is not trace-one, Hermitian, and numerically positive."""
    errors = []
    tr = np.trace(rho)
    if abs(tr - 1.0) > trace_tol:
        errors.append(f"trace {tr} deviates from 1 by more than {trace_tol}")
    scale = max(1.0, float(np.abs(rho).max()))
    if np.abs(rho - rho.conj().T).max() > herm_tol * scale:
        errors.append(f"not Hermitian to {herm_tol} (relative)")
    lam_min = float(np.linalg.eigvalsh(rho)[0])
    if lam_min < min_eig:
        errors.append(f"minimum eigenvalue {lam_min:.2e} below {min_eig:.0e}")
    if errors:
        raise ValueError("invalid density matrix: " + "; ".join(errors))


def fock_state(n: int, k: int) -> np.ndarray:
    """Density matrix |k><k| on an n-level single mode."""
    rho = np.zeros((n, n), dtype=complex)
    rho[k, k] = 1.0
    return rho


def coherent_amplitudes(n: int, beta: complex) -> np.ndarray:
    """Fock amplitudes of a coherent state |beta>, renormalized on the truncation."""
    k = np.arange(n)
    logfact = np.cumsum(np.concatenate(([0.0], np.log(np.arange(1, n)))))
    amps = np.exp(-0.5 * abs(beta) ** 2 + k * np.log(complex(beta)) - 0.5 * logfact) if beta != 0 else np.eye(n, 1).ravel().astype(complex)
    return amps / np.linalg.norm(amps)


def coherent_state(n: int, beta: complex) -> np.ndarray:
    amps = coherent_amplitudes(n, beta)
    return np.outer(amps, amps.conj())


def thermal_state(n: int, nbar: float) -> np.ndarray:
    """Thermal single-mode state with mean occupation nbar (renormalized)."""
    if nbar == 0:
        return fock_state(n, 0)
    k = np.arange(n)
    p = (nbar / (1.0 + nbar)) ** k
    return np.diag(p / p.sum()).astype(complex)


def displacement_matrix(n: int, beta: complex) -> np.ndarray:
    """Dense displacement operator exp(beta b' - beta* b) on the truncation."""
    import scipy.linalg

    b = destroy(n).toarray()
    return scipy.linalg.expm(beta * b.conj().T - np.conj(beta) * b)
