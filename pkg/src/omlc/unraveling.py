"""Stochastic unravelings of the master equation.

Two measurement back-ends act on the cavity output:

* homodyne detection of the quadrature ``a e^{i phi} + a' e^{-i phi}`` —
  diffusive conditional dynamics stepped by a semi-implicit Milstein scheme
  (deterministic part implicit, noise terms explicit);
* photon counting — Bernoulli-sampled jumps ``rho -> a rho a'`` plus
  implicit fourth-order (two-stage Gauss) no-jump evolution under the
  normalized no-jump generator.

Detector efficiency ``eta`` splits the cavity decay into a monitored
``eta*kappa`` channel and an unmonitored ``(1-eta)*kappa`` Lindblad channel;
the mechanical bath is always unmonitored.

Displaced-frame representation
------------------------------
Conditioning localizes the mechanical state on the limit-cycle ring, after
which only a small neighborhood of the conditional mean amplitude is
populated.  Trajectories therefore start in the full static Fock basis and,
once the conditional number spread stays below a threshold, switch to a frame
displaced by the conditional amplitude beta: the state is transformed by
D(beta)' rho D(beta) and truncated to a small mechanical dimension.  In that
frame the generator gains a linear drive ``mu b + mu* b'`` with
``mu = beta* (Omega + i Gamma/2)`` and a cavity detuning shift
``2 g0 Re beta`` (radiation-pressure offset), while the measurement operators
— cavity-only — are unchanged.  The frame tracks the state by small exact
re-displacements (nested-commutator series); observable series are computed
frame-independently.  All frame management is deterministic given the inputs
and seed, preserving the reproducibility contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels
from ._rng import CounterNoise
from .fock import (
    SpaceDescriptor,
    SystemParams,
    build_space,
    destroy,
    displacement_matrix,
    von_neumann_entropy,
)
from .lindblad import Liouvillian

__all__ = [
    "MeasurementConfig",
    "StepperConfig",
    "TrajectoryRecord",
    "StepConvergenceError",
    "StepSizeError",
    "homodyne_step",
    "counting_step",
    "run_trajectory",
]

MEASUREMENT_KINDS = ("homodyne", "counting", "none")

#: default step sizes per measurement kind, units 1/Omega
DEFAULT_DT = {
    "homodyne": 2.0 * math.pi / 400.0,
    "counting": 2.0 * math.pi / 200.0,
    "none": 2.0 * math.pi / 200.0,
}

#: two-stage Gauss (fourth-order) stage shift: the rational approximant
#: denominator factors as (1 - z dt L)(1 - z* dt L)
_GAUSS_SHIFT = 0.25 + 1j / (4.0 * math.sqrt(3.0))

#: per-step jump probability above which counting must refuse to proceed
JUMP_PROBABILITY_LIMIT = 0.1


class StepConvergenceError(RuntimeError):
    """The implicit stage of a step failed to converge."""

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class StepSizeError(ValueError):
    """The step size violates a validity bound (e.g. jump probability)."""


@dataclass(frozen=True)
class MeasurementConfig:
    """What the detector does with the cavity output."""

    kind: str
    eta: float = 1.0
    phi: float = 0.0

    def __post_init__(self):
        errors = []
        if self.kind not in MEASUREMENT_KINDS:
            errors.append(
                f"kind must be one of {MEASUREMENT_KINDS}, got {self.kind!r}")
        if not 0.0 <= self.eta <= 1.0:
            errors.append(f"eta must lie in [0, 1], got {self.eta}")
        if not math.isfinite(self.phi):
            errors.append(f"phi must be finite, got {self.phi}")
        if errors:
            raise ValueError("; ".join(errors))
        object.__setattr__(self, "phi", float(self.phi) % (2.0 * math.pi))


@dataclass(frozen=True)
class StepperConfig:
    """Numerical controls for trajectory integration.

    ``dt=None`` resolves to the per-kind default.  The ``frame_*`` fields
    control the adaptive displaced-frame representation; ``frame="static"``
    disables it (full-basis integration throughout).
    """

    dt: float | None = None
    sample_stride: int = 50
    renorm_stride: int = 100
    rng_scheme: str = "philox-counter"
    implicit_tol: float = 1e-10
    implicit_maxiter: int = 600
    frame: str = "auto"
    frame_spread: float = 3.0
    frame_patience: int = 5
    frame_dim: int = 16
    frame_switch_tail: float = 1e-6
    frame_tail_limit: float = 1e-7
    frame_grow: int = 8
    recenter_threshold: float = 0.05
    noise_block: int = 4096

    def __post_init__(self):
        errors = []
        if self.dt is not None and not self.dt > 0:
            errors.append(f"dt must be positive, got {self.dt}")
        if self.sample_stride < 1 or self.renorm_stride < 1:
            errors.append("strides must be >= 1")
        if self.rng_scheme != "philox-counter":
            errors.append(
                f"unsupported rng_scheme {self.rng_scheme!r} "
                "(only 'philox-counter' is implemented)")
        if self.frame not in ("auto", "static"):
            errors.append(f"frame must be 'auto' or 'static', got {self.frame!r}")
        if self.frame_dim < 4:
            errors.append("frame_dim must be >= 4")
        if self.frame_grow < 1:
            errors.append("frame_grow must be >= 1")
        if errors:
            raise ValueError("; ".join(errors))

    def resolved_dt(self, kind: str) -> float:
        return DEFAULT_DT[kind] if self.dt is None else self.dt


@dataclass
class TrajectoryRecord:
    """Sampled conditional series plus the measurement record of one run."""

    seed: int
    kind: str
    dt: float
    times: np.ndarray
    times_rel: np.ndarray | None
    t_rel: float | None
    n_t: np.ndarray
    s_t: np.ndarray
    f_t: np.ndarray
    record: np.ndarray
    final_state: dict | None = None
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------

class _Representation:
    """State representation: basis sizes, frame displacement, cached ops."""

    def __init__(self, params: SystemParams, meas: MeasurementConfig,
                 n_a: int, n_b: int, beta: complex, dt: float):
        self.space = build_space(n_a, n_b)
        self.liou = Liouvillian(self.space, params)
        self.beta = complex(beta)
        self.delta_eff = params.delta + 2.0 * params.g0 * beta.real
        self.mu = _kernels.frame_mu(beta, params.omega, params.gamma)
        dim = self.space.dim
        self.dim = dim
        shape = (dim, dim)
        self.rho = np.empty(shape, dtype=np.complex128)
        self.tmp = np.empty(shape, dtype=np.complex128)
        self.tmp2 = np.empty(shape, dtype=np.complex128)
        self.rhs = np.empty(shape, dtype=np.complex128)
        self.y = np.empty(shape, dtype=np.complex128)
        self.b_op = destroy(n_b).toarray()
        self._dt = dt
        self._refresh_preconditioners()

    def _refresh_preconditioners(self):
        ldiag = self.liou.diagonal(delta_eff=self.delta_eff)
        dim = self.dim
        h = 0.5 * self._dt
        self.minv_half = (1.0 / (1.0 - h * ldiag)).reshape(dim, dim)
        z = _GAUSS_SHIFT * self._dt
        self.minv_g1 = (1.0 / (1.0 - z * ldiag)).reshape(dim, dim)
        self.minv_g2 = (1.0 / (1.0 - np.conj(z) * ldiag)).reshape(dim, dim)

    def set_beta(self, beta: complex):
        p = self.liou.params
        self.beta = complex(beta)
        self.delta_eff = p.delta + 2.0 * p.g0 * beta.real
        self.mu = _kernels.frame_mu(beta, p.omega, p.gamma)
        self._refresh_preconditioners()

    def view4(self, m: np.ndarray) -> np.ndarray:
        sd = self.space
        return m.reshape(sd.n_a, sd.n_b, sd.n_a, sd.n_b)

    def mech_reduced(self, m: np.ndarray) -> np.ndarray:
        return np.einsum("aiaj->ij", self.view4(m))

    def apply_generator(self, src: np.ndarray, dst: np.ndarray,
                        kappa_rec: float | None = None):
        self.liou.apply_into(src, dst, delta_eff=self.delta_eff, mu=self.mu,
                             kappa_rec=kappa_rec)

    def solve_shifted(self, rhs: np.ndarray, y: np.ndarray, minv: np.ndarray,
                      h: complex, tol: float, maxiter: int,
                      kappa_rec: float | None = None) -> int:
        liou, p = self.liou, self.liou.params
        kr = p.kappa if kappa_rec is None else kappa_rec
        return _kernels.implicit_solve(
            self.view4(rhs), self.view4(y), self.view4(self.tmp2),
            self.view4(minv), liou._sa, liou._sb, self.delta_eff, p.omega,
            p.g0, p.alpha_laser, p.kappa, kr, liou._gp, liou._gm,
            complex(self.mu), complex(h), tol, maxiter)


class _Engine:
    """Steps one trajectory; owns representation, frame logic, diagnostics."""

    def __init__(self, space: SpaceDescriptor, rho0: np.ndarray,
                 params: SystemParams, meas: MeasurementConfig,
                 stepper: StepperConfig):
        self.params = params
        self.meas = meas
        self.stepper = stepper
        self.kind = meas.kind
        self.dt = stepper.resolved_dt(meas.kind)
        self.h = 0.5 * self.dt
        self.sqrt_dt = math.sqrt(self.dt)
        self.phase = complex(np.exp(1j * meas.phi))
        self.eta_kappa = meas.eta * params.kappa
        self.sqrt_ek = math.sqrt(self.eta_kappa)
        self.kappa_rec_nojump = (1.0 - meas.eta) * params.kappa
        self.full_n_b = space.n_b
        self.n_a = space.n_a
        self.mode = "static"
        self.low_spread = 0
        self.t = 0.0
        self.step_index = 0
        self.jump_times: list[float] = []
        self.diagnostics = {
            "solver_iters_max": 0,
            "frame_switch_time": None,
            "frame_dim_final": None,
            "recenter_count": 0,
            "grow_count": 0,
            "static_fallbacks": 0,
            "trace_drift_max": 0.0,
            "herm_drift_max": 0.0,
            "min_eigenvalue": math.inf,
            "jump_count": 0,
            "truncation_loss_max": 0.0,
        }
        self.rep = _Representation(params, meas, space.n_a, space.n_b,
                                   0.0 + 0.0j, self.dt)
        np.copyto(self.rep.rho, np.ascontiguousarray(rho0, dtype=np.complex128))

    # -- frame transformations -------------------------------------------
    def _transform_to_frame(self, beta: complex) -> bool:
        """Displace by -beta, truncate mechanics; False if tail too heavy."""
        rep = self.rep
        n_a, n_b = self.n_a, rep.space.n_b
        fd = self.stepper.frame_dim
        if fd >= n_b:
            return False
        dm = displacement_matrix(n_b, -beta)
        r4 = rep.view4(rep.rho)
        # rho~ = D(-beta) rho D(-beta)' applied on both mechanical axes
        t1 = np.einsum("mk,akbl->ambl", dm, r4, optimize=True)
        t2 = np.einsum("nl,ambl->ambn", dm.conj(), t1, optimize=True)
        marg = np.einsum("ambm->m", t2).real
        tail = float(marg[fd:].sum())
        if tail > self.stepper.frame_switch_tail:
            return False
        rho_new = np.ascontiguousarray(t2[:, :fd, :, :fd]).reshape(
            n_a * fd, n_a * fd)
        tr = rho_new.trace().real
        self.diagnostics["truncation_loss_max"] = max(
            self.diagnostics["truncation_loss_max"], abs(1.0 - tr))
        rho_new /= tr
        self.rep = _Representation(self.params, self.meas, n_a, fd, beta,
                                   self.dt)
        np.copyto(self.rep.rho, rho_new)
        self.mode = "frame"
        self.diagnostics["frame_switch_time"] = self.t
        return True

    def _resize_frame(self, new_dim: int):
        """Grow the displaced-frame mechanical dimension (state zero-padded)."""
        rep = self.rep
        n_a, old = self.n_a, rep.space.n_b
        r4 = rep.view4(rep.rho)
        padded = np.zeros((n_a, new_dim, n_a, new_dim), dtype=np.complex128)
        padded[:, :old, :, :old] = r4
        beta = rep.beta
        self.rep = _Representation(self.params, self.meas, n_a, new_dim, beta,
                                   self.dt)
        np.copyto(self.rep.rho, padded.reshape(n_a * new_dim, n_a * new_dim))
        self.diagnostics["grow_count"] += 1

    def _fall_back_static(self):
        """Return to the full static basis (inverse displacement, embed)."""
        rep = self.rep
        n_a, cur, full = self.n_a, rep.space.n_b, self.full_n_b
        r4 = rep.view4(rep.rho)
        emb = np.zeros((n_a, full, n_a, full), dtype=np.complex128)
        emb[:, :cur, :, :cur] = r4
        dm = displacement_matrix(full, rep.beta)
        t1 = np.einsum("mk,akbl->ambl", dm, emb, optimize=True)
        t2 = np.einsum("nl,ambl->ambn", dm.conj(), t1, optimize=True)
        self.rep = _Representation(self.params, self.meas, n_a, full,
                                   0.0 + 0.0j, self.dt)
        np.copyto(self.rep.rho, t2.reshape(n_a * full, n_a * full))
        self.mode = "static"
        self.low_spread = 0
        self.diagnostics["static_fallbacks"] += 1

    def _recenter(self, delta_b: complex):
        """Exact re-displacement by the small conditional offset delta_b.

        rho <- exp(-ad_G) rho with G = delta_b b' - delta_b* b, evaluated by
        the nested-commutator series (converges fast for |delta_b| << 1).
        """
        rep = self.rep
        sb = rep.liou._sb
        term = rep.rho.copy()
        acc = rep.rho
        scale = float(np.linalg.norm(acc))
        out = rep.tmp
        for k in range(1, 60):
            _kernels.commutator_displace(rep.view4(term), rep.view4(out), sb,
                                         complex(delta_b))
            np.multiply(out, -1.0 / k, out=term)
            acc += term
            if float(np.linalg.norm(term)) <= 1e-15 * scale:
                break
        rep.set_beta(rep.beta + delta_b)
        self.diagnostics["recenter_count"] += 1

    # -- per-step ---------------------------------------------------------
    def _record_iters(self, its: int, stage: str):
        if its < 0:
            raise StepConvergenceError(
                f"implicit {stage} solve failed to converge at t = {self.t:.4f}"
                f" (step {self.step_index})",
                time=self.t, step=self.step_index, stage=stage,
                tol=self.stepper.implicit_tol,
                maxiter=self.stepper.implicit_maxiter)
        if its > self.diagnostics["solver_iters_max"]:
            self.diagnostics["solver_iters_max"] = its

    def step_homodyne(self, dw: float) -> float:
        rep, st = self.rep, self.stepper
        rho = rep.rho
        rep.apply_generator(rho, rep.tmp)                    # drift
        m1 = np.empty_like(rho)
        _kernels.quad_apply(rep.view4(rho), rep.view4(m1), rep.liou._sa,
                            self.phase)
        k1 = m1.trace().real
        m1 -= k1 * rho                                        # H[c] rho
        m2 = np.empty_like(rho)
        _kernels.quad_apply(rep.view4(m1), rep.view4(m2), rep.liou._sa,
                            self.phase)
        k2 = m2.trace().real
        m2 -= k2 * rho
        m2 -= k1 * m1                                         # H[c] H[c] rho
        np.multiply(rep.tmp, self.h, out=rep.rhs)
        rep.rhs += rho
        coeff_noise = self.sqrt_ek * dw
        coeff_mil = 0.5 * self.eta_kappa * (dw * dw - self.dt)
        rep.rhs += coeff_noise * m1
        rep.rhs += coeff_mil * m2
        np.copyto(rep.y, rep.rhs)
        its = rep.solve_shifted(rep.rhs, rep.y, rep.minv_half, self.h,
                                st.implicit_tol, st.implicit_maxiter)
        self._record_iters(its, "drift")
        rep.rho, rep.y = rep.y, rep.rho
        return self.sqrt_ek * k1 + dw / self.dt

    def step_none(self):
        rep, st = self.rep, self.stepper
        rep.apply_generator(rep.rho, rep.tmp)
        np.multiply(rep.tmp, self.h, out=rep.rhs)
        rep.rhs += rep.rho
        np.copyto(rep.y, rep.rhs)
        its = rep.solve_shifted(rep.rhs, rep.y, rep.minv_half, self.h,
                                st.implicit_tol, st.implicit_maxiter)
        self._record_iters(its, "drift")
        rep.rho, rep.y = rep.y, rep.rho

    def _cavity_number(self) -> float:
        r4 = self.rep.view4(self.rep.rho)
        diag = np.einsum("aiai->a", r4).real
        return float(np.dot(np.arange(self.n_a), diag))

    def step_counting(self, u: float) -> bool:
        rep, st = self.rep, self.stepper
        p_jump = self.eta_kappa * self._cavity_number() * self.dt
        if p_jump >= JUMP_PROBABILITY_LIMIT:
            raise StepSizeError(
                f"jump probability {p_jump:.3f} per step exceeds "
                f"{JUMP_PROBABILITY_LIMIT}; reduce dt")
        if u < p_jump:
            r4 = rep.view4(rep.rho)
            sa = rep.liou._sa
            new4 = np.zeros_like(r4)
            w = sa[1:self.n_a]
            new4[:self.n_a - 1, :, :self.n_a - 1, :] = (
                w[:, None, None, None] * w[None, None, :, None]
                * r4[1:, :, 1:, :])
            tr = np.einsum("aiai->", new4).real
            np.copyto(rep.rho, new4.reshape(rep.dim, rep.dim) / tr)
            self.jump_times.append(self.t + self.dt)
            self.diagnostics["jump_count"] += 1
            return True
        kr = self.kappa_rec_nojump
        dt = self.dt
        rep.apply_generator(rep.rho, rep.tmp, kappa_rec=kr)
        rep.apply_generator(rep.tmp, rep.rhs, kappa_rec=kr)
        np.multiply(rep.rhs, dt * dt / 12.0, out=rep.rhs)
        rep.rhs += rep.rho
        rep.rhs += (0.5 * dt) * rep.tmp
        z = _GAUSS_SHIFT * dt
        np.copyto(rep.y, rep.rhs)
        its = rep.solve_shifted(rep.rhs, rep.y, rep.minv_g2, np.conj(z),
                                st.implicit_tol, st.implicit_maxiter,
                                kappa_rec=kr)
        self._record_iters(its, "gauss-1")
        np.copyto(rep.rhs, rep.y)
        its = rep.solve_shifted(rep.rhs, rep.y, rep.minv_g1, z,
                                st.implicit_tol, st.implicit_maxiter,
                                kappa_rec=kr)
        self._record_iters(its, "gauss-2")
        # normalized no-jump flow = linear no-jump flow, renormalized
        tr = rep.y.trace().real
        np.multiply(rep.y, 1.0 / tr, out=rep.rho)
        return False

    # -- maintenance ------------------------------------------------------
    def renormalize(self):
        rep = self.rep
        rho = rep.rho
        herm = 0.5 * np.abs(rho - rho.conj().T).max()
        tr = rho.trace().real
        d = self.diagnostics
        d["herm_drift_max"] = max(d["herm_drift_max"], float(herm))
        d["trace_drift_max"] = max(d["trace_drift_max"], abs(tr - 1.0))
        np.add(rho, rho.conj().T, out=rep.tmp)
        np.multiply(rep.tmp, 0.5 / tr, out=rho)

    def frame_upkeep(self):
        """Per-step frame tracking (frame mode only)."""
        if self.mode != "frame":
            return
        rep = self.rep
        rho_b = rep.mech_reduced(rep.rho)
        delta_b = complex(np.trace(rep.b_op @ rho_b))
        if abs(delta_b) > self.stepper.recenter_threshold:
            self._recenter(delta_b)

    def sample(self):
        """Observables in the current representation; drives frame switching."""
        rep = self.rep
        rho_b = rep.mech_reduced(rep.rho)
        beta = rep.beta
        b_op = rep.b_op
        n_op = b_op.conj().T @ b_op
        b_mean = complex(np.trace(b_op @ rho_b))
        nd_mean = float(np.trace(n_op @ rho_b).real)
        spread = nd_mean - abs(b_mean) ** 2
        # frame-independent number moments: n = (b'+beta*)(b+beta)
        if beta != 0.0:
            shifted = (n_op + beta * b_op.conj().T + np.conj(beta) * b_op
                       + (abs(beta) ** 2) * np.eye(rep.space.n_b))
        else:
            shifted = n_op
        n_mean = float(np.trace(shifted @ rho_b).real)
        n2_mean = float(np.trace(shifted @ shifted @ rho_b).real)
        evals = np.linalg.eigvalsh(rep.rho)
        self.diagnostics["min_eigenvalue"] = min(
            self.diagnostics["min_eigenvalue"], float(evals.min()))
        entropy = von_neumann_entropy_from_eigs(evals)
        fano_val = (n2_mean - n_mean * n_mean) / n_mean if n_mean > 0 else 0.0
        # frame management decisions ride on the sample we just computed
        st = self.stepper
        if st.frame == "auto" and self.kind != "none":
            if self.mode == "static":
                if spread < st.frame_spread:
                    self.low_spread += 1
                    if self.low_spread >= st.frame_patience:
                        if not self._transform_to_frame(b_mean):
                            self.low_spread = 0
                else:
                    self.low_spread = 0
            else:
                marg = np.einsum("ii->i", rho_b).real
                if float(marg[-2:].sum()) > st.frame_tail_limit:
                    new_dim = rep.space.n_b + st.frame_grow
                    if new_dim >= self.full_n_b:
                        self._fall_back_static()
                    else:
                        self._resize_frame(new_dim)
        return n_mean, entropy, fano_val


def von_neumann_entropy_from_eigs(evals: np.ndarray,
                                  floor: float = 1e-12) -> float:
    w = evals[evals > floor]
    if w.size == 0:
        return 0.0
    return float(-np.sum(w * np.log(w)))


# ---------------------------------------------------------------------------
# public stepping ops
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _cached_engine_factory(space: SpaceDescriptor, params: SystemParams,
                           meas: MeasurementConfig, dt: float | None):
    stepper = StepperConfig(dt=dt, frame="static")
    rho0 = np.zeros((space.dim, space.dim), dtype=np.complex128)
    rho0[0, 0] = 1.0
    return _Engine(space, rho0, params, meas, stepper)


def homodyne_step(rho: np.ndarray, dt: float, dw: float,
                  params: SystemParams, meas: MeasurementConfig, *,
                  space: SpaceDescriptor) -> tuple[np.ndarray, float]:
    """One semi-implicit Milstein step of the homodyne stochastic equation.

    Returns (updated state, photocurrent sample).  ``dw`` is the Wiener
    increment for the step (variance dt).
    """
    if meas.kind != "homodyne":
        raise ValueError("homodyne_step requires meas.kind == 'homodyne'")
    eng = _cached_engine_factory(space, params, meas, dt)
    np.copyto(eng.rep.rho, np.ascontiguousarray(rho, dtype=np.complex128))
    photocurrent = eng.step_homodyne(float(dw))
    return eng.rep.rho.copy(), photocurrent


def counting_step(rho: np.ndarray, dt: float, u: float,
                  params: SystemParams, meas: MeasurementConfig, *,
                  space: SpaceDescriptor) -> tuple[np.ndarray, bool]:
    """One photon-counting step: Bernoulli jump test, else no-jump evolution.

    Returns (updated state, jumped flag).  ``u`` is the uniform draw deciding
    the jump.
    """
    if meas.kind != "counting":
        raise ValueError("counting_step requires meas.kind == 'counting'")
    eng = _cached_engine_factory(space, params, meas, dt)
    np.copyto(eng.rep.rho, np.ascontiguousarray(rho, dtype=np.complex128))
    jumped = eng.step_counting(float(u))
    return eng.rep.rho.copy(), jumped


def run_trajectory(rho0: np.ndarray, params: SystemParams,
                   meas: MeasurementConfig, stepper: StepperConfig,
                   t_final: float, seed: int, *, space: SpaceDescriptor,
                   trajectory_index: int = 0, t_rel: float | None = None,
                   store_final_state: bool = False) -> TrajectoryRecord:
    """Integrate one conditional trajectory and sample its observables.

    The result is a deterministic function of all inputs: noise is drawn
    from a counter-based stream keyed by (seed, trajectory_index, step).
    ``rho0`` is typically the unconditional steady state.
    """
    if t_final < 0:
        raise ValueError("t_final must be nonnegative")
    dt = stepper.resolved_dt(meas.kind)
    n_steps = int(round(t_final / dt))
    eng = _Engine(space, rho0, params, meas, stepper)
    noise = CounterNoise(seed, trajectory_index, block=stepper.noise_block)

    stride = stepper.sample_stride
    n_samples = n_steps // stride + 1
    times = np.empty(n_samples)
    n_t = np.empty(n_samples)
    s_t = np.empty(n_samples)
    f_t = np.empty(n_samples)
    photocurrent = (np.empty(n_steps) if meas.kind == "homodyne"
                    else None)

    times[0] = 0.0
    n_t[0], s_t[0], f_t[0] = eng.sample()
    sample_idx = 1
    try:
        for i in range(n_steps):
            eng.step_index = i
            eng.t = i * dt
            if meas.kind == "homodyne":
                dw = noise.normal(i) * eng.sqrt_dt
                photocurrent[i] = eng.step_homodyne(dw)
            elif meas.kind == "counting":
                eng.step_counting(noise.uniform(i))
            else:
                eng.step_none()
            eng.t = (i + 1) * dt
            if (i + 1) % stepper.renorm_stride == 0:
                eng.renormalize()
            eng.frame_upkeep()
            if (i + 1) % stride == 0:
                times[sample_idx] = (i + 1) * dt
                n_t[sample_idx], s_t[sample_idx], f_t[sample_idx] = eng.sample()
                sample_idx += 1
    except (StepConvergenceError, StepSizeError) as exc:
        raise type(exc)(
            f"{exc} [trajectory seed={seed}, index={trajectory_index}, "
            f"t={eng.t:.4f}]") from exc

    if meas.kind == "counting":
        record = np.asarray(eng.jump_times, dtype=float)
    elif meas.kind == "homodyne":
        record = photocurrent
    else:
        record = np.empty(0)

    eng.diagnostics["frame_dim_final"] = (
        eng.rep.space.n_b if eng.mode == "frame" else None)
    final_state = None
    if store_final_state:
        final_state = {
            "rho": eng.rep.rho.copy(),
            "beta": eng.rep.beta,
            "n_a": eng.rep.space.n_a,
            "n_b": eng.rep.space.n_b,
            "mode": eng.mode,
        }
    return TrajectoryRecord(
        seed=seed, kind=meas.kind, dt=dt, times=times,
        times_rel=(times / t_rel if t_rel else None), t_rel=t_rel,
        n_t=n_t, s_t=s_t, f_t=f_t, record=record,
        final_state=final_state, diagnostics=dict(eng.diagnostics))
