"""Ensemble statistics over conditional trajectories.

Builds on :mod:`.unraveling`: runs reproducible batches of trajectories from
the unconditional steady state, averages their observable series, fits the
relaxation of ensemble averages toward their conditional levels, histograms
the stationary conditional Fano factor, and decomposes the steady-state Fano
factor into conditional and fluctuation contributions.

Conventions: the averaged Fano series is the mean of the per-trajectory Fano
factors (the quantity whose long-time level defines the conditional mean
``f_cond``), not the Fano factor of the averaged state.  Stationary statistics
pool samples at times ``t >= t_start`` across all trajectories.  Error bars
are bootstrap standard errors resampled over whole trajectories, since samples
within one trajectory are strongly correlated in time.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit

from .fock import SpaceDescriptor, SystemParams, build_space
from .lindblad import build_liouvillian, steady_state
from .semiclassical import find_limit_cycles
from .unraveling import (
    MeasurementConfig,
    StepperConfig,
    TrajectoryRecord,
    run_trajectory,
)

__all__ = [
    "EnsembleRecord",
    "DecayFit",
    "FanoHistogram",
    "FanoDecomposition",
    "SweepPoint",
    "SweepResult",
    "run_ensemble",
    "fit_conditional_decay",
    "fano_histogram",
    "decompose_fano",
    "sweep_optimize",
    "bootstrap_se",
]

BOOTSTRAP_RESAMPLES = 200
HISTOGRAM_BINS = 60
MIN_HISTOGRAM_SAMPLES = 100


@dataclass
class EnsembleRecord:
    """Trajectory batch with pointwise-averaged observable series."""

    records: list[TrajectoryRecord]
    times: np.ndarray
    times_rel: np.ndarray | None
    t_rel: float | None
    n_mean: np.ndarray
    s_mean: np.ndarray
    f_mean: np.ndarray
    params: SystemParams
    meas: MeasurementConfig
    stepper: StepperConfig
    m: int
    t_final: float
    master_seed: int
    seeds: list[tuple[int, int]]
    metadata: dict = field(default_factory=dict)

    def pooled(self, series: str, t_start: float) -> np.ndarray:
        """Samples of one per-trajectory series pooled over t >= t_start."""
        mask = self.times >= t_start
        if not mask.any():
            raise ValueError(
                f"t_start={t_start} lies beyond the sampled horizon "
                f"{self.times[-1]}")
        return np.concatenate([getattr(r, series)[mask] for r in self.records])

    def per_trajectory(self, series: str, t_start: float) -> np.ndarray:
        """(M, n_kept) matrix of one series restricted to t >= t_start."""
        mask = self.times >= t_start
        return np.stack([getattr(r, series)[mask] for r in self.records])


@dataclass
class DecayFit:
    """Exponential relaxation fit X(t) = (x_ss - x_cond) e^{-rate t} + x_cond.

    ``pinned`` carries the companion fit with the rate fixed at 2*Gamma_rel;
    the primary fields describe the free-rate fit.
    """

    x_ss: float
    x_cond: float
    rate: float
    rate_over_gamma_rel: float
    confidence: dict
    degenerate: bool = False
    pinned: "DecayFit | None" = None


@dataclass
class FanoHistogram:
    """Pooled stationary histogram of the conditional Fano factor."""

    bin_edges: np.ndarray
    counts: np.ndarray
    f_cond: float
    f_cond_se: float
    p_below: float
    range70: tuple[float, float]
    t_start: float
    n_samples: int

    @property
    def range70_mass(self) -> float:
        lo, hi = self.range70
        inside = (self.bin_edges[:-1] >= lo - 1e-12) & (
            self.bin_edges[1:] <= hi + 1e-12)
        return float(self.counts[inside].sum() / self.counts.sum())


@dataclass
class FanoDecomposition:
    """Additive split f_ss ~ f_cond + f_fluc of the stationary Fano factor.

    ``f_fluc`` is the Fano factor of the pooled conditional mean phonon
    numbers — the contribution of trajectory-to-trajectory fluctuations of
    the tracked mean to the unconditional variance.
    """

    f_ss: float
    f_cond: float
    f_fluc: float
    residual: float


# ---------------------------------------------------------------------------
# ensemble runner
# ---------------------------------------------------------------------------

def _run_one(args):
    (index, rho0, params, meas, stepper, t_final, master_seed, space, t_rel,
     store_final) = args
    return run_trajectory(rho0, params, meas, stepper, t_final, master_seed,
                          space=space, trajectory_index=index, t_rel=t_rel,
                          store_final_state=store_final)


def run_ensemble(params: SystemParams, meas: MeasurementConfig,
                 stepper: StepperConfig, m: int, t_final: float,
                 master_seed: int, *, space: SpaceDescriptor,
                 rho0: np.ndarray | None = None, t_rel: float | None = None,
                 workers: int = 1,
                 store_final_state: bool = False) -> EnsembleRecord:
    """Run ``m`` independent trajectories and average their series.

    The initial state defaults to the unconditional steady state of the
    generator (computed once and shared).  Trajectory ``i`` draws its noise
    from the counter stream keyed by ``(master_seed, i)``, so the full record
    is reproducible for a given seed regardless of worker count.  A failing
    trajectory aborts the whole run with its seed in the error message.
    """
    if m < 1:
        raise ValueError("ensemble size m must be >= 1")
    if rho0 is None:
        rho0 = steady_state(build_liouvillian(space, params))
    if t_rel is None:
        t_rel = _lookup_t_rel(params)

    jobs = [(i, rho0, params, meas, stepper, t_final, master_seed, space,
             t_rel, store_final_state) for i in range(m)]
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                records = list(pool.map(_run_one, jobs))
        else:
            records = [_run_one(job) for job in jobs]
    except Exception as exc:
        raise RuntimeError(
            f"ensemble aborted: trajectory failure under master_seed="
            f"{master_seed} ({exc})") from exc

    times = records[0].times
    n_mean = np.mean([r.n_t for r in records], axis=0)
    s_mean = np.mean([r.s_t for r in records], axis=0)
    f_mean = np.mean([r.f_t for r in records], axis=0)
    return EnsembleRecord(
        records=records, times=times, times_rel=records[0].times_rel,
        t_rel=t_rel, n_mean=n_mean, s_mean=s_mean, f_mean=f_mean,
        params=params, meas=meas, stepper=stepper, m=m, t_final=t_final,
        master_seed=master_seed,
        seeds=[(master_seed, i) for i in range(m)],
        metadata={"space": (space.n_a, space.n_b),
                  "dt": stepper.resolved_dt(meas.kind)})


def _lookup_t_rel(params: SystemParams) -> float | None:
    try:
        sols = [s for s in find_limit_cycles(params, 12.0) if s.stable]
    except Exception:
        return None
    if not sols:
        return None
    return min(sols, key=lambda s: s.b_ss).t_rel


# ---------------------------------------------------------------------------
# decay fit
# ---------------------------------------------------------------------------

def _exp_model(t, x_ss, x_cond, rate):
    return (x_ss - x_cond) * np.exp(-rate * t) + x_cond


def _linear_pinned_fit(t, x, rate):
    basis = np.column_stack([np.exp(-rate * t), np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(basis, x, rcond=None)
    amp, x_cond = coef
    return amp + x_cond, x_cond


def fit_conditional_decay(times: np.ndarray, values: np.ndarray,
                          gamma_rel: float, *,
                          bootstrap_seed: int = 0) -> DecayFit:
    """Fit the relaxation of an averaged series toward its conditional level.

    ``values`` may be the averaged series (1-D) or the per-trajectory series
    matrix (2-D, one row per trajectory); with per-trajectory data the
    parameter uncertainties are bootstrap standard errors over trajectories,
    otherwise they derive from the least-squares covariance.  The model rate
    is reported free (primary fields) and pinned to ``2*gamma_rel``
    (``pinned`` companion).  A series whose fitted decay is not resolved is
    flagged degenerate.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if gamma_rel <= 0:
        raise ValueError("gamma_rel must be positive")
    span = times[-1] - times[0]
    needed = 3.0 / (2.0 * gamma_rel)
    if span < needed:
        raise ValueError(
            f"series spans {span:.3g} but the fit needs >= {needed:.3g} "
            "(three pinned decay times) to resolve the asymptote")
    per_traj = values.ndim == 2
    mean_series = values.mean(axis=0) if per_traj else values

    rate0 = 2.0 * gamma_rel
    pin_ss, pin_cond = _linear_pinned_fit(times, mean_series, rate0)
    pinned = DecayFit(
        x_ss=float(pin_ss), x_cond=float(pin_cond), rate=float(rate0),
        rate_over_gamma_rel=2.0, confidence={})

    p0 = (pin_ss, pin_cond, rate0)
    degenerate = False
    try:
        popt, pcov = curve_fit(_exp_model, times, mean_series, p0=p0,
                               maxfev=20000)
        x_ss, x_cond, rate = (float(v) for v in popt)
        perr = np.sqrt(np.clip(np.diag(pcov), 0.0, np.inf))
    except RuntimeError:
        x_ss, x_cond, rate = (float(v) for v in p0)
        perr = np.full(3, np.nan)
        degenerate = True
    if not (rate > 0.0) or not np.isfinite(rate):
        degenerate = True
    # amplitude not significant at 3 sigma (its covariance blows up when the
    # decay direction is unconstrained, e.g. on a flat series, and a fit that
    # chases noise wiggles rarely exceeds ~2.5 sigma): nothing decays
    amp_unc = math.hypot(perr[0], perr[1])
    resid = mean_series - _exp_model(times, x_ss, x_cond, rate)
    floor = 2.0 * np.std(resid) / math.sqrt(len(times))
    if not np.isfinite(amp_unc) or abs(x_ss - x_cond) <= max(
            3.0 * amp_unc, floor):
        degenerate = True

    confidence = {"x_ss": float(perr[0]), "x_cond": float(perr[1]),
                  "rate": float(perr[2]), "method": "covariance"}
    if per_traj and values.shape[0] > 1:
        rng = np.random.default_rng(bootstrap_seed)
        m_traj = values.shape[0]
        boots = np.empty((BOOTSTRAP_RESAMPLES, 3))
        for k in range(BOOTSTRAP_RESAMPLES):
            pick = rng.integers(0, m_traj, m_traj)
            series_k = values[pick].mean(axis=0)
            try:
                popt_k, _ = curve_fit(_exp_model, times, series_k,
                                      p0=(x_ss, x_cond, max(rate, 1e-12)),
                                      maxfev=5000)
                boots[k] = popt_k
            except RuntimeError:
                boots[k] = np.nan
        good = boots[np.isfinite(boots).all(axis=1)]
        if len(good) >= BOOTSTRAP_RESAMPLES // 2:
            se = good.std(axis=0, ddof=1)
            confidence = {"x_ss": float(se[0]), "x_cond": float(se[1]),
                          "rate": float(se[2]), "method": "bootstrap",
                          "resamples": int(len(good))}

    return DecayFit(
        x_ss=x_ss, x_cond=x_cond, rate=rate,
        rate_over_gamma_rel=rate / gamma_rel, confidence=confidence,
        degenerate=degenerate, pinned=pinned)


# ---------------------------------------------------------------------------
# stationary statistics
# ---------------------------------------------------------------------------

def bootstrap_se(per_traj: np.ndarray, *, n_resamples: int = BOOTSTRAP_RESAMPLES,
                 seed: int = 0) -> float:
    """Standard error of the pooled mean, resampling whole trajectories."""
    per_traj = np.atleast_2d(per_traj)
    m = per_traj.shape[0]
    if m < 2:
        return float("nan")
    rng = np.random.default_rng(seed)
    means = np.empty(n_resamples)
    for k in range(n_resamples):
        means[k] = per_traj[rng.integers(0, m, m)].mean()
    return float(means.std(ddof=1))


def fano_histogram(ensemble: EnsembleRecord, f_ss: float, t_start: float,
                   bins: int = HISTOGRAM_BINS) -> FanoHistogram:
    """Histogram the pooled stationary Fano samples with the 70 % range.

    The retained range drops every bin whose span of the cumulative
    distribution lies entirely below 15 % or above 85 %, which keeps at
    least 70 % of the total probability between the reported edges.
    """
    if t_start >= ensemble.t_final:
        raise ValueError("t_start must precede t_final")
    samples = ensemble.pooled("f_t", t_start)
    if samples.size < MIN_HISTOGRAM_SAMPLES:
        raise ValueError(
            f"only {samples.size} pooled samples at t >= {t_start}; "
            f"at least {MIN_HISTOGRAM_SAMPLES} are needed for stable "
            "statistics")
    top = max(2.0, 1.2 * float(samples.max()))
    edges = np.linspace(0.0, top, bins + 1)
    counts, _ = np.histogram(samples, bins=edges)
    total = counts.sum()
    cdf_hi = np.cumsum(counts) / total
    cdf_lo = np.concatenate([[0.0], cdf_hi[:-1]])
    keep = (cdf_hi > 0.15) & (cdf_lo < 0.85)
    keep &= counts > 0
    idx = np.flatnonzero(keep)
    lo, hi = float(edges[idx[0]]), float(edges[idx[-1] + 1])
    per_traj = ensemble.per_trajectory("f_t", t_start)
    return FanoHistogram(
        bin_edges=edges, counts=counts, f_cond=float(samples.mean()),
        f_cond_se=bootstrap_se(per_traj),
        p_below=float(np.mean(samples < f_ss)), range70=(lo, hi),
        t_start=float(t_start), n_samples=int(samples.size))


def decompose_fano(ensemble: EnsembleRecord, f_ss: float,
                   t_start: float) -> FanoDecomposition:
    """Split f_ss into the conditional mean Fano and the fluctuation Fano.

    The unconditional number distribution is modeled as the conditional
    distribution smeared by the wandering of its mean; the smearing term is
    the Fano factor of the pooled conditional ``<n>`` samples.
    """
    f_samples = ensemble.pooled("f_t", t_start)
    n_samples = ensemble.pooled("n_t", t_start)
    f_cond = float(f_samples.mean())
    n_mean = float(n_samples.mean())
    f_fluc = float(n_samples.var() / n_mean) if n_mean > 0 else 0.0
    return FanoDecomposition(
        f_ss=float(f_ss), f_cond=f_cond, f_fluc=f_fluc,
        residual=float(f_ss - (f_cond + f_fluc)))


# ---------------------------------------------------------------------------
# parameter sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepPoint:
    delta: float
    phi: float
    objective: float
    valid: bool
    note: str = ""


@dataclass
class SweepResult:
    best: SweepPoint
    table: list[SweepPoint]
    objective_name: str


def sweep_optimize(base_params: SystemParams, *,
                   delta_grid=None, phi_grid=None,
                   objective: str = "f_ss",
                   evaluator=None) -> SweepResult:
    """Grid-minimize ``f_ss`` or ``f_cond`` over detuning and/or homodyne angle.

    ``evaluator(params, phi) -> float`` computes the objective at one grid
    point; grid points without a stable limit cycle are marked invalid and
    excluded from the minimization.  Exact ties resolve toward the smaller
    (delta, phi) pair, compared lexicographically.
    """
    if objective not in ("f_ss", "f_cond"):
        raise ValueError("objective must be 'f_ss' or 'f_cond'")
    if evaluator is None:
        raise ValueError("an evaluator callable is required")
    deltas = [base_params.delta] if delta_grid is None else list(delta_grid)
    phis = [0.0] if phi_grid is None else list(phi_grid)
    if not deltas or not phis:
        raise ValueError("sweep grids must be nonempty")

    table: list[SweepPoint] = []
    for d in deltas:
        params = dataclasses.replace(base_params, delta=float(d))
        try:
            cycles = [s for s in find_limit_cycles(params, 12.0) if s.stable]
        except Exception as exc:
            cycles = []
            note = f"semiclassical failure: {exc}"
        else:
            note = "no stable limit cycle" if not cycles else ""
        for phi in phis:
            if not cycles:
                table.append(SweepPoint(float(d), float(phi), math.nan,
                                        False, note))
                continue
            value = float(evaluator(params, float(phi)))
            table.append(SweepPoint(float(d), float(phi), value, True))
    valid = [pt for pt in table if pt.valid and np.isfinite(pt.objective)]
    if not valid:
        raise ValueError("no valid grid point (limit cycle absent everywhere)")
    best = min(valid, key=lambda pt: (pt.objective, pt.delta, pt.phi))
    return SweepResult(best=best, table=table, objective_name=objective)
