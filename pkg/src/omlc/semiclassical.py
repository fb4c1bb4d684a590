"""Bessel-series theory of the limit cycle: backaction damping, relaxation rate,
static offset, and location/stability of limit-cycle amplitudes.

All formulas evaluate the sideband expansion of the cavity field over a
mechanical oscillation of dimensionless amplitude ``r = 2 g0 B / omega``:
the optically induced damping ``gamma_ba(r)``, the amplitude relaxation rate
``gamma_rel(r)``, and the self-consistent static displacement ``beta_bar``.
A limit cycle sits at each root of ``gamma_ba(r) + gamma = 0`` and is stable
where the local slope of ``gamma_ba`` is positive.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import special

from .fock import SystemParams

__all__ = [
    "SeriesConfig",
    "SemiclassicalSolution",
    "h_n",
    "gamma_ba",
    "gamma_rel",
    "offset_fixed_point",
    "find_limit_cycles",
    "damping_landscape",
]

_MAX_DOUBLINGS = 8
_SCAN_STEP_FACTOR = 0.01  # scan resolution Delta r (dimensionless)


@dataclass(frozen=True)
class SeriesConfig:
    """Numerical knobs for the Bessel sums and root search."""

    n_max: int = 40
    root_tol_factor: float = 1e-10  # absolute tolerance on gamma_ba + gamma, in units of omega
    fixed_point_tol: float = 1e-12
    tail_rel_tol: float = 1e-14

    def __post_init__(self):
        if self.n_max < 5:
            raise ValueError(f"n_max must be >= 5, got {self.n_max}")
        if self.root_tol_factor <= 0 or self.fixed_point_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class SemiclassicalSolution:
    """One limit-cycle amplitude with its rates.

    ``b_ss = r * omega / (2 g0)`` is the amplitude in phonon-ladder units;
    ``t_rel = 1/gamma_rel``.
    """

    r: float
    b_ss: float
    beta_bar_ss: complex
    gamma_ba: float
    gamma_rel: float
    t_rel: float
    stable: bool


def h_n(n, params: SystemParams, beta_bar: complex = 0.0):
    """Sideband Lorentzian denominator kappa^2/4 + (n omega + delta + 2 g0 Re beta_bar)^2."""
    shift = params.delta + 2.0 * params.g0 * np.real(beta_bar)
    return params.kappa**2 / 4.0 + (np.asarray(n) * params.omega + shift) ** 2


def _series(r, params, beta_bar, cfg, terms_fn):
    """Sum terms_fn over n in [-n_max, n_max], doubling n_max until the edge terms vanish."""
    n_max = cfg.n_max
    for _ in range(_MAX_DOUBLINGS):
        ns = np.arange(-n_max, n_max + 1)
        terms = terms_fn(ns)
        abs_scale = np.abs(terms).sum()
        tail = max(abs(terms[0]), abs(terms[-1]))
        if abs_scale == 0.0 or tail <= cfg.tail_rel_tol * abs_scale:
            return float(terms.sum())
        n_max *= 2
    raise RuntimeError(
        f"Bessel series not converged at n_max={n_max} (r={r}): "
        f"edge term {tail:.2e} vs scale {abs_scale:.2e}"
    )


def gamma_ba(r: float, params: SystemParams, beta_bar: complex = 0.0,
             cfg: SeriesConfig = SeriesConfig()) -> float:
    """Optically induced (anti)damping at dimensionless amplitude r >= 0.

    The removable singularity at r = 0 is evaluated analytically from the
    small-argument limit J_n J_{n+1}/r -> 1/2 (n=0), -1/2 (n=-1).
    """
    if r < 0:
        raise ValueError(f"r must be >= 0, got {r}")
    pref = 2.0 * params.kappa * params.g0**2 * params.alpha_laser**2
    if r == 0.0:
        h0 = h_n(0, params, beta_bar)
        h1 = h_n(1, params, beta_bar)
        hm1 = h_n(-1, params, beta_bar)
        return float(0.5 * pref * (1.0 / (h0 * h1) - 1.0 / (hm1 * h0)))

    def terms(ns):
        hn = h_n(ns, params, beta_bar)
        hn1 = h_n(ns + 1, params, beta_bar)
        return special.jv(ns, r) * special.jv(ns + 1, r) / (r * hn * hn1)

    return pref * _series(r, params, beta_bar, cfg, terms)


def gamma_rel(r: float, params: SystemParams, beta_bar: complex = 0.0,
              cfg: SeriesConfig = SeriesConfig()) -> float:
    """Relaxation rate of amplitude deviations from the limit cycle."""
    if r < 0:
        raise ValueError(f"r must be >= 0, got {r}")
    pref = 2.0 * params.kappa * params.g0**2 * params.alpha_laser**2

    def terms(ns):
        hn = h_n(ns, params, beta_bar)
        hn1 = h_n(ns + 1, params, beta_bar)
        jn, jn1 = special.jv(ns, r), special.jv(ns + 1, r)
        jnp, jn1p = special.jvp(ns, r), special.jvp(ns + 1, r)
        return (jnp * jn1 + jn * jn1p) / (hn * hn1)

    return pref * _series(r, params, beta_bar, cfg, terms) + params.gamma


def offset_fixed_point(r: float, params: SystemParams,
                       cfg: SeriesConfig = SeriesConfig()) -> complex:
    """Self-consistent static displacement beta_bar_ss at amplitude r.

    Iterates beta <- (g0/omega) |alpha|^2 sum_n J_n(r)^2 / h_n(beta) with
    damping 0.5: the static radiation-pressure displacement consistent with
    the same sideband expansion as gamma_ba.  The closure yields a real,
    nonnegative offset for g0 > 0; it is returned as complex per the
    interface so alternative closures can be swapped in.
    """
    if params.g0 == 0.0 or params.alpha_laser == 0.0:
        return 0.0 + 0.0j
    beta = 0.0
    pref = (params.g0 / params.omega) * params.alpha_laser**2

    def step(b):
        def terms(ns):
            return special.jv(ns, r) ** 2 / h_n(ns, params, b)
        return pref * _series(r, params, b, cfg, terms)

    for _ in range(1000):
        new = step(beta)
        if abs(new - beta) < cfg.fixed_point_tol:
            return complex(new)
        beta = 0.5 * beta + 0.5 * new
    raise RuntimeError(f"offset fixed point did not converge at r={r}")


def _balance(r, params, cfg, self_consistent):
    beta = offset_fixed_point(r, params, cfg) if self_consistent else 0.0
    return gamma_ba(r, params, beta, cfg) + params.gamma, beta


def find_limit_cycles(params: SystemParams, r_max: float,
                      cfg: SeriesConfig = SeriesConfig(),
                      self_consistent: bool = True) -> list[SemiclassicalSolution]:
    """All limit-cycle amplitudes on (0, r_max], stable where slope of gamma_ba > 0.

    Roots of gamma_ba(r) + gamma = 0 are bracketed by a uniform scan
    (gamma_ba oscillates, so global scanning beats a single Newton start)
    and polished by bisection to the configured absolute tolerance.
    An empty list means the configuration has no limit cycle.
    """
    if r_max <= 0:
        raise ValueError(f"r_max must be > 0, got {r_max}")
    root_tol = cfg.root_tol_factor * params.omega
    rs = np.arange(0.0, r_max + _SCAN_STEP_FACTOR, _SCAN_STEP_FACTOR)
    rs[-1] = min(rs[-1], r_max)
    vals = np.array([_balance(r, params, cfg, self_consistent)[0] for r in rs])

    solutions = []
    for i in range(len(rs) - 1):
        if vals[i] == 0.0 and rs[i] > 0.0:
            lo = hi = rs[i]
        elif vals[i] * vals[i + 1] < 0.0:
            lo, hi = rs[i], rs[i + 1]
        else:
            continue
        flo = vals[i]
        mid, fmid = lo, flo
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            fmid, _ = _balance(mid, params, cfg, self_consistent)
            if abs(fmid) < root_tol or hi - lo < 1e-15 * max(1.0, mid):
                break
            if flo * fmid <= 0.0:
                hi = mid
            else:
                lo, flo = mid, fmid
        beta = offset_fixed_point(mid, params, cfg) if self_consistent else 0.0 + 0.0j
        dr = 1e-6
        slope = (gamma_ba(mid + dr, params, beta, cfg)
                 - gamma_ba(max(mid - dr, 0.0), params, beta, cfg)) / (2 * dr)
        g_rel = gamma_rel(mid, params, beta, cfg)
        solutions.append(SemiclassicalSolution(
            r=float(mid),
            b_ss=float(mid * params.omega / (2.0 * params.g0)) if params.g0 else float("nan"),
            beta_bar_ss=beta,
            gamma_ba=float(gamma_ba(mid, params, beta, cfg)),
            gamma_rel=float(g_rel),
            t_rel=float(1.0 / g_rel) if g_rel != 0 else float("inf"),
            stable=bool(slope > 0),
        ))
    return solutions


def damping_landscape(params: SystemParams, r_values,
                      cfg: SeriesConfig = SeriesConfig(),
                      self_consistent: bool = True):
    """(r, gamma_ba, gamma_rel) rows over a grid of amplitudes, for landscape tables."""
    rows = []
    for r in r_values:
        beta = offset_fixed_point(r, params, cfg) if self_consistent else 0.0
        rows.append((float(r), gamma_ba(r, params, beta, cfg), gamma_rel(r, params, beta, cfg)))
    return rows
