"""Wigner function of a single-mode density matrix over dimensionless phase space.

Axes are in zero-point units (x/x_zpf, p/p_zpf), so a coherent state of
amplitude beta is centered at (sqrt(2) Re beta, sqrt(2) Im beta) and the
discrete integral of W over the grid is 1 for a well-truncated, well-covered
state.  Evaluation uses the iterative Laguerre/Clenshaw recurrence over the
Fock-basis diagonals, which is numerically stable at truncations around 50.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["WignerField", "wigner"]

_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class WignerField:
    """Wigner values on a rectangular phase-space grid.

    ``w[i, j]`` is W at (x=``x[j]``, p=``p[i]``).  ``mass`` is the discrete
    integral over the grid; ``coverage_warning`` flags a grid or truncation
    that fails to capture the state (|mass - 1| > 1e-3).
    """

    x: np.ndarray
    p: np.ndarray
    w: np.ndarray
    mass: float
    coverage_warning: bool


def _laguerre_diagonal(offset: int, x: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Clenshaw evaluation of sum_n c_n (-1)^n sqrt(n!/(n+offset)!) L_n^offset(x)."""
    if len(coeffs) == 1:
        y0 = coeffs[0] * np.ones_like(x)
        y1 = np.zeros_like(x)
    elif len(coeffs) == 2:
        y0 = coeffs[0] * np.ones_like(x)
        y1 = coeffs[1] * np.ones_like(x)
    else:
        k = len(coeffs)
        y0 = coeffs[-2] * np.ones_like(x)
        y1 = coeffs[-1] * np.ones_like(x)
        for i in range(3, len(coeffs) + 1):
            k -= 1
            y0, y1 = (
                coeffs[-i] - y1 * np.sqrt(((k - 1.0) * (offset + k - 1.0)) / ((offset + k) * k)),
                y0 - y1 * (offset + 2.0 * k - 1.0 - x) / np.sqrt((offset + k) * k),
            )
    return y0 - y1 * (offset + 1.0 - x) / np.sqrt(offset + 1.0)


def wigner(rho_b: np.ndarray, x: np.ndarray, p: np.ndarray) -> WignerField:
    """Wigner function of ``rho_b`` on the grid ``x`` (columns) times ``p`` (rows)."""
    rho_b = np.asarray(rho_b, dtype=complex)
    m = rho_b.shape[0]
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    xg, pg = np.meshgrid(x, p)
    # 2*alpha on the grid, alpha = (x + i p)/2 in these units
    a2 = _SQRT2 * (xg + 1j * pg)
    b = np.abs(a2) ** 2

    w = (2.0 * rho_b[0, m - 1]) * np.ones_like(a2)
    # double the off-diagonals so each (n, n+L) pair is counted once with its conjugate
    weighted = rho_b * (2.0 - np.eye(m))
    offset = m - 1
    while offset > 0:
        offset -= 1
        diag = np.diag(weighted, offset)
        w = _laguerre_diagonal(offset, b, diag) + w * a2 / np.sqrt(offset + 1.0)

    w = (w.real * np.exp(-0.5 * b)) / np.pi
    mass = float(np.trapezoid(np.trapezoid(w, x, axis=1), p))
    return WignerField(
        x=x, p=p, w=w, mass=mass, coverage_warning=bool(abs(mass - 1.0) > 1e-3)
    )
