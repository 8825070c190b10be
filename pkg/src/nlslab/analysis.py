r"""Norms, decay-rate fits, and rate verdicts.

All Lebesgue and Sobolev norms use the quadrature convention of
:mod:`nlslab.operators`: an :math:`L^p` norm is the lattice sum scaled
by the cell volume, and Fourier-side norms use the dual cell volume
:math:`(\pi/L)^d`, so that the discrete Plancherel identity

.. math::

    h^d \sum_j |f_j|^2 = (\pi/L)^d \sum_k |\hat f_k|^2

holds exactly.  Decay rates are extracted by least squares on
:math:`\log t \mapsto \log y(t)`; a fit with :math:`y \sim t^{-b}` has
``slope == -b``.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from .operators import SpectralField

__all__ = [
    "DecayFit",
    "FitWarning",
    "fit_decay",
    "rate_verdict",
    "norm_lebesgue",
    "norm_sobolev",
    "norm_sobolev_dot",
    "norm_spacetime",
]


class FitWarning(UserWarning):
    """A least-squares fit is of dubious quality (low r^2, thin shell mass)."""


# ----------------------------------------------------------------------
# decay fits
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    """Result of a power-law fit ``y ~ exp(intercept) * t**slope``.

    ``window`` records the time range actually used, ``n_points`` the
    number of samples in it.  For a decaying quantity the decay
    exponent is ``-slope``.
    """

    slope: float
    intercept: float
    r_squared: float
    window: tuple
    n_points: int

    @property
    def rate(self) -> float:
        """Decay exponent b such that y ~ t^{-b}."""
        return -self.slope

    def evaluate(self, t):
        """The fitted power law at ``t``."""
        return np.exp(self.intercept) * np.asarray(t, dtype=float) ** self.slope


def fit_decay(samples, window=None) -> DecayFit:
    """Least-squares power-law fit through ``samples``.

    ``samples`` is an ``(n, 2)`` array whose columns are abscissae
    (times, mode indices, ...) and positive values.  ``window``
    optionally restricts the fit to ``window[0] <= t <= window[1]``.
    At least three points must survive the restriction, and both
    columns must be strictly positive; a fit with ``r^2 < 0.9`` emits a
    :class:`FitWarning` but is still returned.
    """
    pts = np.asarray(samples, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("samples must be an (n, 2) array of (t, value)")
    t, y = pts[:, 0], pts[:, 1]
    if window is not None:
        lo, hi = float(window[0]), float(window[1])
        keep = (t >= lo) & (t <= hi)
        t, y = t[keep], y[keep]
    if t.size < 3:
        raise ValueError(f"need at least 3 points to fit, got {t.size}")
    if np.any(t <= 0) or np.any(y <= 0):
        raise ValueError("power-law fit requires strictly positive data")
    lx, ly = np.log(t), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    if r2 < 0.9:
        warnings.warn(
            f"power-law fit has r^2 = {r2:.4f} < 0.9 over "
            f"[{t.min():.3g}, {t.max():.3g}]", FitWarning)
    return DecayFit(
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r2,
        window=(float(t.min()), float(t.max())),
        n_points=int(t.size),
    )


def rate_verdict(fit: DecayFit, delta: float, tol: float = 0.1) -> dict:
    """Classify a residual decay fit against the two rate thresholds.

    With ``b = -fit.slope`` the verdict grants ``uniqueness`` when
    ``b >= 3/4 - tol`` (the profile is singled out among modified free
    dynamics) and ``full_rate`` when ``b >= delta/2 - tol`` (the decay
    matches the data regularity ``delta``).
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    b = fit.rate
    return {
        "rate": b,
        "uniqueness": bool(b >= 0.75 - tol),
        "full_rate": bool(b >= 0.5 * delta - tol),
        "uniqueness_threshold": 0.75 - tol,
        "full_rate_threshold": 0.5 * delta - tol,
        "tolerance": tol,
        "delta": float(delta),
        "r_squared": fit.r_squared,
    }


# ----------------------------------------------------------------------
# norms
# ----------------------------------------------------------------------

def norm_lebesgue(f: SpectralField, p) -> float:
    """Lattice ``L^p`` norm, ``p`` a positive real or ``inf``."""
    a = np.abs(np.ravel(f.values))
    if p == math.inf:
        return float(a.max(initial=0.0))
    p = float(p)
    if p <= 0:
        raise ValueError("p must be positive or inf")
    return float((f.grid.cell_volume * np.sum(a**p)) ** (1.0 / p))


def _bracket_x(grid) -> np.ndarray:
    return np.sqrt(1.0 + grid.xsq)


def _bracket_xi(grid) -> np.ndarray:
    return np.sqrt(1.0 + grid.xisq)


def norm_sobolev(f: SpectralField, m: float, s: float = 0.0,
                 homogeneous: bool = False) -> float:
    r"""Weighted Sobolev norm
    :math:`\|\langle\xi\rangle^m \mathcal F(\langle x\rangle^s f)\|_2`.

    With ``homogeneous=True`` the Fourier weight is :math:`|\xi|^m`
    with the zero mode dropped.  For negative ``m`` the result is then
    dominated by the smallest resolved frequencies; if the lowest
    frequency shell (modes with :math:`|\xi| \le \sqrt d\,\pi/L`)
    carries more than 1% of the squared norm, a :class:`FitWarning`
    flags the value as grid-sensitive.
    """
    g = f.grid
    vals = f.values if s == 0 else f.values * _bracket_x(g) ** s
    hat = SpectralField(g, vals).hat
    if not homogeneous:
        w = _bracket_xi(g) ** m
        total = np.sum((w * np.abs(hat)) ** 2)
        return float(np.sqrt(g.dxi**g.d * total))
    xisq = g.xisq
    nz = xisq > 0
    contrib = np.zeros(g.shape)
    contrib[nz] = (xisq[nz] ** m) * np.abs(hat[nz]) ** 2
    total = float(np.sum(contrib))
    if total > 0:
        shell = nz & (xisq <= g.d * g.dxi**2 * (1.0 + 1e-12))
        frac = float(np.sum(contrib[shell])) / total
        if frac > 0.01:
            warnings.warn(
                f"homogeneous norm: lowest frequency shell carries "
                f"{100 * frac:.1f}% of the mass; value is grid-sensitive",
                FitWarning)
    return float(np.sqrt(g.dxi**g.d * total))


def norm_sobolev_dot(f: SpectralField, m: float) -> float:
    r"""Homogeneous norm :math:`\||\xi|^m \hat f\|_2` (zero mode dropped)."""
    return norm_sobolev(f, m, 0.0, homogeneous=True)


def norm_spacetime(traj, q, r, t_lo=None, check_admissible: bool = True) -> float:
    r"""Space-time norm :math:`\|u\|_{L^q([t_{lo},\infty); L^r)}` over a
    sampled trajectory.

    ``traj`` needs ``times`` (increasing) and ``states`` (fields).  The
    time integral is a trapezoid rule over the recorded samples.  By
    default the pair must be Strichartz-admissible for the ambient
    dimension: :math:`2/q = d(1/2 - 1/r)` with :math:`r \in [2,
    2d/(d-2)]`; pass ``check_admissible=False`` to evaluate any pair.
    """
    times = np.asarray(traj.times, dtype=float)
    if isinstance(traj.states, Mapping):
        states = [traj.states[t] for t in traj.times]
    else:
        states = list(traj.states)
    if times.size != len(states):
        raise ValueError("trajectory times and states disagree in length")
    if t_lo is not None:
        keep = times >= float(t_lo)
        times = times[keep]
        states = [s for s, k in zip(states, keep) if k]
    if times.size == 0:
        raise ValueError("no trajectory samples in the requested range")
    d = states[0].grid.d
    if check_admissible:
        r_max = math.inf if d <= 2 else 2.0 * d / (d - 2.0)
        lhs = 0.0 if q == math.inf else 2.0 / float(q)
        rhs = d * (0.5 - (0.0 if r == math.inf else 1.0 / float(r)))
        if abs(lhs - rhs) > 1e-9 or float(r) < 2 or float(r) > r_max:
            raise ValueError(
                f"(q, r) = ({q}, {r}) is not admissible in d = {d}; "
                "pass check_admissible=False to override")
    space = np.array([norm_lebesgue(s, r) for s in states])
    if q == math.inf:
        return float(space.max())
    q = float(q)
    if times.size < 2:
        raise ValueError("need at least 2 samples for a finite-q time integral")
    return float(np.trapezoid(space**q, times) ** (1.0 / q))
