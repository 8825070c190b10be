r"""Radial three-dimensional fields on a sine lattice.

A radial function in three dimensions has the Fourier representation

.. math::

    \hat f(\rho) = \sqrt{\tfrac{2}{\pi}}\,\frac{1}{\rho}
        \int_0^\infty f(r)\, r \sin(r\rho)\, dr,
    \qquad
    f(r) = \sqrt{\tfrac{2}{\pi}}\,\frac{1}{r}
        \int_0^\infty \hat f(\rho)\, \rho \sin(r\rho)\, d\rho,

so :math:`r f(r) \mapsto \rho \hat f(\rho)` is a sine transform.  On
the lattice :math:`r_j = jh`, :math:`h = R/(M+1)`, :math:`j = 1..M`,
with dual nodes :math:`\rho_k = \pi k/R`, the type-I discrete sine
transform makes the pair exactly unitary:

.. math::

    4\pi h \sum_j r_j^2 |f_j|^2 = 4\pi \Delta\rho \sum_k \rho_k^2
    |\hat f_k|^2, \qquad \Delta\rho = \pi/R.

Fields vanish at :math:`r = 0` and :math:`r = R` implicitly (odd
extension), which suits rapidly decaying profiles.  The propagator
:math:`e^{it\Delta}` is the diagonal multiplier :math:`e^{-it\rho^2}`
in this basis, exact on the lattice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy.fft import dst, next_fast_len

__all__ = [
    "RadialGrid",
    "RadialField",
    "make_radial_grid",
    "smooth_radial_size",
    "radial_field_from_function",
    "hat_norm_l2",
    "free_propagate_radial",
    "multiply_M_radial",
    "multiply_E_radial",
    "multiply_An_radial",
    "resolvent_Cn_radial",
]


def smooth_radial_size(m_min: int) -> int:
    """Smallest ``M >= m_min`` such that ``M + 1`` factors FFT-smoothly
    (the type-I DST of length ``M`` runs on an FFT of length
    ``2 (M + 1)``)."""
    return next_fast_len(int(m_min) + 1, real=True) - 1


@dataclass(frozen=True)
class RadialGrid:
    """Sine lattice ``r_j = j R/(M+1)``, ``j = 1..M`` on ``(0, R)``."""

    M: int
    R: float

    def __post_init__(self):
        if self.M < 8:
            raise ValueError("M must be at least 8")
        if not self.R > 0:
            raise ValueError("R must be positive")

    @property
    def h(self) -> float:
        return self.R / (self.M + 1)

    @property
    def drho(self) -> float:
        return math.pi / self.R

    @property
    def rho_max(self) -> float:
        return math.pi * self.M / ((self.M + 1) * self.h)

    @cached_property
    def r(self) -> np.ndarray:
        return self.h * np.arange(1, self.M + 1)

    @cached_property
    def rho(self) -> np.ndarray:
        return self.drho * np.arange(1, self.M + 1)


_RADIAL_CACHE: dict = {}


def make_radial_grid(M: int, R: float) -> RadialGrid:
    """Memoized :class:`RadialGrid` constructor."""
    key = (int(M), float(R))
    g = _RADIAL_CACHE.get(key)
    if g is None:
        g = _RADIAL_CACHE.setdefault(key, RadialGrid(*key))
    return g


class RadialField:
    """Values of a radial function on the sine lattice, with its hat
    computed on demand.  Same update discipline as
    :class:`~nlslab.operators.SpectralField`: treat instances as
    immutable and build new ones through ``with_values`` and
    ``from_hat``."""

    __slots__ = ("grid", "values", "_hat", "meta")

    def __init__(self, grid: RadialGrid, values, hat: Optional[np.ndarray] = None):
        self.grid = grid
        v = np.asarray(values, dtype=complex)
        if v.shape != (grid.M,):
            raise ValueError(f"values must have shape ({grid.M},)")
        self.values = v
        self._hat = hat
        self.meta: Optional[dict] = None  # diagnostics attached by producers

    @property
    def hat(self) -> np.ndarray:
        if self._hat is None:
            g = self.grid
            self._hat = (math.sqrt(2.0 / math.pi) * 0.5 * g.h
                         * dst(g.r * self.values, type=1) / g.rho)
        return self._hat

    @classmethod
    def from_hat(cls, grid: RadialGrid, hat) -> "RadialField":
        hat = np.asarray(hat, dtype=complex)
        vals = (math.sqrt(2.0 / math.pi) * 0.5 * grid.drho
                * dst(grid.rho * hat, type=1) / grid.r)
        return cls(grid, vals, hat=hat.copy())

    def with_values(self, values) -> "RadialField":
        return RadialField(self.grid, values)

    def copy(self) -> "RadialField":
        return RadialField(self.grid, self.values.copy(),
                           None if self._hat is None else self._hat.copy())

    # -- norms ----------------------------------------------------------
    def norm_l2(self) -> float:
        g = self.grid
        return float(np.sqrt(4.0 * math.pi * g.h
                             * np.sum(g.r**2 * np.abs(self.values) ** 2)))

    def norm_lebesgue(self, p) -> float:
        g = self.grid
        a = np.abs(self.values)
        if p == math.inf:
            return float(a.max(initial=0.0))
        p = float(p)
        if p <= 0:
            raise ValueError("p must be positive or inf")
        return float((4.0 * math.pi * g.h * np.sum(g.r**2 * a**p)) ** (1.0 / p))

    # -- arithmetic ------------------------------------------------------
    def _check(self, other: "RadialField"):
        if other.grid is not self.grid and other.grid != self.grid:
            raise ValueError("radial fields live on different grids")

    def __add__(self, other):
        self._check(other)
        return RadialField(self.grid, self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return RadialField(self.grid, self.values - other.values)

    def __mul__(self, c):
        return RadialField(self.grid, c * self.values)

    __rmul__ = __mul__


def radial_field_from_function(grid: RadialGrid,
                               fn: Callable[[np.ndarray], np.ndarray]) -> RadialField:
    """Sample ``fn`` on the radius lattice."""
    return RadialField(grid, np.asarray(fn(grid.r), dtype=complex))


def hat_norm_l2(grid: RadialGrid, hat) -> float:
    r""":math:`L^2` norm evaluated on the dual lattice:
    :math:`(4\pi \Delta\rho \sum_k \rho_k^2 |\hat f_k|^2)^{1/2}`."""
    hat = np.asarray(hat)
    return float(np.sqrt(4.0 * math.pi * grid.drho
                         * np.sum(grid.rho**2 * np.abs(hat) ** 2)))


# ----------------------------------------------------------------------
# diagonal operators
# ----------------------------------------------------------------------

def free_propagate_radial(f: RadialField, t: float) -> RadialField:
    r"""Half-line propagator :math:`e^{it\Delta}`: the multiplier
    :math:`e^{-it\rho^2}` on the sine lattice."""
    g = f.grid
    hat = np.exp(-1j * t * g.rho**2) * f.hat
    return RadialField.from_hat(g, hat)


def multiply_M_radial(f: RadialField, t: float, sign: int = 1) -> RadialField:
    r"""Pointwise :math:`e^{\pm i r^2/4t}`."""
    if t == 0:
        raise ValueError("M(t) requires t != 0")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    g = f.grid
    return f.with_values(np.exp(sign * 0.25j * g.r**2 / t) * f.values)


def multiply_E_radial(f: RadialField, t: float, n) -> RadialField:
    r"""Pointwise :math:`e^{i n t r^2}` (fractional ``n`` allowed)."""
    g = f.grid
    return f.with_values(np.exp(1j * float(n) * t * g.r**2) * f.values)


def multiply_An_radial(f: RadialField, t: float, n: int) -> RadialField:
    r"""Pointwise :math:`(1 + i(1 - 1/n)\,t\,r^2)^{-1}`."""
    if n in (0, 1):
        raise ValueError("A_n is defined for n not in {0, 1}")
    if not t > 0:
        raise ValueError("A_n(t) requires t > 0")
    g = f.grid
    w = 1.0 / (1.0 + 1j * (1.0 - 1.0 / n) * t * g.r**2)
    return f.with_values(w * f.values)


def resolvent_Cn_radial(f: RadialField, t: float, n: int) -> RadialField:
    r"""Fourier multiplier :math:`(1 + i\frac{n-1}{n}\,t\,\rho^2)^{-1}`."""
    if n == 0:
        raise ValueError("C_n requires n != 0")
    if not t > 0:
        raise ValueError("C_n(t) requires t > 0")
    g = f.grid
    w = 1.0 / (1.0 + 1j * ((n - 1.0) / n) * t * g.rho**2)
    return RadialField.from_hat(g, w * f.hat)
