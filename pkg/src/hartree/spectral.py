"""Discrete spectral calculus on a periodic box [-L/2, L/2)^n.

Conventions
-----------
Grid points are ``x_j = -L/2 + j*h`` with ``h = L/M``; the frequency lattice is
``xi_k = 2*pi*k/L`` for integer ``k`` in ``[-M/2, M/2)``.

Spectral coefficients are Fourier-series coefficients of the band-limited
interpolant::

    f(x) = sum_k c_k exp(i xi_k . x),   c_k = M^-n sum_j f(x_j) exp(-i xi_k . x_j)

so a constant field ``c`` has a single coefficient ``c`` at ``k = 0`` and
Parseval reads ``sum_j |f_j|^2 h^n = L^n sum_k |c_k|^2``. Coefficient arrays use
the numpy FFT ordering.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Literal

import numpy as np
import scipy.fft as sfft

Kind = Literal["homogeneous", "inhomogeneous"]
RadialSymbol = Callable[[np.ndarray], np.ndarray]


class ResolutionWarning(UserWarning):
    """Requested frequency band is not resolved by the lattice."""


def fft_workers() -> int:
    """Worker count for FFTs, capped by ``HRTE_THREADS`` when set."""
    cap = os.environ.get("HRTE_THREADS")
    if cap:
        return max(1, int(cap))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class GridSpec:
    n: int
    M: int
    L: float

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"dimension must be >= 1, got {self.n}")
        if self.M < 4 or self.M & (self.M - 1):
            raise ValueError(f"M must be a power of two >= 4, got {self.M}")
        if not (self.L > 0 and math.isfinite(self.L)):
            raise ValueError(f"box length must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return self.L / self.M

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.M,) * self.n

    @property
    def size(self) -> int:
        return self.M**self.n

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    @property
    def volume(self) -> float:
        return self.L**self.n

    @property
    def nyquist(self) -> float:
        """Largest resolved frequency along a single axis."""
        return math.pi * self.M / self.L

    @cached_property
    def x1d(self) -> np.ndarray:
        return -self.L / 2 + self.h * np.arange(self.M)

    @cached_property
    def k1d(self) -> np.ndarray:
        """Integer wavenumbers in FFT ordering."""
        return np.fft.fftfreq(self.M, d=1.0 / self.M).astype(np.int64)

    @cached_property
    def xi1d(self) -> np.ndarray:
        return 2 * np.pi / self.L * self.k1d

    def coords(self) -> list[np.ndarray]:
        """Sparse coordinate arrays, broadcastable to ``shape``."""
        return np.meshgrid(*([self.x1d] * self.n), indexing="ij", sparse=True)

    def frequencies(self) -> list[np.ndarray]:
        return np.meshgrid(*([self.xi1d] * self.n), indexing="ij", sparse=True)

    @cached_property
    def xi_sq(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for xi in self.frequencies():
            out = out + xi**2
        return out

    @cached_property
    def xi_abs(self) -> np.ndarray:
        return np.sqrt(self.xi_sq)

    @cached_property
    def xi_abs_half(self) -> np.ndarray:
        """|xi| on the rfftn half lattice (last axis truncated)."""
        axes = [self.xi1d] * (self.n - 1) + [self.xi1d[: self.M // 2 + 1].copy()]
        axes[-1][-1] = np.pi * self.M / self.L  # rfft keeps +Nyquist on the last axis
        mesh = np.meshgrid(*axes, indexing="ij", sparse=True)
        return np.sqrt(sum(a**2 for a in mesh))

    @cached_property
    def _phase(self) -> np.ndarray:
        # exp(i xi_k L/2) = (-1)^k per axis, from the -L/2 grid offset
        sign = np.where(self.k1d % 2 == 0, 1.0, -1.0)
        out = np.ones(self.shape)
        for s in np.meshgrid(*([sign] * self.n), indexing="ij", sparse=True):
            out = out * s
        return out

    @property
    def nyquist_mask(self) -> np.ndarray:
        """True on lattice points with any component at the Nyquist index."""
        mask = np.zeros(self.shape, dtype=bool)
        for k in np.meshgrid(*([self.k1d] * self.n), indexing="ij", sparse=True):
            mask = mask | (k == -self.M // 2)
        return mask


def _first_bad_index(values: np.ndarray) -> tuple[int, ...] | None:
    bad = ~np.isfinite(values)
    if not bad.any():
        return None
    return tuple(int(i) for i in np.unravel_index(np.argmax(bad), values.shape))


@dataclass(frozen=True, eq=False)
class ComplexField:
    """Complex amplitudes on a grid, stored with shape ``grid.shape``."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.complex128)
        if vals.size != self.grid.size:
            raise ValueError(f"field has {vals.size} values, grid needs {self.grid.size}")
        vals = vals.reshape(self.grid.shape)
        bad = _first_bad_index(vals)
        if bad is not None:
            raise ValueError(f"non-finite field value at index {bad}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __mul__(self, c: complex) -> ComplexField:
        return ComplexField(self.grid, self.values * c)

    __rmul__ = __mul__

    def __add__(self, other: ComplexField) -> ComplexField:
        _same_grid(self.grid, other.grid)
        return ComplexField(self.grid, self.values + other.values)

    def __sub__(self, other: ComplexField) -> ComplexField:
        _same_grid(self.grid, other.grid)
        return ComplexField(self.grid, self.values - other.values)


@dataclass(frozen=True, eq=False)
class SpectralCoeffs:
    grid: GridSpec
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.size != self.grid.size:
            raise ValueError(f"{c.size} coefficients, grid needs {self.grid.size}")
        c = c.reshape(self.grid.shape)
        bad = _first_bad_index(c)
        if bad is not None:
            raise ValueError(f"non-finite coefficient at index {bad}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def __add__(self, other: SpectralCoeffs) -> SpectralCoeffs:
        _same_grid(self.grid, other.grid)
        return SpectralCoeffs(self.grid, self.coeffs + other.coeffs)

    def __mul__(self, c: complex) -> SpectralCoeffs:
        return SpectralCoeffs(self.grid, self.coeffs * c)

    __rmul__ = __mul__


def _same_grid(a: GridSpec, b: GridSpec) -> None:
    if a != b:
        raise ValueError(f"grid mismatch: {a} vs {b}")


def field_from_function(grid: GridSpec, fn: Callable[..., np.ndarray]) -> ComplexField:
    """Sample ``fn(x1, ..., xn)`` on the grid."""
    vals = np.broadcast_to(fn(*grid.coords()), grid.shape)
    return ComplexField(grid, vals)


def plane_wave(grid: GridSpec, mode: tuple[int, ...], amplitude: complex = 1.0) -> ComplexField:
    """``amplitude * exp(i xi0.x)`` for the integer lattice mode ``mode``."""
    if len(mode) != grid.n:
        raise ValueError(f"mode {mode} has wrong length for n={grid.n}")
    xi0 = [2 * np.pi * k / grid.L for k in mode]
    return field_from_function(
        grid, lambda *x: amplitude * np.exp(1j * sum(k * xx for k, xx in zip(xi0, x)))
    )


# -- transforms -------------------------------------------------------------


def forward_transform(f: ComplexField) -> SpectralCoeffs:
    g = f.grid
    c = sfft.fftn(f.values, workers=fft_workers()) * (g._phase / g.size)
    return SpectralCoeffs(g, c)


def inverse_transform(c: SpectralCoeffs) -> ComplexField:
    g = c.grid
    vals = sfft.ifftn(c.coeffs * g._phase, workers=fft_workers()) * g.size
    return ComplexField(g, vals)


def spectral_l2_norm(c: SpectralCoeffs) -> float:
    """Weighted l2 norm of coefficients; equals the physical L2 norm."""
    return math.sqrt(c.grid.volume * float(np.sum(np.abs(c.coeffs) ** 2)))


def _multiply(values: np.ndarray, symbol: np.ndarray) -> np.ndarray:
    w = fft_workers()
    return sfft.ifftn(sfft.fftn(values, workers=w) * symbol, workers=w)


def evaluate_symbol(sigma: RadialSymbol, r: np.ndarray) -> np.ndarray:
    vals = np.asarray(sigma(r))
    vals = np.broadcast_to(vals, r.shape)
    if not np.all(np.isfinite(vals)):
        bad = _first_bad_index(vals)
        raise ValueError(f"radial symbol is non-finite at |xi| = {float(r[bad])!r}")
    return vals


def apply_radial_multiplier(f: ComplexField, sigma: RadialSymbol) -> ComplexField:
    """Return ``inverse(sigma(|xi|) * forward(f))``.

    ``sigma`` receives the array of lattice ``|xi|`` values, including 0.
    """
    symbol = evaluate_symbol(sigma, f.grid.xi_abs)
    return ComplexField(f.grid, _multiply(f.values, symbol))


# -- Littlewood-Paley --------------------------------------------------------


def _mollifier(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x, dtype=float)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def lp_cutoff(r: np.ndarray) -> np.ndarray:
    """Smooth cutoff psi: 1 on [0, 1], 0 on [2, inf)."""
    r = np.asarray(r, dtype=float)
    a = _mollifier(2.0 - r)
    b = _mollifier(r - 1.0)
    return a / (a + b)


def lp_bump(r: np.ndarray) -> np.ndarray:
    """Dyadic bump phi(r) = psi(r) - psi(2r), supported in [1/2, 2], phi(1) = 1."""
    r = np.asarray(r, dtype=float)
    return lp_cutoff(r) - lp_cutoff(2.0 * r)


def _check_band(grid: GridSpec, top: float) -> None:
    if top > grid.nyquist:
        warnings.warn(
            f"band edge {top:g} exceeds the Nyquist frequency {grid.nyquist:g}",
            ResolutionWarning,
            stacklevel=3,
        )


def lp_project(f: ComplexField, k: int) -> ComplexField:
    """Dyadic projection P_k onto 2^(k-1) <= |xi| <= 2^(k+1)."""
    _check_band(f.grid, 2.0 ** (k + 1))
    scale = 2.0**k
    return apply_radial_multiplier(f, lambda r: lp_bump(r / scale))


def lp_low(f: ComplexField, k0: int = 0) -> ComplexField:
    """Low-frequency block P_{<=k0} with symbol psi(|xi| / 2^k0)."""
    scale = 2.0**k0
    return apply_radial_multiplier(f, lambda r: lp_cutoff(r / scale))


def lp_top_index(grid: GridSpec) -> int:
    """Smallest K with psi(|xi|/2^K) = 1 on every lattice frequency."""
    rmax = float(grid.xi_abs.max())
    return max(1, math.ceil(math.log2(max(rmax, 1.0))))


def lp_decompose(f: ComplexField, k0: int = 0) -> tuple[ComplexField, dict[int, ComplexField]]:
    """Low block plus dyadic pieces k0+1..K; they sum back to ``f``."""
    top = lp_top_index(f.grid)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResolutionWarning)
        pieces = {k: lp_project(f, k) for k in range(k0 + 1, max(top, k0) + 1)}
    return lp_low(f, k0), pieces


# -- derivatives and norms ---------------------------------------------------


def frac_symbol(s: float, kind: Kind) -> RadialSymbol:
    if kind == "inhomogeneous":
        return lambda r: (1.0 + r**2) ** (s / 2)
    if kind != "homogeneous":
        raise ValueError(f"unknown derivative kind {kind!r}")
    if s == 0:
        return lambda r: np.ones_like(r)

    def sym(r: np.ndarray) -> np.ndarray:
        out = np.zeros_like(r, dtype=float)
        nz = r > 0
        out[nz] = r[nz] ** s
        return out

    return sym


def frac_derivative(f: ComplexField, s: float, kind: Kind = "inhomogeneous") -> ComplexField:
    """``|grad|^s f`` (zero mode mapped to 0) or ``<grad>^s f``."""
    return apply_radial_multiplier(f, frac_symbol(s, kind))


def sobolev_norm(f: ComplexField, s: float, kind: Kind = "inhomogeneous") -> float:
    c = forward_transform(f).coeffs
    w = frac_symbol(s, kind)(f.grid.xi_abs)
    return math.sqrt(f.grid.volume * float(np.sum(w**2 * np.abs(c) ** 2)))


def lebesgue_norm(f: ComplexField, p: float) -> float:
    if not p >= 1:
        raise ValueError(f"Lebesgue exponent must be >= 1, got {p}")
    a = np.abs(f.values)
    if math.isinf(p):
        return float(a.max())
    return float(np.sum(a**p) * f.grid.cell_volume) ** (1.0 / p)


def gradient(f: ComplexField) -> list[np.ndarray]:
    """Spectral gradient components; Nyquist modes are dropped."""
    g = f.grid
    w = fft_workers()
    fh = sfft.fftn(f.values, workers=w)
    fh[g.nyquist_mask] = 0.0
    return [sfft.ifftn(1j * xi * fh, workers=w) for xi in g.frequencies()]
