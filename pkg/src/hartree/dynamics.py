"""Hartree flow i phi_t + 1/2 Lap phi = mu (|x|^-2 * |phi|^2) phi on the periodic box."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Literal, Mapping

import numpy as np
import scipy.fft as sfft
from scipy.special import gamma

from .spectral import (
    ComplexField,
    GridSpec,
    fft_workers,
    forward_transform,
    sobolev_norm,
)

Observer = Callable[[int, float, ComplexField], Any]
DataKind = Literal["gaussian", "plane_wave", "rough_Hs"]

ROUGH_EPS = 0.01
IMAG_TOL = 1e-10
MASS_ABORT_TOL = 1e-6


class IntegratorBreakdown(RuntimeError):
    """Raised by :func:`evolve` when the run can no longer be trusted."""

    def __init__(self, message: str, step: int, t: float, trajectory: Trajectory | None = None):
        super().__init__(f"integrator breakdown at step {step} (t={t:.6g}): {message}")
        self.step = step
        self.t = t
        self.trajectory = trajectory


def riesz_constant(n: int) -> float:
    """c_n with FT(|x|^-2)(xi) = c_n |xi|^-(n-2) in n dimensions."""
    if n < 3:
        raise ValueError(f"|x|^-2 is not locally integrable for n={n} < 3")
    return math.pi ** (n / 2) * 2.0 ** (n - 2) * gamma((n - 2) / 2) / gamma(1.0)


def riesz_symbol(r: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros_like(r, dtype=float)
    nz = r > 0
    out[nz] = riesz_constant(n) * r[nz] ** (-(n - 2))
    return out


def _riesz_real(rho: np.ndarray, symbol_half: np.ndarray) -> np.ndarray:
    w = fft_workers()
    return sfft.irfftn(sfft.rfftn(rho, workers=w) * symbol_half, s=rho.shape, workers=w)


def riesz_potential(rho: ComplexField) -> ComplexField:
    """V = |x|^-2 * rho with the zero mode removed; ``rho`` must be real."""
    g = rho.grid
    if g.n < 3:
        raise ValueError(f"|x|^-2 is not locally integrable for n={g.n} < 3")
    scale = max(1.0, float(np.abs(rho.values).max()))
    resid = float(np.abs(rho.values.imag).max())
    if resid > IMAG_TOL * scale:
        raise ValueError(f"density has imaginary residue {resid:.3g}")
    V = _riesz_real(np.ascontiguousarray(rho.values.real), riesz_symbol(g.xi_abs_half, g.n))
    return ComplexField(g, V)


def hartree_nonlinearity(phi: ComplexField, mu: float) -> ComplexField:
    rho = ComplexField(phi.grid, np.abs(phi.values) ** 2)
    V = riesz_potential(rho).values.real
    return ComplexField(phi.grid, mu * V * phi.values)


class StrangStepper:
    """Exact-substep Strang splitting for a fixed grid, step and sign.

    The nonlinear substep phi -> exp(-i mu V dt) phi is exact because it leaves
    |phi|^2, hence V, unchanged. Consecutive linear half steps are fused when
    several steps are taken at once.
    """

    def __init__(self, grid: GridSpec, dt: float, mu: float):
        if grid.n < 3 and mu != 0:
            raise ValueError(f"Hartree nonlinearity needs n >= 3, got n={grid.n}")
        self.grid = grid
        self.dt = dt
        self.mu = mu
        self.half = np.exp(-0.25j * grid.xi_sq * dt)
        self.full = np.exp(-0.5j * grid.xi_sq * dt)
        self._sym = riesz_symbol(grid.xi_abs_half, grid.n) if mu != 0 else None
        self.max_phase = 0.0
        self.last_mass = math.nan

    def _linear(self, values: np.ndarray, prop: np.ndarray) -> np.ndarray:
        w = fft_workers()
        return sfft.ifftn(sfft.fftn(values, workers=w) * prop, workers=w)

    def _nonlinear(self, values: np.ndarray) -> np.ndarray:
        rho = values.real**2 + values.imag**2
        self.last_mass = float(rho.sum()) * self.grid.cell_volume
        if self._sym is None:
            self.max_phase = 0.0
            return values
        V = _riesz_real(rho, self._sym)
        self.max_phase = float(np.abs(V).max()) * abs(self.mu * self.dt)
        return values * np.exp((-1j * self.mu * self.dt) * V)

    def advance(
        self, values: np.ndarray, steps: int, check: Callable[[int], None] | None = None
    ) -> np.ndarray:
        """Take ``steps`` Strang steps; ``check(i)`` runs after each nonlinear substep."""
        if steps <= 0:
            return values
        u = self._linear(values, self.half)
        for i in range(steps):
            u = self._nonlinear(u)
            if check is not None:
                check(i)
            u = self._linear(u, self.full if i < steps - 1 else self.half)
        return u


def step_strang(phi: ComplexField, dt: float, mu: float) -> ComplexField:
    if dt == 0:
        return phi
    stepper = StrangStepper(phi.grid, dt, mu)
    return ComplexField(phi.grid, stepper.advance(phi.values, 1))


# -- configuration and trajectories -----------------------------------------


@dataclass(frozen=True)
class SimConfig:
    mu: float
    grid: GridSpec
    dt: float
    T: float
    s: float = 0.8
    N: float = 8.0
    seed: int = 0
    sample_every: int = 10

    def __post_init__(self) -> None:
        if self.mu not in (-1, 0, 1):
            raise ValueError(f"mu must be +1, -1 or 0 (linear), got {self.mu}")
        if not self.dt > 0 or not self.T > 0:
            raise ValueError("dt and T must be positive")
        if not self.N >= 1:
            raise ValueError(f"cutoff N must be >= 1, got {self.N}")
        if not 0 < self.s < 1:
            raise ValueError(f"regularity s must lie in (0, 1), got {self.s}")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")
        wrap = self.dt * float(self.grid.xi_sq.max()) / 2
        if wrap >= 2 * math.pi:
            raise ValueError(f"linear phase per step {wrap:.3g} exceeds 2*pi; reduce dt")
        self.steps  # validates T/dt

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def steps(self) -> int:
        k = round(self.T / self.dt)
        if k < 1 or abs(k * self.dt - self.T) > 1e-9 * max(1.0, self.T):
            raise ValueError(f"T={self.T} is not an integer multiple of dt={self.dt}")
        return k


@dataclass
class Trajectory:
    steps: list[int] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    states: list[ComplexField] = field(default_factory=list)
    records: list[dict[str, Any]] = field(default_factory=list)

    @property
    def final(self) -> ComplexField:
        return self.states[-1]

    def column(self, name: str) -> list[Any]:
        return [r[name] for r in self.records]


def evolve(
    cfg: SimConfig,
    phi0: ComplexField,
    observers: Mapping[str, Observer] | None = None,
    *,
    keep_states: bool = True,
    start_step: int = 0,
    stop_step: int | None = None,
    extra_stops: tuple[int, ...] = (),
    on_stop: Callable[[int, float, ComplexField], None] | None = None,
    mass_ref: float | None = None,
    record_start: bool = True,
) -> Trajectory:
    """Integrate from ``start_step`` to ``stop_step`` (default ``cfg.steps``).

    Observers are called at every multiple of ``cfg.sample_every`` and at the
    final step; ``on_stop`` additionally fires at ``extra_stops`` (checkpoints).
    ``record_start=False`` skips the sample at ``start_step`` (used on resume).
    Raises :class:`IntegratorBreakdown` on relative mass drift above 1e-6, on a
    non-finite state, or when the nonlinear phase per step exceeds pi.
    """
    if phi0.grid != cfg.grid:
        raise ValueError("initial data lives on a different grid than the config")
    observers = dict(observers or {})
    stop = cfg.steps if stop_step is None else stop_step
    se = cfg.sample_every
    stepper = StrangStepper(cfg.grid, cfg.dt, cfg.mu)
    m0 = float(np.sum(np.abs(phi0.values) ** 2)) * cfg.grid.cell_volume if mass_ref is None else mass_ref
    traj = Trajectory()

    def record(step: int, state: ComplexField) -> None:
        t = step * cfg.dt
        traj.steps.append(step)
        traj.times.append(t)
        if keep_states:
            traj.states.append(state)
        elif traj.states:
            traj.states[0] = state
        else:
            traj.states.append(state)
        traj.records.append({name: obs(step, t, state) for name, obs in observers.items()})

    stops = {s for s in range(start_step, stop + 1) if s % se == 0}
    stops |= {s for s in extra_stops if start_step < s <= stop}
    stops |= {start_step, stop}
    ordered = sorted(stops)

    values = phi0.values
    current = phi0
    for a, b in zip([None] + ordered[:-1], ordered):
        if a is not None:
            def check(i: int, a: int = a) -> None:
                step = a + i + 1
                mass = stepper.last_mass
                if not math.isfinite(mass) or (m0 > 0 and abs(mass - m0) > MASS_ABORT_TOL * m0):
                    raise IntegratorBreakdown(
                        f"relative mass drift {abs(mass - m0) / m0 if m0 else mass:.3g}",
                        step, step * cfg.dt, traj)
                if stepper.max_phase > math.pi:
                    raise IntegratorBreakdown(
                        f"nonlinear phase per step {stepper.max_phase:.3g} exceeds pi",
                        step, step * cfg.dt, traj)

            values = stepper.advance(values, b - a, check)
            if not np.all(np.isfinite(values)):
                raise IntegratorBreakdown("non-finite state", b, b * cfg.dt, traj)
            current = ComplexField(cfg.grid, values)
        if (b % se == 0 or b == stop) and (record_start or b != start_step):
            record(b, current)
        if on_stop is not None and b in extra_stops and b != start_step:
            on_stop(b, b * cfg.dt, current)
    return traj


# -- scaling -----------------------------------------------------------------


def _is_dyadic(lam: float) -> bool:
    e = math.log2(lam)
    return abs(e - round(e)) < 1e-12


def _resize_coeffs(c: np.ndarray, M_new: int) -> tuple[np.ndarray, float]:
    """Zero-pad or truncate FFT-ordered coefficients; returns (coeffs, dropped l2 fraction)."""
    M = c.shape[0]
    n = c.ndim
    out = np.zeros((M_new,) * n, dtype=np.complex128)
    keep = min(M, M_new) // 2  # modes -keep+1 .. keep-1 survive exactly; Nyquist dropped
    idx_old = np.r_[0:keep, M - keep + 1 : M]
    idx_new = np.r_[0:keep, M_new - keep + 1 : M_new]
    out[np.ix_(*([idx_new] * n))] = c[np.ix_(*([idx_old] * n))]
    total = float(np.sum(np.abs(c) ** 2))
    kept = float(np.sum(np.abs(out) ** 2))
    return out, (total - kept) / total if total > 0 else 0.0


def scale_field(
    phi: ComplexField, lam: float, matched: bool | None = None, tol: float = 1e-12
) -> ComplexField:
    """Mass-critical rescaling lam^(-n/2) phi(x/lam).

    With ``matched`` (default for dyadic ``lam``) the result lives on the grid
    with box ``lam*L`` and the same spacing, where the map is exact on the
    band-limited interpolant. Otherwise the interpolant is resampled on the
    original grid.
    """
    if not lam > 0:
        raise ValueError(f"scale factor must be positive, got {lam}")
    g = phi.grid
    if lam == 1:
        return phi
    if matched is None:
        matched = _is_dyadic(lam)
    c = forward_transform(phi).coeffs
    if matched:
        if not _is_dyadic(lam):
            raise ValueError(f"matched-grid scaling needs dyadic lambda, got {lam}")
        M_new = round(g.M * lam)
        if M_new < 4:
            raise ValueError(f"scaled grid would have M={M_new} < 4")
        new_grid = GridSpec(g.n, M_new, g.L * lam)
        coeffs, lost = _resize_coeffs(c, M_new)
        if lost > tol:
            raise ValueError(f"scaled data escapes the resolved band (lost fraction {lost:.3g})")
        coeffs *= lam ** (-g.n / 2)
        phase = new_grid._phase
        vals = sfft.ifftn(coeffs * phase, workers=fft_workers()) * new_grid.size
        return ComplexField(new_grid, vals)

    # same grid: evaluate the interpolant at x/lam axis by axis
    x = g.x1d / lam
    inside = np.abs(x) <= g.L / 2
    if lam > 1:
        rho = np.abs(phi.values) ** 2
        keep = np.ones(g.shape, dtype=bool)
        lim = np.abs(g.x1d) < g.L / (2 * lam)
        for ax in range(g.n):
            shape = [1] * g.n
            shape[ax] = g.M
            keep = keep & lim.reshape(shape)
        outside = float(rho[~keep].sum() / rho.sum()) if rho.sum() > 0 else 0.0
        if outside > tol:
            raise ValueError(f"scaled data escapes the box (outside mass fraction {outside:.3g})")
    else:
        band = g.xi_abs <= lam * g.nyquist
        lost = float(np.sum(np.abs(c[~band]) ** 2) / max(np.sum(np.abs(c) ** 2), 1e-300))
        if lost > tol:
            raise ValueError(f"scaled data exceeds the Nyquist band (lost fraction {lost:.3g})")
    E = np.exp(1j * np.outer(x, g.xi1d)) * inside[:, None]
    vals = c
    for ax in range(g.n):
        vals = np.moveaxis(np.tensordot(E, vals, axes=([1], [ax])), 0, ax)
    return ComplexField(g, vals * lam ** (-g.n / 2))


# -- initial data ------------------------------------------------------------


def _vec(value: Any, n: int, default: float = 0.0) -> np.ndarray:
    if value is None:
        return np.full(n, default, dtype=float)
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        return np.full(n, float(arr[0]))
    if arr.size != n:
        raise ValueError(f"expected {n} components, got {arr.size}")
    return arr


def make_initial_data(
    grid: GridSpec, kind: DataKind, params: Mapping[str, Any] | None = None, seed: int = 0
) -> ComplexField:
    """Initial data generators.

    gaussian:   amplitude, sigma, center (vector), boost (vector k)
    plane_wave: amplitude, mode (integer lattice vector)
    rough_Hs:   s, target (H^s norm), eps (default 0.01), radius (optional
                Gaussian envelope width)
    """
    p = dict(params or {})
    n = grid.n
    if kind == "gaussian":
        A = complex(p.pop("amplitude", 1.0))
        sigma = float(p.pop("sigma", 1.0))
        x0 = _vec(p.pop("center", None), n)
        k = _vec(p.pop("boost", None), n)
        _no_extra(kind, p)
        xs = grid.coords()
        r2 = sum((x - c) ** 2 for x, c in zip(xs, x0))
        phase = sum(kk * x for kk, x in zip(k, xs))
        vals = A * np.exp(-r2 / (2 * sigma**2)) * np.exp(1j * phase)
        return ComplexField(grid, np.broadcast_to(vals, grid.shape))
    if kind == "plane_wave":
        A = complex(p.pop("amplitude", 1.0))
        mode = tuple(int(m) for m in _vec(p.pop("mode", None), n))
        _no_extra(kind, p)
        xi0 = [2 * np.pi * m / grid.L for m in mode]
        phase = sum(k * x for k, x in zip(xi0, grid.coords()))
        return ComplexField(grid, np.broadcast_to(A * np.exp(1j * phase), grid.shape))
    if kind == "rough_Hs":
        s = float(p.pop("s"))
        target = float(p.pop("target", 1.0))
        eps = float(p.pop("eps", ROUGH_EPS))
        radius = p.pop("radius", None)
        _no_extra(kind, p)
        rng = np.random.default_rng(seed)
        z = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
        std = (1.0 + grid.xi_sq) ** (-(s + n / 2 + eps) / 2)
        c = z * std / math.sqrt(2)
        c[grid.nyquist_mask] = 0.0
        vals = sfft.ifftn(c * grid._phase, workers=fft_workers()) * grid.size
        if radius is not None:
            r2 = sum(x**2 for x in grid.coords())
            vals = vals * np.exp(-r2 / (2 * float(radius) ** 2))
        f = ComplexField(grid, vals)
        norm = sobolev_norm(f, s)
        return f * (target / norm)
    raise ValueError(f"unknown initial data kind {kind!r}")


def _no_extra(kind: str, p: Mapping[str, Any]) -> None:
    if p:
        raise ValueError(f"unknown parameters for {kind}: {sorted(p)}")
