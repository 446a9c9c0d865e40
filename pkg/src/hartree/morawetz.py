"""Interaction Morawetz functional, its defocusing term, space-time norms and bound fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .dynamics import Trajectory
from .imethod import MultiplierSpec, apply_I, potential_energy
from .spectral import ComplexField, GridSpec, gradient, lebesgue_norm, sobolev_norm

BoundKind = Literal["l4_3d", "admissible_pair", "I_version"]
ORACLE_MAX_POINTS = 4096
_CHUNK = 1 << 16


@dataclass
class PairSampler:
    """Deterministic sample stream; shard ``i`` of ``shards`` draws an independent substream."""

    seed: int = 0
    budget: int = 20_000
    shards: int = 1
    variances: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.budget <= 0:
            raise ValueError("sampler budget must be positive")
        if self.shards < 1:
            raise ValueError("need at least one shard")

    def generators(self) -> list[np.random.Generator]:
        children = np.random.SeedSequence(self.seed).spawn(self.shards)
        return [np.random.default_rng(c) for c in children]

    def shard_sizes(self) -> list[int]:
        base, extra = divmod(self.budget, self.shards)
        return [base + (i < extra) for i in range(self.shards)]


def minimum_image(d: np.ndarray, L: float) -> np.ndarray:
    """Wrap displacements into (-L/2, L/2]."""
    return d - L * np.ceil(d / L - 0.5)


def _unit(d: np.ndarray, L: float) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-image unit vectors (last axis = components) and distances.

    A component sitting exactly at the antipode has two equally short images;
    averaging them zeroes that component of the unit vector.
    """
    d = minimum_image(d, L)
    r = np.sqrt(np.sum(d**2, axis=-1))
    anti = np.isclose(np.abs(d), L / 2, rtol=0, atol=1e-12 * L)
    d = np.where(anti, 0.0, d)
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(r[..., None] > 0, d / r[..., None], 0.0)
    return u, r


def momentum_density(phi: ComplexField) -> np.ndarray:
    """Im(conj(phi) grad phi), shape ``(n, *grid.shape)``."""
    grads = gradient(phi)
    conj = np.conj(phi.values)
    return np.stack([np.imag(conj * g) for g in grads])


def _points(grid: GridSpec, flat_idx: np.ndarray) -> np.ndarray:
    idx = np.stack(np.unravel_index(flat_idx, grid.shape), axis=-1)
    return grid.x1d[idx]


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    samples: int = 0
    skipped: int = 0


def interaction_potential(
    phi: ComplexField, sampler: PairSampler | None = None, oracle: bool = False
) -> Estimate:
    """M[phi] = int int |phi(x)|^2 Im(conj(phi) grad phi)(y).(y-x)/|y-x| dx dy.

    Monte-Carlo over uniform grid pairs, or the exhaustive double sum when
    ``oracle`` is set (grids with at most 4096 points).
    """
    g = phi.grid
    rho = (np.abs(phi.values) ** 2).ravel()
    p = momentum_density(phi).reshape(g.n, -1).T
    w = g.cell_volume**2
    if oracle:
        if g.size > ORACLE_MAX_POINTS:
            raise ValueError(f"oracle mode limited to {ORACLE_MAX_POINTS} points, grid has {g.size}")
        pts = _points(g, np.arange(g.size))
        total = 0.0
        rows = max(1, _CHUNK // g.size)
        for a in range(0, g.size, rows):
            u, _ = _unit(pts[None, :, :] - pts[a : a + rows, None, :], g.L)
            total += float(np.einsum("i,ijk,jk->", rho[a : a + rows], u, p))
        return Estimate(total * w, 0.0, g.size**2)
    if sampler is None:
        raise ValueError("Monte-Carlo mode needs a sampler")
    vals = []
    for rng, m in zip(sampler.generators(), sampler.shard_sizes()):
        i = rng.integers(0, g.size, m)
        j = rng.integers(0, g.size, m)
        u, _ = _unit(_points(g, j) - _points(g, i), g.L)
        vals.append(rho[i] * np.einsum("ij,ij->i", u, p[j]))
    f = np.concatenate(vals) * (g.size**2 * w)
    var = float(f.var(ddof=1)) if f.size > 1 else 0.0
    sampler.variances.append(var)
    return Estimate(float(f.mean()), math.sqrt(var / f.size), f.size)


def _triple_kernel(
    x: np.ndarray, y: np.ndarray, z: np.ndarray, L: float, exponent: int = 3
) -> tuple[np.ndarray, np.ndarray]:
    uyx, ryx = _unit(y - x, L)
    uzx, rzx = _unit(z - x, L)
    dyz = minimum_image(y - z, L)
    ryz = np.sqrt(np.sum(dyz**2, axis=-1))
    bad = (ryx == 0) | (rzx == 0) | (ryz == 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        k = 2.0 * np.einsum("...k,...k->...", uyx - uzx, dyz) / ryz**exponent
    return np.where(bad, 0.0, k), bad


def defocusing_term_estimate(
    phi: ComplexField, sampler: PairSampler | None = None, oracle: bool = False, exponent: int = 3
) -> Estimate:
    """2 int |phi|^2(x)|phi|^2(y)|phi|^2(z) (u_yx - u_zx).(y-z)/|y-z|^p dx dy dz, p = ``exponent``.

    Differentiating the |x|^-2 potential gives p = 4; either way the kernel
    is pointwise nonnegative in free space because u -> u/|u| is monotone.
    On the torus minimum-image wrapping can break that for spread-out data.

    Points are drawn i.i.d. from |phi|^2, so the estimator is mass^3 times the
    kernel mean; triples with coincident points contribute 0 and are counted
    in ``skipped``. ``oracle`` evaluates the full triple sum (tiny grids only).
    """
    g = phi.grid
    rho = (np.abs(phi.values) ** 2).ravel()
    mass = float(rho.sum()) * g.cell_volume
    if mass == 0:
        return Estimate(0.0, 0.0)
    if oracle:
        if g.size > 512:
            raise ValueError("triple oracle limited to 512 grid points")
        pts = _points(g, np.arange(g.size))
        dyz = minimum_image(pts[:, None, :] - pts[None, :, :], g.L)
        ryz = np.sqrt(np.sum(dyz**2, axis=-1))
        with np.errstate(divide="ignore"):
            w_yz = np.where(ryz > 0, 2.0 / ryz**exponent, 0.0)
        total = 0.0
        skipped = 0
        for a in range(g.size):
            u, r = _unit(pts - pts[a], g.L)
            ok = r > 0
            k = (np.einsum("yk,yzk->yz", u, dyz) - np.einsum("zk,yzk->yz", u, dyz)) * w_yz
            k = k * ok[:, None] * ok[None, :]
            total += rho[a] * float(rho @ k @ rho)
            skipped += int(g.size**2 - np.count_nonzero(ok[:, None] & ok[None, :] & (ryz > 0)))
        return Estimate(total * g.cell_volume**3, 0.0, g.size**3, skipped)
    if sampler is None:
        raise ValueError("Monte-Carlo mode needs a sampler")
    prob = rho / rho.sum()
    vals, skipped = [], 0
    for rng, m in zip(sampler.generators(), sampler.shard_sizes()):
        idx = rng.choice(g.size, size=(3, m), p=prob)
        k, bad = _triple_kernel(*(_points(g, i) for i in idx), g.L, exponent)
        vals.append(k)
        skipped += int(bad.sum())
    f = np.concatenate(vals) * mass**3
    var = float(f.var(ddof=1)) if f.size > 1 else 0.0
    sampler.variances.append(var)
    return Estimate(float(f.mean()), math.sqrt(var / f.size), f.size, skipped)


# -- space-time norms --------------------------------------------------------


def _norm_series(states: Sequence[ComplexField], r: float) -> np.ndarray:
    return np.array([lebesgue_norm(s, r) for s in states])


def spacetime_norm_from_series(times: Sequence[float], norms: Sequence[float], q: float) -> float:
    """(int |phi(t)|_{L^r}^q dt)^(1/q) by the trapezoid rule; q = inf gives the max."""
    norms = np.asarray(norms, dtype=float)
    if norms.size == 0:
        raise ValueError("empty trajectory")
    if math.isinf(q):
        return float(norms.max())
    return float(np.trapezoid(norms**q, np.asarray(times, dtype=float))) ** (1.0 / q)


def spacetime_norm(traj: Trajectory, q: float, r: float) -> float:
    if not traj.times:
        raise ValueError("empty trajectory")
    if len(traj.states) != len(traj.times):
        raise ValueError("trajectory was recorded without states")
    return spacetime_norm_from_series(traj.times, _norm_series(traj.states, r), q)


def admissible_pair(n: int) -> tuple[float, float]:
    return 4 * (n - 1) / n, 2 * (n - 1) / (n - 2)


@dataclass(frozen=True)
class BoundCheck:
    which: str
    lhs: float
    rhs: float
    constant: float
    flagged: bool = False
    rhs_main: float = math.nan
    rhs_extra: float = 0.0
    error_surrogate: float = 0.0


class NormSeries:
    """Observer recording the scalar norms the bound checks need, per sample.

    Lets long or large runs be checked without keeping every state.
    """

    def __init__(self, n: int, spec: MultiplierSpec | None = None):
        self.n = n
        self.spec = spec
        self.r = admissible_pair(n)[1] if n >= 3 else math.inf
        self.times: list[float] = []
        self.rows: list[dict[str, float]] = []

    def __call__(self, step: int, t: float, phi: ComplexField) -> dict[str, float]:
        row = {
            "l2": lebesgue_norm(phi, 2),
            "l4": lebesgue_norm(phi, 4),
            "lr": lebesgue_norm(phi, self.r),
            "h12": sobolev_norm(phi, 0.5, "homogeneous"),
        }
        if self.spec is not None:
            Iphi = apply_I(phi, self.spec)
            row["I_lr"] = lebesgue_norm(Iphi, self.r)
            row["I_h12"] = sobolev_norm(Iphi, 0.5, "homogeneous")
            row["I_h1"] = sobolev_norm(Iphi, 1.0)
        self.times.append(t)
        self.rows.append(row)
        return row

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows])

    def bound(self, which: BoundKind = "l4_3d") -> BoundCheck:
        return bound_from_series(self, which)


def check_morawetz_bound(
    traj: Trajectory, n: int, which: BoundKind = "l4_3d", spec: MultiplierSpec | None = None
) -> BoundCheck:
    """Empirical constant C = LHS / RHS of a Morawetz-type space-time bound.

    l4_3d:           |phi|^2_{L4_tx} / (|phi0|_L2 |phi|_{Linf_t H^1/2})
    admissible_pair: |phi|_{L^q L^r} / (T^a |phi0|^(1/2) |phi|^b_{Linf H^1/2})
    I_version:       same pair norm of I phi against the two-term right side;
                     ``error_surrogate`` = Z_I^6 / N with Z_I = sup_t |I phi|_H1.
    A vanishing right side returns ``flagged=True`` and a NaN constant.
    """
    if not traj.states or len(traj.states) != len(traj.times):
        raise ValueError("bound checks need a trajectory with stored states")
    series = NormSeries(n, spec)
    for step, t, st in zip(traj.steps, traj.times, traj.states):
        series(step, t, st)
    return bound_from_series(series, which)


def bound_from_series(series: NormSeries, which: BoundKind) -> BoundCheck:
    n = series.n
    if not series.rows:
        raise ValueError("empty trajectory")
    times = np.asarray(series.times)
    T = float(times[-1] - times[0])
    m0 = series.rows[0]["l2"]

    if which == "l4_3d":
        if n != 3:
            raise ValueError("the L4 bound is the n = 3 statement")
        lhs = spacetime_norm_from_series(times, series.column("l4"), 4) ** 2
        return _ratio(which, lhs, m0 * series.column("h12").max())

    q, _ = admissible_pair(n)
    a = (n - 2) / (4 * (n - 1))
    if which == "admissible_pair":
        lhs = spacetime_norm_from_series(times, series.column("lr"), q)
        h12 = series.column("h12").max()
        rhs = T**a * math.sqrt(m0) * h12 ** ((n - 2) / (n - 1))
        return _ratio(which, lhs, rhs, rhs_main=rhs)

    if which == "I_version":
        if series.spec is None:
            raise ValueError("I_version needs a MultiplierSpec")
        lhs = spacetime_norm_from_series(times, series.column("I_lr"), q)
        h12 = series.column("I_h12").max()
        main = T**a * m0 ** (1 / (n - 1)) * h12 ** ((n - 2) / (n - 1))
        extra = T**a * h12 ** ((2 * n - 6) / (2 * n - 3)) if h12 > 0 else 0.0
        z = series.column("I_h1").max()
        return _ratio(which, lhs, main + extra, rhs_main=main, rhs_extra=extra,
                      error_surrogate=z**6 / series.spec.N)
    raise ValueError(f"unknown bound {which!r}")


def _ratio(which: str, lhs: float, rhs: float, **extra: float) -> BoundCheck:
    if rhs == 0 or not math.isfinite(rhs):
        return BoundCheck(which, lhs, rhs, math.nan, flagged=True, **extra)
    return BoundCheck(which, lhs, rhs, lhs / rhs, **extra)


def gn_ratio(u: ComplexField) -> float:
    """Hartree term over |u|^2_L2 |grad u|^2_L2; invariant under u -> c u and critical scaling."""
    m = float(np.sum(np.abs(u.values) ** 2)) * u.grid.cell_volume
    if m == 0:
        raise ValueError("GN ratio undefined for the zero field")
    grad2 = sobolev_norm(u, 1.0, "homogeneous") ** 2
    if grad2 == 0:
        raise ValueError("GN ratio undefined for a constant field")
    return potential_energy(u) / (m * grad2)


def morawetz_observer(sampler: PairSampler, oracle: bool = False):
    """Callable for :class:`~hartree.imethod.DiagnosticsObserver` returning (value, stderr)."""

    def observe(phi: ComplexField) -> tuple[float, float]:
        est = interaction_potential(phi, sampler, oracle=oracle)
        return est.value, est.stderr

    return observe

