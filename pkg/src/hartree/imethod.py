"""The smoothing operator I_N, conserved and almost-conserved functionals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
from scipy import stats

from .dynamics import SimConfig, _riesz_real, evolve, riesz_symbol
from .spectral import (
    ComplexField,
    apply_radial_multiplier,
    forward_transform,
    lebesgue_norm,
    sobolev_norm,
)


@dataclass(frozen=True)
class MultiplierSpec:
    """Symbol m: 1 below N, (N/r)^(1-s) above 2N, C^1 log-smoothstep between."""

    N: float
    s: float

    def __post_init__(self) -> None:
        if not self.N > 0:
            raise ValueError(f"cutoff N must be positive, got {self.N}")
        if not 0 < self.s < 1:
            raise ValueError(f"s must lie in (0, 1), got {self.s}")

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return multiplier_m(r, self)


def _smoothstep(u: np.ndarray) -> np.ndarray:
    return u * u * (3.0 - 2.0 * u)


def multiplier_m(r: Any, spec: MultiplierSpec) -> Any:
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise ValueError("multiplier argument must be nonnegative")
    u = np.clip(np.log2(np.maximum(r_arr, spec.N) / spec.N), 0.0, 1.0)
    theta = _smoothstep(u)
    ratio = spec.N / np.maximum(r_arr, spec.N)
    out = ratio ** ((1.0 - spec.s) * theta)
    return float(out) if np.ndim(r) == 0 else out


def apply_I(phi: ComplexField, spec: MultiplierSpec) -> ComplexField:
    return apply_radial_multiplier(phi, spec)


def mass(phi: ComplexField) -> float:
    return float(np.sum(np.abs(phi.values) ** 2)) * phi.grid.cell_volume


@dataclass(frozen=True)
class EnergyParts:
    kinetic: float
    potential: float

    @property
    def total(self) -> float:
        return self.kinetic + self.potential


def kinetic_energy(phi: ComplexField) -> float:
    c = forward_transform(phi).coeffs
    return phi.grid.volume * float(np.sum(phi.grid.xi_sq * np.abs(c) ** 2))


def potential_energy(phi: ComplexField) -> float:
    """Integral of (|x|^-2 * |phi|^2) |phi|^2 (unsigned, zero mode removed)."""
    g = phi.grid
    rho = np.abs(phi.values) ** 2
    V = _riesz_real(rho, riesz_symbol(g.xi_abs_half, g.n))
    return float(np.sum(V * rho)) * g.cell_volume


def energy(phi: ComplexField, mu: float = 1.0) -> EnergyParts:
    """int |grad phi|^2 + mu (|x|^-2 * |phi|^2)|phi|^2 dx."""
    pot = potential_energy(phi) if mu != 0 else 0.0
    return EnergyParts(kinetic_energy(phi), mu * pot)


def modified_energy(phi: ComplexField, spec: MultiplierSpec, mu: float = 1.0) -> EnergyParts:
    return energy(apply_I(phi, spec), mu)


def h1_of_I(phi: ComplexField, spec: MultiplierSpec) -> float:
    return sobolev_norm(apply_I(phi, spec), 1.0)


@dataclass(frozen=True)
class SandwichRatios:
    """upper = |I phi|_H1 / (N^(1-s) |phi|_Hs); lower = |phi|_Hs / |I phi|_H1."""

    upper: float
    lower: float
    defined: bool = True


def sandwich_ratios(phi: ComplexField, spec: MultiplierSpec) -> SandwichRatios:
    hs = sobolev_norm(phi, spec.s)
    h1 = h1_of_I(phi, spec)
    if hs == 0 or h1 == 0:
        return SandwichRatios(math.nan, math.nan, defined=False)
    return SandwichRatios(h1 / (spec.N ** (1 - spec.s) * hs), hs / h1)


# -- diagnostics -------------------------------------------------------------


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    mass: float
    energy: float
    modified_energy: float
    h_s_norm: float
    h1_of_I: float
    morawetz: float | None = None
    morawetz_stderr: float | None = None
    spacetime: dict[str, float] = field(default_factory=dict)


def pair_label(q: float, r: float) -> str:
    def fmt(v: float) -> str:
        return "inf" if math.isinf(v) else f"{v:g}"

    return f"L{fmt(q)}_L{fmt(r)}"


class SpacetimeAccumulator:
    """Running trapezoid sum of |phi(t)|_{L^r}^q dt; ``finalize`` gives the L^q_t L^r_x norm."""

    def __init__(self, q: float, r: float):
        if not q >= 1 or not r >= 1:
            raise ValueError(f"exponents must be >= 1, got ({q}, {r})")
        self.q = q
        self.r = r
        self.total = 0.0
        self._last: tuple[float, float] | None = None

    @property
    def label(self) -> str:
        return pair_label(self.q, self.r)

    def add(self, t: float, phi: ComplexField) -> float:
        v = lebesgue_norm(phi, self.r)
        if math.isinf(self.q):
            self.total = max(self.total, v)
        else:
            v = v**self.q
            if self._last is not None:
                t0, v0 = self._last
                if t < t0:
                    raise ValueError("accumulator times must increase")
                self.total += 0.5 * (t - t0) * (v + v0)
            self._last = (t, v)
        return self.total

    def restore(self, total: float, t: float, phi: ComplexField) -> None:
        """Resume accumulation from a saved running total at state ``phi``."""
        self.total = total
        if not math.isinf(self.q):
            self._last = (t, lebesgue_norm(phi, self.r) ** self.q)

    def finalize(self) -> float:
        return self.total if math.isinf(self.q) else self.total ** (1.0 / self.q)


class DiagnosticsObserver:
    """Observer producing a :class:`DiagnosticsRecord` per sample."""

    def __init__(
        self,
        mu: float,
        spec: MultiplierSpec,
        pairs: Iterable[tuple[float, float]] = (),
        morawetz: Any = None,
    ):
        self.mu = mu
        self.spec = spec
        self.accumulators = [SpacetimeAccumulator(q, r) for q, r in pairs]
        self.morawetz = morawetz

    def __call__(self, step: int, t: float, phi: ComplexField) -> DiagnosticsRecord:
        Iphi = apply_I(phi, self.spec)
        mor = err = None
        if self.morawetz is not None:
            mor, err = self.morawetz(phi)
        return DiagnosticsRecord(
            t=t,
            mass=mass(phi),
            energy=energy(phi, self.mu).total,
            modified_energy=energy(Iphi, self.mu).total,
            h_s_norm=sobolev_norm(phi, self.spec.s),
            h1_of_I=sobolev_norm(Iphi, 1.0),
            morawetz=mor,
            morawetz_stderr=err,
            spacetime={a.label: a.add(t, phi) for a in self.accumulators},
        )


# -- almost conservation -----------------------------------------------------


@dataclass(frozen=True)
class LogLogFit:
    slope: float
    intercept: float
    r_squared: float


def loglog_fit(x: Sequence[float], y: Sequence[float]) -> LogLogFit:
    res = stats.linregress(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)))
    return LogLogFit(float(res.slope), float(res.intercept), float(res.rvalue**2))


@dataclass
class AlmostConservationTable:
    N: list[float]
    drift: list[float]
    fit: LogLogFit
    times: list[float]
    traces: dict[float, list[float]]


def almost_conservation_experiment(
    s: float,
    N_list: Sequence[float],
    cfg_template: SimConfig,
    phi0: ComplexField,
) -> AlmostConservationTable:
    """sup_t |E(I_N phi(t)) - E(I_N phi0)| for each N along one defocusing run.

    The flow does not depend on N, so a single trajectory serves every cutoff.
    Raises :class:`~hartree.dynamics.IntegratorBreakdown` if the run aborts.
    """
    if cfg_template.mu != 1:
        raise ValueError("almost-conservation experiment is defined for the defocusing flow")
    specs = {N: MultiplierSpec(N, s) for N in N_list}

    def observe(step: int, t: float, phi: ComplexField) -> dict[float, float]:
        return {N: modified_energy(phi, sp, 1.0).total for N, sp in specs.items()}

    traj = evolve(cfg_template, phi0, {"E_I": observe}, keep_states=False)
    traces = {N: [rec["E_I"][N] for rec in traj.records] for N in N_list}
    drift = [max(abs(e - tr[0]) for e in tr) for tr in traces.values()]
    return AlmostConservationTable(
        N=list(N_list),
        drift=drift,
        fit=loglog_fit(N_list, drift),
        times=list(traj.times),
        traces=traces,
    )


# -- scaling bookkeeping -----------------------------------------------------


def admissible_s_range(n: int) -> tuple[float, float]:
    if n < 3:
        raise ValueError(f"dimension must be >= 3, got {n}")
    return 2 * (n - 2) / (3 * n - 4), 1.0


def _check_s(s: float, n: int) -> None:
    lo, hi = admissible_s_range(n)
    if not lo < s < hi:
        raise ValueError(f"s={s} outside the open interval ({lo:g}, {hi:g}) for n={n}")


def growth_exponent_alpha(s: float, n: int) -> float:
    """Exponent of the polynomial H^s growth bound |phi(T)|_Hs <~ T^alpha."""
    _check_s(s, n)
    return (n - 2) * s * (1 - s) / (s * (3 * n - 4) - 2 * (n - 2))


def scaling_lambda(N: float, s: float) -> float:
    """Scale parameter lambda = N^((1-s)/s) normalizing |grad I phi0^lambda|."""
    return N ** ((1 - s) / s)


def n_selection_exponent(s: float, n: int) -> float:
    """Power of N in the cutoff selection rule N^(1 - (1-s)/s * 2(n-2)/n) ~ T0^((n-2)/n)."""
    _check_s(s, n)
    return 1 - (1 - s) / s * 2 * (n - 2) / n


def cutoff_for_horizon(T0: float, s: float, n: int, prefactor: float = 1.0) -> float:
    """N solving N^e = prefactor * T0^((n-2)/n) with e the selection exponent."""
    e = n_selection_exponent(s, n)
    return (prefactor * T0 ** ((n - 2) / n)) ** (1.0 / e)
