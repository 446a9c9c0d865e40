"""Mode implementations: each writes into its own output directory."""

from __future__ import annotations

import csv
import json
import math
import time
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .. import __version__
from ..dynamics import (
    IntegratorBreakdown,
    SimConfig,
    evolve,
    make_initial_data,
    scale_field,
)
from ..imethod import (
    DiagnosticsObserver,
    DiagnosticsRecord,
    MultiplierSpec,
    almost_conservation_experiment,
    energy,
    growth_exponent_alpha,
    loglog_fit,
    mass,
    scaling_lambda,
)
from ..morawetz import NormSeries, PairSampler, morawetz_observer
from ..spectral import ComplexField, GridSpec, lebesgue_norm, sobolev_norm
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, parse_config

BASE_COLUMNS = [
    "step", "t", "mass", "energy", "modified_energy", "h_s_norm", "h1_of_I",
    "morawetz", "morawetz_stderr",
]
FAILED = "FAILED"
EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _jsonable(v: Any) -> Any:
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return _jsonable(v.item())
    return v


def write_json(path: Path, data: dict[str, Any]) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


class DiagnosticsWriter:
    """Streams DiagnosticsRecords into diagnostics.csv, flushing each row."""

    def __init__(self, path: Path, labels: list[str], append: bool = False):
        self.columns = BASE_COLUMNS + labels
        new = not append or not path.exists()
        self._fh = path.open("a" if append else "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        if new:
            self._w.writerow(self.columns)
            self._fh.flush()

    def row(self, step: int, rec: DiagnosticsRecord) -> None:
        vals = [step, rec.t, rec.mass, rec.energy, rec.modified_energy, rec.h_s_norm,
                rec.h1_of_I, rec.morawetz, rec.morawetz_stderr]
        vals += [rec.spacetime[c] for c in self.columns[len(BASE_COLUMNS):]]
        self._w.writerow([_fmt(v) for v in vals])
        self._fh.flush()

    def marker(self, label: str, t: float) -> None:
        self._w.writerow([label, _fmt(t)] + [""] * (len(self.columns) - 2))
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def _diagnostics(cfg: RunConfig, oracle: bool) -> DiagnosticsObserver:
    mor = None
    if cfg["morawetz"]:
        mor = morawetz_observer(PairSampler(cfg["sampler.seed"], cfg["sampler.budget"]), oracle)
    return DiagnosticsObserver(cfg["mu"], MultiplierSpec(cfg["N"], cfg["s"]), cfg["pairs"], mor)


def initial_data(cfg: RunConfig, grid: GridSpec | None = None) -> ComplexField:
    return make_initial_data(grid or cfg.grid, cfg.data_kind, cfg.data_params(), cfg["seed"])


def _prepare(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / FAILED).unlink(missing_ok=True)


def _fail(out: Path, exc: Exception, summary: dict[str, Any]) -> int:
    (out / FAILED).write_text(f"{exc}\n")
    summary["status"] = "failed"
    summary["error"] = str(exc)
    write_json(out / "summary.json", summary)
    return EXIT_ABORT


def _summary_base(cfg: RunConfig) -> dict[str, Any]:
    return {
        "mode": cfg.mode,
        "version": __version__,
        "config": cfg.to_json(),
        "config_hash": cfg.hash,
        "seeds": {"data": cfg["seed"], "sampler": cfg["sampler.seed"]},
    }


def _drift(values: Iterable[float]) -> float:
    vals = list(values)
    return max(abs(v - vals[0]) for v in vals) if vals else 0.0


# -- run / resume ------------------------------------------------------------


def _checkpoint_stops(cfg: RunConfig, stop: int) -> tuple[int, ...]:
    ce = cfg["checkpoint_every"]
    return tuple(range(ce, stop + 1, ce)) if ce else ()


def _run_evolution(
    cfg: RunConfig,
    sim: SimConfig,
    phi0: ComplexField,
    out: Path,
    obs: DiagnosticsObserver,
    writer: DiagnosticsWriter,
    start_step: int = 0,
    mass_ref: float | None = None,
) -> list[DiagnosticsRecord]:
    records: list[DiagnosticsRecord] = []
    ckdir = out / "checkpoints"

    def observe(step: int, t: float, phi: ComplexField) -> DiagnosticsRecord:
        rec = obs(step, t, phi)
        writer.row(step, rec)
        records.append(rec)
        return rec

    def save(step: int, t: float, phi: ComplexField) -> None:
        ckdir.mkdir(exist_ok=True)
        save_checkpoint(ckdir / f"ckpt_{step:08d}.hrte", Checkpoint(phi, t, sim.dt, sim.s, sim.N, sim.mu))

    traj = evolve(
        sim, phi0, {"diag": observe}, keep_states=False, start_step=start_step,
        extra_stops=_checkpoint_stops(cfg, sim.steps), on_stop=save, mass_ref=mass_ref,
        record_start=start_step == 0,
    )
    final = traj.final
    save_checkpoint(out / "final.hrte", Checkpoint(final, sim.steps * sim.dt, sim.dt, sim.s, sim.N, sim.mu))
    return records


def _run_results(records: list[DiagnosticsRecord], obs: DiagnosticsObserver) -> dict[str, Any]:
    m = [r.mass for r in records]
    return {
        "final_t": records[-1].t if records else None,
        "mass_relative_drift": _drift(m) / m[0] if m and m[0] else 0.0,
        "energy_drift": _drift(r.energy for r in records),
        "modified_energy_drift": _drift(r.modified_energy for r in records),
        "spacetime_norms": {a.label: a.finalize() for a in obs.accumulators},
        "samples": len(records),
    }


def run_mode_run(cfg: RunConfig, out: Path, oracle: bool = False) -> int:
    _prepare(out)
    (out / "config.txt").write_text(cfg.text)
    summary = _summary_base(cfg)
    sim = cfg.sim()
    obs = _diagnostics(cfg, oracle)
    writer = DiagnosticsWriter(out / "diagnostics.csv", [a.label for a in obs.accumulators])
    phi0 = initial_data(cfg)
    summary["initial_mass"] = mass(phi0)
    try:
        records = _run_evolution(cfg, sim, phi0, out, obs, writer)
    except IntegratorBreakdown as exc:
        return _fail(out, exc, summary)
    finally:
        writer.close()
    summary["status"] = "ok"
    summary["results"] = _run_results(records, obs)
    write_json(out / "summary.json", summary)
    return EXIT_OK


def _last_row(path: Path, step: int) -> dict[str, str] | None:
    if not path.exists():
        return None
    with path.open(newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if r["step"] == str(step)]
    return rows[-1] if rows else None


def resume_run(ckpt_path: Path, extra_time: float, oracle: bool = False) -> int:
    """Continue a run from a checkpoint for ``extra_time`` more time units."""
    ck = load_checkpoint(ckpt_path)
    ckpt_path = Path(ckpt_path)
    run_dir = ckpt_path.parent.parent if ckpt_path.parent.name == "checkpoints" else ckpt_path.parent
    cfg_file = run_dir / "config.txt"
    if cfg_file.exists():
        cfg = parse_config(cfg_file.read_text())
    else:
        g = ck.grid
        cfg = parse_config(
            f"mode = run\nmu = {ck.mu!r}\nn = {g.n}\nM = {g.M}\nL = {g.L!r}\n"
            f"dt = {ck.dt!r}\nT = {ck.t + extra_time!r}\ns = {ck.s!r}\nN = {ck.N!r}\n"
            "data.kind = gaussian\nsample_every = 1\n"
        )
    if ck.grid != cfg.grid:
        load_checkpoint(ckpt_path, grid=cfg.grid)  # raises the mismatch error
    if not extra_time > 0:
        raise ValueError("extra time must be positive")
    T_new = ck.step * ck.dt + extra_time
    cfg = cfg.with_overrides({"T": T_new, "dt": ck.dt, "mu": ck.mu, "s": ck.s, "N": ck.N})
    sim = cfg.sim()
    summary_path = run_dir / "summary.json"
    summary = json.loads(summary_path.read_text()) if summary_path.exists() else _summary_base(cfg)
    obs = _diagnostics(cfg, oracle)
    last = _last_row(run_dir / "diagnostics.csv", ck.step)
    for acc in obs.accumulators:
        total = float(last[acc.label]) if last and last.get(acc.label) else 0.0
        acc.restore(total, ck.step * ck.dt, ck.field)
    writer = DiagnosticsWriter(run_dir / "diagnostics.csv", [a.label for a in obs.accumulators], append=True)
    writer.marker("resume", ck.step * ck.dt)
    (run_dir / FAILED).unlink(missing_ok=True)
    try:
        records = _run_evolution(
            cfg, sim, ck.field, run_dir, obs, writer, start_step=ck.step,
            mass_ref=summary.get("initial_mass"),
        )
    except IntegratorBreakdown as exc:
        return _fail(run_dir, exc, summary)
    finally:
        writer.close()
    summary.setdefault("resumes", []).append(
        {"checkpoint": str(ckpt_path), "from_t": ck.step * ck.dt, "to_t": T_new}
    )
    summary["status"] = "ok"
    summary["results_after_resume"] = _run_results(records, obs)
    write_json(summary_path, summary)
    return EXIT_OK


# -- sweep_N -----------------------------------------------------------------


def run_mode_sweep(cfg: RunConfig, out: Path) -> int:
    _prepare(out)
    summary = _summary_base(cfg)
    phi0 = initial_data(cfg)
    try:
        table = almost_conservation_experiment(cfg["s"], cfg["N_list"], cfg.sim(), phi0)
    except IntegratorBreakdown as exc:
        return _fail(out, exc, summary)
    with (out / "sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N", "drift"])
        for N, d in zip(table.N, table.drift):
            w.writerow([_fmt(float(N)), _fmt(d)])
    with (out / "modified_energy.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"E_I_N{N:g}" for N in table.N])
        for i, t in enumerate(table.times):
            w.writerow([_fmt(t)] + [_fmt(table.traces[N][i]) for N in table.N])
    summary["status"] = "ok"
    summary["results"] = {
        "N": table.N,
        "drift": table.drift,
        "slope": table.fit.slope,
        "intercept": table.fit.intercept,
        "r_squared": table.fit.r_squared,
    }
    write_json(out / "summary.json", summary)
    return EXIT_OK


# -- convergence -------------------------------------------------------------


def energy_drift_levels(cfg: RunConfig, phi0: ComplexField, levels: int) -> tuple[list[float], list[float], list[float]]:
    """Max |E(t) - E(0)| and relative mass drift at dt, dt/2, ... on shared sample times."""
    dts, drifts, mdrift = [], [], []
    for i in range(levels):
        k = 2**i
        base = cfg.sim()
        sim = SimConfig(base.mu, base.grid, base.dt / k, base.T, base.s, base.N, base.seed,
                        base.sample_every * k)
        traj = evolve(sim, phi0, {
            "E": lambda st, t, f: energy(f, sim.mu).total,
            "m": lambda st, t, f: mass(f),
        }, keep_states=False)
        dts.append(sim.dt)
        drifts.append(_drift(traj.column("E")))
        m = traj.column("m")
        mdrift.append(_drift(m) / m[0] if m[0] else 0.0)
    return dts, drifts, mdrift


def run_mode_convergence(cfg: RunConfig, out: Path) -> int:
    _prepare(out)
    summary = _summary_base(cfg)
    phi0 = initial_data(cfg)
    try:
        dts, drifts, mdrift = energy_drift_levels(cfg, phi0, cfg["convergence.levels"])
    except IntegratorBreakdown as exc:
        return _fail(out, exc, summary)
    ratios = [a / b if b else math.inf for a, b in zip(drifts, drifts[1:])]
    fit = loglog_fit(dts, drifts)
    with (out / "convergence.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dt", "energy_drift", "mass_relative_drift"])
        for row in zip(dts, drifts, mdrift):
            w.writerow([_fmt(v) for v in row])
    summary["status"] = "ok"
    summary["results"] = {
        "dt": dts,
        "energy_drift": drifts,
        "mass_relative_drift": mdrift,
        "drift_ratios": ratios,
        "order": fit.slope,
        "order_r_squared": fit.r_squared,
    }
    write_json(out / "summary.json", summary)
    return EXIT_OK


# -- inequality_batch --------------------------------------------------------


def batch_member_data(cfg: RunConfig, grid: GridSpec, member: int) -> tuple[ComplexField, dict[str, Any]]:
    """Member ``i`` of an inequality batch: config data with seeded perturbations."""
    rng = np.random.default_rng([cfg["seed"], member])
    n = grid.n
    params = cfg.data_params()
    spread = cfg["batch.amplitude_spread"]
    if cfg.data_kind == "gaussian":
        params["amplitude"] = params.get("amplitude", 1.0) * (1 + spread * rng.uniform(-1, 1))
        params["center"] = rng.uniform(-1, 1, n) * cfg["batch.center_spread"]
        params["boost"] = rng.standard_normal(n) * cfg["batch.boost_spread"]
        phi = make_initial_data(grid, "gaussian", params)
    else:
        if "target" in params:
            params["target"] = params["target"] * (1 + spread * rng.uniform(-1, 1))
        phi = make_initial_data(grid, cfg.data_kind, params, cfg["seed"] + member)
    return phi, params


def _batch_member(cfg: RunConfig, grid: GridSpec, member: int) -> dict[str, Any]:
    phi0, params = batch_member_data(cfg, grid, member)
    spec = MultiplierSpec(cfg["N"], cfg["s"])
    series = NormSeries(grid.n, spec)
    evolve(cfg.sim(grid=grid), phi0, {"norms": series}, keep_states=False)
    main = series.bound("l4_3d" if grid.n == 3 else "admissible_pair")
    iv = series.bound("I_version")
    return {
        "member": member,
        "M": grid.M,
        "amplitude": params.get("amplitude", params.get("target")),
        "bound": main.which,
        "constant": main.constant,
        "flagged": main.flagged,
        "I_constant": iv.constant,
        "error_surrogate": iv.error_surrogate,
    }


def _batch(cfg: RunConfig, grid: GridSpec) -> list[dict[str, Any]]:
    from concurrent.futures import ThreadPoolExecutor

    from ..spectral import fft_workers

    members = range(cfg["batch.size"])
    workers = min(fft_workers(), cfg["batch.size"])
    if workers <= 1:
        return [_batch_member(cfg, grid, i) for i in members]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(lambda i: _batch_member(cfg, grid, i), members))


def _max_finite(rows: list[dict[str, Any]], key: str) -> float:
    vals = [r[key] for r in rows if r[key] is not None and math.isfinite(r[key])]
    return max(vals) if vals else math.nan


def run_mode_inequality(cfg: RunConfig, out: Path) -> int:
    _prepare(out)
    summary = _summary_base(cfg)
    grids = [cfg.grid]
    if cfg["batch.refine_M"]:
        grids.append(GridSpec(cfg["n"], cfg["batch.refine_M"], cfg["L"]))
    rows: list[dict[str, Any]] = []
    try:
        for g in grids:
            rows += _batch(cfg, g)
    except IntegratorBreakdown as exc:
        return _fail(out, exc, summary)
    cols = ["member", "M", "amplitude", "bound", "constant", "flagged", "I_constant", "error_surrogate"]
    with (out / "batch.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])
    per_grid = {}
    for g in grids:
        sub = [r for r in rows if r["M"] == g.M]
        consts = np.array([r["constant"] for r in sub], dtype=float)
        per_grid[str(g.M)] = {
            "max_constant": _max_finite(sub, "constant"),
            "constant_std": float(np.nanstd(consts)),
            "max_I_constant": _max_finite(sub, "I_constant"),
            "flagged": sum(bool(r["flagged"]) for r in sub),
        }
    res: dict[str, Any] = {"per_grid": per_grid}
    if len(grids) == 2:
        a = per_grid[str(grids[0].M)]["max_constant"]
        b = per_grid[str(grids[1].M)]["max_constant"]
        res["refinement_relative_change"] = abs(b - a) / abs(a)
    summary["status"] = "ok"
    summary["results"] = res
    write_json(out / "summary.json", summary)
    return EXIT_OK


# -- scaling_check -----------------------------------------------------------


def scaling_report(cfg: RunConfig) -> dict[str, Any]:
    lam = cfg["lambda"]
    base = cfg.sim()
    phi0 = initial_data(cfg)
    scaled0 = scale_field(phi0, lam, matched=True)
    sgrid = scaled0.grid
    ssim = SimConfig(base.mu, sgrid, base.dt * lam**2, base.T * lam**2, base.s, base.N,
                     base.seed, base.sample_every)

    base_states: list[ComplexField] = []
    hs: list[float] = []

    def keep(step: int, t: float, phi: ComplexField) -> None:
        base_states.append(phi)
        hs.append(sobolev_norm(phi, base.s))

    evolve(base, phi0, {"keep": keep}, keep_states=False)
    disc: list[float] = []

    def compare(step: int, t: float, phi: ComplexField) -> None:
        ref = scale_field(base_states[len(disc)], lam, matched=True, tol=math.inf)
        disc.append(lebesgue_norm(phi - ref, 2) / lebesgue_norm(ref, 2))

    evolve(ssim, scaled0, {"cmp": compare}, keep_states=False)
    n, s = cfg["n"], cfg["s"]
    try:
        alpha: float | None = growth_exponent_alpha(s, n)
        alpha_note = None
    except ValueError as exc:
        alpha, alpha_note = None, str(exc)
    return {
        "lambda": lam,
        "scaled_grid": {"n": sgrid.n, "M": sgrid.M, "L": sgrid.L},
        "max_relative_discrepancy": max(disc),
        "discrepancy_series": disc,
        "alpha": alpha,
        "alpha_note": alpha_note,
        "lambda_of_N": scaling_lambda(cfg["N"], s),
        "predicted_growth_T_alpha": base.T**alpha if alpha is not None else None,
        "hs_initial": hs[0],
        "hs_sup": max(hs),
    }


def run_mode_scaling(cfg: RunConfig, out: Path) -> int:
    try:
        scale_field(initial_data(cfg), cfg["lambda"], matched=True)
    except ValueError as exc:
        raise ConfigError(f"initial data cannot be rescaled exactly: {exc}") from None
    _prepare(out)
    summary = _summary_base(cfg)
    try:
        summary["results"] = scaling_report(cfg)
    except IntegratorBreakdown as exc:
        return _fail(out, exc, summary)
    summary["status"] = "ok"
    write_json(out / "summary.json", summary)
    return EXIT_OK


MODE_RUNNERS = {
    "sweep_N": run_mode_sweep,
    "convergence": run_mode_convergence,
    "inequality_batch": run_mode_inequality,
    "scaling_check": run_mode_scaling,
}


def execute(cfg: RunConfig, out: Path, oracle: bool = False) -> int:
    start = time.perf_counter()
    if cfg.mode == "run":
        code = run_mode_run(cfg, out, oracle)
    else:
        code = MODE_RUNNERS[cfg.mode](cfg, out)
    summary_path = out / "summary.json"
    if summary_path.exists():
        data = json.loads(summary_path.read_text())
        data["wall_seconds"] = round(time.perf_counter() - start, 3)
        write_json(summary_path, data)
    return code
