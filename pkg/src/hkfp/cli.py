"""Command-line driver: ``hkfp {solve,picard,particles,sweep,dispersion,threshold}``.

Configuration is a flat ``key = value`` file (``#`` starts a comment); a
``meta.json`` written by a previous run is accepted too.  Command-line flags
override file values.  Floats are written with 17 significant digits so CSV
outputs are byte-stable.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    classify_state,
    decay_rate_bound,
    dispersion_growth_rate,
    fit_exponential_decay,
    global_stability_threshold,
    linear_instability_threshold,
)
from .core import (
    ConfigurationError,
    DensityField,
    Params,
    bump_density,
    make_grid,
    normalize,
    random_density,
    uniform_density,
)
from .particles import run_particles
from .solver import SCHEMES, NumericalError, SolverConfig, _step_plan, default_dt, picard_solve, solve

EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2

INIT_KINDS = ("uniform", "cosine", "random", "bump", "perturbed")

SWEEP_HEADER = [
    "ell", "radius", "sigma2", "final_psi_l2", "classification", "cluster_count",
    "fitted_rate", "sigma2_global", "sigma2_linear", "runtime_seconds",
]


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _floats(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).replace(";", ",").split(",") if v.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class RunConfig:
    ell: float = 1.0
    radius: float = 0.5
    sigma2: float = 1.0
    grid: int = 256
    dt: float | None = None
    t_end: float = 5.0
    scheme: str = "imex_be"
    record_every: int = 1
    picard_tol: float = 1e-8
    picard_max_iter: int = 50
    init: str = "cosine"
    init_amplitude: float = 0.1
    init_mode: int = 1
    init_width: float = 0.2
    seed: int = 0
    # particles
    n_particles: int = 10_000
    particle_dt: float = 0.005
    snapshot_every: float = 0.1
    positions: tuple = ()
    max_position_rows: int = 1000
    # sweep
    radii: tuple = (0.125, 0.1875, 0.25, 0.3125, 0.375, 0.4375, 0.5, 0.5625)
    sigma2s: tuple = (0.0025, 0.00625, 0.015625, 0.0390625, 0.09765625, 0.244140625, 0.6103515625, 1.5)
    sweep_amplitude: float = 0.1
    sweep_t_min: float = 20.0
    sweep_t_max: float = 400.0
    sweep_efolds: float = 12.0
    timings: bool = False
    # dispersion
    k_modes: int = 20
    workers: int = 1
    out: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self):
        def bad(msg):
            raise ConfigurationError(msg)

        if not self.ell > 0:
            bad(f"ell must be positive, got {self.ell}")
        if not 0 < self.radius < self.ell:
            bad(f"radius must satisfy 0 < radius < ell, got {self.radius}")
        if not self.sigma2 >= 0:
            bad(f"sigma2 must be non-negative, got {self.sigma2}")
        if self.grid < 8 or self.grid % 2:
            bad(f"grid must be even and >= 8, got {self.grid}")
        if self.dt is not None and not self.dt > 0:
            bad(f"dt must be positive, got {self.dt}")
        if not self.t_end > 0:
            bad(f"t_end must be positive, got {self.t_end}")
        if self.scheme not in SCHEMES:
            bad(f"scheme must be one of {SCHEMES}")
        if self.record_every < 1:
            bad("record_every must be >= 1")
        if not self.picard_tol > 0 or self.picard_max_iter < 1:
            bad("picard_tol must be positive and picard_max_iter >= 1")
        if self.init not in INIT_KINDS:
            bad(f"init must be one of {INIT_KINDS}, got {self.init!r}")
        if self.init_mode < 1 or not self.init_width > 0:
            bad("init_mode must be >= 1 and init_width positive")
        if not 0 <= self.seed < 2**64:
            bad("seed must be an unsigned 64-bit integer")
        if self.n_particles < 2:
            bad("n_particles must be >= 2")
        if not self.particle_dt > 0 or not self.snapshot_every > 0:
            bad("particle_dt and snapshot_every must be positive")
        if not self.radii or not self.sigma2s:
            bad("sweep needs nonempty radii and sigma2s")
        if any(not 0 < r < self.ell for r in self.radii):
            bad("every sweep radius must lie in (0, ell)")
        if any(not s > 0 for s in self.sigma2s):
            bad("every sweep sigma2 must be positive")
        if not 0 < self.sweep_t_min <= self.sweep_t_max:
            bad("need 0 < sweep_t_min <= sweep_t_max")
        if self.k_modes < 1 or self.workers < 1:
            bad("k_modes and workers must be >= 1")

    @property
    def params(self) -> Params:
        return Params.from_sigma2(self.ell, self.radius, self.sigma2)

    @property
    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            t_end=self.t_end, dt=self.dt, scheme=self.scheme,
            picard_tol=self.picard_tol, picard_max_iter=self.picard_max_iter,
            record_every=self.record_every,
        )

    def as_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in fields(self)}

    @classmethod
    def from_mapping(cls, raw: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            name = key.strip().replace("-", "_")
            if name not in known:
                raise ConfigurationError(f"unknown key {key!r}")
            kwargs[name] = _coerce(name, value)
        return cls(**kwargs)


_TUPLE_KEYS = {"radii", "sigma2s", "positions"}
_INT_KEYS = {"grid", "record_every", "picard_max_iter", "init_mode", "seed", "n_particles",
             "max_position_rows", "k_modes", "workers"}
_FLOAT_KEYS = {"ell", "radius", "sigma2", "t_end", "picard_tol", "init_amplitude", "init_width",
               "particle_dt", "snapshot_every", "sweep_amplitude", "sweep_t_min", "sweep_t_max",
               "sweep_efolds"}


def _coerce(name, value):
    try:
        if name in _TUPLE_KEYS:
            return _floats(value)
        if name == "dt":
            return None if value is None or str(value).strip().lower() in ("", "none", "auto") else float(value)
        if name in _INT_KEYS:
            text = str(value).strip()
            try:
                return int(text)
            except ValueError:
                f = float(text)
                if f != int(f):
                    raise ValueError(f"not an integer: {value!r}") from None
                return int(f)
        if name in _FLOAT_KEYS:
            return float(value)
        if name == "timings":
            return _bool(value)
        return str(value).strip()
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad value for {name}: {exc}") from None


def read_config_file(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"file not found: {path}")
    text = p.read_text()
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"invalid JSON in {path}: {exc.msg}") from None
        return dict(data.get("config", data))
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        raw[key.strip()] = value.strip()
    return raw


# ---------------------------------------------------------------- initial data

def initial_density(cfg: RunConfig, grid=None) -> DensityField:
    grid = grid or make_grid(cfg.ell, cfg.grid)
    u = 1.0 / (2.0 * cfg.ell)
    if cfg.init == "uniform":
        return uniform_density(grid)
    if cfg.init == "cosine":
        k = cfg.init_mode * math.pi / cfg.ell
        return normalize(DensityField(grid, u + cfg.init_amplitude * np.cos(k * grid.nodes)))
    if cfg.init == "bump":
        return bump_density(grid, [0.0], cfg.init_width)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(7,)))
    if cfg.init == "random":
        return random_density(grid, rng)
    # perturbed: uniform times (1 + amplitude * smooth random shape with unit sup norm)
    return perturbed_uniform(grid, cfg.init_amplitude, rng)


def perturbed_uniform(grid, amplitude, rng, n_modes=8) -> DensityField:
    x = grid.nodes
    shape = np.zeros(grid.m)
    for m in range(1, n_modes + 1):
        k = m * math.pi / grid.ell
        a, b = rng.standard_normal(2)
        shape += a * np.cos(k * x) + b * np.sin(k * x)
    shape /= np.abs(shape).max()
    return normalize(DensityField(grid, (1.0 + amplitude * shape) / (2.0 * grid.ell)))


# ---------------------------------------------------------------- writers

def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    path.write_text(buf.getvalue())


def write_meta(out: Path, command: str, cfg: RunConfig, wall: float, **extra) -> None:
    meta = {
        "command": command,
        "config": cfg.as_dict(),
        "tool": "hkfp",
        "version": __version__,
        "wall_time_seconds": wall,
    }
    meta.update(extra)
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _write_trajectory(out: Path, traj) -> None:
    write_csv(
        out / "diagnostics.csv",
        ["t", "mass", "min_rho", "l1", "psi_l2", "psi_h1"],
        ([d.t, d.mass, d.min_rho, d.l1, d.psi_l2, d.psi_h1] for d in traj.diagnostics),
    )
    final = traj.final
    write_csv(out / "final.csv", ["x", "rho"], zip(final.grid.nodes, final.values))


# ---------------------------------------------------------------- commands

def cmd_solve(cfg: RunConfig, out: Path) -> dict:
    traj = solve(initial_density(cfg), cfg.params, cfg.solver_config)
    _write_trajectory(out, traj)
    return {"classification": str(classify_state(traj.final))}


def cmd_picard(cfg: RunConfig, out: Path) -> dict:
    traj, iterations, residuals = picard_solve(initial_density(cfg), cfg.params, cfg.solver_config)
    _write_trajectory(out, traj)
    write_csv(out / "picard_residuals.csv", ["iteration", "residual"], enumerate(residuals, 1))
    return {"picard_iterations": iterations}


def cmd_particles(cfg: RunConfig, out: Path) -> dict:
    grid = make_grid(cfg.ell, cfg.grid)
    times = np.arange(0.0, cfg.t_end + 0.5 * cfg.snapshot_every, cfg.snapshot_every)
    if cfg.positions:
        if len(cfg.positions) != cfg.n_particles:
            raise ConfigurationError("positions list length must equal n_particles")
        snaps = _particles_from_positions(cfg, grid, times)
    else:
        _, snaps = run_particles(initial_density(cfg, grid), cfg.n_particles, cfg.params,
                                 cfg.particle_dt, cfg.t_end, cfg.seed, times, keep_positions=True)
    write_csv(out / "histogram.csv", ["t", "x", "rho"],
              ((t, x, r) for t, f, _ in snaps for x, r in zip(grid.nodes, f.values)))
    if cfg.n_particles <= cfg.max_position_rows:
        write_csv(out / "positions.csv", ["t", "agent", "x"],
                  ((t, i, x) for t, _, pos in snaps for i, x in enumerate(pos)))
    return {}


def _particles_from_positions(cfg, grid, times):
    from .particles import ParticleEnsemble, em_step, empirical_density

    ens = ParticleEnsemble(np.array(cfg.positions), cfg.ell, cfg.seed)
    steps = int(round(cfg.t_end / cfg.particle_dt))
    wanted = {min(steps, int(round(t / cfg.particle_dt))) for t in times} | {0, steps}
    snaps = [(0.0, empirical_density(ens, grid), ens.positions)]
    for k in range(1, steps + 1):
        ens = em_step(ens, cfg.params, cfg.particle_dt)
        if k in wanted:
            snaps.append((k * cfg.particle_dt, empirical_density(ens, grid), ens.positions))
    return snaps


def cmd_dispersion(cfg: RunConfig, out: Path) -> dict:
    p = cfg.params
    rows = []
    for m in range(1, cfg.k_modes + 1):
        k = m * math.pi / cfg.ell
        rows.append((m, k, dispersion_growth_rate(k, p)))
    write_csv(out / "dispersion.csv", ["m", "k", "growth_rate"], rows)
    return {"max_growth_rate": max(r[2] for r in rows)}


def cmd_threshold(cfg: RunConfig, out: Path) -> dict:
    p = cfg.params
    s_glob = global_stability_threshold(p)
    s_lin = linear_instability_threshold(p)
    kappa = decay_rate_bound(p) if p.sigma > 0 else float("nan")
    report = {"sigma2_global": s_glob, "sigma2_linear": s_lin, "kappa_bound": kappa}
    for key, val in report.items():
        print(f"{key}={val:.7g}")
    write_csv(out / "threshold.csv", ["ell", "radius", "sigma2", *report], [(cfg.ell, cfg.radius, cfg.sigma2, *report.values())])
    return report


# ---------------------------------------------------------------- sweep

def _snap_radius(radius: float, grid) -> float:
    return int(round(radius / grid.h)) * grid.h


def sweep_point(cfg: RunConfig, radius: float, sigma2: float) -> list:
    """One phase-diagram point: run to saturation and classify the final state."""
    t0 = time.perf_counter()
    grid = make_grid(cfg.ell, cfg.grid)
    s_glob = global_stability_threshold((cfg.ell, radius))
    s_lin = linear_instability_threshold((cfg.ell, radius))
    try:
        params = Params.from_sigma2(cfg.ell, radius, sigma2)
        lam = max(dispersion_growth_rate(m * math.pi / cfg.ell, params) for m in range(1, cfg.grid // 2 + 1))
        t_end = cfg.sweep_t_min
        if lam > 0:
            t_end = min(cfg.sweep_t_max, max(t_end, cfg.sweep_efolds / lam))
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(7,)))
        rho0 = perturbed_uniform(grid, cfg.sweep_amplitude, rng)
        n_steps, _ = _step_plan(t_end, cfg.dt or default_dt(grid.h, params))
        sc = SolverConfig(t_end=t_end, dt=cfg.dt, scheme=cfg.scheme, record_every=max(1, n_steps // 400))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            traj = solve(rho0, params, sc)
        t = np.array(traj.times)
        psi = traj.series("psi_l2")
        keep = psi > 1e-10 * psi[0]
        try:
            rate = fit_exponential_decay(t[keep], psi[keep], window=(0.5, t_end)).rate
        except ValueError:
            rate = float("nan")
        cls = classify_state(traj.final)
        label, count, final = cls.label, cls.count, psi[-1]
    except (NumericalError, ConfigurationError):
        label, count, final, rate = "failed", 0, float("nan"), float("nan")
    runtime = time.perf_counter() - t0 if cfg.timings else float("nan")
    return [cfg.ell, radius, sigma2, final, label, count, rate, s_glob, s_lin, runtime]


def _sweep_task(args):
    cfg, radius, sigma2 = args
    return sweep_point(cfg, radius, sigma2)


def run_sweep(cfg: RunConfig) -> list:
    grid = make_grid(cfg.ell, cfg.grid)
    radii = [_snap_radius(r, grid) for r in cfg.radii]
    tasks = [(cfg, r, s) for r in radii for s in cfg.sigma2s]
    if cfg.workers == 1:
        rows = [_sweep_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_sweep_task, tasks))
    # R-major, sigma2-minor regardless of completion order
    rows.sort(key=lambda row: (row[1], row[2]))
    return rows


def cmd_sweep(cfg: RunConfig, out: Path) -> dict:
    rows = run_sweep(cfg)
    write_csv(out / "sweep.csv", SWEEP_HEADER, rows)
    radii = sorted({row[1] for row in rows})
    write_csv(out / "thresholds.csv", ["ell", "radius", "sigma2_global", "sigma2_linear"],
              ((cfg.ell, r, global_stability_threshold((cfg.ell, r)),
                linear_instability_threshold((cfg.ell, r))) for r in radii))
    return {"points": len(rows), "failed": sum(row[4] == "failed" for row in rows)}


COMMANDS = {
    "solve": cmd_solve,
    "picard": cmd_picard,
    "particles": cmd_particles,
    "sweep": cmd_sweep,
    "dispersion": cmd_dispersion,
    "threshold": cmd_threshold,
}


# ---------------------------------------------------------------- entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hkfp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hkfp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--seed")
        p.add_argument("--grid")
        p.add_argument("--ell")
        p.add_argument("--radius")
        p.add_argument("--sigma2")
        p.add_argument("--dt")
        p.add_argument("--t-end", dest="t_end")
        p.add_argument("--workers")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key")
    return parser


def load_config(args) -> RunConfig:
    raw = read_config_file(args.config) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        raw[key.strip()] = value.strip()
    for key in ("out", "seed", "grid", "ell", "radius", "sigma2", "dt", "t_end", "workers"):
        value = getattr(args, key)
        if value is not None:
            raw[key] = value
    return RunConfig.from_mapping(raw)


def main(argv=None) -> int:
    start = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
    except ConfigurationError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: config: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        extra = COMMANDS[args.command](cfg, out)
    except ConfigurationError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"error: numerical: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    write_meta(out, args.command, cfg, time.perf_counter() - start, **(extra or {}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
