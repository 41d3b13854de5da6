"""Command-line driver: configuration, orchestration, serialization.

Configuration files are flat ``key = value`` lines with dotted section
prefixes (``grid.n``, ``params.p``, ``solver.dtau``, ...).  Unknown keys are
a hard error.  All diagnostics go to stderr; all data goes to files in the
output directory: JSONL records (one per result, embedding the resolved
configuration and a format version), CSV traces, and binary field dumps.

Exit codes: 0 success; 2 convergence failure; 3 blow-up terminator on an
evolve run (informational); 4 invalid configuration; 5 nonexistence signal;
6 missing input artifacts.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import dynamics, fibering, ground_state, thresholds
from .errors import (
    BoundaryMassError,
    ConfigError,
    ConvergenceError,
    DriftError,
    HfwavesError,
    HypothesisError,
    NoCriticalPointError,
)
from .functionals import ModelParams
from .grid import GridSpec, PairState, mass, read_pair_dump, write_pair_dump
from .ground_state import SolverConfig
from .dynamics import PropagatorConfig

FORMAT_VERSION = 1

EXIT_OK = 0
EXIT_CONVERGENCE = 2
EXIT_BLOWUP = 3
EXIT_CONFIG = 4
EXIT_NONEXISTENCE = 5
EXIT_MISSING_INPUT = 6

_DEFAULTS = {
    "grid.n": 64,
    "grid.box_length": 16.0,
    "params.p": 2.5,
    "params.gamma": 0.01,
    "params.beta": 1.0,
    "params.c": 32.0,
    "solver.dtau": 1e-2,
    "solver.max_iter": 50000,
    "solver.grad_tol": 1e-7,
    "solver.pohozaev_tol": 1e-6,
    "solver.seed": "gaussian_pair",
    "solver.radial_constraint": False,
    "propagator.dt": 5e-3,
    "propagator.t_max": 1.0,
    "propagator.monitor_stride": 4,
    "propagator.blowup_gradient_factor": 1e6,
    "propagator.adapt_dt": False,
    "blowup.s": 1.2,
    "stability.delta": 1e-2,
    "stability.trials": 5,
    "fibering.t_min": 1e-3,
    "fibering.t_max": 1e3,
    "fibering.samples": 256,
    "thresholds.sweeps": 40,
}

_BOOL_KEYS = {"solver.radial_constraint", "propagator.adapt_dt"}
_INT_KEYS = {"grid.n", "solver.max_iter", "propagator.monitor_stride", "stability.trials", "fibering.samples", "thresholds.sweeps"}
_STR_KEYS = {"solver.seed"}


@dataclass
class RunConfig:
    values: dict
    seed: int = 0
    out_dir: str = "."

    @property
    def grid(self) -> GridSpec:
        return GridSpec(n=self.values["grid.n"], box_length=self.values["grid.box_length"])

    @property
    def params(self) -> ModelParams:
        try:
            return ModelParams(
                p=self.values["params.p"],
                gamma=self.values["params.gamma"],
                beta=self.values["params.beta"],
                c=self.values["params.c"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def solver(self) -> SolverConfig:
        v = self.values
        return SolverConfig(
            dtau=v["solver.dtau"],
            max_iter=v["solver.max_iter"],
            grad_tol=v["solver.grad_tol"],
            pohozaev_tol=v["solver.pohozaev_tol"],
            seed=v["solver.seed"],
            radial_constraint=v["solver.radial_constraint"],
            rng_seed=self.seed,
        )

    @property
    def propagator(self) -> PropagatorConfig:
        v = self.values
        return PropagatorConfig(
            dt=v["propagator.dt"],
            t_max=v["propagator.t_max"],
            monitor_stride=v["propagator.monitor_stride"],
            blowup_gradient_factor=v["propagator.blowup_gradient_factor"],
            adapt_dt=v["propagator.adapt_dt"],
        )

    def record_header(self, command: str) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "command": command,
            "rng_seed": self.seed,
            "config": dict(self.values),
        }


def _coerce(key: str, raw: str):
    if key in _STR_KEYS:
        return raw
    if key in _BOOL_KEYS:
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"key '{key}' expects a boolean, got '{raw}'")
    if key in _INT_KEYS:
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"key '{key}' expects an integer, got '{raw}'") from exc
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"key '{key}' expects a number, got '{raw}'") from exc


def parse_config_file(path: str | None) -> dict:
    values = dict(_DEFAULTS)
    if path is None:
        return values
    if not os.path.exists(path):
        raise ConfigError(f"configuration file '{path}' does not exist")
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got '{stripped}'")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if key not in _DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown configuration key '{key}'")
            values[key] = _coerce(key, raw)
    return values


def _validate_model(values: dict):
    p = values["params.p"]
    if not 2.0 < p < 6.0:
        raise ConfigError(f"params.p={p} violates the bound 2 < p < 6")
    if values["params.c"] <= 0:
        raise ConfigError(f"params.c={values['params.c']} must be positive")
    if values["params.gamma"] < 0:
        raise ConfigError(f"params.gamma={values['params.gamma']} must be nonnegative")
    if values["grid.n"] < 8:
        raise ConfigError(f"grid.n={values['grid.n']} must be at least 8")
    if values["grid.box_length"] <= 0:
        raise ConfigError(f"grid.box_length={values['grid.box_length']} must be positive")


def write_jsonl(path: str, records: list[dict]):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def write_csv(path: str, rows, fieldnames):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _log(msg: str):
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# commands


def cmd_solve(cfg: RunConfig) -> int:
    params = cfg.params
    grid = cfg.grid
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    try:
        if params.p < 10.0 / 3.0:
            result = ground_state.solve_global(grid, params, cfg.solver)
        else:
            c_window = None
            if params.p == 10.0 / 3.0:
                c_star, c_up = thresholds.estimate_c_thresholds(params, sweeps=cfg.values["thresholds.sweeps"])
                c_window = (c_star.value, c_up.value)
                if params.c <= c_star.value:
                    _log(
                        f"mass c={params.c} is at or below the estimated lower threshold "
                        f"{c_star.value:.6g}; no dilation-critical point exists"
                    )
                    return EXIT_NONEXISTENCE
            result = ground_state.solve_pohozaev(grid, params, cfg.solver, c_window=c_window)
    except (DriftError, NoCriticalPointError) as exc:
        _log(f"nonexistence signal: {exc}")
        return EXIT_NONEXISTENCE
    except ConvergenceError as exc:
        _log(f"convergence failure: {exc}")
        return EXIT_CONVERGENCE

    rec = cfg.record_header("solve")
    rec.update(result.to_record())
    write_jsonl(os.path.join(out, "result.jsonl"), [rec])
    write_csv(
        os.path.join(out, "convergence.csv"),
        ({"iteration": r[0], "I": r[1], "abs_P": r[2], "el_residual": r[3]} for r in result.history),
        ["iteration", "I", "abs_P", "el_residual"],
    )
    write_pair_dump(os.path.join(out, "state"), result.state, extra_meta={
        "params.p": params.p, "params.gamma": params.gamma,
        "params.beta": params.beta, "params.c": params.c,
    })
    if not result.converged:
        _log("solver hit the iteration cap without reaching tolerance")
        return EXIT_CONVERGENCE
    _log(f"converged in {result.iterations} iterations: I={result.breakdown.I:.8g}")
    return EXIT_OK


def _load_prior_state(from_dir: str) -> tuple[PairState, dict]:
    prefix = os.path.join(from_dir, "state")
    if not (os.path.exists(prefix + ".bin") and os.path.exists(prefix + ".meta")):
        raise FileNotFoundError(f"no field dump found under '{from_dir}'")
    result_path = os.path.join(from_dir, "result.jsonl")
    if not os.path.exists(result_path):
        raise FileNotFoundError(f"no result record found under '{from_dir}'")
    state, meta = read_pair_dump(prefix)
    with open(result_path, encoding="utf-8") as fh:
        record = json.loads(fh.readline())
    return state, record


def _ground_result_from_artifacts(state: PairState, record: dict, params: ModelParams):
    from .functionals import energy_I, lagrange_multiplier

    bd = energy_I(state, params)
    return ground_state.GroundStateResult(
        state=state,
        breakdown=bd,
        lam=record.get("lambda", lagrange_multiplier(state, params, bd=bd)),
        el_residual=record.get("el_residual", float("nan")),
        pohozaev_residual=bd.P,
        vectoriality=record.get("vectoriality", float("nan")),
        manifold_class=record.get("manifold_class", "off_manifold"),
        iterations=record.get("iterations", 0),
        converged=record.get("converged", False),
    )


def _write_trace(out: str, cfg: RunConfig, command: str, trace: dynamics.EvolutionTrace) -> None:
    write_csv(
        os.path.join(out, "trace.csv"),
        trace.to_rows(),
        ["t", "mass", "energy", "P", "f", "A"],
    )
    rec = cfg.record_header(command)
    rec.update(trace.summary())
    rec.update({k: v for k, v in trace.extra.items()})
    write_jsonl(os.path.join(out, "summary.jsonl"), [rec])


def cmd_evolve(cfg: RunConfig, from_dir: str | None) -> int:
    params = cfg.params
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    if from_dir is not None:
        try:
            initial, _ = _load_prior_state(from_dir)
        except FileNotFoundError as exc:
            _log(str(exc))
            return EXIT_MISSING_INPUT
    else:
        initial = ground_state.build_seed(cfg.grid, params, cfg.solver)
        initial = initial.scaled(np.sqrt(params.c / mass(initial)))
    trace = dynamics.evolve(initial, params, cfg.propagator)
    _write_trace(out, cfg, "evolve", trace)
    _log(f"evolved to t={trace.times[-1]:.6g}, terminated_by={trace.terminated_by}")
    return EXIT_BLOWUP if trace.terminated_by == "blowup" else EXIT_OK


def cmd_blowup(cfg: RunConfig, from_dir: str | None, s: float) -> int:
    params = cfg.params
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    if from_dir is None:
        _log("cmd_blowup requires --from pointing at a prior solve output directory")
        return EXIT_MISSING_INPUT
    try:
        state, record = _load_prior_state(from_dir)
    except FileNotFoundError as exc:
        _log(str(exc))
        return EXIT_MISSING_INPUT
    ground = _ground_result_from_artifacts(state, record, params)
    prop = cfg.propagator
    if not prop.adapt_dt:
        prop = PropagatorConfig(**{**prop.__dict__, "adapt_dt": True})
    try:
        trace = dynamics.blowup_experiment(ground, s, params, prop)
    except HypothesisError as exc:
        _log(f"blow-up construction failed: {exc}")
        return EXIT_CONVERGENCE
    _write_trace(out, cfg, "blowup", trace)
    _log(f"blow-up run terminated_by={trace.terminated_by} at t={trace.times[-1]:.6g}")
    return EXIT_OK


def cmd_stability(cfg: RunConfig, from_dir: str | None, delta: float) -> int:
    params = cfg.params
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    if from_dir is None:
        _log("cmd_stability requires --from pointing at a prior solve output directory")
        return EXIT_MISSING_INPUT
    try:
        state, record = _load_prior_state(from_dir)
    except FileNotFoundError as exc:
        _log(str(exc))
        return EXIT_MISSING_INPUT
    ground = _ground_result_from_artifacts(state, record, params)
    trials = cfg.values["stability.trials"]
    results = dynamics.stability_experiment(
        ground, delta, params, cfg.propagator, trials=trials, rng_seed=cfg.seed
    )
    records = []
    for i, rep in enumerate(results):
        rec = cfg.record_header("stability")
        rec.update(
            {
                "trial": i,
                "delta": rep.delta,
                "initial_distance": rep.initial_distance,
                "max_distance": rep.max_distance,
                "terminated_by": rep.terminated_by,
            }
        )
        records.append(rec)
    write_jsonl(os.path.join(out, "stability.jsonl"), records)
    rows = []
    for i, rep in enumerate(results):
        for t, d in zip(rep.times, rep.distances):
            rows.append({"trial": i, "t": t, "distance": d})
    write_csv(os.path.join(out, "distances.csv"), rows, ["trial", "t", "distance"])
    _log(f"{trials} stability trials complete; max distance {max(r.max_distance for r in results):.6g}")
    return EXIT_OK


def cmd_fibering(cfg: RunConfig) -> int:
    params = cfg.params
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    seed_state = ground_state.build_seed(cfg.grid, params, cfg.solver)
    unit = seed_state.scaled(np.sqrt(1.0 / mass(seed_state)))
    t_range = (cfg.values["fibering.t_min"], cfg.values["fibering.t_max"])
    samples = cfg.values["fibering.samples"]
    try:
        prof = fibering.fibering_scan(unit, params, t_range=t_range, samples=samples)
    except NoCriticalPointError as exc:
        _log(f"nonexistence signal: {exc}")
        return EXIT_NONEXISTENCE
    write_csv(os.path.join(out, "fibering.csv"), prof.to_rows(), ["t", "phi", "phi_prime"])
    rec = cfg.record_header("fibering")
    rec.update({"t_minus": prof.t_minus, "t_plus": prof.t_plus})
    write_jsonl(os.path.join(out, "fibering.jsonl"), [rec])
    _log(f"fibering scan done: t_minus={prof.t_minus}, t_plus={prof.t_plus}")
    return EXIT_OK


def cmd_thresholds(cfg: RunConfig) -> int:
    params = cfg.params
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    sweeps = cfg.values["thresholds.sweeps"]
    records = []
    try:
        if 3.0 <= params.p < 10.0 / 3.0:
            est = thresholds.estimate_beta_star(params, sweeps=sweeps)
            rec = cfg.record_header("thresholds")
            rec.update({"threshold": "beta_star", **est.to_record()})
            records.append(rec)
        if 10.0 / 3.0 <= params.p < 6.0:
            c_star, c_up = thresholds.estimate_c_thresholds(params, sweeps=sweeps)
            for name, est in (("c_star", c_star), ("c_upper", c_up)):
                rec = cfg.record_header("thresholds")
                rec.update({"threshold": name, **est.to_record()})
                records.append(rec)
        gn = thresholds.estimate_gn_power(params.p)
        rec = cfg.record_header("thresholds")
        rec.update({"threshold": "gn_power", **gn.to_record()})
        records.append(rec)
        hart = thresholds.estimate_gn_hartree()
        rec = cfg.record_header("thresholds")
        rec.update({"threshold": "gn_hartree", **hart.to_record()})
        records.append(rec)
    except ConvergenceError as exc:
        _log(f"estimator failed to converge: {exc}")
        return EXIT_CONVERGENCE
    except HypothesisError as exc:
        _log(f"invalid parameter regime: {exc}")
        return EXIT_CONFIG
    write_jsonl(os.path.join(out, "thresholds.jsonl"), records)
    _log(f"wrote {len(records)} threshold records")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hfwaves",
        description="Mass-constrained ground states and dynamics of the coupled Hartree-type system",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "evolve", "blowup", "stability", "fibering", "thresholds"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="path to a key=value configuration file")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=0, help="random seed recorded in outputs")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key")
        if name in ("evolve", "blowup", "stability"):
            sp.add_argument("--from", dest="from_dir", default=None,
                            help="prior solve output directory with a field dump")
            sp.add_argument("--tmax", type=float, default=None, help="override propagator.t_max")
            sp.add_argument("--dt", type=float, default=None, help="override propagator.dt")
        if name == "blowup":
            sp.add_argument("--s", type=float, default=None, help="mass-preserving dilation factor")
        if name == "stability":
            sp.add_argument("--delta", type=float, default=None, help="relative H1 perturbation size")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        values = parse_config_file(args.config)
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got '{item}'")
            key, raw = (part.strip() for part in item.split("=", 1))
            if key not in _DEFAULTS:
                raise ConfigError(f"unknown configuration key '{key}'")
            values[key] = _coerce(key, raw)
        if getattr(args, "tmax", None) is not None:
            values["propagator.t_max"] = args.tmax
        if getattr(args, "dt", None) is not None:
            values["propagator.dt"] = args.dt
        if getattr(args, "s", None) is not None:
            values["blowup.s"] = args.s
        if getattr(args, "delta", None) is not None:
            values["stability.delta"] = args.delta
        _validate_model(values)
        cfg = RunConfig(values=values, seed=args.seed, out_dir=args.out)
    except ConfigError as exc:
        _log(f"invalid configuration: {exc}")
        return EXIT_CONFIG

    try:
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "evolve":
            return cmd_evolve(cfg, args.from_dir)
        if args.command == "blowup":
            return cmd_blowup(cfg, args.from_dir, cfg.values["blowup.s"])
        if args.command == "stability":
            return cmd_stability(cfg, args.from_dir, cfg.values["stability.delta"])
        if args.command == "fibering":
            return cmd_fibering(cfg)
        if args.command == "thresholds":
            return cmd_thresholds(cfg)
    except BoundaryMassError as exc:
        _log(f"boundary contamination: {exc}")
        return EXIT_CONVERGENCE
    except HfwavesError as exc:
        _log(f"error: {exc}")
        return EXIT_CONVERGENCE
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
