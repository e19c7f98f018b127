"""Command-line entry point ``pws-msf``.

Exit codes: 0 success, 1 validation failure, 2 numerical failure
(for example a periodic orbit that does not converge), 3 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .agent import AgentModel
from .config import GALVANETTO_E, RunConfig, load_config
from .errors import ConfigError, NumericalError
from .msf import (
    MSFTable,
    b_matrices,
    fmt,
    msf_sweep,
    saltation_residuals,
    validate_against_full,
)
from .network import perturbed_state, simulate_network
from .orbit import OrbitSkeleton, find_periodic_orbit, orbit_residual, resample

log = logging.getLogger("pws_msf")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2, 3

REPRO_SIGMAS = [1.0, 1.2, 2.6, 2.7, 4.8]
REPRO_EXPECTED = [False, False, False, True, True]
REPRO_STEP = 1e-4


class Run:
    """A validated config plus the derived objects shared by every subcommand."""

    def __init__(self, cfg: RunConfig, base_dir: Path | None = None, jobs: int = 1):
        self.cfg = cfg
        self.base_dir = base_dir
        self.jobs = jobs
        self.model: AgentModel = cfg.build_model()
        self.out = Path(cfg.out)
        self.header = f"pws-msf {__version__} config-sha256 {cfg.sha256()}"

    def path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() or self.base_dir is None else self.base_dir / q

    def skeleton(self) -> OrbitSkeleton:
        cfg = self.cfg
        if cfg.orbit.skeleton:
            try:
                data = json.loads(self.path(cfg.orbit.skeleton).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"orbit.skeleton: {exc}") from None
            want = {"name": self.model.name, "params": dict(self.model.params)}
            if data.get("model") != want:
                raise ConfigError(f"orbit.skeleton was computed for {data.get('model')}, "
                                  f"config asks for {want}")
            try:
                sk = OrbitSkeleton.from_dict(data, self.model)
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"orbit.skeleton: {exc}") from None
            return resample(self.model, sk, cfg.step)
        if len(cfg.orbit.x0) != self.model.dim:
            raise ConfigError(f"orbit.x0 must have length {self.model.dim}")
        return find_periodic_orbit(self.model, cfg.orbit.x0, cfg.step, tol=cfg.tolerances.orbit,
                                   max_laps=cfg.orbit.max_laps, max_time=cfg.orbit.max_time)

    def write(self, name: str, text: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / name
        p.write_text(text)
        return p


# -- subcommands -------------------------------------------------------------


def run_orbit(run: Run) -> int:
    sk = run.skeleton()
    data = sk.to_dict(sample_stride=max(1, int(round(1e-2 / sk.step))))
    data["meta"] = {"tool": "pws-msf", "version": __version__, "config_sha256": run.cfg.sha256()}
    p = run.write("skeleton.json", json.dumps(data, indent=1) + "\n")
    res = orbit_residual(run.model, sk)
    print(f"period    {fmt(sk.period)}")
    print(f"anchor    {sk.anchor_mode.value} {np.array2string(sk.anchor_state, precision=12)}")
    for seg in sk.segments:
        line = f"segment   {seg.mode.value:<8} [{seg.t_start:.10f}, {seg.t_end:.10f}]"
        if seg.event is not None:
            e = seg.event
            line += f" -> {e.kind.value} at {np.array2string(e.state, precision=10)}"
        print(line)
    print(f"residual  {res:.3e}")
    print(f"wrote     {p}")
    return EXIT_OK


def _sweep(run: Run, sigmas, skeleton=None) -> MSFTable:
    sk = skeleton if skeleton is not None else run.skeleton()
    topo = run.cfg.build_topology(0.0, run.base_dir)
    table = msf_sweep(run.model, sk, topo, sigmas, jobs=run.jobs)
    table.header_lines = [run.header, f"step {fmt(sk.step)} period {fmt(sk.period)}"]
    return table


def _print_rows(table: MSFTable) -> None:
    for r in table.rows:
        if r.error is not None:
            print(f"sigma {r.sigma:<10.6g} ERROR {r.error}")
        else:
            print(f"sigma {r.sigma:<10.6g} msf {r.msf: .6e}  stable {str(r.stable).lower()}")


def run_msf(run: Run) -> int:
    table = _sweep(run, run.cfg.sigma_grid())
    p1 = run.write("msf.csv", table.to_csv())
    p2 = run.write("msf_modulus.csv", table.modulus_csv())
    _print_rows(table)
    print(f"wrote {p1} {p2}")
    if all(r.error is not None for r in table.rows):
        return EXIT_NUMERICAL
    return EXIT_OK


def run_simulate(run: Run) -> int:
    cfg = run.cfg
    grid = cfg.sigma_grid()
    if len(grid) != 1:
        raise ConfigError("simulate needs a single sigma value")
    sk = run.skeleton()
    topo = cfg.build_topology(grid[0], run.base_dir)
    x0 = perturbed_state(sk.anchor_state, topo.N, cfg.simulate.perturbation)
    step = cfg.simulate.step or cfg.step
    traj = simulate_network(run.model, topo, x0, cfg.simulate.periods * sk.period, step,
                            record_every=cfg.simulate.sample_every)

    cols = ["t", "sync_error"] + [f"x_{i}_{j}" for i in range(1, topo.N + 1)
                                  for j in range(1, topo.n + 1)]
    buf = [f"# {run.header}\n", f"# sigma {fmt(grid[0])} step {fmt(step)}\n"]
    sbuf = list(buf)
    rows, srows = [], []
    for t, e, x in zip(traj.times, traj.sync_error, traj.states):
        rows.append([fmt(t), fmt(e)] + [fmt(v) for v in x])
        srows.append([fmt(t), fmt(e)])
    p1 = run.write("trajectory.csv", _csv(buf, cols, rows))
    p2 = run.write("sync_error.csv", _csv(sbuf, ["t", "sync_error"], srows))
    print(f"sigma {grid[0]:g}: sync error {traj.sync_error[0]:.3e} -> {traj.sync_error[-1]:.3e} "
          f"over {cfg.simulate.periods:g} periods ({len(traj.events)} mode switches)")
    print(f"wrote {p1} {p2}")
    return EXIT_OK


def _csv(prefix: list[str], header: list[str], rows) -> str:
    out = io.StringIO()
    out.writelines(prefix)
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return out.getvalue()


def _use_b_identity(cfg: RunConfig) -> bool:
    flag = cfg.validate_.check_b_identity
    if flag is not None:
        return flag
    return cfg.model.name.lower() == "galvanetto" and np.allclose(cfg.E, GALVANETTO_E, 0, 0)


def run_validate(run: Run) -> int:
    cfg = run.cfg
    tol = cfg.tolerances
    sk = run.skeleton()
    if cfg.validate_.corrupt_saltation:
        for ev in sk.events:
            ev.saltation = ev.saltation + 1e-3
    topo = cfg.build_topology(0.0, run.base_dir)
    report: dict = {"tool": "pws-msf", "version": __version__, "config_sha256": cfg.sha256(),
                    "checks": []}
    ok = True

    def record(name, value, limit, **extra):
        nonlocal ok
        passed = bool(value <= limit)
        ok &= passed
        report["checks"].append({"check": name, "value": value, "tolerance": limit,
                                 "pass": passed, **extra})
        print(f"{'PASS' if passed else 'FAIL'}  {name:<34} {value:.3e} (tol {limit:.0e})")

    for s in cfg.sigma_grid():
        rep = validate_against_full(run.model, sk, topo, s, tol=tol.match)
        record(f"spectrum match sigma={s:g}", rep.distance, tol.match,
               full=[[z.real, z.imag] for z in rep.full],
               reduced=[[z.real, z.imag] for z in rep.reduced])
    for k, ev in enumerate(sk.events):
        for key, val in saltation_residuals(run.model, ev).items():
            record(f"saltation {key} event {k} {ev.kind.value}", val, tol.saltation)
    if _use_b_identity(cfg):
        B = b_matrices(run.model, sk, cfg.E)
        val = float(np.max(np.abs(np.asarray(cfg.E) + B))) if len(B) else 0.0
        record("|E + B| on sliding", val, tol.b_identity)
    p = run.write("validate.json", json.dumps(report, indent=1) + "\n")
    print(f"wrote {p}")
    return EXIT_OK if ok else EXIT_VALIDATION


def run_repro(run: Run) -> int:
    table = _sweep(run, REPRO_SIGMAS)
    p = run.write("repro_msf.csv", table.to_csv())
    run.write("repro_msf_modulus.csv", table.modulus_csv())
    ok = True
    for r, want in zip(table.rows, REPRO_EXPECTED):
        got = None if r.error else r.stable
        match = got == want
        ok &= match
        print(f"{'PASS' if match else 'FAIL'}  sigma {r.sigma:<4g} stable={got} "
              f"expected={want}  max|tau| {r.max_transverse_modulus:.6f}")
    print(f"wrote {p}")
    return EXIT_OK if ok else EXIT_VALIDATION


COMMANDS = {
    "orbit": run_orbit,
    "msf": run_msf,
    "simulate": run_simulate,
    "validate": run_validate,
    "repro-paper": run_repro,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pws-msf",
        description="Master stability function for networks of Filippov agents.",
        epilog="Flags override the values in --config, which override built-in defaults.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "orbit": "find the periodic orbit and write its skeleton",
        "msf": "sweep sigma and write the MSF table",
        "simulate": "simulate the full network from a perturbed synchronous state",
        "validate": "compare full and reduced spectra and check saltation identities",
        "repro-paper": "five-sigma Galvanetto classification at step 1e-4",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--sigma", type=float, help="single coupling strength")
        sp.add_argument("--sigma-min", type=float)
        sp.add_argument("--sigma-max", type=float)
        sp.add_argument("--sigma-steps", type=int)
        sp.add_argument("--step", type=float, help="fixed integration step")
        sp.add_argument("--jobs", type=int, default=1, help="worker threads for sweeps")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(args, base: dict) -> dict:
    ov: dict = {}
    rng = [args.sigma_min, args.sigma_max, args.sigma_steps]
    if args.sigma is not None and any(v is not None for v in rng):
        raise ConfigError("use either --sigma or the --sigma-min/--sigma-max/--sigma-steps range")
    if args.sigma is not None:
        ov["sigma"] = args.sigma
    elif any(v is not None for v in rng):
        cur = base.get("sigma") if isinstance(base.get("sigma"), dict) else {}
        merged = dict(cur)
        for key, v in zip(("min", "max", "steps"), rng):
            if v is not None:
                merged[key] = v
        missing = [k for k in ("min", "max", "steps") if k not in merged]
        if missing:
            raise ConfigError(f"sigma range is missing {', '.join(missing)}")
        ov["sigma"] = merged
    if args.step is not None:
        ov["step"] = args.step
    if args.out is not None:
        ov["out"] = args.out
    return ov


def _read_base(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError):
        return {}
    return data if isinstance(data, dict) else {}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        base = _read_base(args.config)
        ov = _overrides(args, base)
        if args.command == "repro-paper":
            defaults = {"model": {"name": "galvanetto"}, "topology": {"adjacency": [[0, 1], [1, 0]]},
                        "E": GALVANETTO_E}
            ov = {**defaults, **base, **ov}
            if args.step is None:
                ov["step"] = REPRO_STEP
        cfg = load_config(args.config, ov)
        base_dir = Path(args.config).resolve().parent if args.config else None
        run = Run(cfg, base_dir, args.jobs)
        return COMMANDS[args.command](run)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
