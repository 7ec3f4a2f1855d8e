"""Command-line entry point.

    rotorlattice simulate {full|averaged|effective} --config PATH [--out DIR]
    rotorlattice verify CHECK --config PATH [--json]
    rotorlattice sweep {epsilon|N|dt} --config PATH

Exit codes: 0 when every check passes, 1 when one fails, 2 on config or IO errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .experiments import CHECKS, SWEEPS, _initial_ensemble, sweep, verify
from .sde import run

log = logging.getLogger("rotorlattice")


def _default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="INI config, or a JSON summary to replay")
    common.add_argument("--out", default=None, help="output directory (default: experiment.out or .)")
    common.add_argument("--seed", type=int, default=None, help="override run.seed")
    common.add_argument("--workers", type=int, default=None, help="ensemble worker threads")
    common.add_argument("--json", action="store_true", help="print the JSON summary to stdout")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="rotorlattice", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="integrate one of the equations")
    s.add_argument("kind", choices=["full", "averaged", "effective"])
    v = sub.add_parser("verify", parents=[common], help="run a verification check")
    v.add_argument("check", choices=sorted(CHECKS))
    w = sub.add_parser("sweep", parents=[common], help="sweep one parameter")
    w.add_argument("parameter", choices=sorted(SWEEPS))
    return p


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg["experiment"]["out"] or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def cmd_simulate(args, cfg: RunConfig, workers: int) -> int:
    spec = cfg.build_spec()
    sde = cfg.sde_run(workers=workers, kind=args.kind)
    r = cfg["run"]
    N = spec.lattice.N
    if args.kind == "averaged":
        x0 = np.full(N, r["initial_action"])
    elif args.kind == "effective":
        x0 = np.full(N, np.sqrt(2.0 * r["initial_action"]), dtype=complex)
    else:
        x0 = _initial_ensemble(cfg, N, sde.ensemble, r["seed"] + 104729)
    traj = run(x0, sde, spec)
    out = _out_dir(args, cfg)
    paths = []
    for m in range(sde.ensemble):
        name = "trajectory.csv" if sde.ensemble == 1 else f"trajectory_{m:04d}.csv"
        traj.write_csv(out / name, member=m)
        paths.append(str(out / name))
    meta = {"kind": args.kind, "scheme": sde.scheme, "frame": sde.frame, "records": len(traj.times),
            "nodes": N, "seed": r["seed"], "config_hash": cfg.hash(), "config": cfg.to_dict(),
            "artifacts": paths}
    _write_json(out / "trajectory.json", meta)
    if args.json:
        print(json.dumps(meta, indent=2, sort_keys=True))
    else:
        print(f"wrote {len(paths)} trajectory file(s) to {out}")
    return 0


def _report(args, cfg: RunConfig, res) -> int:
    out = _out_dir(args, cfg)
    summary = res.summary()
    path = out / f"{res.name}.json"
    summary["artifacts"] = [str(path)]
    _write_json(path, summary)
    print(json.dumps(summary, indent=2, sort_keys=True) if args.json else res.text())
    return 0 if res.passed else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    workers = args.workers or _default_workers()
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_values("run", seed=args.seed)
        if args.command == "simulate":
            return cmd_simulate(args, cfg, workers)
        if args.command == "verify":
            return _report(args, cfg, verify(args.check, cfg, workers))
        return _report(args, cfg, sweep(args.parameter, cfg, workers))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
