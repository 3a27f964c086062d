"""Experiment runner and file I/O.

Subcommands: run (execute a config), verify-boundary (the 3x3 surface
integral simulation), metrics (compare a snapshot with ground truth),
oracle-sample (rejection sampling to file).  Exit codes: 0 success,
2 config/schema violations, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import subprocess
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import engine, metrics, oracle, targets
from .engine import FlowDivergedError, RunConfig

Array = np.ndarray

SLOPE_WINDOW = (-0.85, -0.50)
TABLE_TOL = 1e-3


# ---------------------------------------------------------------------------
# file formats

def format_float(v: float) -> str:
    """17 significant digits: exact round trip for binary64."""
    return f"{v:.17g}"


def write_snapshot(path: Path, iteration: int, positions: Array) -> None:
    d = positions.shape[1]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iter,particle," + ",".join(f"x{i}" for i in range(d)) + "\n")
        for p, row in enumerate(positions):
            fh.write(f"{iteration},{p}," +
                     ",".join(format_float(v) for v in row) + "\n")


def read_snapshot(path: Path) -> tuple[np.ndarray, Array]:
    """Parse a snapshot CSV; malformed rows raise with their line number."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["iter", "particle"] or len(header) < 3:
            raise ValueError(f"{path}: line 1: bad snapshot header {header}")
        d = len(header) - 2
        iters, rows = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != d + 2:
                raise ValueError(f"{path}: line {lineno}: expected {d + 2} "
                                 f"fields, got {len(parts)}")
            try:
                iters.append(int(parts[0]))
                rows.append([float(v) for v in parts[2:]])
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: "
                                 "unparsable numeric field") from None
    if not rows:
        raise ValueError(f"{path}: no particle rows")
    return np.asarray(iters), np.asarray(rows)


def write_metrics_csv(path: Path, rows: list[dict]) -> None:
    cols = ("iter", "rsd_loss", "ratio_out", "w2_sinkhorn", "energy")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            cells = []
            for c in cols:
                v = row.get(c)
                if v is None:
                    cells.append("")
                elif c == "iter":
                    cells.append(str(v))
                else:
                    cells.append(format_float(v))
            fh.write(",".join(cells) + "\n")


def _build_id() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"],
                             capture_output=True, text=True, timeout=5,
                             cwd=os.path.dirname(os.path.abspath(__file__)))
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def write_run_outputs(result: engine.RunResult, out_dir: Path) -> list[str]:
    """Write snapshots, metrics, resolved config, and the manifest (last)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    files = []
    for iteration, positions in result.snapshots:
        name = f"snapshot_{iteration:06d}.csv"
        write_snapshot(out_dir / name, iteration, positions)
        files.append(name)
    write_metrics_csv(out_dir / "metrics.csv", result.metrics)
    files.append("metrics.csv")
    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(result.config.to_dict(), fh, indent=2)
        fh.write("\n")
    files.append("config.json")
    manifest = {"config": result.config.to_dict(), "build": _build_id(),
                "started": started,
                "finished": datetime.now(timezone.utc).isoformat(),
                "bandwidth_resolved": result.h, "files": files}
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return files + ["manifest.json"]


# ---------------------------------------------------------------------------
# config handling

def _parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ValueError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def _apply_override(cfg: dict, path: list[str], value) -> None:
    node = cfg
    for part in path[:-1]:
        node = node.setdefault(part, {})
    node[path[-1]] = value


def load_config(path: str, overrides: list[str],
                seed: Optional[int] = None,
                out_dir: Optional[str] = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    for text in overrides:
        key_path, value = _parse_override(text)
        _apply_override(raw, key_path, value)
    if seed is not None:
        raw["seed"] = seed
    if out_dir is not None:
        raw["out_dir"] = out_dir
    return RunConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# subcommands

def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config, args.override, args.seed, args.out_dir)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    truth = None
    if config.truth_path:
        try:
            _, truth = read_snapshot(Path(config.truth_path))
        except (OSError, ValueError) as exc:
            print(f"config error: truth_path: {exc}", file=sys.stderr)
            return 2
    try:
        result = engine.cfg_run(config, truth=truth)
    except FlowDivergedError as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return 3
    out_dir = Path(config.out_dir or "run_output")
    write_run_outputs(result, out_dir)
    final = result.metrics[-1]
    print(f"finished {config.n_outer} iterations; ratio_out="
          f"{final['ratio_out']:.4f}; outputs in {out_dir}")
    return 0


def cmd_verify_boundary(args: argparse.Namespace) -> int:
    from .domains import make_block

    block = make_block()
    n_list = [10 ** k for k in range(2, 7) if 10 ** k <= args.max_n]
    if len(n_list) < 2:
        print("max-n too small for a slope estimate", file=sys.stderr)
        return 2
    # h0 chosen so that h0 d^(-1/3) = 0.5, i.e. h = 0.5 N^(-1/3)
    h0 = 0.5 * block.dim ** (1.0 / 3.0)
    fixed_h = (oracle.adaptive_bandwidth(h0, block.dim, n_list[0])
               if args.fixed_h else None)
    densities, velocities = oracle.block_table_cells()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    summary = {}
    failures = []
    seed_seq = np.random.SeedSequence(args.seed).generate_state(9)
    for i, dens in enumerate(densities):
        for j, vel in enumerate(velocities):
            key = (dens["name"], vel["name"])
            truth = oracle.boundary_quadrature(block, dens["density"],
                                               vel["fn"], resolution=2001)
            expected = oracle.BLOCK_TABLE_REFERENCE[key]
            if abs(truth - expected) > TABLE_TOL:
                failures.append(f"{key}: quadrature {truth:.6f} differs from "
                                f"reference {expected:.6f}")
            res = oracle.mse_slope_experiment(
                block, dens["sampler"], vel["fn"], n_list, h0,
                trials=args.trials, seed=int(seed_seq[3 * i + j]),
                true_value=truth, fixed_h=fixed_h)
            ok = SLOPE_WINDOW[0] <= res.slope <= SLOPE_WINDOW[1]
            if not ok and not args.fixed_h:
                failures.append(f"{key}: slope {res.slope:.3f} outside "
                                f"{SLOPE_WINDOW}")
            summary["/".join(key)] = {"quadrature": truth,
                                      "reference": expected,
                                      "slope": res.slope,
                                      "mse": {str(k): v for k, v in res.mse.items()}}
            print(f"{key[0]}/{key[1]}: reference {truth: .6f}  "
                  f"slope {res.slope: .3f}  "
                  f"{'ok' if ok or args.fixed_h else 'OUT OF WINDOW'}")
            for n, h, t, est, tv, sq in res.rows:
                rows.append((dens["name"], vel["name"], n, h, t, est, tv, sq))

    with open(out_dir / "mse_sweep.csv", "w", encoding="utf-8") as fh:
        fh.write("density,velocity,N,h,trial,estimate,true_value,squared_error\n")
        for r in rows:
            fh.write(",".join([r[0], r[1], str(r[2])] +
                              [format_float(v) for v in r[3:]]) + "\n")
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump({"slope_window": SLOPE_WINDOW, "fixed_h": fixed_h,
                   "n_list": n_list, "trials": args.trials,
                   "cells": summary, "failures": failures}, fh, indent=2)
        fh.write("\n")
    if failures:
        for f in failures:
            print(f"FAIL {f}", file=sys.stderr)
        return 1
    print(f"all cells within tolerance; details in {out_dir}")
    return 0


def cmd_metrics(args: argparse.Namespace) -> int:
    try:
        _, x = read_snapshot(Path(args.snapshot))
        _, y = read_snapshot(Path(args.truth))
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if x.shape[1] != y.shape[1]:
        print(f"error: dimension mismatch {x.shape[1]} vs {y.shape[1]}",
              file=sys.stderr)
        return 2
    domain = None
    if args.config:
        try:
            config = load_config(args.config, [])
            domain, _ = targets.build_pair(config.domain, config.target)
        except (OSError, json.JSONDecodeError, ValueError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
    report = metrics.compute_report(x, y, domain=domain,
                                    eps_rel=args.eps_rel, seed=args.seed)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_oracle_sample(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config, args.override)
        _, target = targets.build_pair(config.domain, config.target)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    samples = oracle.rejection_sample(target, args.n, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_snapshot(out, 0, samples)
    print(f"wrote {args.n} samples to {out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfgflow",
        description="constrained particle-flow sampler and its verification "
                    "suites")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a run config")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out-dir", default=None)
    run.add_argument("--override", action="append", default=[],
                     metavar="KEY=VALUE")
    run.set_defaults(func=cmd_run)

    vb = sub.add_parser("verify-boundary",
                        help="surface-integral estimator verification")
    vb.add_argument("--max-n", type=float, default=1e5)
    vb.add_argument("--trials", type=int, default=10)
    vb.add_argument("--fixed-h", action="store_true",
                    help="freeze h at its smallest-N value")
    vb.add_argument("--seed", type=int, default=0)
    vb.add_argument("--out-dir", default="boundary_verification")
    vb.set_defaults(func=cmd_verify_boundary)

    met = sub.add_parser("metrics", help="compare a snapshot against truth")
    met.add_argument("--snapshot", required=True)
    met.add_argument("--truth", required=True)
    met.add_argument("--config", default=None,
                     help="optional run config, enables ratio_out")
    met.add_argument("--eps-rel", type=float, default=0.01)
    met.add_argument("--seed", type=int, default=0)
    met.set_defaults(func=cmd_metrics)

    osamp = sub.add_parser("oracle-sample",
                           help="rejection-sample ground truth to a file")
    osamp.add_argument("--config", required=True)
    osamp.add_argument("--n", type=int, required=True)
    osamp.add_argument("--seed", type=int, default=0)
    osamp.add_argument("--out", required=True)
    osamp.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE")
    osamp.set_defaults(func=cmd_oracle_sample)
    return parser


@contextlib.contextmanager
def _thread_cap():
    """Honor CFG_THREADS by capping BLAS worker pools for the process."""
    cap = os.environ.get("CFG_THREADS")
    if not cap:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        yield
        return
    with threadpool_limits(limits=int(cap)):
        yield


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    with _thread_cap():
        return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
