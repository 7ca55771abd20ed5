"""Command-line entry points: synth, solve, eval, bench.

Exit codes: 0 success, 1 usage error, 2 data error, 3 solver failure.
"""

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import fileio
from .baseline import (AmbiguousIntegrabilityError, RankDeficientError,
                       run_baseline)
from .bench import (EvalReport, TrialPlan, TrialRecord, fit_gbr_depth,
                    run_trial_grid, z_err)
from .grid import DepthMap
from .joint import DivergenceError, JointConfig, solve_joint
from .photometric import SceneSpec, generate_scene
from .rpca import run_rpca_baseline

SOLVER_ERRORS = (DivergenceError, RankDeficientError,
                 AmbiguousIntegrabilityError, np.linalg.LinAlgError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _scene_from_args(args):
    spec_dict = SceneSpec().to_dict()
    if args.config:
        spec_dict.update(fileio.load_json(args.config))
    for key in ("shape", "height", "width", "m", "noise", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            spec_dict[key] = value
    if args.phong is not None:
        spec_dict["phong"] = args.phong
    return SceneSpec.from_dict(spec_dict)


def cmd_synth(args):
    spec = _scene_from_args(args)
    surface, lights, obs = generate_scene(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_dataset(out, surface, lights, obs, spec)
    fileio.save_json(out / "config.json", spec.to_dict())
    print(f"wrote {obs.M.shape[0]} images and ground truth to {out}")
    return 0


def _unit_normals_from_S(S):
    norms = np.linalg.norm(S, axis=0)
    norms[norms == 0] = 1.0
    return S / norms


def _write_solver_trace(path, report):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["outer", "inner", "f_data", "f_tnn", "objective",
                         "augmented_lagrangian", "primal_residual"])
        idx = 0
        for outer, n_inner in enumerate(report.inner_iterations):
            for inner in range(n_inner):
                writer.writerow([
                    outer, inner,
                    repr(report.f_data_trace[idx]),
                    repr(report.f_tnn_trace[idx]),
                    repr(report.objective[idx]),
                    repr(report.augmented_lagrangian[idx]),
                    repr(report.primal_residual[idx]),
                ])
                idx += 1


def _write_objective_trace(path, values):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "objective"])
        for i, v in enumerate(values):
            writer.writerow([i, repr(v)])


def cmd_solve(args):
    if args.method not in ("baseline", "rpca", "joint"):
        raise UsageError(f"unknown method: {args.method!r}")
    dataset = fileio.load_dataset(args.data)
    obs = dataset.observations()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    cfg_dict = JointConfig().to_dict()
    if args.config:
        cfg_dict.update(fileio.load_json(args.config))
    if args.mode:
        cfg_dict["mode"] = args.mode
    if args.init:
        cfg_dict["init"] = args.init
    cfg = JointConfig.from_dict(cfg_dict)

    grid = dataset.grid
    if args.method == "baseline":
        depth, S, L = run_baseline(obs)
        normals = _unit_normals_from_S(S)
        _write_objective_trace(out / "report.csv", [])
    elif args.method == "rpca":
        depth, S, L = run_rpca_baseline(obs)
        normals = _unit_normals_from_S(S)
        _write_objective_trace(out / "report.csv", [])
    else:
        state, report = solve_joint(obs, cfg=cfg)
        depth = state.z
        # XN columns are (z_x, z_y, -1); the geometric normal is the negation
        normals = _unit_normals_from_S(-state.XN)
        L = state.XL
        _write_solver_trace(out / "report.csv", report)
        fileio.save_json(out / "summary.json", {
            "outer_iterations": report.outer_iterations,
            "inner_iterations": report.inner_iterations,
            "outer_converged": report.outer_converged,
            "admm_converged": report.admm_converged,
            "init_fdata": report.init_fdata,
            "init_model_fdata": report.init_model_fdata,
            "final_objective": report.objective[-1] if report.objective else None,
            "zero_norm_columns": report.zero_norm_columns,
        })

    fileio.write_pfm(out / "depth.pfm", depth.to_image(fill=0.0))
    normal_img = np.stack([grid.to_image(normals[k], fill=0.0) for k in range(3)],
                          axis=-1)
    fileio.write_pfm(out / "normals.pfm", normal_img)
    fileio.write_lights_csv(out / "lights.csv", L)
    resolved = {"method": args.method, "data": str(args.data), **cfg.to_dict()}
    fileio.save_json(out / "config.json", resolved)
    print(f"solved {args.method} -> {out}")
    return 0


def cmd_eval(args):
    dataset = fileio.load_dataset(args.data)
    grid = dataset.grid
    depth_path = Path(args.result) / "depth.pfm"
    if not depth_path.exists():
        raise FileNotFoundError(f"missing recovered depth: {depth_path}")
    z_rec = DepthMap(grid.from_image(fileio.read_pfm(depth_path).astype(float)),
                     grid)
    transform, aligned = fit_gbr_depth(z_rec, dataset.depth_gt)
    err = z_err(aligned, dataset.depth_gt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["z_err", "lam", "mu", "nu", "c0", "degenerate"])
        writer.writerow([repr(err), repr(transform.lam), repr(transform.mu),
                         repr(transform.nu), repr(transform.c0),
                         int(transform.degenerate)])
    fileio.write_pfm(out / "aligned_depth.pfm", aligned.to_image(fill=0.0))
    abs_err = np.abs(dataset.depth_gt.to_image(fill=0.0)
                     - aligned.to_image(fill=0.0))
    fileio.write_pfm(out / "abs_error.pfm", abs_err)
    print(f"z_err = {err:.4f}")
    return 0


def _manifest_load(path):
    completed = {}
    if path.exists():
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = TrialRecord(**json.loads(line))
                completed[rec.key()] = rec
    return completed


def cmd_bench(args):
    plan_dict = fileio.load_json(args.plan)
    if args.seed is not None:
        plan_dict["base_seed"] = args.seed
    plan = TrialPlan.from_dict(plan_dict)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.save_json(out / "plan.json", plan.to_dict())

    manifest = out / "manifest.jsonl"
    completed = _manifest_load(manifest)

    def record_sink(records):
        with open(manifest, "a") as fh:
            for rec in records:
                fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")

    report = run_trial_grid(plan, completed=completed, on_records=record_sink)
    with open(out / "records.csv", "w", newline="") as fh:
        fh.write(report.records_csv())
    with open(out / "aggregates.json", "w") as fh:
        fh.write(report.aggregates_json())
    n_fail = sum(1 for r in report.records if r.error)
    print(f"{len(report.records)} records ({n_fail} failed) -> {out}")
    return 0


def build_parser():
    parser = _Parser(prog="upstereo",
                     description="Uncalibrated photometric stereo toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="render a synthetic dataset")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--config", default=None)
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.add_argument("--shape", default=None)
    p_synth.add_argument("--height", type=int, default=None)
    p_synth.add_argument("--width", type=int, default=None)
    p_synth.add_argument("--m", type=int, default=None)
    p_synth.add_argument("--noise", type=float, default=None)
    p_synth.add_argument("--phong", action=argparse.BooleanOptionalAction,
                         default=None)
    p_synth.set_defaults(func=cmd_synth)

    p_solve = sub.add_parser("solve", help="run a reconstruction method")
    p_solve.add_argument("--data", required=True)
    p_solve.add_argument("--out", required=True)
    p_solve.add_argument("--method", required=True)
    p_solve.add_argument("--mode", choices=("mc", "nc"), default=None)
    p_solve.add_argument("--init", choices=("baseline", "rpca"), default=None)
    p_solve.add_argument("--config", default=None)
    p_solve.set_defaults(func=cmd_solve)

    p_eval = sub.add_parser("eval", help="score a result against ground truth")
    p_eval.add_argument("--result", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_bench = sub.add_parser("bench", help="run a benchmark plan")
    p_bench.add_argument("--plan", required=True)
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--seed", type=int, default=None)
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except (FileNotFoundError, OSError, ValueError, KeyError,
            json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
