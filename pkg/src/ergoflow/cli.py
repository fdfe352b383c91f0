"""Command-line entry point: ``plan``, ``scenario`` and ``bench``.

Every run writes ``config.resolved`` (the canonical config actually used)
and ``metrics.json``; ``plan`` and ``scenario`` also write per-step
trajectory CSVs. Reals are printed with 17 significant digits and wall-clock
times go to stderr, so re-running with the same config and seed reproduces
every file byte for byte.

Exit codes: 0 success, 1 validation error, 2 numeric-integrity error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, dump_config, parse_config, with_overrides
from .errors import NumericIntegrityError, ValidationError
from .metric import MODES
from .scenarios import PLANNERS, RUNNERS, bench_metric, plan_scenario

JOBS_ENV = "ERGOFLOW_JOBS"


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 is reserved for numeric failures.
    def error(self, message):
        raise ValidationError(message)


def _real(x) -> str:
    x = float(x)
    return format(x, ".17g") if math.isfinite(x) else "null"


def to_json(obj, indent: int = 0) -> str:
    """Deterministic JSON with reals at 17 significant digits and NaN as null."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{to_json(str(k))}: {to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(to_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + to_json(v, indent + 1) for v in obj) + "\n" + end + "]"
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _real(obj)
    s = str(obj).replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")
    return f'"{s}"'


def trajectory_csv(sol, t0: float = 0.0) -> str:
    """Rows ``t, step, x..., g..., u...``; the last state has no control."""
    traj = sol.trajectory
    X, G, U = traj.states, traj.projected, sol.controls
    head = (["t", "step"] + [f"x{i}" for i in range(X.shape[1])] + [f"g{i}" for i in range(G.shape[1])]
            + [f"u{i}" for i in range(U.shape[1])])
    rows = [",".join(head)]
    for k in range(len(traj)):
        u = [_real(v) for v in U[k]] if k < len(U) else [""] * U.shape[1]
        cells = [_real(t0 + k * traj.dt), str(k)] + [_real(v) for v in X[k]] + [_real(v) for v in G[k]] + u
        rows.append(",".join(cells))
    return "\n".join(rows) + "\n"


def _write(out: Path, name: str, text: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _jobs(flag: int | None) -> int:
    env = os.environ.get(JOBS_ENV)
    if env is not None and env.strip():
        try:
            n = int(env)
        except ValueError:
            raise ValidationError(f"{JOBS_ENV} must be an integer, got {env!r}") from None
    else:
        n = 1 if flag is None else flag
    if n < 1:
        raise ValidationError("jobs must be at least 1")
    return n


def _load(args) -> RunConfig:
    cfg = parse_config(Path(args.config))
    return with_overrides(cfg, seed=args.seed, planner=args.planner, mode=args.mode)


def cmd_plan(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    prob, sol, extra = plan_scenario(cfg.settings, cfg.seed)
    rep = sol.final_metric
    metrics = {
        "scenario": cfg.kind,
        "planner": sol.planner,
        "mode": prob.mode,
        "seed": cfg.seed,
        "horizon": prob.horizon,
        "bandwidth": prob.kernel.bandwidth,
        "metric": rep.value,
        "term_traj_traj": rep.term_traj_traj,
        "term_cross": rep.term_cross,
        "term_target_target": rep.term_target_target,
        "iterations": sol.iterations,
        "converged": sol.converged,
        **extra,
        "objective_history": sol.objective_history,
        "config": dump_config(cfg),
    }
    _write(out, "config.resolved", dump_config(cfg))
    _write(out, "trajectory.csv", trajectory_csv(sol))
    _write(out, "metrics.json", to_json(metrics) + "\n")
    print(f"{cfg.kind} seed {cfg.seed} {sol.planner}: metric {rep.value:.6g} -> {out}", file=sys.stderr)
    return 0


def cmd_scenario(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    jobs = _jobs(args.jobs)
    rep = RUNNERS[cfg.kind](cfg.settings, seed=cfg.seed, jobs=jobs, keep_trajectories=True)
    metrics = {"scenario": rep.scenario, "planner": rep.planner, "seeds": rep.seeds}
    for name, vals in rep.sweep.items():
        metrics[name] = vals
    for name, agg in rep.aggregates.items():
        metrics[f"{name}_mean"] = agg["mean"]
        metrics[f"{name}_std"] = agg["std"]
        metrics[f"{name}_per_seed"] = rep.per_seed[name]
    metrics.update(rep.summary)
    metrics["config"] = dump_config(cfg)
    _write(out, "config.resolved", dump_config(cfg))
    for seed, sols in rep.trajectories.items():
        for i, sol in enumerate(sols):
            name = f"trajectory_seed{seed}.csv" if len(sols) == 1 else f"trajectory_seed{seed}_bound{i}.csv"
            _write(out, name, trajectory_csv(sol))
    _write(out, "metrics.json", to_json(metrics) + "\n")
    print(f"{rep.scenario} {rep.planner}: {len(rep.seeds)} seeds in {rep.runtime:.1f} s -> {out}", file=sys.stderr)
    return 0


def _ints(text: str) -> list[int]:
    try:
        vals = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ValidationError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v < 2 for v in vals):
        raise ValidationError("sizes must be integers of at least 2")
    return vals


def cmd_bench(args) -> int:
    out = Path(args.out)
    Ts, Ms = _ints(args.horizons), _ints(args.samples)
    if args.repeats < 1:
        raise ValidationError("repeats must be at least 1")
    mode = args.mode or "backward"
    res = bench_metric(Ts, Ms, repeats=args.repeats, seed=args.seed or 0, mode=mode)
    _write(out, "metrics.json", to_json(res) + "\n")
    for T, M, t in zip(res["T"], res["M"], res["seconds"]):
        print(f"T={T:5d} M={M:5d} {t * 1e3:9.3f} ms", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ergoflow", description="Ergodic coverage planning over flowing domains.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="config file")
        sp.add_argument("--seed", type=int, default=None, help="base seed (overrides the config)")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--planner", choices=PLANNERS, default=None)
        sp.add_argument("--mode", choices=MODES, default=None)

    common(sub.add_parser("plan", help="solve one seed's problem"))
    sc = sub.add_parser("scenario", help="run a scenario over all seeds")
    common(sc)
    sc.add_argument("--jobs", type=int, default=None, help=f"worker processes ({JOBS_ENV} overrides)")
    b = sub.add_parser("bench", help="time the metric against horizon and sample count")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default="out")
    b.add_argument("--mode", choices=MODES, default=None)
    b.add_argument("--horizons", default="256,512,1024")
    b.add_argument("--samples", default="64")
    b.add_argument("--repeats", type=int, default=5)
    return p


COMMANDS = {"plan": cmd_plan, "scenario": cmd_scenario, "bench": cmd_bench}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except NumericIntegrityError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 2
    except (ValidationError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
