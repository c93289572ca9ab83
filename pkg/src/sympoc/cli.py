"""Command line pipelines, metrics and trajectory files.

    sympoc train|refine|eval|export-plot <scenario.json|builtin> [options]

``train`` writes ``checkpoint/``, ``trajectory.csv`` and ``metrics.json`` into
``--out``; with ``--refine`` it also runs the pseudospectral pass and writes
the refined files under ``refined/``.  ``refine`` starts from
``--init`` (default ``<out>/trajectory.csv``) or from the straight line with
``--linear-init``.  ``eval`` recomputes ``metrics.json`` next to a trajectory.
``export-plot`` writes positions at t = 0, T/3, 2T/3, T plus the obstacles.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy.integrate import trapezoid

from .pseudospectral import RefineTolerances, cgl_grid, linear_trajectory, solve_refine, transcribe
from .scenarios import Scenario, ScenarioError, load_scenario
from .training import TrainConfig, Trajectory, extract_trajectory, save_checkpoint, train_sympocnet

N_OUT = 100
SNAPSHOTS = (0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0)


# ---------------------------------------------------------------- metrics

@dataclass
class Metrics:
    min_constraint: float
    cost: float
    scaled_cost: float
    D: Optional[float]
    runtime: float = 0.0
    iterations: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _velocities(traj: Trajectory) -> np.ndarray:
    if traj.velocities is not None:
        return traj.velocities
    return np.gradient(traj.states, traj.times, axis=0, edge_order=2 if len(traj.times) > 2 else 1)


def trapezoid_cost(traj: Trajectory) -> float:
    v = _velocities(traj)
    return float(trapezoid(0.5 * np.sum(v * v, axis=1), traj.times))


def min_normalized_distance(traj: Trajectory, M: int, m: int, C_d: float) -> Optional[float]:
    """Smallest pairwise distance over the grid divided by 2 C_d (None if undefined)."""
    if M < 2 or C_d <= 0:
        return None
    P = traj.states.reshape(len(traj.times), M, m)
    i, j = np.triu_indices(M, 1)
    dmin = min(float(np.min(np.linalg.norm(Pk[i] - Pk[j], axis=-1))) for Pk in P)
    return dmin / (2.0 * C_d)


def compute_metrics(traj: Trajectory, scenario: Scenario, runtime: float = 0.0,
                    iterations: int = 0) -> Metrics:
    if traj.states.shape[1] != scenario.n:
        raise ValueError(f"trajectory dimension {traj.states.shape[1]} does not match scenario ({scenario.n})")
    cset = scenario.constraint_set()
    hmin = float(np.min(cset.values(traj.states))) if cset.size else 0.0
    cost = trapezoid_cost(traj)
    return Metrics(hmin, cost, cost / scenario.M,
                   min_normalized_distance(traj, scenario.M, scenario.m, scenario.C_d),
                   runtime, iterations)


# ---------------------------------------------------------------- trajectory files

def export_trajectory(traj: Trajectory, path, M: int, m: int) -> None:
    if traj.dim != M * m:
        raise ValueError(f"trajectory dimension {traj.dim} is not M*m = {M * m}")
    v = _velocities(traj)
    X = traj.states.reshape(-1, M, m)
    V = v.reshape(-1, M, m)
    header = ["t", "agent"] + [f"x{k + 1}" for k in range(m)] + [f"v{k + 1}" for k in range(m)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, t in enumerate(traj.times):
            for a in range(M):
                w.writerow([f"{t:.17g}", a + 1] + [f"{x:.17g}" for x in X[k, a]] + [f"{x:.17g}" for x in V[k, a]])


class TrajectoryFileError(ValueError):
    pass


def import_trajectory(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise TrajectoryFileError(f"{path}: line 1: empty file")
    head = rows[0]
    if len(head) < 4 or head[:2] != ["t", "agent"] or (len(head) - 2) % 2:
        raise TrajectoryFileError(f"{path}: line 1: expected header t,agent,x1..xm,v1..vm")
    m = (len(head) - 2) // 2
    if head[2:] != [f"x{k + 1}" for k in range(m)] + [f"v{k + 1}" for k in range(m)]:
        raise TrajectoryFileError(f"{path}: line 1: expected header t,agent,x1..xm,v1..vm")
    times: List[float] = []
    blocks: List[list] = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(head):
            raise TrajectoryFileError(f"{path}: line {lineno}: expected {len(head)} fields, got {len(row)}")
        try:
            t = float(row[0])
            agent = int(row[1])
            vals = [float(x) for x in row[2:]]
        except ValueError:
            raise TrajectoryFileError(f"{path}: line {lineno}: non-numeric field") from None
        if not times or t != times[-1]:
            if blocks and agent != 1:
                raise TrajectoryFileError(f"{path}: line {lineno}: time {t} must start with agent 1")
            times.append(t)
            blocks.append([])
        if agent != len(blocks[-1]) + 1:
            raise TrajectoryFileError(f"{path}: line {lineno}: expected agent {len(blocks[-1]) + 1}, got {agent}")
        blocks[-1].append(vals)
    if len(blocks) < 2:
        raise TrajectoryFileError(f"{path}: need at least two time rows")
    M = len(blocks[0])
    for k, b in enumerate(blocks):
        if len(b) != M:
            raise TrajectoryFileError(f"{path}: time {times[k]} has {len(b)} agents, expected {M}")
    arr = np.array(blocks)  # (times, M, 2m)
    try:
        return Trajectory(np.array(times), arr[:, :, :m].reshape(len(times), -1),
                          arr[:, :, m:].reshape(len(times), -1))
    except ValueError as exc:
        raise TrajectoryFileError(f"{path}: {exc}") from None


def export_plot(traj: Trajectory, scenario: Scenario, directory) -> List[Path]:
    """Positions at the snapshot times (linear interpolation) and obstacle geometry."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for frac in SNAPSHOTS:
        t = frac * traj.T
        x = np.array([np.interp(t, traj.times, traj.states[:, j]) for j in range(traj.dim)])
        path = d / f"snapshot_{frac:.4f}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "agent"] + [f"x{k + 1}" for k in range(scenario.m)])
            for a, pos in enumerate(x.reshape(scenario.M, scenario.m)):
                w.writerow([f"{t:.17g}", a + 1] + [f"{v:.17g}" for v in pos])
        written.append(path)
    geo = {"C_d": scenario.C_d, "C_d_constraint": scenario.constraint_radius,
           "obstacles": [o.to_dict() for o in scenario.obstacles]}
    (d / "obstacles.json").write_text(json.dumps(geo, indent=2))
    written.append(d / "obstacles.json")
    return written


# ---------------------------------------------------------------- pipelines

def _write_outputs(directory: Path, traj: Trajectory, scenario: Scenario, metrics: Metrics, extra=None):
    directory.mkdir(parents=True, exist_ok=True)
    export_trajectory(traj, directory / "trajectory.csv", scenario.M, scenario.m)
    data = metrics.to_dict()
    if extra:
        data.update(extra)
    (directory / "metrics.json").write_text(json.dumps(data, indent=2, sort_keys=True))


def refine(scenario: Scenario, init: Trajectory, tol: Optional[RefineTolerances] = None):
    t0 = time.perf_counter()
    nlp = transcribe(scenario, init, cgl_grid(scenario.N_c, scenario.T), N_out=N_OUT)
    traj, stats = solve_refine(nlp, tol)
    metrics = compute_metrics(traj, scenario, time.perf_counter() - t0, stats.iterations)
    return traj, stats, metrics


def train_once(scenario: Scenario, out: Path, do_refine: bool = False) -> dict:
    t0 = time.perf_counter()
    cfg = TrainConfig(iterations=scenario.iterations, seed=scenario.seed)
    result = train_sympocnet(scenario, cfg)
    traj = extract_trajectory(result.net, result.line, N_OUT, scenario.T, scenario.n)
    metrics = compute_metrics(traj, scenario, time.perf_counter() - t0, cfg.iterations)
    save_checkpoint(result, out / "checkpoint")
    _write_outputs(out, traj, scenario, metrics, {"loss": scenario.loss, "seed": scenario.seed,
                                                   "final_terms": result.terms})
    summary = {"train": metrics.to_dict()}
    if do_refine:
        rtraj, stats, rmetrics = refine(scenario, traj)
        _write_outputs(out / "refined", rtraj, scenario, rmetrics,
                       {"converged": stats.converged, "node_min_constraint": stats.min_constraint,
                        "nlp_cost": stats.cost})
        summary["refined"] = rmetrics.to_dict()
    return summary


def _train_job(args):
    data, out, do_refine = args
    from .scenarios import scenario_from_dict
    return train_once(scenario_from_dict(data), Path(out), do_refine)


def repeat_statistics(summaries: List[dict], key: str = "train") -> dict:
    """Mean and standard deviation of D, cost and scaled cost over repeats."""
    out = {"repeats": len(summaries)}
    for name in ("D", "cost", "scaled_cost"):
        vals = np.array([s[key][name] for s in summaries if s[key][name] is not None], dtype=float)
        if vals.size:
            out[f"E({name})"] = float(np.mean(vals))
            out[f"std({name})"] = float(np.std(vals))
    return out


def format_repeat_table(stats: dict) -> str:
    cols = ["E(D)", "std(D)", "E(scaled_cost)", "std(scaled_cost)"]
    head = " | ".join(f"{c:>16}" for c in ["repeats"] + cols)
    row = " | ".join([f"{stats['repeats']:>16d}"] + [f"{stats.get(c, float('nan')):>16.4f}" for c in cols])
    return head + "\n" + row


def worker_cap() -> int:
    env = os.environ.get("SYMPOC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ScenarioError("SYMPOC_THREADS must be an integer") from None
    return os.cpu_count() or 1


def run_train(scenario: Scenario, out: Path, repeats: int, do_refine: bool) -> dict:
    if repeats <= 1:
        return train_once(scenario, out, do_refine)
    jobs = []
    for r in range(repeats):
        s = replace(scenario, seed=scenario.seed + r, x0=scenario.x0.copy(), xT=scenario.xT.copy())
        jobs.append((s.to_dict(), str(out / f"repeat_{r}"), do_refine))
    workers = min(repeats, worker_cap())
    if workers == 1:
        summaries = [_train_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(workers) as pool:
            summaries = list(pool.map(_train_job, jobs))
    block = {"train": repeat_statistics(summaries, "train")}
    if do_refine:
        block["refined"] = repeat_statistics(summaries, "refined")
    out.mkdir(parents=True, exist_ok=True)
    (out / "repeat_stats.json").write_text(json.dumps(block, indent=2))
    for key, stats in block.items():
        print(f"[{key}]\n{format_repeat_table(stats)}")
    return block


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sympoc", description="SympOCnet multi-agent trajectory planner")
    p.add_argument("command", choices=["train", "refine", "eval", "export-plot"])
    p.add_argument("scenario", help="scenario JSON file or builtin name")
    p.add_argument("--loss", choices=["base", "log", "quad", "aug"])
    p.add_argument("--iters", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--linear-init", action="store_true", help="refine from the straight line")
    p.add_argument("--refine", action="store_true", help="train: also run the pseudospectral pass")
    p.add_argument("--init", help="refine: initial trajectory CSV (default <out>/trajectory.csv)")
    p.add_argument("--traj", help="eval/export-plot: trajectory CSV (default <out>/trajectory.csv)")
    p.add_argument("--out", default="sympoc_out")
    return p


def apply_overrides(scenario: Scenario, args) -> Scenario:
    kw = {}
    if args.loss:
        kw["loss"] = args.loss
    if args.iters is not None:
        kw["iterations"] = args.iters
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.repeats is not None:
        kw["repeats"] = args.repeats
    if not kw:
        return scenario
    return replace(scenario, x0=scenario.x0.copy(), xT=scenario.xT.copy(), **kw)


def run_pipeline(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        scenario = apply_overrides(load_scenario(args.scenario), args)
        if scenario.iterations < 1:
            raise ScenarioError("iterations: must be at least 1")
        if scenario.repeats < 1:
            raise ScenarioError("repeats: must be at least 1")
        if args.command == "train":
            summary = run_train(scenario, out, scenario.repeats, args.refine)
            print(json.dumps(summary, indent=2))
        elif args.command == "refine":
            if args.linear_init:
                init = linear_trajectory(scenario.x0, scenario.xT, scenario.T)
            else:
                path = Path(args.init) if args.init else out / "trajectory.csv"
                if not path.exists():
                    raise FileNotFoundError(f"initial trajectory {path} not found (use --init or --linear-init)")
                init = import_trajectory(path)
            traj, stats, metrics = refine(scenario, init)
            extra = {"converged": stats.converged, "node_min_constraint": stats.min_constraint,
                     "nlp_cost": stats.cost, "outer_iterations": stats.outer_iterations}
            target = out / "refined" if not args.linear_init else out / "refined_linear"
            _write_outputs(target, traj, scenario, metrics, extra)
            print(json.dumps({**metrics.to_dict(), **extra}, indent=2))
        elif args.command == "eval":
            path = Path(args.traj) if args.traj else out / "trajectory.csv"
            if not path.exists():
                raise FileNotFoundError(f"trajectory {path} not found")
            metrics = compute_metrics(import_trajectory(path), scenario)
            data = metrics.to_dict()
            (path.parent / "metrics.json").write_text(json.dumps(data, indent=2, sort_keys=True))
            print(json.dumps(data, indent=2))
        else:
            path = Path(args.traj) if args.traj else out / "trajectory.csv"
            if not path.exists():
                raise FileNotFoundError(f"trajectory {path} not found")
            for p in export_plot(import_trajectory(path), scenario, out / "plot"):
                print(p)
    except (ScenarioError, FileNotFoundError, ValueError) as exc:
        print(f"sympoc: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run_pipeline())
