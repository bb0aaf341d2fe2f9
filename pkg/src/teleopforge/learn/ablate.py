"""Demo-count ablation: how final task performance scales with dataset size."""

from __future__ import annotations

import dataclasses
import multiprocessing as mp
import os
import time
from dataclasses import dataclass

import numpy as np

from ..demostore import DatasetIndex, ResetSampler, scan_dataset
from ..simcore import ArmConfig, TaskSpec
from .ppo import TrainConfig, train_ppo


@dataclass
class AblationCell:
    count: int
    seed: int
    final_success_rate: float
    env_steps: int
    wall_seconds: float


@dataclass
class AblationResult:
    cells: list[AblationCell]
    budget_steps: int
    spearman_count_vs_mean: float

    def mean_by_count(self) -> dict[int, float]:
        out: dict[int, list[float]] = {}
        for c in self.cells:
            out.setdefault(c.count, []).append(c.final_success_rate)
        return {k: float(np.mean(v)) for k, v in sorted(out.items())}

    def table(self) -> str:
        counts = sorted({c.count for c in self.cells})
        lines = ["count  mean_success  std  per-seed"]
        for count in counts:
            vals = [c.final_success_rate for c in self.cells if c.count == count]
            std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
            per_seed = " ".join(f"{v:.2f}" for v in vals)
            lines.append(f"{count:5d}  {np.mean(vals):12.3f}  {std:.3f}  [{per_seed}]")
        lines.append(f"spearman(count, mean success) = {self.spearman_count_vs_mean:.3f}")
        return "\n".join(lines)


def spearman(x, y) -> float:
    """Rank correlation with average ranks for ties."""

    def ranks(v):
        v = np.asarray(v, dtype=float)
        order = np.argsort(v, kind="stable")
        r = np.empty(len(v))
        i = 0
        sv = v[order]
        while i < len(v):
            j = i
            while j + 1 < len(v) and sv[j + 1] == sv[i]:
                j += 1
            r[order[i : j + 1]] = (i + j) / 2.0 + 1.0
            i = j + 1
        return r

    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = float(np.sqrt(np.sum(rx**2) * np.sum(ry**2)))
    if denom == 0.0:
        return 0.0
    return float(np.sum(rx * ry) / denom)


def _run_cell(args: dict) -> AblationCell:
    os.environ.setdefault("OMP_NUM_THREADS", "1")
    config = ArmConfig.from_dict(args["config"])
    task = TaskSpec.from_dict(args["task"])
    cfg = TrainConfig(**args["train_cfg"], seed=args["seed"])
    sampler = None
    if args["demo_paths"]:
        scanned = scan_dataset(os.path.dirname(args["demo_paths"][0]))
        keep = set(args["demo_paths"])
        subset = DatasetIndex(rows=[r for r in scanned.rows if str(r.path) in keep], skipped=[])
        sampler = ResetSampler(subset, task=task.kind)
    t0 = time.time()
    res = train_ppo(config, task, cfg, sampler, budget_steps=args["budget"])
    return AblationCell(
        count=args["count"],
        seed=args["seed"],
        final_success_rate=res.final_success_rate,
        env_steps=res.env_steps,
        wall_seconds=time.time() - t0,
    )


def ablate_demo_count(
    config: ArmConfig,
    task: TaskSpec,
    index: DatasetIndex,
    counts=(0, 1, 10, 100),
    seeds=(0, 1, 2),
    budget: int = 150_000,
    train_cfg: TrainConfig | None = None,
    workers: int | None = None,
    log=print,
) -> AblationResult:
    """Train one policy per (demo count, seed) cell at a fixed step budget.

    Demo subsets are the first N successful demos in path order, so cells
    nest (the 10-demo set is contained in the 100-demo set) and runs are
    reproducible. Cells run in parallel worker processes.
    """
    successful = index.successful(task.kind)
    if counts and max(counts) > len(successful):
        raise ValueError(f"dataset has {len(successful)} successful demos, need {max(counts)}")
    base_cfg = train_cfg or TrainConfig()
    cfg_dict = {
        f.name: getattr(base_cfg, f.name)
        for f in dataclasses.fields(TrainConfig)
        if f.name != "seed"
    }
    cfg_dict["hidden"] = tuple(cfg_dict["hidden"])
    jobs = []
    for count in counts:
        paths = [str(r.path) for r in successful[:count]]
        for seed in seeds:
            jobs.append(
                {
                    "config": config.to_dict(),
                    "task": task.to_dict(),
                    "train_cfg": cfg_dict,
                    "seed": seed,
                    "count": count,
                    "demo_paths": paths,
                    "budget": budget,
                }
            )
    workers = workers or max(1, min(len(jobs), os.cpu_count() or 1))
    if workers == 1:
        cells = [_run_cell(j) for j in jobs]
    else:
        # fork: children must not re-import __main__ (harness may be pytest)
        ctx = mp.get_context("fork" if "fork" in mp.get_all_start_methods() else "spawn")
        with ctx.Pool(workers) as pool:
            cells = []
            for cell in pool.imap(_run_cell, jobs):
                if log:
                    log(f"count={cell.count} seed={cell.seed}: success={cell.final_success_rate:.2f} "
                        f"({cell.wall_seconds:.0f}s, {cell.env_steps} steps)")
                cells.append(cell)
    by_count: dict[int, list[float]] = {}
    for c in cells:
        by_count.setdefault(c.count, []).append(c.final_success_rate)
    xs, ys = [], []
    for count, vals in sorted(by_count.items()):
        xs.append(count)
        ys.append(float(np.mean(vals)))
    return AblationResult(cells=cells, budget_steps=budget, spearman_count_vs_mean=spearman(xs, ys))
