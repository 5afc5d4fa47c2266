"""Run a batch of config-variant trainings as independent processes.

Each run is seed-deterministic on its own, so variants and seeds can execute
concurrently without affecting results; workers default to the core count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def _worker(job):
    name, tree, out_dir = job
    from .config import config_from_dict
    from .trainer import run

    cfg = config_from_dict(tree)
    _, history, summary = run(cfg, out_dir=out_dir)
    return name, {
        "summary": summary,
        "first": history[0],
        "last": history[-1],
        "miou_by_epoch": [row["miou"] for row in history],
        "gap_by_epoch": [row["gap"] for row in history],
    }


def run_grid(jobs, workers=None) -> dict:
    """jobs: (name, config tree, out_dir or None); returns {name: result}."""
    jobs = list(jobs)
    if workers is None:
        workers = os.cpu_count() or 1
    workers = max(1, min(workers, len(jobs)))
    results = {}
    if workers == 1:
        for job in jobs:
            name, res = _worker(job)
            results[name] = res
        return results
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for name, res in pool.map(_worker, jobs):
            results[name] = res
    return results
