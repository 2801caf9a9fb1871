"""Cartesian grid search over learning rate, architecture, loss and seed."""
import csv
import itertools
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError
from .config import TrainConfig
from .train import train_run

log = logging.getLogger(__name__)

GRID_COLUMNS = [
    "label", "loss", "beta", "lr", "arch", "activation", "seed", "max_updates", "updates_done",
    "train_rmse", "train_mean_ll", "best_update", "val_rmse", "val_mean_ll", "test_rmse",
    "test_mean_ll", "diverged", "diverged_at", "error",
]


@dataclass
class GridSpec:
    base: TrainConfig
    lrs: list
    archs: list
    # (loss kind, beta) pairs
    losses: list
    seeds: list
    max_updates: int = None
    activations: list = field(default_factory=list)

    def configs(self):
        acts = self.activations or [self.base.activation]
        out = []
        for (kind, beta), lr, arch, act, seed in itertools.product(self.losses, self.lrs, self.archs, acts, self.seeds):
            changes = dict(loss=kind, beta=float(beta), lr=float(lr), hidden_sizes=tuple(arch),
                           activation=act, seed=int(seed), out_dir="")
            if self.max_updates is not None:
                changes["max_updates"] = int(self.max_updates)
            out.append(self.base.replace(**changes))
        if not out:
            raise ConfigError("grid is empty")
        return out


def _run_one(config, runs_dir=None):
    try:
        out = str(Path(runs_dir) / config.label) if runs_dir else None
        res = train_run(config, out_dir=out)
        row = res.summary()
        row["error"] = ""
        return row, res
    except Exception as e:  # a failing run must not abort the grid
        log.error("run %s failed: %s", config.label, e)
        row = {k: "" for k in GRID_COLUMNS}
        row.update(label=config.label, loss=config.loss_spec().label, lr=config.lr, seed=config.seed,
                   arch="x".join(str(h) for h in config.hidden_sizes), activation=config.activation,
                   beta=config.beta, max_updates=config.max_updates, diverged=False,
                   error=f"{type(e).__name__}: {e}")
        log.debug(traceback.format_exc())
        return row, None


def _run_row(args):
    row, _ = _run_one(*args)
    return row


def grid_search(spec, workers=1, out_dir=None, run=None):
    """Run every grid cell; returns ``(rows, best_per_loss)``.

    ``run``: optional replacement for train_run (same signature, returns a
    TrainResult); only used in-process.
    """
    configs = spec.configs()
    runs_dir = Path(out_dir) / "runs" if out_dir else None
    if run is not None:
        rows = []
        for cfg in configs:
            try:
                row = dict(run(cfg).summary(), error="")
            except Exception as e:
                row = {k: "" for k in GRID_COLUMNS}
                row.update(label=cfg.label, error=f"{type(e).__name__}: {e}")
            rows.append(row)
    elif workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_run_row, [(c, runs_dir) for c in configs]))
    else:
        rows = [_run_one(c, runs_dir)[0] for c in configs]
    best = select_best(rows)
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_grid_csv(rows, Path(out_dir) / "grid.csv")
        write_grid_csv(list(best.values()), Path(out_dir) / "best.csv")
    return rows, best


def select_best(rows):
    """Best non-diverged row per loss label by validation mean log-likelihood."""
    best = {}
    for row in rows:
        if row.get("error") or row.get("diverged") or row.get("val_mean_ll") in ("", None):
            continue
        key = row["loss"]
        if key not in best or row["val_mean_ll"] > best[key]["val_mean_ll"]:
            best[key] = row
    return best


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_grid_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=GRID_COLUMNS, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: _cell(row.get(k, "")) for k in GRID_COLUMNS})
