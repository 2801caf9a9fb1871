"""Single training run: data, model, optimizer, evaluation and early stopping."""
import csv
import dataclasses
import json
import logging
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import data as datamod
from .. import diagnostics, losses
from ..errors import DivergenceError
from ..model import ProbabilisticMlp, save_checkpoint
from ..numcore import SeededRng
from ..optim import make_optimizer

log = logging.getLogger(__name__)

# sub-stream indices of the run seed
INIT_STREAM = 0
SHUFFLE_STREAM = 1


@dataclass
class Splits:
    train: datamod.Dataset
    val: datamod.Dataset
    test: datamod.Dataset
    stats: datamod.WhitenStats


def load_splits(config):
    """Build train/val/test and fit whitening on train.

    Synthetic generators: train uses ``data_seed``; validation and test reuse
    the same inputs with fresh noise drawn from ``data_seed + 1`` and
    ``data_seed + 2``.  CSV data is split by ``config.split`` with
    ``data_seed`` as the permutation seed.
    """
    if config.dataset == "csv":
        full = datamod.load_csv(config.csv_path, config.input_dim, config.target_dim)
        train, val, test = datamod.split(full, config.split, config.data_seed)
    else:
        n = config.points
        train = datamod.generate(config.dataset, n, config.data_seed)
        val = datamod.generate(config.dataset, n, config.data_seed + 1)
        test = datamod.generate(config.dataset, n, config.data_seed + 2)
    if config.whiten:
        stats = datamod.fit_whiten(train)
    else:
        stats = datamod.WhitenStats.identity(train.input_dim, train.target_dim)
    return Splits(train, val, test, stats)


@dataclass
class TrainResult:
    config: object
    curve: list
    final_model: ProbabilisticMlp
    best_model: ProbabilisticMlp
    best_update: int
    best_val: diagnostics.Metrics
    final_train: diagnostics.Metrics
    test: diagnostics.Metrics
    diverged: bool = False
    diverged_at: int = -1
    updates_done: int = 0
    seconds: float = 0.0
    stats: datamod.WhitenStats = None
    snapshots: dict = field(default_factory=dict)

    def rows(self, split="train"):
        return [r for r in self.curve if r[1] == split]

    def first_update_reaching(self, rmse, split="train"):
        """Earliest evaluated update with RMSE <= ``rmse``, or None."""
        for update, s, r, _ in self.curve:
            if s == split and r <= rmse:
                return update
        return None

    def summary(self):
        cfg = self.config
        return {
            "label": cfg.label,
            "loss": cfg.loss_spec().label,
            "beta": cfg.beta if cfg.loss == "beta-nll" else 0.0,
            "lr": cfg.lr,
            "arch": "x".join(str(h) for h in cfg.hidden_sizes),
            "activation": cfg.activation,
            "seed": cfg.seed,
            "max_updates": cfg.max_updates,
            "updates_done": self.updates_done,
            "train_rmse": self.final_train.rmse,
            "train_mean_ll": self.final_train.mean_ll,
            "best_update": self.best_update,
            "val_rmse": self.best_val.rmse,
            "val_mean_ll": self.best_val.mean_ll,
            "test_rmse": self.test.rmse,
            "test_mean_ll": self.test.mean_ll,
            "diverged": self.diverged,
            "diverged_at": self.diverged_at,
        }


def _eval(model, ds, stats):
    with np.errstate(all="ignore"):
        return diagnostics.evaluate(model, ds, stats)


def train_run(config, snapshot_at=(), out_dir=None):
    """Train one model.  The result is a pure function of ``config``
    (wall-clock time aside).

    ``snapshot_at``: update indices at which a copy of the parameters is kept
    in ``result.snapshots``.
    """
    t0 = time.perf_counter()
    splits = load_splits(config)
    stats = splits.stats
    train = datamod.apply_whiten(stats, splits.train)
    mlp_cfg = dataclasses.replace(config.mlp_config(), input_dim=train.input_dim, output_dim=train.target_dim)
    spec = config.loss_spec()

    model = ProbabilisticMlp.init(mlp_cfg, SeededRng(config.seed, INIT_STREAM))
    batches = datamod.BatchIterator(train, config.batch_size, SeededRng(config.seed, SHUFFLE_STREAM))
    opt = make_optimizer(config.optimizer, model.params.size, config.lr)
    grads = None
    snapshot_at = set(int(s) for s in snapshot_at)
    snapshots = {}

    curve = []
    best = {"ll": -np.inf, "update": 0, "params": model.params.copy(), "metrics": None}
    stale = 0
    final_train = None

    def evaluate_at(update):
        nonlocal stale, final_train
        tr = _eval(model, splits.train, stats)
        va = _eval(model, splits.val, stats)
        curve.append((update, "train", tr.rmse, tr.mean_ll))
        curve.append((update, "val", va.rmse, va.mean_ll))
        final_train = tr
        if best["metrics"] is None or va.mean_ll > best["ll"]:
            best.update(ll=va.mean_ll, update=update, params=model.params.copy(), metrics=va)
            stale = 0
        else:
            stale += 1
        return config.early_stop_patience and stale >= config.early_stop_patience

    if 0 in snapshot_at:
        snapshots[0] = model.params.copy()
    evaluate_at(0)
    diverged, diverged_at, update = False, -1, 0
    loss_limit = None
    last_eval = 0
    for update in range(1, config.max_updates + 1):
        xb, yb = batches.next_batch()
        pred, trace = model.forward(xb)
        with np.errstate(all="ignore"):
            res = losses.compute(spec, pred, yb)
        scale = 1.0 / len(xb)
        grads = model.backward(trace, res.d_mean * scale, res.d_variance * scale, out=grads)
        try:
            batch_loss = res.mean_loss
            if loss_limit is None:
                loss_limit = config.divergence_factor * max(1.0, abs(batch_loss))
            if not np.isfinite(batch_loss) or (config.divergence_factor and batch_loss > loss_limit):
                raise DivergenceError(f"batch loss {batch_loss:.6g} exceeds {loss_limit:.6g}",
                                      {"step": update, "loss": batch_loss, "limit": loss_limit})
            opt.step(model.params, grads.flat)
        except DivergenceError as e:
            log.warning("%s diverged at update %d: %s", config.label, update, e)
            diverged, diverged_at = True, update
            update -= 1
            break
        if update in snapshot_at:
            snapshots[update] = model.params.copy()
        if update % config.eval_every == 0:
            last_eval = update
            if evaluate_at(update):
                break
    if not diverged and update != last_eval:
        evaluate_at(update)

    best_model = ProbabilisticMlp(mlp_cfg, best["params"])
    result = TrainResult(
        config=config,
        curve=curve,
        final_model=model,
        best_model=best_model,
        best_update=best["update"],
        best_val=best["metrics"],
        final_train=final_train,
        test=_eval(best_model, splits.test, stats),
        diverged=diverged,
        diverged_at=diverged_at,
        updates_done=update,
        seconds=time.perf_counter() - t0,
        stats=stats,
        snapshots=snapshots,
    )
    out_dir = out_dir or config.out_dir
    if out_dir:
        write_run_outputs(result, out_dir)
    return result


def write_metrics_csv(curve, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["update", "split", "rmse", "mean_ll"])
        for update, split, rmse, ll in curve:
            w.writerow([update, split, repr(float(rmse)), repr(float(ll))])


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        return [(int(r["update"]), r["split"], float(r["rmse"]), float(r["mean_ll"]))
                for r in csv.DictReader(fh)]


def git_describe():
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=10)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def run_manifest(result, extra=None):
    cfg = result.config
    n_train = cfg.points if cfg.dataset != "csv" else None
    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "rng": SeededRng.algorithm,
        "updates_done": result.updates_done,
        "updates_per_epoch": (None if not n_train else -(-n_train // cfg.batch_size)),
        "diverged": result.diverged,
        "diverged_at": result.diverged_at,
        "best_update": result.best_update,
        "final_train": vars(result.final_train),
        "best_val": vars(result.best_val),
        "test": vars(result.test),
        "whiten_stats": result.stats.to_dict(),
        "wall_clock_seconds": result.seconds,
        "code_version": git_describe(),
    }
    if extra:
        manifest.update(extra)
    return manifest


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def write_run_outputs(result, out_dir, extra_manifest=None):
    from .svg import line_chart

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(result.curve, out / "metrics.csv")
    write_json(run_manifest(result, extra_manifest), out / "manifest.json")
    save_checkpoint(result.final_model, out / "final.npz")
    save_checkpoint(result.best_model, out / "best.npz")
    series = {}
    for split in ("train", "val"):
        rows = [r for r in result.curve if r[1] == split and r[0] > 0]
        if rows:
            series[split] = ([r[0] for r in rows], [r[2] for r in rows])
    if series:
        line_chart(series, out / "rmse.svg", title=result.config.label, xlabel="update",
                   ylabel="RMSE", logx=True, logy=True)
