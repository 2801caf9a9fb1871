"""Wired experiments on the synthetic sinusoids.

Every preset writes per-run ``runs/<label>/metrics.csv`` (+ manifest,
checkpoints), preset-level CSV tables, SVG figures and ``manifest.json``.
All presets count gradient updates, never epochs.
"""
import csv
import logging
from pathlib import Path

import numpy as np

from .. import data as datamod
from .. import diagnostics
from ..errors import ConfigError
from ..model import ProbabilisticMlp
from .config import TrainConfig
from .grid import GridSpec, grid_search, write_grid_csv
from .svg import field_heatmap, heatmap, line_chart
from .train import git_describe, train_run, write_json, write_run_outputs

log = logging.getLogger(__name__)

# two hidden layers of 128 tanh units, Adam 5e-4, batch 100; raw (unwhitened)
# inputs and targets, since x already spans [0, 12] with O(1) targets
SINE_BASE = TrainConfig(dataset="homoscedastic_sine", hidden_sizes=(128, 128), activation="tanh",
                        lr=5e-4, batch_size=100, max_updates=200_000, eval_every=1000, whiten=False)

HETSINE_BASE = TrainConfig(dataset="heteroscedastic_sine", hidden_sizes=(50,), activation="tanh",
                           lr=1e-3, batch_size=100, max_updates=20_000, eval_every=250)

CALIBRATION_BETAS = (0.0, 0.25, 0.5, 1.0)


def loss_for_beta(beta):
    return ("nll", 0.0) if beta == 0 else ("beta-nll", float(beta))


def geometric_schedule(max_updates, start=1000):
    """1e3, 3e3, 1e4, 3e4, ... up to max_updates (always included)."""
    out, k = [], 0
    while True:
        u = start * 10 ** (k // 2) * (3 if k % 2 else 1)
        if u >= max_updates:
            break
        out.append(u)
        k += 1
    out.append(max_updates)
    return out


def _base_manifest(name, configs, extra=None):
    m = {"preset": name, "code_version": git_describe(), "step_unit": "gradient updates",
         "runs": [c.to_dict() for c in configs]}
    m.update(extra or {})
    return m


def _run_and_write(cfg, out, **kw):
    res = train_run(cfg, **kw)
    write_run_outputs(res, out / "runs" / cfg.label)
    return res


def _fit_plot(res, split_ds, path, title, true_band=None):
    stats = res.stats
    mean, var = diagnostics.predict_original_scale(res.best_model, split_ds, stats)
    x = split_ds.inputs[:, 0]
    std = np.sqrt(var[:, 0])
    series = {"prediction": (x, mean[:, 0])}
    bands = {"prediction": (x, mean[:, 0] - std, mean[:, 0] + std)}
    if split_ds.true_mean is not None:
        series["true mean"] = (x, split_ds.true_mean[:, 0])
        if true_band:
            t = split_ds.true_std[:, 0] * true_band
            series[f"true +{true_band:g} sd"] = (x, split_ds.true_mean[:, 0] + t)
            series[f"true -{true_band:g} sd"] = (x, split_ds.true_mean[:, 0] - t)
    line_chart(series, path, title=title, xlabel="x", ylabel="y", bands=bands,
               dashed=[k for k in series if k.startswith("true")])


def pitfall(out_dir, seeds=(0,), max_updates=None, betas=(0.0, 0.5), base=SINE_BASE):
    """NLL vs beta-NLL on the homoscedastic sine, RMSE curves and fits."""
    out = Path(out_dir)
    base = base if max_updates is None else base.replace(max_updates=int(max_updates))
    groups = {}
    for beta in betas:
        kind, b = loss_for_beta(beta)
        groups[beta] = [base.replace(loss=kind, beta=b, seed=int(seed)) for seed in seeds]
    configs = [c for group in groups.values() for c in group]
    done = {c: _run_and_write(c, out) for c in configs}
    results = list(done.values())
    rows = [dict(r.summary(), error="") for r in results]
    write_grid_csv(rows, out / "grid.csv")

    series = {}
    for beta, group in groups.items():
        curves = [[(u, rm) for u, s, rm, _ in done[c].curve if s == "train" and u > 0] for c in group]
        n = min(len(c) for c in curves)
        if n:
            ups = [u for u, _ in curves[0][:n]]
            series[f"beta={beta:g}"] = (ups, np.mean([[rm for _, rm in c[:n]] for c in curves], axis=0))
    line_chart(series, out / "pitfall_rmse.svg", title="train RMSE (mean over seeds)", xlabel="update",
               ylabel="RMSE", logx=True, logy=True)
    splits_train = datamod.generate(base.dataset, base.points, base.data_seed)
    for r in results:
        _fit_plot(r, splits_train, out / f"fit_{r.config.label}.svg", r.config.label)
    write_json(_base_manifest("pitfall", configs, {"summary": rows}), out / "manifest.json")
    return results


def convergence_grid(out_dir, seeds=(0, 1), max_updates=None, lrs=(1e-4, 5e-4, 1e-3),
                     archs=((64, 64), (128, 128)), betas=(0.0, 0.5), base=SINE_BASE, workers=1, run=None):
    """RMSE heat maps over (architecture, learning rate), one per beta."""
    out = Path(out_dir)
    spec = GridSpec(base=base, lrs=list(lrs), archs=[tuple(a) for a in archs],
                    losses=[loss_for_beta(b) for b in betas], seeds=list(seeds),
                    max_updates=None if max_updates is None else int(max_updates))
    rows, best = grid_search(spec, workers=workers, out_dir=out, run=run)
    bounds = {}
    table = []
    for beta in betas:
        label = base.replace(loss=loss_for_beta(beta)[0], beta=loss_for_beta(beta)[1]).loss_spec().label
        values = []
        for arch in archs:
            arch_s = "x".join(str(h) for h in arch)
            line = []
            for lr in lrs:
                cell = [r["train_rmse"] for r in rows
                        if r["loss"] == label and r["arch"] == arch_s and r["lr"] == lr and not r["error"]]
                v = float(np.mean(cell)) if cell else None
                line.append(v)
                table.append({"beta": beta, "arch": arch_s, "lr": lr, "mean_train_rmse": v, "n": len(cell)})
            values.append(line)
        vmin, vmax = heatmap(values, ["x".join(str(h) for h in a) for a in archs], [f"{lr:g}" for lr in lrs],
                             out / f"convergence_beta{beta:g}.svg", title=f"train RMSE, beta={beta:g}",
                             xlabel="learning rate", ylabel="architecture", log=True)
        bounds[f"beta={beta:g}"] = [vmin, vmax]
    with open(out / "convergence.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["beta", "arch", "lr", "mean_train_rmse", "n"], lineterminator="\n")
        w.writeheader()
        w.writerows(table)
    write_json(_base_manifest("convergence_grid", spec.configs(),
                              {"color_bounds": bounds, "summary": rows, "best_per_loss": best}),
               out / "manifest.json")
    return rows


def calibration_stats(res, dataset, lo=1.0, hi=9.0):
    """Coverage of mean +- 2 sd on ``dataset`` and mean relative error of the
    predicted sd against the true sd for inputs in [lo, hi]."""
    mean, var = diagnostics.predict_original_scale(res.best_model, dataset, res.stats)
    std = np.sqrt(var)
    cov = diagnostics.coverage(mean, std, dataset.targets, 2.0)
    x = dataset.inputs[:, 0]
    mask = (x >= lo) & (x <= hi)
    rel = np.abs(std[mask, 0] - dataset.true_std[mask, 0]) / dataset.true_std[mask, 0]
    return cov, float(rel.mean())


def hetsine_calibration(out_dir, seeds=(0,), max_updates=None, betas=CALIBRATION_BETAS, base=HETSINE_BASE):
    out = Path(out_dir)
    base = base if max_updates is None else base.replace(max_updates=int(max_updates))
    train_ds = datamod.generate(base.dataset, base.points, base.data_seed)
    rows, configs, std_series = [], [], {}
    x = train_ds.inputs[:, 0]
    for beta in betas:
        kind, b = loss_for_beta(beta)
        for seed in seeds:
            cfg = base.replace(loss=kind, beta=b, seed=int(seed))
            configs.append(cfg)
            res = _run_and_write(cfg, out)
            cov, rel = calibration_stats(res, train_ds)
            rows.append({"beta": beta, "seed": seed, "coverage_2sd": cov, "std_rel_error": rel,
                         "train_rmse": res.final_train.rmse, "best_update": res.best_update,
                         "val_mean_ll": res.best_val.mean_ll, "diverged": res.diverged})
            _fit_plot(res, train_ds, out / f"fit_{cfg.label}.svg", cfg.label, true_band=2.0)
            if seed == seeds[0]:
                _, var = diagnostics.predict_original_scale(res.best_model, train_ds, res.stats)
                std_series[f"beta={beta:g}"] = (x, np.sqrt(var[:, 0]))
    std_series["true"] = (x, train_ds.true_std[:, 0])
    line_chart(std_series, out / "predicted_std.svg", title="predicted standard deviation", xlabel="x",
               ylabel="sd", dashed=["true"])
    with open(out / "calibration.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    write_json(_base_manifest("hetsine_calibration", configs, {"calibration": rows,
                                                               "std_error_range": [1.0, 9.0]}),
               out / "manifest.json")
    return rows


def snapshot_diagnostics(model, train, stats, radius=None, bins_per_decade=4):
    """Jacobian variance, sampling distribution and residual histogram for one
    snapshot.  Inputs are taken in the model's whitened space."""
    xw = stats.whiten_inputs(train.inputs)
    if radius is None:
        radius = diagnostics.default_radius(xw)
    jv = diagnostics.jacobian_variance(model, xw, radius)
    mean, var = diagnostics.predict_original_scale(model, train, stats)
    sp = diagnostics.effective_sampling_distribution(var)
    hist = diagnostics.residual_histogram(mean, train.targets, bins_per_decade)
    return jv, sp, hist


def diagnostics_trace(out_dir, seed=0, max_updates=None, base=SINE_BASE, radius=None, loss=("nll", 0.0)):
    """Train once, keep parameter snapshots on a geometric schedule and write
    per-snapshot diagnostics."""
    out = Path(out_dir)
    base = base if max_updates is None else base.replace(max_updates=int(max_updates))
    cfg = base.replace(loss=loss[0], beta=loss[1], seed=int(seed))
    schedule = geometric_schedule(cfg.max_updates)
    res = train_run(cfg, snapshot_at=schedule)
    write_run_outputs(res, out / "runs" / cfg.label)
    train = datamod.generate(cfg.dataset, cfg.points, cfg.data_seed)
    xw = res.stats.whiten_inputs(train.inputs)
    r = diagnostics.default_radius(xw) if radius is None else radius
    jv_grid, p_grid, summary = [], [], []
    mlp_cfg = res.final_model.config
    for update in sorted(res.snapshots):
        model = ProbabilisticMlp(mlp_cfg, res.snapshots[update])
        jv, sp, hist = snapshot_diagnostics(model, train, res.stats, r)
        jv.to_csv(out / f"diag_jacvar_u{update}.csv", points=train.inputs)
        sp.to_csv(out / f"diag_sampling_u{update}.csv")
        hist.to_csv(out / f"diag_residuals_u{update}.csv")
        jv_grid.append(jv.values.tolist())
        p_grid.append(sp.probabilities.tolist())
        summary.append({"update": update, "min_p": float(sp.probabilities.min()),
                        "max_p": float(sp.probabilities.max()), "uniform_p": sp.uniform,
                        "min_p_over_uniform": float(sp.probabilities.min() / sp.uniform),
                        "mean_jacvar": float(jv.values.mean())})
    x = train.inputs[:, 0].tolist()
    ups = sorted(res.snapshots)
    field_heatmap(jv_grid, x, ups, out / "jacvar_trace.svg", title="Jacobian variance over training")
    field_heatmap(p_grid, x, ups, out / "sampling_trace.svg", title="effective sampling probability")
    with open(out / "diag_summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]), lineterminator="\n")
        w.writeheader()
        for row in summary:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    write_json(_base_manifest("diagnostics_trace", [cfg], {"radius": r, "radius_space": "whitened inputs",
                                                           "snapshots": ups, "summary": summary}),
               out / "manifest.json")
    return res, summary


PRESETS = {
    "pitfall": pitfall,
    "convergence_grid": convergence_grid,
    "hetsine_calibration": hetsine_calibration,
    "diagnostics_trace": diagnostics_trace,
}


def run_preset(name, out_dir, **kwargs):
    try:
        fn = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    return fn(out_dir, **kwargs)
