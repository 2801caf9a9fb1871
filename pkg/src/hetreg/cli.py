"""Command line entry point: ``hetreg <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 run diverged (``train`` only).
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from . import data as datamod
from . import diagnostics
from .errors import ConfigError, ParseError
from .harness.config import TrainConfig, coerce_overrides, load_config
from .harness.grid import GridSpec, grid_search
from .harness.presets import PRESETS, run_preset, snapshot_diagnostics
from .harness.svg import line_chart
from .harness.train import load_splits, read_metrics_csv, train_run
from .losses import LOSS_KINDS
from .model import load_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3

# CLI flag -> TrainConfig field
TRAIN_FLAGS = {
    "loss": "loss", "beta": "beta", "beta_var": "beta_var", "lr": "lr", "arch": "hidden_sizes",
    "activation": "activation", "batch_size": "batch_size", "max_updates": "max_updates",
    "seed": "seed", "out_dir": "out_dir",
}


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _add_train_flags(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--loss", choices=LOSS_KINDS)
    p.add_argument("--beta", type=float)
    p.add_argument("--beta-var", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--arch", help="hidden units per layer, e.g. 128,128")
    p.add_argument("--activation", choices=("tanh", "relu"))
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-updates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")


def config_from_args(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k] = v
    typed = coerce_overrides(overrides)
    for flag, key in TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            typed[key] = tuple(_ints(value)) if key == "hidden_sizes" else value
    if args.config:
        return load_config(args.config, **typed)
    return TrainConfig(**typed)


def cmd_gen_data(args):
    if args.n:
        ds = datamod.generate(args.generator, args.n, args.seed)
    else:
        ds = datamod.GENERATORS[args.generator](seed=args.seed)
    datamod.save_csv(ds, args.out)
    print(f"wrote {len(ds)} rows to {args.out}")
    return EXIT_OK


def cmd_train(args):
    cfg = config_from_args(args)
    out = cfg.out_dir or "runs/" + cfg.label
    res = train_run(cfg, out_dir=out)
    print(json.dumps({"label": cfg.label, "out_dir": out, **res.summary()}, default=float))
    return EXIT_DIVERGED if res.diverged else EXIT_OK


def cmd_grid(args):
    base = config_from_args(args)
    losses = [("nll", 0.0) if b == 0 else ("beta-nll", b) for b in _floats(args.betas)]
    losses += [(k, 0.0) for k in (args.extra_losses.split(",") if args.extra_losses else [])]
    spec = GridSpec(base=base, lrs=_floats(args.lrs), archs=[tuple(_ints(a)) for a in args.archs.split(";")],
                    losses=losses, seeds=_ints(args.seeds),
                    activations=args.activations.split(",") if args.activations else [])
    out = args.out_dir or "grid"
    rows, best = grid_search(spec, workers=args.workers, out_dir=out)
    print(f"{len(rows)} runs -> {Path(out) / 'grid.csv'}")
    for label, row in best.items():
        print(f"best {label}: lr={row['lr']} arch={row['arch']} val_mean_ll={row['val_mean_ll']:.4f}")
    return EXIT_OK


def cmd_preset(args):
    kwargs = {}
    if args.max_updates is not None:
        kwargs["max_updates"] = args.max_updates
    if args.seeds:
        seeds = _ints(args.seeds)
        if args.name == "diagnostics_trace":
            kwargs["seed"] = seeds[0]
        else:
            kwargs["seeds"] = seeds
    if args.name == "convergence_grid":
        kwargs["workers"] = args.workers
    run_preset(args.name, args.out_dir, **kwargs)
    print(f"preset {args.name} -> {args.out_dir}")
    return EXIT_OK


def cmd_diagnose(args):
    run_dir = Path(args.run_dir)
    with open(run_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    cfg = TrainConfig(**manifest["config"])
    model = load_checkpoint(run_dir / f"{args.which}.npz")
    splits = load_splits(cfg)
    jv, sp, hist = snapshot_diagnostics(model, splits.train, splits.stats, args.radius, args.bins_per_decade)
    out = Path(args.out_dir or run_dir)
    out.mkdir(parents=True, exist_ok=True)
    jv.to_csv(out / "diag_jacvar.csv", points=splits.train.inputs)
    sp.to_csv(out / "diag_sampling.csv")
    hist.to_csv(out / "diag_residuals.csv")
    metrics = diagnostics.evaluate(model, splits.train, splits.stats)
    print(json.dumps({"radius": jv.radius, "min_p_over_uniform": float(sp.probabilities.min() / sp.uniform),
                      "train_rmse": metrics.rmse, "train_mean_ll": metrics.mean_ll}))
    return EXIT_OK


def cmd_plot(args):
    rows = read_metrics_csv(args.metrics)
    col = 2 if args.metric == "rmse" else 3
    series = {}
    for split in ("train", "val"):
        pts = [(r[0], r[col]) for r in rows if r[1] == split and r[0] > 0]
        if pts:
            series[split] = ([p[0] for p in pts], [p[1] for p in pts])
    line_chart(series, args.out, title=str(args.metrics), xlabel="update", ylabel=args.metric,
               logx=True, logy=args.metric == "rmse")
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="hetreg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    p.add_argument("--generator", choices=sorted(datamod.GENERATORS), default="homoscedastic_sine")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a single model")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="grid search")
    _add_train_flags(p)
    p.add_argument("--lrs", default="1e-4,5e-4,1e-3")
    p.add_argument("--archs", default="64,64;128,128", help="semicolon-separated architectures")
    p.add_argument("--betas", default="0,0.5")
    p.add_argument("--extra-losses", default="", help="e.g. mse,mm-std")
    p.add_argument("--seeds", default="0")
    p.add_argument("--activations", default="")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("preset", help="run a wired experiment")
    p.add_argument("name", choices=sorted(PRESETS))
    p.add_argument("--out-dir", required=True)
    p.add_argument("--max-updates", type=int)
    p.add_argument("--seeds")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_preset)

    p = sub.add_parser("diagnose", help="diagnostics for a finished run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--which", choices=("final", "best"), default="final")
    p.add_argument("--radius", type=float)
    p.add_argument("--bins-per-decade", type=int, default=4)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("plot", help="plot a metrics.csv curve as SVG")
    p.add_argument("--metrics", required=True)
    p.add_argument("--metric", choices=("rmse", "mean_ll"), default="rmse")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
