"""Command-line interface: ``ziln-uplift <subcommand> [options]``.

Subcommands: ``generate``, ``train-forest``, ``train-net``, ``score``,
``evaluate`` and ``curve``. Every subcommand writes ``<output>.config.json``
echoing its effective parameters. ``--config FILE`` reads ``key = value``
lines (keys are long option names without dashes); flags given on the
command line override them.

Exit codes: 0 success, 2 usage error, 3 missing file, 4 malformed input
(CSV or artifact schema), 5 configuration conflict, 1 anything else.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, metrics
from .datagen import Dataset, GenConfig, generate, read_csv, write_config_echo, write_csv
from .errors import ConfigurationError, DomainError, ParseError
from .experiment import LATENCY_FIELDS, METRIC_FIELDS, MODELS, RANK_WEIGHT, run_evaluation
from .forest import FORMAT_NAME as FOREST_FORMAT
from .forest import ForestConfig, SmoothingConfig, UpliftForest, fit_forest
from .gated_net import FORMAT_NAME as NET_FORMAT
from .gated_net import GatedNetParams, TrainConfig, predict_uplift, train, train_config_dict
from .losses import FocalConfig, HybridWeights

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_SCHEMA = 4
EXIT_CONFIG = 5
THREADS_ENV = "ZILN_UPLIFT_THREADS"


def _threads():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def _echo(out_path, command, args, extra=None):
    payload = {"command": command, "version": __version__,
               "args": {k: v for k, v in vars(args).items() if k != "func"}}
    if extra:
        payload.update(extra)
    write_config_echo(str(out_path) + ".config.json", payload)


def _load_data(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    return read_csv(path)


def _load_model(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"model artifact not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"model artifact is not JSON: {exc}") from None
    fmt = doc.get("format") if isinstance(doc, dict) else None
    try:
        if fmt == FOREST_FORMAT:
            forest = UpliftForest.from_dict(doc)
            return forest.predict, forest.n_features
        if fmt == NET_FORMAT:
            params = GatedNetParams.from_dict(doc)
            return (lambda X: predict_uplift(X, params)), params.d_features
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed {fmt} artifact: {exc}") from None
    raise ParseError(f"unrecognised model artifact format {fmt!r}")


def _fmt(v):
    if isinstance(v, str):
        return v
    return repr(float(v))


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args):
    cfg = GenConfig(
        n_accounts=args.n_accounts, n_binary=args.n_binary, n_continuous=args.n_continuous,
        zero_fraction_target=args.zero_fraction, treatment_fraction=args.treatment_fraction,
        heterogeneity_strength=args.heterogeneity, prognostic_strength=args.prognostic,
        sigma=args.sigma, seed=args.seed, structure_seed=args.structure_seed,
    )
    data = generate(cfg)
    write_csv(data, args.out)
    _echo(args.out, "generate", args,
          {"generator": asdict(cfg), "base_logit": data.meta["base_logit"],
           "zero_fraction": float(np.mean(data.outcome == 0.0))})
    print(f"wrote {len(data)} rows to {args.out}")


def _forest_cfg(args, criterion=None):
    return ForestConfig(
        n_trees=args.n_trees, max_depth=args.max_depth,
        smoothing=SmoothingConfig(args.alpha_p, args.alpha_reg),
        bootstrap=not args.no_bootstrap, feature_fraction=args.feature_fraction,
        criterion=criterion or args.criterion, seed=args.seed, n_jobs=_threads(),
    )


def cmd_train_forest(args):
    data = _load_data(args.data)
    cfg = _forest_cfg(args)
    forest = fit_forest(data, cfg)
    forest.save(args.out)
    _echo(args.out, "train-forest", args, {"forest": cfg.to_dict()})
    print(f"wrote forest with {len(forest.trees)} trees to {args.out}")


def _net_cfgs(args):
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                      seed=args.seed, distribution_loss=args.loss,
                      outcome_transform=args.transform)
    return cfg, FocalConfig(args.gamma, args.alpha), HybridWeights(args.lambda_rank)


def cmd_train_net(args):
    data = _load_data(args.data)
    cfg, focal, weights = _net_cfgs(args)
    params, history = train(data, cfg, focal, weights)
    conf = train_config_dict(cfg, focal, weights)
    params.save(args.out, conf)
    _echo(args.out, "train-net", args, {**conf, "loss_history": history})
    print(f"wrote network to {args.out}; final epoch loss {history[-1]:.6f}")


def cmd_score(args):
    data = _load_data(args.data)
    score, d = _load_model(args.model)
    if data.features.shape[1] != d:
        raise ParseError(f"data has {data.features.shape[1]} features, model expects {d}")
    s = np.asarray(score(data.features), dtype=float)
    extra = {k: v for k, v in data.extra.items() if k != args.column}
    extra[args.column] = s
    out = Dataset(data.features, data.treatment, data.outcome, data.true_uplift,
                  data.feature_names, extra)
    write_csv(out, args.out)
    _echo(args.out, "score", args)
    print(f"scored {len(s)} rows into {args.out}")


def cmd_curve(args):
    data = _load_data(args.data)
    if args.score_column not in data.extra:
        raise ParseError(f"score column {args.score_column!r} not found")
    curve = metrics.uplift_curve(data.extra[args.score_column], data.outcome, data.treatment,
                                 n_points=args.points)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fraction", "lift", "random_baseline"])
        for row in zip(curve.fractions, curve.incremental_value, curve.random_baseline):
            w.writerow([_fmt(v) for v in row])
    summary = {"auuc": metrics.auuc(curve), "qini": metrics.qini(curve),
               "lift_at_30": metrics.lift_at(curve, 0.30)}
    _echo(args.out, "curve", args, summary)
    for k, v in summary.items():
        print(f"{k}\t{v!r}")


def cmd_evaluate(args):
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    for m in models:
        if m not in MODELS:
            raise ConfigurationError(f"unknown model {m!r}; choose from {sorted(MODELS)}")
    data = _load_data(args.data) if args.data else None
    gen_cfg = GenConfig(n_accounts=args.n_accounts, zero_fraction_target=args.zero_fraction)
    train_cfg, focal, weights = _net_cfgs(args)
    rows = run_evaluation(
        args.seeds, models, gen_cfg=gen_cfg, data=data,
        forest_cfg=_forest_cfg(args, criterion="ziln"), train_cfg=train_cfg,
        focal=focal, weights=weights, latency_repeats=args.latency_repeats,
        test_fraction=args.test_fraction,
    )
    header = ["model", "seed"] + METRIC_FIELDS + LATENCY_FIELDS
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[h]) for h in header])
    text = format_table(rows, header)
    Path(str(args.out) + ".txt").write_text(text)
    _echo(args.out, "evaluate", args)
    print(text, end="")


def format_table(rows, header):
    def cell(v):
        if isinstance(v, str):
            return v
        return "nan" if math.isnan(v) else f"{v:.4f}"

    table = [header] + [[cell(r[h]) for h in header] for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = ["  ".join(c.rjust(wd) for c, wd in zip(row, widths)) for row in table]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# parser


def _add_forest_args(p):
    d = ForestConfig()
    p.add_argument("--n-trees", type=int, default=d.n_trees)
    p.add_argument("--max-depth", type=int, default=d.max_depth)
    p.add_argument("--alpha-p", type=float, default=d.smoothing.alpha_p)
    p.add_argument("--alpha-reg", type=float, default=d.smoothing.alpha_reg)
    p.add_argument("--no-bootstrap", action="store_true")
    p.add_argument("--feature-fraction", type=float, default=None)


def _add_net_args(p):
    d, f = TrainConfig(), FocalConfig()
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--lr", type=float, default=d.learning_rate)
    p.add_argument("--lambda-rank", type=float, default=RANK_WEIGHT)
    p.add_argument("--gamma", type=float, default=f.gamma)
    p.add_argument("--alpha", type=float, default=f.alpha)
    p.add_argument("--loss", choices=["focal_ziln", "mse"], default=d.distribution_loss)
    p.add_argument("--transform", choices=["signed", "log1p"], default=d.outcome_transform)


def build_parser():
    parser = argparse.ArgumentParser(prog="ziln-uplift", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="draw a synthetic dataset")
    gd = GenConfig()
    g.add_argument("--out", required=True)
    g.add_argument("--n-accounts", type=int, default=gd.n_accounts)
    g.add_argument("--n-binary", type=int, default=gd.n_binary)
    g.add_argument("--n-continuous", type=int, default=gd.n_continuous)
    g.add_argument("--zero-fraction", type=float, default=gd.zero_fraction_target)
    g.add_argument("--treatment-fraction", type=float, default=gd.treatment_fraction)
    g.add_argument("--heterogeneity", type=float, default=gd.heterogeneity_strength)
    g.add_argument("--prognostic", type=float, default=gd.prognostic_strength)
    g.add_argument("--sigma", type=float, default=gd.sigma)
    g.add_argument("--structure-seed", type=int, default=gd.structure_seed)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate)

    tf = sub.add_parser("train-forest", help="fit an uplift forest")
    tf.add_argument("--data", required=True)
    tf.add_argument("--out", required=True)
    tf.add_argument("--criterion", choices=["ziln", "mse"], default="ziln")
    tf.add_argument("--seed", type=int, default=0)
    _add_forest_args(tf)
    tf.set_defaults(func=cmd_train_forest)

    tn = sub.add_parser("train-net", help="fit the treatment-gated network")
    tn.add_argument("--data", required=True)
    tn.add_argument("--out", required=True)
    tn.add_argument("--seed", type=int, default=0)
    _add_net_args(tn)
    tn.set_defaults(func=cmd_train_net)

    sc = sub.add_parser("score", help="append predicted uplift to a CSV")
    sc.add_argument("--data", required=True)
    sc.add_argument("--model", required=True)
    sc.add_argument("--out", required=True)
    sc.add_argument("--column", default="score")
    sc.set_defaults(func=cmd_score)

    cv = sub.add_parser("curve", help="write uplift-curve points as CSV")
    cv.add_argument("--data", required=True)
    cv.add_argument("--out", required=True)
    cv.add_argument("--score-column", default="score")
    cv.add_argument("--points", type=int, default=101)
    cv.set_defaults(func=cmd_curve)

    ev = sub.add_parser("evaluate", help="multi-seed metrics table")
    ev.add_argument("--out", required=True)
    ev.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ev.add_argument("--models", default="ziln_forest,mse_forest,gated_net")
    ev.add_argument("--data", default=None,
                    help="evaluate on splits of this CSV instead of fresh generator draws")
    ev.add_argument("--test-fraction", type=float, default=0.3)
    ev.add_argument("--n-accounts", type=int, default=GenConfig().n_accounts)
    ev.add_argument("--zero-fraction", type=float, default=GenConfig().zero_fraction_target)
    ev.add_argument("--latency-repeats", type=int, default=3)
    ev.add_argument("--criterion", default="ziln", help=argparse.SUPPRESS)
    ev.add_argument("--seed", type=int, default=0, help=argparse.SUPPRESS)
    _add_forest_args(ev)
    _add_net_args(ev)
    ev.set_defaults(func=cmd_evaluate)

    for p in sub.choices.values():
        p.add_argument("--config", default=None, help="key = value file; flags override it")
    return parser


def _config_argv(path):
    """Turn a ``key = value`` file into option tokens."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    argv = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key = value in {path}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        opt = "--" + key.replace("_", "-")
        if value.lower() in ("true", "yes", "on"):
            argv.append(opt)
        elif value.lower() in ("false", "no", "off"):
            continue
        else:
            argv.extend([opt, *value.split()])
    return argv


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            # config tokens go first so explicit flags win
            args = parser.parse_args([argv[0], *_config_argv(args.config), *argv[1:]])
        args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error[missing-file]: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except ParseError as exc:
        print(f"error[schema]: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (ConfigurationError, DomainError) as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"error[internal]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
