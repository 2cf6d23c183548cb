"""``lsrgan`` command line: synth, train, eval and sweep.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric abort.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import warnings
from dataclasses import asdict, replace

import numpy as np

from . import __version__
from .config import DESK, ConfigError, build_synth_spec, build_train_config, parse_pairs, read_config_file
from .data import DataError, load_dataset, make_synthetic, write_dataset, write_latents
from .metrics import avg_confidence, classifier_probs, evaluate_model
from .models import load_checkpoint, save_checkpoint
from .optim import NonFiniteError
from .training import Trainer, TrainConfig, config_echo

log = logging.getLogger("lsrgan")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
METRICS = ("zsl", "gzsl", "auc", "confidence")
SWEEP_PARAMS = {"epsilon": float, "lambda_sr": float, "n_c": int}
DATA_FILES = ("visual.txt", "semantic.txt", "split.txt")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _echo_lines(command, **sections):
    lines = [f"lsrgan {__version__} {command}"]
    for name, value in sections.items():
        lines.append(f"{name}: {value}")
    return lines


def _write_header(fh, lines):
    for line in lines:
        fh.write(f"# {line}\n")


def _prepend_header(path, lines):
    with open(path, encoding="utf-8") as fh:
        body = fh.read()
    with open(path, "w", encoding="utf-8") as fh:
        _write_header(fh, lines)
        fh.write(body)


def _write_csv(path, header_lines, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _write_header(fh, header_lines)
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (int, np.integer)) or isinstance(v, str):
        return str(v)
    return repr(float(v))


def _out_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {path}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise DataError(f"output directory {path} is not writable")
    return path


# ---------------------------------------------------------------------------
# configuration assembly


def _load_config(args):
    train, synth, paths = ({}, {}, {})
    if getattr(args, "preset", None) == "desk":
        train.update(DESK)
    if getattr(args, "config", None):
        try:
            t, s, p = read_config_file(args.config)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        train.update(t)
        synth.update(s)
        paths.update(p)
    if getattr(args, "set", None):
        t, s, p = parse_pairs([(0, kv) for kv in args.set], source="--set")
        train.update(t)
        synth.update(s)
        paths.update(p)
    return train, synth, paths


def _resolve_path(flag_value, paths, key, required=True):
    value = flag_value if flag_value is not None else paths.get(key)
    if value is None and required:
        raise ConfigError(f"--{key} is required (flag or '{key} = ...' in the config file)")
    return value


def _load_data_dir(data_dir, mode, seed):
    files = [os.path.join(data_dir, f) for f in DATA_FILES]
    for f in files:
        if not os.path.isfile(f):
            raise DataError(f"{f}: no such file")
    return load_dataset(*files, mode=mode, seed=seed)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    _train, synth, paths = _load_config(args)
    spec = build_synth_spec(
        synth,
        seed=args.seed,
        sigma_x=args.sigma_x,
        sigma_t=args.sigma_t,
        latent_dim=args.latent_dim,
        num_seen=args.num_seen,
        num_unseen=args.num_unseen,
        visual_dim=args.visual_dim,
        semantic_dim=args.semantic_dim,
        samples_per_class=args.samples_per_class,
        maps=args.maps,
    )
    out = _out_dir(_resolve_path(args.out, paths, "out"))
    dataset, table, latents = make_synthetic(spec)
    written = write_dataset(out, dataset, table)
    latents_path = os.path.join(out, "latents.txt")
    write_latents(latents_path, latents)
    echo = _echo_lines("synth", spec=" ".join(f"{k}={v}" for k, v in asdict(spec).items()))
    for path in (*written.values(), latents_path):
        _prepend_header(path, echo)
    log.info("wrote %s to %s", dataset.summary(), out)
    return EXIT_OK


def _train_config(args, values):
    return build_train_config(values, ablation=args.ablation, seed=args.seed, epochs=args.epochs)


def cmd_train(args):
    values, _synth, paths = _load_config(args)
    cfg = _train_config(args, values)
    data_dir = _resolve_path(args.data, paths, "data")
    out = _out_dir(_resolve_path(args.out, paths, "out"))
    dataset, table, _ = _load_data_dir(data_dir, cfg.mode, cfg.seed)
    trainer = Trainer(dataset, table, cfg)
    model, trace = trainer.fit()
    echo = _echo_lines("train", config=config_echo(cfg), data=data_dir)
    trace.to_csv(os.path.join(out, "trace.csv"), echo, exclude=("seconds",))
    _write_csv(
        os.path.join(out, "timing.csv"),
        echo,
        ("epoch", "seconds"),
        [(int(r["epoch"]), r["seconds"]) for r in trace.records],
    )
    extra = {"train_config": asdict(cfg), "data": data_dir}
    save_checkpoint(os.path.join(out, "final.ckpt"), model, {**extra, "kind": "final"})
    trainer.restore(trainer.best["params"])
    save_checkpoint(
        os.path.join(out, "checkpoint.ckpt"),
        model,
        {**extra, "kind": "best", "best_epoch": trainer.best["epoch"]},
    )
    if args.gnuplot:
        _write_trace_gnuplot(os.path.join(out, "trace.gp"), echo)
    last = trace.records[-1]
    print(
        f"epochs={len(trace.records)} best_h={trainer.best['gzsl_h']:.4f}@{trainer.best['epoch']} "
        f"final u={last['gzsl_u']:.4f} s={last['gzsl_s']:.4f} h={last['gzsl_h']:.4f}"
    )
    return EXIT_OK


def _parse_metrics(text):
    chosen = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in chosen if m not in METRICS]
    if bad or not chosen:
        raise ConfigError(f"--metrics must be a subset of {','.join(METRICS)}; got {text!r}")
    return chosen


def cmd_eval(args):
    metrics = _parse_metrics(args.metrics)
    try:
        model = load_checkpoint(args.checkpoint)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint: {exc}") from None
    except (ValueError, KeyError) as exc:
        raise DataError(str(exc)) from None
    stored = model.extra.get("train_config", {})
    cfg = TrainConfig(**stored) if stored else TrainConfig()
    if args.m_eval is not None:
        cfg = replace(cfg, m_eval=args.m_eval)
    seed = cfg.seed if args.seed is None else args.seed
    data_dir = args.data or model.extra.get("data")
    if data_dir is None:
        raise ConfigError("--data is required")
    out = _out_dir(args.out)
    dataset, table, _ = _load_data_dir(data_dir, cfg.mode, cfg.seed)
    if dataset.num_classes != model.config.num_classes or dataset.visual_dim != model.config.visual_dim:
        raise DataError("dataset shape does not match the checkpoint")
    predictor = "classifier" if cfg.mode == "attributes" else "nearest_centroid"
    res = evaluate_model(
        model, dataset, table, predictor, m_eval=cfg.m_eval,
        rng=np.random.default_rng(seed + 7919), with_auc="auc" in metrics,
    )
    echo = _echo_lines(
        "eval", checkpoint=args.checkpoint, data=data_dir, predictor=predictor,
        metrics=",".join(metrics), config=config_echo(cfg),
    )
    if "zsl" in metrics:
        _write_csv(os.path.join(out, "zsl.csv"), echo, ("zsl_top1",), [(res["zsl_top1"],)])
    if "gzsl" in metrics:
        _write_csv(
            os.path.join(out, "gzsl.csv"), echo, ("U", "S", "H"),
            [(res["gzsl_u"], res["gzsl_s"], res["gzsl_h"])],
        )
    if "auc" in metrics:
        _write_csv(os.path.join(out, "auc.csv"), echo, ("auc",), [(res["auc"],)])
        _write_csv(os.path.join(out, "auc_curve.csv"), echo, ("S", "U"), res["auc_curve"].tolist())
        if args.gnuplot:
            _write_curve_gnuplot(os.path.join(out, "auc_curve.gp"), echo)
    if "confidence" in metrics:
        x = np.concatenate([dataset.test_seen_x, dataset.test_unseen_x])
        y = np.concatenate([dataset.test_seen_y, dataset.test_unseen_y])
        conf = avg_confidence(classifier_probs(model, x), y, dataset.num_seen)
        _write_csv(
            os.path.join(out, "confidence.csv"), echo, ("seen_mean", "unseen_mean"),
            [(conf["seen"], conf["unseen"])],
        )
        names = dataset.class_names
        rows = []
        for c, guesses in conf["per_class"].items():
            for rank, (k, p) in enumerate(guesses, start=1):
                rows.append((names[c], "seen" if c < dataset.num_seen else "unseen", rank, names[k], p))
        _write_csv(
            os.path.join(out, "confidence_top3.csv"), echo,
            ("class", "partition", "rank", "guess", "mean_prob"), rows,
        )
    summary = {k: res[k] for k in ("zsl_top1", "gzsl_u", "gzsl_s", "gzsl_h", "auc") if k in res}
    print(" ".join(f"{k}={v:.4f}" for k, v in summary.items()))
    return EXIT_OK


def _parse_values(param, text):
    cast = SWEEP_PARAMS[param]
    try:
        values = [cast(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values: cannot parse {text!r} for {param}") from None
    if not values:
        raise ConfigError("--values is empty")
    return values


def cmd_sweep(args):
    values, _synth, paths = _load_config(args)
    base = _train_config(args, values)
    grid = _parse_values(args.param, args.values)
    data_dir = _resolve_path(args.data, paths, "data")
    out = _out_dir(_resolve_path(args.out, paths, "out"))
    dataset, table, _ = _load_data_dir(data_dir, base.mode, base.seed)
    field = "n_neighbors" if args.param == "n_c" else args.param
    with_auc = base.mode == "tfidf"
    rows = []
    for v in grid:
        try:
            cfg = replace(base, **{field: v})
        except ValueError as exc:
            raise ConfigError(f"{args.param}={v}: {exc}") from None
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            trainer = Trainer(dataset, table, cfg)
        for w in caught:
            log.warning("%s=%s: %s", args.param, v, w.message)
        effective = len(trainer.index_seen.neighbors[0]) if args.param == "n_c" else v
        _, trace = trainer.fit()
        last = trace.records[-1]
        row = [v, effective, last["zsl_top1"], last["gzsl_u"], last["gzsl_s"], last["gzsl_h"], trainer.best["gzsl_h"]]
        if with_auc:
            row.append(last["auc"])
        rows.append(row)
        log.info("%s=%s h=%.4f", args.param, v, last["gzsl_h"])
    cols = ["value", "effective", "zsl_top1", "gzsl_u", "gzsl_s", "gzsl_h", "best_h"] + (["auc"] if with_auc else [])
    echo = _echo_lines("sweep", param=args.param, values=args.values, config=config_echo(base), data=data_dir)
    _write_csv(os.path.join(out, f"sweep_{args.param}.csv"), echo, cols, rows)
    if args.gnuplot:
        _write_sweep_gnuplot(os.path.join(out, f"sweep_{args.param}.gp"), echo, args.param)
    return EXIT_OK


# ---------------------------------------------------------------------------
# gnuplot scripts (CSV inputs sit next to the script)


def _gp(path, echo, body):
    with open(path, "w", encoding="utf-8") as fh:
        _write_header(fh, echo)
        fh.write("set datafile separator ','\nset key autotitle columnhead\nset grid\n")
        fh.write(body)


def _write_trace_gnuplot(path, echo):
    _gp(path, echo, (
        "set terminal pngcairo size 1000,700\nset output 'trace.png'\n"
        "set multiplot layout 2,1\nset xlabel 'epoch'\n"
        "plot 'trace.csv' using 'epoch':'loss_d' with lines, '' using 'epoch':'loss_g_adv' with lines,"
        " '' using 'epoch':'loss_sr_seen' with lines, '' using 'epoch':'loss_sr_unseen' with lines\n"
        "plot 'trace.csv' using 'epoch':'gzsl_u' with lines, '' using 'epoch':'gzsl_s' with lines,"
        " '' using 'epoch':'gzsl_h' with lines\nunset multiplot\n"
    ))


def _write_curve_gnuplot(path, echo):
    _gp(path, echo, (
        "set terminal pngcairo size 700,700\nset output 'auc_curve.png'\n"
        "set xlabel 'seen accuracy'\nset ylabel 'unseen accuracy'\nset xrange [0:1]\nset yrange [0:1]\n"
        "plot 'auc_curve.csv' using 'S':'U' with linespoints\n"
    ))


def _write_sweep_gnuplot(path, echo, param):
    _gp(path, echo, (
        f"set terminal pngcairo size 800,600\nset output 'sweep_{param}.png'\nset xlabel '{param}'\n"
        f"plot 'sweep_{param}.csv' using 'value':'gzsl_h' with linespoints,"
        " '' using 'value':'zsl_top1' with linespoints\n"
    ))


# ---------------------------------------------------------------------------
# argument parsing


def _train_flags(p):
    p.add_argument("--data", help="directory holding visual.txt, semantic.txt, split.txt")
    p.add_argument("--config", help="key = value run configuration file")
    p.add_argument("--preset", choices=("desk",), help="start from a small desk-scale configuration")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--ablation", choices=("S1", "S2", "S3", "S4"))
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--gnuplot", action="store_true", help="also write a gnuplot script")


def build_parser():
    parser = _Parser(prog="lsrgan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lsrgan {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--sigma-x", type=float)
    p.add_argument("--sigma-t", type=float)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--num-seen", type=int)
    p.add_argument("--num-unseen", type=int)
    p.add_argument("--visual-dim", type=int)
    p.add_argument("--semantic-dim", type=int)
    p.add_argument("--samples-per-class", type=int)
    p.add_argument("--maps", choices=("orthogonal", "gaussian", "identity"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model")
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--metrics", default=",".join(METRICS))
    p.add_argument("--m-eval", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--gnuplot", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="retrain over a grid of one SR-loss parameter")
    _train_flags(p)
    p.add_argument("--param", required=True, choices=tuple(SWEEP_PARAMS))
    p.add_argument("--values", required=True, help="comma-separated list")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"lsrgan: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    log.setLevel(logging.WARNING - 10 * min(args.verbose, 2))
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"lsrgan: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"lsrgan: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"lsrgan: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
