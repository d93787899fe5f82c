"""Command-line entry point: ``fimce <subcommand> [options]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Iterable, Optional, Sequence

from fimce.bench.config import ConfigError, ExperimentConfig
from fimce.bench.dataset import generate_dataset, training_sets
from fimce.bench import experiments as ex
from fimce.neural.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from fimce.neural.model import ModeBoundError
from fimce.neural.train import train

log = logging.getLogger("fimce")


def fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence], cfg: Optional[ExperimentConfig] = None) -> Path:
    """Write rows with fixed float formatting and echo the config next to the file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    if cfg is not None:
        path.with_suffix(".config.json").write_text(cfg.to_json() + "\n")
    return path


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    return cfg.replace(**overrides) if overrides else cfg


def _model_paths(args, cfg: ExperimentConfig):
    if args.model:
        if len(args.model) == 1 and len(cfg.pilot_counts) == 1:
            return {cfg.pilot_counts[0]: Path(args.model[0])}
        out = {}
        for spec in args.model:
            if "=" not in spec:
                raise ConfigError("with several pilot counts pass --model M=PATH for each")
            m, p = spec.split("=", 1)
            out[int(m)] = Path(p)
        return out
    return {M: Path(cfg.out_dir) / f"hfno_M{M}.ckpt" for M in cfg.pilot_counts}


def _load_models(args, cfg):
    models = {}
    for M, path in _model_paths(args, cfg).items():
        model, _ = load_checkpoint(path)
        if model.cfg.M != M:
            raise CheckpointError(f"{path} was trained for M={model.cfg.M}, not M={M}")
        models[M] = model
    return models


def _single_model(args, cfg):
    path = Path(args.model[0]) if args.model else Path(cfg.out_dir) / f"hfno_M{cfg.pilots.M}.ckpt"
    return load_checkpoint(path)[0]


def cmd_gen_data(args, cfg):
    out = Path(cfg.out_dir) / f"{args.split}.fimd" if args.path is None else Path(args.path)
    generate_dataset(cfg, args.split, args.count, cfg.seed, out, args.snr)
    print(out)


def cmd_train(args, cfg):
    counts = [args.M] if args.M else cfg.pilot_counts
    for M in counts:
        c = cfg.replace(pilots__M=M)
        train_set, val_set = training_sets(c)
        model, tlog = train(train_set, val_set, c.train, c.fno_config(M))
        path = Path(cfg.out_dir) / f"hfno_M{M}.ckpt"
        save_checkpoint(model, path, {"experiment": c.to_dict(), "best_epoch": tlog.best_epoch,
                                      "train_seconds": tlog.seconds})
        write_csv(path.with_suffix(".log.csv"), *_split(tlog.rows()))
        print(path)


def _split(rows):
    rows = list(rows)
    return rows[0], rows[1:]


def cmd_bench(args, cfg):
    estimators = args.estimators.split(",")
    unknown = set(estimators) - set(ex.ESTIMATORS)
    if unknown:
        raise ConfigError(f"unknown estimators {sorted(unknown)}")
    models = _load_models(args, cfg) if "hfno" in estimators else {}
    rows = ex.run_benchmark(cfg, models, estimators, threads=args.threads)
    print(write_csv(Path(cfg.out_dir) / "bench.csv", ex.BENCH_HEADER, (r.as_tuple() for r in rows), cfg))


def cmd_generalize(args, cfg):
    model = _single_model(args, cfg)
    rows = ex.run_generalization(cfg, model, snr_db=args.snr, finetune=not args.no_finetune, threads=args.threads)
    print(write_csv(Path(cfg.out_dir) / "generalization.csv", ex.GENERALIZATION_HEADER, rows, cfg))


def cmd_inspect(args, cfg):
    model = _single_model(args, cfg)
    for name, (header, rows) in ex.run_interpretability(cfg, model).items():
        print(write_csv(Path(cfg.out_dir) / f"{name}.csv", header, rows, cfg))


def cmd_curves(args, cfg):
    model = _single_model(args, cfg)
    rows = ex.gain_curve_rows(cfg, model, n_delta=args.n_delta, snr_db=args.snr)
    print(write_csv(Path(cfg.out_dir) / "gain_curves.csv", ("L", "method", "element", "delta", "gain"), rows, cfg))


def cmd_coherence(args, cfg):
    rows = ex.run_coherence(cfg, args.draws)
    print(write_csv(Path(cfg.out_dir) / "coherence.csv", ex.COHERENCE_HEADER, rows, cfg))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fimce", description="Channel estimation benchmarks for flexible metasurfaces.")
    p.add_argument("--config", help="JSON experiment config (defaults otherwise)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for Monte Carlo trials")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a dataset file")
    g.add_argument("--split", choices=("train", "val", "test", "finetune"), default="train")
    g.add_argument("--count", type=int, default=1000)
    g.add_argument("--snr", type=float, help="fixed SNR in dB (required for the test split)")
    g.add_argument("--path")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train H-FNO checkpoints for each configured pilot count")
    t.add_argument("--M", type=int, help="train only this pilot count")
    t.set_defaults(func=cmd_train)

    def model_arg(sp, many=False):
        sp.add_argument("--model", action="append",
                        help="checkpoint path" + (" (M=PATH when several pilot counts)" if many else ""))

    b = sub.add_parser("bench", help="NMSE versus SNR and pilot count")
    b.add_argument("--estimators", default=",".join(ex.ESTIMATORS))
    model_arg(b, many=True)
    b.set_defaults(func=cmd_bench)

    gz = sub.add_parser("generalize", help="zero-shot and fine-tuned transfer across sizes and deformation ranges")
    gz.add_argument("--snr", type=float, default=10.0)
    gz.add_argument("--no-finetune", action="store_true")
    model_arg(gz)
    gz.set_defaults(func=cmd_generalize)

    i = sub.add_parser("inspect", help="spectral weights, feature maps and gain curves")
    model_arg(i)
    i.set_defaults(func=cmd_inspect)

    c = sub.add_parser("coherence", help="mutual coherence of pilot designs")
    c.add_argument("--draws", type=int, default=100)
    c.set_defaults(func=cmd_coherence)

    cv = sub.add_parser("curves", help="per-element gain curves only")
    cv.add_argument("--n-delta", type=int, default=21)
    cv.add_argument("--snr", type=float, default=10.0)
    model_arg(cv)
    cv.set_defaults(func=cmd_curves)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
        args.func(args, cfg)
    except (ConfigError, CheckpointError, ex.MissingModelError, ModeBoundError) as e:
        print(f"fimce: error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"fimce: I/O error: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
