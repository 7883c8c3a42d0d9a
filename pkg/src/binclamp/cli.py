"""Command-line driver: ``binclamp {train,extract,eval,curves}``.

Exit status is 0 on success, 2 for invalid input (config, shapes, labels),
3 when training diverges and 4 for I/O or file-format errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .codes import PackedCodeMatrix
from .config import ExperimentConfig
from .data import load_dataset_file
from .evaluation import evaluate
from .exceptions import BinclampError, ConfigError, DivergenceError, FormatError
from .trainer import HashingModel, MetricsLog, load_data, train

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


def _train_one(config: ExperimentConfig, out_dir: Path) -> float | None:
    out_dir.mkdir(parents=True, exist_ok=True)
    config.save(out_dir / "config.yaml")
    train_set, test_set = load_data(config)
    result = train(config, train_set, test_set)
    result.model.save(out_dir / "model.npz")
    result.log.save(out_dir / "metrics.csv")
    return result.log.records[-1].map if len(result.log) else None


def cmd_train(config_path, out=None, seeds=None, method=None, bits=None, jobs: int = 1) -> dict[int, float | None]:
    """Train one run per seed; returns the final test mAP keyed by seed.

    Each run writes ``config.yaml`` (the effective config), ``model.npz`` and
    ``metrics.csv``.  With several seeds each run gets its own
    ``seed-<n>`` subdirectory.
    """
    overrides = {k: v for k, v in (("method", method), ("bits", bits)) if v is not None}
    base = ExperimentConfig.load(config_path, **overrides)
    out_dir = Path(out if out is not None else base.output_dir)
    seeds = list(seeds) if seeds else [base.seed]
    runs = []
    for seed in seeds:
        cfg = base.replace(seed=seed) if seed != base.seed else base
        runs.append((cfg, out_dir if len(seeds) == 1 else out_dir / f"seed-{seed}"))
    if jobs > 1 and len(runs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            finals = list(pool.map(_train_one, *zip(*runs)))
    else:
        finals = [_train_one(cfg, d) for cfg, d in runs]
    return dict(zip(seeds, finals))


def cmd_extract(model_path, out, data=None, split: str = "test") -> PackedCodeMatrix:
    """Encode a dataset with a trained model and write a BNC1 code file.

    ``data`` is a BNF1 feature file or a CIFAR-10 binary batch; without it
    the model's own configured dataset is used (``split`` = train or test).
    """
    model = HashingModel.load(model_path)
    if data is not None:
        dataset = load_dataset_file(data)
    else:
        train_set, test_set = load_data(model.config)
        dataset = train_set if split == "train" or test_set is None else test_set
    codes = model.encode_dataset(dataset)
    codes.save(out)
    return codes


def cmd_eval(db_path, query_path=None, mode: str = "single", topn: int | None = None,
             precision_k: int = 500, out=None, method: str = "") -> dict:
    """mAP (and precision@k) of query codes against a database of codes.

    Without ``query_path`` every database item queries the rest.  The CSV
    report is one row ``bits,method,map,precision_at_<k>``; code files do
    not record the method, so it is whatever tag the caller passes.
    """
    db = PackedCodeMatrix.load(db_path)
    queries = db if query_path is None else PackedCodeMatrix.load(query_path)
    report = evaluate(db, queries, mode, topn, exclude_self=query_path is None, precision_k=precision_k)
    row = {"bits": db.k, "method": method, **report}
    if out is not None:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        writer.writeheader()
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        Path(out).write_text(buf.getvalue())
    return row


def _run_names(paths: list[Path]) -> list[str]:
    names = [p.stem for p in paths]
    if len(set(names)) < len(names):
        # runs/abc/metrics.csv, runs/tanh/metrics.csv -> abc, tanh
        names = [p.parent.name or p.stem for p in paths]
    if len(set(names)) < len(names):
        names = [f"{n}_{i}" for i, n in enumerate(names)]
    return names


def cmd_curves(metric_paths, column: str = "map", out=None) -> str:
    """Merge metrics files into one epoch-indexed CSV, one column per run.

    Rows cover the union of epochs; a run without a value at an epoch gets a
    blank cell.
    """
    if not metric_paths:
        raise ConfigError("curves needs at least one metrics file", ["metrics"])
    if column not in ("r", "alpha", "lr", "loss", "map"):
        raise ConfigError(f"unknown metrics column {column!r}", ["column"])
    paths = [Path(p) for p in metric_paths]
    tables = []
    for p in paths:
        log = MetricsLog.from_csv(p.read_text(), source=str(p))
        tables.append({rec.epoch: getattr(rec, column) for rec in log})
    epochs = sorted(set().union(*tables))
    lines = [",".join(["epoch", *_run_names(paths)])]
    for e in epochs:
        cells = [str(e)] + ["" if t.get(e) is None else repr(t[e]) for t in tables]
        lines.append(",".join(cells))
    text = "\n".join(lines) + "\n"
    if out is not None:
        Path(out).write_text(text)
    return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="binclamp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a hashing network from a YAML config")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default: output_dir from the config)")
    p.add_argument("--seed", type=int, action="append", help="repeat to sweep seeds")
    p.add_argument("--method", choices=("abc", "scaled-tanh", "dsh-reg-only"))
    p.add_argument("--bits", type=int)
    p.add_argument("--jobs", type=int, default=1, help="parallel runs for a seed sweep")

    p = sub.add_parser("extract", help="write BNC1 codes for a dataset")
    p.add_argument("model")
    p.add_argument("--out", required=True)
    p.add_argument("--data", help="BNF1 feature file or CIFAR-10 batch (default: the model's dataset)")
    p.add_argument("--split", choices=("train", "test"), default="test")

    p = sub.add_parser("eval", help="mAP of query codes against database codes")
    p.add_argument("db")
    p.add_argument("queries", nargs="?", help="omit to query the database against itself")
    p.add_argument("--mode", choices=("single", "multi"), default="single")
    p.add_argument("--topn", type=int)
    p.add_argument("--precision-k", type=int, default=500)
    p.add_argument("--method", default="", help="tag written to the report's method column")
    p.add_argument("--out", help="write a one-row CSV report")

    p = sub.add_parser("curves", help="merge metrics CSVs into one table")
    p.add_argument("metrics", nargs="+")
    p.add_argument("--column", default="map", choices=("r", "alpha", "lr", "loss", "map"))
    p.add_argument("--out", help="write the table here instead of stdout")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "train":
            finals = cmd_train(args.config, args.out, args.seed, args.method, args.bits, args.jobs)
            for seed, value in finals.items():
                print(f"seed {seed}: final mAP {'n/a' if value is None else f'{value:.4f}'}")
        elif args.command == "extract":
            codes = cmd_extract(args.model, args.out, args.data, args.split)
            print(f"wrote {codes.n} codes of {codes.k} bits to {args.out}")
        elif args.command == "eval":
            row = cmd_eval(args.db, args.queries, args.mode, args.topn, args.precision_k, args.out, args.method)
            print(f"mAP {row['map']:.4f}  precision@{args.precision_k} {row[f'precision_at_{args.precision_k}']:.4f}")
        else:
            text = cmd_curves(args.metrics, args.column, args.out)
            if args.out is None:
                sys.stdout.write(text)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (BinclampError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
