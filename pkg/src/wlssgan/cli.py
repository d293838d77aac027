"""Command-line entry point: gen-data, train, sweep, synth, baseline, eval."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from pathlib import Path
from typing import Any

import numpy as np

from . import baselines
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .clutter import (
    TRAIN,
    UNLABELED,
    Dataset,
    DatasetFormatError,
    make_dataset,
    read_dataset,
    split_semisupervised,
    write_dataset,
)
from .config import ConfigError, load_config, parse_int_list, resolve, spectrum_params, train_config
from .evaluation import generate_signals, synthesis_report
from .losses import LossConfig
from .models import Discriminator, Generator
from .nn.tensor import ContractError
from .plotting import plot_curves, plot_signals
from .trainer import evaluate, train_supervised, train_wlssgan

log = logging.getLogger("wlssgan")

# default grids: 11 (alpha, beta) rows, 7 nested l_mul sets, 10 labeled-set sizes
ALPHA_BETA_GRID = tuple((round(a / 10, 1), round(1 - a / 10, 1)) for a in range(11))
LMUL_GRID = tuple(tuple(range(1, n + 1)) for n in range(1, 8))
NLAB_GRID = (30, 60, 90, 120, 150, 300, 600, 900, 1200, 1500)
TABLES = ("alpha-beta", "lmul", "classifiers")


class CliError(RuntimeError):
    pass


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_or_make_dataset(cfg: dict[str, Any]) -> Dataset:
    if cfg["data"]:
        path = Path(cfg["data"])
        if not path.is_file():
            raise CliError(f"dataset not found: {path}")
        return read_dataset(path)
    return _generated(spectrum_params(cfg), cfg["per_class"], cfg["train_frac"], cfg["seed"])


@lru_cache(maxsize=8)
def _generated(params, per_class, train_frac, seed) -> Dataset:
    return make_dataset(per_class, train_frac, params, seed)


def _fully_labeled(ds: Dataset) -> bool:
    return not np.any(ds.labels[ds.roles == TRAIN] == UNLABELED)


def _prepare_split(ds: Dataset, n_lab: int, seed: int) -> Dataset:
    if _fully_labeled(ds):
        return split_semisupervised(ds, n_lab, seed)
    return ds  # already split on disk


# ---------------------------------------------------------------- commands


def cmd_gen_data(cfg: dict[str, Any], output: str | None = None) -> Path:
    ds = make_dataset(cfg["per_class"], cfg["train_frac"], spectrum_params(cfg), cfg["seed"])
    path = Path(output) if output else _out_dir(cfg) / "dataset.slcd"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, path)
    log.info("wrote %d samples to %s", len(ds), path)
    return path


def run_training(cfg: dict[str, Any], out: Path | None = None):
    """Train per ``cfg['mode']``; returns (generator or None, discriminator, report)."""
    if cfg["mode"] not in ("wlssgan", "supervised"):
        raise CliError(f"unknown mode {cfg['mode']!r}")
    ds = _prepare_split(_load_or_make_dataset(cfg), cfg["nlab"], cfg["seed"])
    tc = train_config(cfg, str(out / "checkpoints") if out is not None else None)

    def progress(epoch, report):
        log.info("epoch %d  d=%.4f g=%.4f acc=%.4f", epoch, report.d_total[-1], report.g_total[-1], report.test_acc[-1])

    if cfg["mode"] == "supervised":
        disc, report = train_supervised(ds, tc, progress)
        return None, disc, report
    return train_wlssgan(ds, tc, progress)


def cmd_train(cfg: dict[str, Any]) -> Path:
    out = _out_dir(cfg)
    gen, disc, report = run_training(cfg, out)
    report.write_csv(out / "report.csv")
    save_checkpoint(out / "final.wlsg", gen, disc)
    if cfg["plots"]:
        losses = {"D total": report.d_total, "supervised": report.supervised}
        if gen is not None:
            losses.update({"unsupervised": report.unsupervised, "G total": report.g_total, "adversarial": report.adv, "feature matching": report.fm_joint})
        plot_curves(losses, out / "loss.svg", title="training losses", ylabel="loss")
        plot_curves({"test accuracy": report.test_acc}, out / "accuracy.svg", title="test accuracy", ylabel="accuracy")
    log.info("steady-state accuracy %.4f (%.1fs)", report.steady_state_acc, report.wall_clock)
    return out / "report.csv"


def _sweep_cells(cfg: dict[str, Any], table: str, pairs, lmul_sets, nlabs) -> list[dict[str, Any]]:
    cells = []
    seeds = [cfg["seed"] + i for i in range(cfg["seeds"])]
    rows: list[tuple[str, dict[str, Any]]] = [("supervised", {"mode": "supervised"})]
    if table == "alpha-beta":
        lm = tuple(cfg["lmul"])
        rows += [(f"({a}, {b})", {"mode": "wlssgan", "alpha": a, "beta": b, "lmul": lm}) for a, b in pairs]
    elif table == "lmul":
        rows += [
            ("{" + ", ".join(map(str, s)) + "}", {"mode": "wlssgan", "alpha": cfg["alpha"], "beta": cfg["beta"], "lmul": tuple(s)})
            for s in lmul_sets
        ]
    else:
        rows = [
            ("knn", {"mode": "knn"}),
            ("logistic regression", {"mode": "logreg"}),
            ("self-training", {"mode": "self-training"}),
            ("supervised", {"mode": "supervised"}),
            (f"wlssgan ({cfg['alpha']}, {cfg['beta']})", {"mode": "wlssgan", "alpha": cfg["alpha"], "beta": cfg["beta"]}),
        ]
    for name, over in rows:
        if over.get("mode") == "wlssgan":
            LossConfig(alpha=over["alpha"], beta=over["beta"], l_mul=over.get("lmul", cfg["lmul"]))
        for n_lab in nlabs:
            for seed in seeds:
                cell = dict(cfg)
                cell.update(over)
                cell.update({"nlab": n_lab, "seed": seed, "plots": False, "checkpoint_every": 0})
                cells.append({"row": name, "cfg": cell})
    return cells


def run_cell(cell: dict[str, Any]) -> float:
    cfg = cell["cfg"]
    mode = cfg["mode"]
    if mode in ("wlssgan", "supervised"):
        return run_training(cfg)[2].steady_state_acc
    ds = _prepare_split(_load_or_make_dataset(cfg), cfg["nlab"], cfg["seed"])
    if mode == "knn":
        return baselines.knn_baseline(ds, cfg["k"])
    st = baselines.SelfTrainingConfig(threshold=cfg["threshold"])
    if mode == "logreg":
        return baselines.supervised_logreg_baseline(ds, st)
    if mode == "self-training":
        return baselines.self_training_baseline(ds, st)
    raise CliError(f"unknown mode {mode!r}")


def cmd_sweep(cfg: dict[str, Any], table: str = "alpha-beta", pairs=None, lmul_sets=None, nlabs=None) -> tuple[Path, Path]:
    if table not in TABLES:
        raise CliError(f"unknown table {table!r}; choose from {TABLES}")
    pairs = tuple(pairs or ALPHA_BETA_GRID)
    lmul_sets = tuple(lmul_sets or LMUL_GRID)
    nlabs = tuple(nlabs or NLAB_GRID)
    if table == "lmul" and "alpha" not in cfg.get("_explicit", ()):
        cfg = dict(cfg, alpha=0.5, beta=0.5)
    cells = _sweep_cells(cfg, table, pairs, lmul_sets, nlabs)
    out = _out_dir(cfg)
    if cfg["workers"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as pool:
            accs = list(pool.map(run_cell, cells))
    else:
        accs = [run_cell(c) for c in cells]

    per_seed = [
        (c["row"], c["cfg"]["alpha"], c["cfg"]["beta"], ",".join(map(str, c["cfg"]["lmul"])), c["cfg"]["nlab"], c["cfg"]["seed"], _fmt(a))
        for c, a in zip(cells, accs)
    ]
    rows_path = out / f"sweep_{table}_runs.csv"
    rows_path.write_text(_csv_text(("row", "alpha", "beta", "lmul", "n_lab", "seed", "steady_acc"), per_seed))

    means: dict[str, dict[int, list[float]]] = {}
    for c, a in zip(cells, accs):
        means.setdefault(c["row"], {}).setdefault(c["cfg"]["nlab"], []).append(a)
    table_rows = [[name] + [_fmt(np.mean(by_n[n])) for n in nlabs] for name, by_n in means.items()]
    table_path = out / f"sweep_{table}.csv"
    table_path.write_text(_csv_text(["row"] + [str(n) for n in nlabs], table_rows))
    return rows_path, table_path


def _load_models(path, precision: str = "f32"):
    p = Path(path)
    if not p.is_file():
        raise CliError(f"checkpoint not found: {p}")
    ckpt = load_checkpoint(p)
    dtype = np.float64 if precision == "f64" else np.float32
    gen = disc = None
    if "g1.weight" in ckpt.arrays:
        gen = Generator(dtype=dtype)
        gen.load_state_arrays(ckpt.arrays)
    if "d1.weight" in ckpt.arrays:
        disc = Discriminator(dtype=dtype)
        disc.load_state_arrays(ckpt.arrays)
    return gen, disc


def cmd_synth(cfg: dict[str, Any]) -> Path:
    if not cfg["checkpoint"]:
        raise CliError("synth needs --checkpoint")
    gen, _ = _load_models(cfg["checkpoint"], cfg["precision"])
    if gen is None:
        raise CliError("checkpoint holds no generator")
    out = _out_dir(cfg)
    n = cfg["n_synth"]
    signals = generate_signals(gen, n, cfg["seed"])
    synth = Dataset(signals, np.full(n, UNLABELED), np.full(n, TRAIN))
    write_dataset(synth, out / "synthetic.slcd")
    real = _load_or_make_dataset(cfg).train.signals
    report = synthesis_report(gen, real, n, cfg["seed"])
    (out / "synthesis.csv").write_text(report.to_csv())
    if cfg["plots"]:
        plot_signals(signals[: min(4, n)], out / "synthetic_examples.svg", title="generated spectra")
    log.info("AD %.4f  CS %.4f  PCC %.4f over %d pairs", report.ad, report.cs, report.pcc, report.n_pairs)
    return out / "synthesis.csv"


def cmd_baseline(cfg: dict[str, Any], method: str = "all") -> Path:
    methods = ("knn", "logreg", "self-training") if method == "all" else (method,)
    out = _out_dir(cfg)
    rows = []
    for m in methods:
        acc = run_cell({"row": m, "cfg": dict(cfg, mode=m)})
        rows.append((m, cfg["nlab"], cfg["seed"], _fmt(acc)))
        log.info("%s n_lab=%d accuracy %.4f", m, cfg["nlab"], acc)
    path = out / "baseline.csv"
    path.write_text(_csv_text(("method", "n_lab", "seed", "accuracy"), rows))
    return path


def cmd_eval(cfg: dict[str, Any]) -> Path:
    if not cfg["checkpoint"]:
        raise CliError("eval needs --checkpoint")
    _, disc = _load_models(cfg["checkpoint"], cfg["precision"])
    if disc is None:
        raise CliError("checkpoint holds no discriminator")
    ds = _load_or_make_dataset(cfg)
    acc = evaluate(disc, ds.test)
    out = _out_dir(cfg)
    path = out / "eval.csv"
    path.write_text(_csv_text(("checkpoint", "n_test", "accuracy"), [(cfg["checkpoint"], len(ds.test), _fmt(acc))]))
    log.info("test accuracy %.4f on %d samples", acc, len(ds.test))
    return path


# ---------------------------------------------------------------- parsing

_S = argparse.SUPPRESS


def _shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, default=_S)
    p.add_argument("--out", default=_S, help="output directory")
    p.add_argument("--precision", choices=("f32", "f64"), default=_S)
    p.add_argument("-v", "--verbose", action="store_true")


def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", default=_S, help="dataset file (generated in memory when omitted)")
    p.add_argument("--per-class", dest="per_class", type=int, default=_S)
    p.add_argument("--train-frac", dest="train_frac", type=float, default=_S)
    for name in ("bragg-offset", "peak-width", "amp-jitter", "doppler-jitter", "noise-floor"):
        p.add_argument(f"--{name}", dest=name.replace("-", "_"), type=float, default=_S)


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=_S)
    p.add_argument("--beta", type=float, default=_S)
    p.add_argument("--lmul", type=parse_int_list, default=_S, help="comma list, e.g. 1,2,3 or 1-7")
    p.add_argument("--nlab", type=int, default=_S)
    p.add_argument("--epochs", type=int, default=_S)
    p.add_argument("--iterations", type=int, default=_S, help="total iteration budget (overrides --epochs)")
    p.add_argument("--batch-size", dest="batch_size", type=int, default=_S)
    p.add_argument("--lr", type=float, default=_S)
    p.add_argument("--mode", choices=("wlssgan", "supervised"), default=_S)
    p.add_argument("--adversarial", choices=("non_saturating", "saturating"), default=_S)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int, default=_S)
    p.add_argument("--no-plots", dest="plots", action="store_false", default=_S)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wlssgan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic clutter dataset")
    _shared(p)
    _data_flags(p)
    p.add_argument("--output", help="dataset path (default OUT/dataset.slcd)")

    p = sub.add_parser("train", help="train WL-SSGAN or the supervised classifier")
    _shared(p)
    _data_flags(p)
    _train_flags(p)

    p = sub.add_parser("sweep", help="grid of training runs aggregated into a table")
    _shared(p)
    _data_flags(p)
    _train_flags(p)
    p.add_argument("--table", choices=TABLES, default="alpha-beta")
    p.add_argument("--pairs", help="alpha:beta list, e.g. 0.7:0.3,1:0")
    p.add_argument("--lmul-sets", dest="lmul_sets", help="semicolon-separated l_mul sets, e.g. '1;1-6;1-7'")
    p.add_argument("--nlabs", help="comma list of labeled-set sizes")
    p.add_argument("--seeds", type=int, default=_S, help="seeds per cell")
    p.add_argument("--workers", type=int, default=_S)
    p.add_argument("--k", type=int, default=_S, help="neighbours for the k-NN row of the classifiers table")
    p.add_argument("--threshold", type=float, default=_S, help="self-training confidence threshold")

    p = sub.add_parser("synth", help="sample a trained generator and score the samples")
    _shared(p)
    _data_flags(p)
    p.add_argument("--checkpoint", default=_S)
    p.add_argument("--n", dest="n_synth", type=int, default=_S)
    p.add_argument("--no-plots", dest="plots", action="store_false", default=_S)

    p = sub.add_parser("baseline", help="KNN / logistic regression / self-training accuracies")
    _shared(p)
    _data_flags(p)
    p.add_argument("--method", choices=("knn", "logreg", "self-training", "all"), default="all")
    p.add_argument("--nlab", type=int, default=_S)
    p.add_argument("--k", type=int, default=_S)
    p.add_argument("--threshold", type=float, default=_S)

    p = sub.add_parser("eval", help="test accuracy of a checkpointed classifier")
    _shared(p)
    _data_flags(p)
    p.add_argument("--checkpoint", default=_S)
    return parser


_NON_CONFIG = {"command", "config", "verbose", "output", "table", "pairs", "lmul_sets", "nlabs", "method"}


def config_from_args(args: argparse.Namespace) -> dict[str, Any]:
    flags = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
    file_values = load_config(args.config) if args.config else {}
    cfg = resolve(file_values, flags)
    cfg["_explicit"] = tuple(sorted(set(file_values) | set(flags)))
    return cfg


def _parse_pairs(text: str | None):
    if not text:
        return None
    out = []
    for part in text.split(","):
        a, b = part.split(":")
        out.append((float(a), float(b)))
    return out


def _parse_lmul_sets(text: str | None):
    if not text:
        return None
    return [parse_int_list(s) for s in text.split(";") if s.strip()]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "gen-data":
            path = cmd_gen_data(cfg, args.output)
        elif args.command == "train":
            path = cmd_train(cfg)
        elif args.command == "sweep":
            nlabs = parse_int_list(args.nlabs) if args.nlabs else None
            path = cmd_sweep(cfg, args.table, _parse_pairs(args.pairs), _parse_lmul_sets(args.lmul_sets), nlabs)[1]
        elif args.command == "synth":
            path = cmd_synth(cfg)
        elif args.command == "baseline":
            path = cmd_baseline(cfg, args.method)
        else:
            path = cmd_eval(cfg)
    except (CliError, ConfigError, ContractError, DatasetFormatError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
