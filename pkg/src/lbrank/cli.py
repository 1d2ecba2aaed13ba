"""Batch command-line front end: train, infer, eval, synth, bench.

Configuration comes from flat ``key = value`` files with ``#`` comments;
every key can be overridden by the matching ``--key`` flag (flags win over
the file, the file wins over built-in defaults). All randomness flows from
one 64-bit seed; each query's chain seed is derived as
``seed XOR FNV-1a(query_id)``, so outputs are byte-identical across reruns
and independent of thread count.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import io as dataio
from . import linear, metrics, nested
from .core import (
    QueryInstance,
    Ranking,
    SimplexWeights,
    gain_from_spec,
    ranking_from_scores,
    weighted_average_scores,
)
from .io import DataError, Dataset
from .nested import Activation
from .sampler import ACCEPTANCE_RULES, ChainConfig

__all__ = ["main", "ConfigError", "EXIT_OK", "EXIT_USAGE", "EXIT_DATA", "EXIT_INTERNAL"]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4


class ConfigError(Exception):
    """Invalid configuration value or combination."""


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


# key -> (converter from string, default). New keys are added here once and
# become available both in config files and as --key flags.
_SCHEMA: dict[str, tuple[Callable[[str], object], object]] = {
    "seed": (int, 0),
    "threads": (int, 1),
    "model": (str, "linear"),
    "data": (str, None),
    "out": (str, None),
    "model_file": (str, None),
    "format": (str, "auto"),
    "gain": (str, "sigmoid"),
    "phi": (str, "shifted_logistic"),
    "mu": (float, 0.1),
    "lam": (float, 0.01),
    "lam1": (float, 0.01),
    "lam2": (float, 0.01),
    "epochs": (int, 20),
    "samples": (int, 50),
    "burn_in": (int, 100),
    "thinning": (int, 1),
    "acceptance_rule": (str, "standard_metropolis"),
    "k2": (int, None),
    "init_jitter": (float, 0.01),
    "sampling": (str, "aggregate"),
    "backend": (str, "mh"),
    "normalize": (_parse_bool, False),
    "strict": (_parse_bool, True),
    "shuffle": (_parse_bool, False),
    "topk": (int, 10),
    "n_queries": (int, 100),
    "n_candidates": (int, 10),
    "n_rankers": (int, 5),
    "noise_levels": (_parse_floats, None),
    "bench_axes": (str, "n,k,k1k2"),
    "bench_doublings": (int, 3),
    "bench_queries": (int, 8),
    "bench_base_n": (int, 32),
    "bench_base_k": (int, 4),
    "bench_repeats": (int, 3),
}


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` pairs; blank lines and ``#`` comments ignored."""
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path} line {lineno}: expected key = value")
        pairs[key.strip()] = value.strip()
    return pairs


@dataclass
class RunConfig:
    """Typed, validated view of the merged configuration."""

    values: dict

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None

    def chain_config(self) -> ChainConfig:
        return ChainConfig(num_samples=self.samples, burn_in=self.burn_in,
                           thinning=self.thinning,
                           acceptance_rule=self.acceptance_rule,
                           rng_seed=self.seed)

    def require(self, *keys: str) -> None:
        for key in keys:
            if self.values.get(key) is None:
                raise ConfigError(f"missing required option --{key.replace('_', '-')}")


def build_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, config file and explicit flags, then validate."""
    merged = {key: default for key, (_, default) in _SCHEMA.items()}
    if getattr(args, "config", None):
        for key, text in parse_config_file(args.config).items():
            if key not in _SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                merged[key] = _SCHEMA[key][0](text)
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from None
    for key in _SCHEMA:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = flag_value

    cfg = RunConfig(merged)
    if not cfg.mu > 0.0:
        raise ConfigError("mu must be > 0")
    for key in ("lam", "lam1", "lam2"):
        if merged[key] < 0.0:
            raise ConfigError(f"{key} must be >= 0")
    if cfg.samples < 1:
        raise ConfigError("samples must be >= 1")
    if cfg.burn_in < 0 or cfg.thinning < 1:
        raise ConfigError("burn_in must be >= 0 and thinning >= 1")
    if cfg.epochs < 1:
        raise ConfigError("epochs must be >= 1")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    if cfg.seed < 0:
        raise ConfigError("seed must be a non-negative 64-bit integer")
    if cfg.model not in ("linear", "nested"):
        raise ConfigError("model must be linear or nested")
    if cfg.acceptance_rule not in ACCEPTANCE_RULES:
        raise ConfigError(f"acceptance_rule must be one of {ACCEPTANCE_RULES}")
    if cfg.backend not in ("mh", "exact"):
        raise ConfigError("backend must be mh or exact")
    if cfg.format not in ("auto", "letor", "csv"):
        raise ConfigError("format must be auto, letor or csv")
    if cfg.topk < 1:
        raise ConfigError("topk must be >= 1")
    if cfg.k2 is not None and cfg.k2 < 1:
        raise ConfigError("k2 must be >= 1")
    return cfg


def _load_dataset(cfg: RunConfig) -> Dataset:
    cfg.require("data")
    path = Path(cfg.data)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    fmt = cfg.format
    if fmt == "auto":
        fmt = "csv" if path.suffix.lower() == ".csv" else "letor"
    dataset = (dataio.parse_scores_csv(path, strict=cfg.strict) if fmt == "csv"
               else dataio.parse_letor(path, strict=cfg.strict))
    if cfg.normalize:
        dataset = Dataset(tuple(dataio.normalize_minmax(q) for q in dataset.queries),
                          dataset.provenance + " (minmax-normalized)")
    return dataset


def _parallel_map(fn, items: Sequence, threads: int) -> list:
    """Order-preserving map; results do not depend on the thread count."""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _write_training_log(path: Path, log, weight_lines: list[str]) -> None:
    lines = []
    for epoch, objective in enumerate(log.objectives, start=1):
        lines.append(f"epoch {epoch} objective {objective!r} {weight_lines[epoch - 1]}")
    lines.append(f"epochs_run {log.epochs_run} converged {str(log.converged).lower()}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_train(cfg: RunConfig) -> int:
    cfg.require("data", "out")
    dataset = _load_dataset(cfg)
    gain = gain_from_spec(cfg.gain, capacity=dataset.n_max)
    chain = cfg.chain_config()
    out = Path(cfg.out)
    if cfg.model == "linear":
        hyper = linear.LinearHyper(mu=cfg.mu, lam=cfg.lam, epochs=cfg.epochs)
        model, log = linear.train(dataset, hyper, chain, gain,
                                  backend=cfg.backend, shuffle=cfg.shuffle)
        linear.save_linear(model, out)
        weight_lines = ["w " + " ".join(repr(v) for v in w.tolist())
                        for w in log.snapshots]
    else:
        hyper = nested.NestedHyper(mu=cfg.mu, lam1=cfg.lam1, lam2=cfg.lam2,
                                   epochs=cfg.epochs, k2=cfg.k2,
                                   init_jitter=cfg.init_jitter,
                                   sampling=cfg.sampling)
        phi = Activation(cfg.phi)
        model, log = nested.train(dataset, hyper, chain, gain, phi, phi,
                                  backend=cfg.backend, shuffle=cfg.shuffle)
        nested.save_nested(model, out)
        weight_lines = [
            "w2 " + " ".join(repr(v) for v in w2.tolist())
            + " w1 " + " ".join(repr(v) for v in w1.reshape(-1).tolist())
            for w1, w2 in log.snapshots
        ]
    _write_training_log(out.with_name(out.name + ".log"), log, weight_lines)
    print(f"trained {cfg.model} model on {len(dataset.queries)} queries "
          f"(K={dataset.k}); wrote {out}")
    return EXIT_OK


def _load_model(path: str | Path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"model file not found: {path}")
    head = path.read_text(encoding="utf-8").splitlines()
    first = head[0].strip() if head else ""
    if first == f"format: {linear.MODEL_FORMAT}":
        return linear.load_linear(path)
    if first == f"format: {nested.MODEL_FORMAT}":
        return nested.load_nested(path)
    raise DataError(f"{path}: unrecognized model format")


def _scores_for(model, q: QueryInstance) -> np.ndarray:
    if isinstance(model, linear.LinearModel):
        return linear.aggregate_scores(model, q)
    return nested.aggregate_scores(model, q)


def _model_k(model) -> int:
    return model.k if isinstance(model, linear.LinearModel) else model.k1


def _write_rankings_csv(path: Path, dataset: Dataset,
                        scores_by_query: list[np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["query_id", "rank", "candidate_id", "aggregated_score"])
        for q, scores in zip(dataset.queries, scores_by_query):
            order = ranking_from_scores(scores).order
            for rank, cand in enumerate(order.tolist(), start=1):
                writer.writerow([q.query_id, rank, cand, repr(float(scores[cand]))])


def cmd_infer(cfg: RunConfig) -> int:
    cfg.require("data", "out")
    dataset = _load_dataset(cfg)
    baseline = cfg.values.get("baseline")
    if baseline is None:
        cfg.require("model_file")
        model = _load_model(cfg.model_file)
        if _model_k(model) != dataset.k:
            raise DataError(f"model expects K={_model_k(model)}, data has K={dataset.k}")
        score_fn = lambda q: _scores_for(model, q)
    elif baseline == "averaging":
        score_fn = lambda q: weighted_average_scores(q, SimplexWeights.uniform(q.k))
    else:
        raise ConfigError(f"unknown baseline {baseline!r}")
    scores = _parallel_map(score_fn, dataset.queries, cfg.threads)
    _write_rankings_csv(Path(cfg.out), dataset, scores)
    print(f"wrote rankings for {len(dataset.queries)} queries to {cfg.out}")
    return EXIT_OK


def _query_ndcg_row(q: QueryInstance, order: Ranking, ks: Sequence[int],
                    discount) -> list[float]:
    rel = metrics.RelevanceJudgments(q.relevance)
    row = []
    for k in ks:
        kk = min(k, q.n)
        if not rel.has_relevant():
            # LETOR tooling convention: queries without relevant documents score 0
            row.append(0.0)
        else:
            row.append(metrics.ndcg_at_k(order, rel, kk, discount))
    return row


def cmd_eval(cfg: RunConfig) -> int:
    cfg.require("data", "out")
    dataset = _load_dataset(cfg)
    if not dataset.has_relevance():
        raise DataError("evaluation requires relevance judgments on every query")
    discount = gain_from_spec(cfg.gain, capacity=dataset.n_max)
    ks = list(range(1, cfg.topk + 1))

    methods: list[tuple[str, Callable[[QueryInstance], Ranking]]] = [
        ("averaging", metrics.baseline_average),
        ("borda", metrics.baseline_borda),
    ]
    for model_path in cfg.values.get("model_files") or []:
        model = _load_model(model_path)
        if _model_k(model) != dataset.k:
            raise DataError(f"{model_path}: model expects K={_model_k(model)}, "
                            f"data has K={dataset.k}")
        label = Path(model_path).stem
        methods.append((label, lambda q, m=model: ranking_from_scores(_scores_for(m, q))))

    rows: list[tuple[str, str, list[float]]] = []
    mean_rows: list[list[float]] = []
    for label, rank_fn in methods:
        orders = _parallel_map(rank_fn, dataset.queries, cfg.threads)
        per_query = [
            _query_ndcg_row(q, order, ks, discount)
            for q, order in zip(dataset.queries, orders)
        ]
        rows.extend((label, q.query_id, vals)
                    for q, vals in zip(dataset.queries, per_query))
        mean_rows.append(np.mean(np.asarray(per_query), axis=0).tolist())

    columns = [f"Top-{k}" for k in ks]
    out = Path(cfg.out)
    metrics.write_metric_csv(out, columns, rows)
    table = metrics.format_table(columns, [label for label, _ in methods], mean_rows)
    out.with_suffix(out.suffix + ".txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


def cmd_synth(cfg: RunConfig) -> int:
    cfg.require("out")
    levels = cfg.noise_levels
    if levels is None:
        levels = [0.5 * i for i in range(cfg.n_rankers)]
    if len(levels) != cfg.n_rankers:
        raise ConfigError(f"noise_levels needs {cfg.n_rankers} entries")
    dataset = dataio.synth_planted(cfg.n_queries, cfg.n_candidates, cfg.n_rankers,
                                   levels, seed=cfg.seed)
    dataio.write_scores_csv(dataset, cfg.out)
    print(f"wrote synthetic dataset ({cfg.n_queries} queries, N={cfg.n_candidates}, "
          f"K={cfg.n_rankers}) to {cfg.out}")
    return EXIT_OK


def _time_epoch(dataset: Dataset, chain: ChainConfig, kind: str, k2: int,
                repeats: int) -> float:
    """Best-of-``repeats`` wall time of a single training epoch."""
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        if kind == "linear":
            linear.train(dataset, linear.LinearHyper(epochs=1), chain)
        else:
            nested.train(dataset, nested.NestedHyper(epochs=1, k2=k2), chain)
        best = min(best, time.perf_counter() - start)
    return best


def cmd_bench(cfg: RunConfig) -> int:
    cfg.require("out")
    chain = cfg.chain_config()
    axes = [a.strip() for a in cfg.bench_axes.split(",") if a.strip()]
    growth_limit = 2.5
    report_rows: list[tuple[str, int, float, float | None, str]] = []
    for axis in axes:
        if axis not in ("n", "k", "k1k2"):
            raise ConfigError(f"unknown bench axis {axis!r}")
        times: list[float] = []
        sizes: list[int] = []
        for step in range(cfg.bench_doublings + 1):
            scale = 2 ** step
            n = cfg.bench_base_n * (scale if axis == "n" else 1)
            k = cfg.bench_base_k * (scale if axis == "k" else 1)
            k2 = cfg.bench_base_k * (scale if axis == "k1k2" else 1)
            dataset = dataio.synth_planted(cfg.bench_queries, n, k,
                                           [0.5] * k, seed=cfg.seed)
            kind = "nested" if axis == "k1k2" else "linear"
            seconds = _time_epoch(dataset, chain, kind, k2, cfg.bench_repeats)
            sizes.append(n * k * (k2 if axis == "k1k2" else 1))
            times.append(seconds)
        for idx, seconds in enumerate(times):
            ratio = times[idx] / times[idx - 1] if idx else None
            flag = "SUPER-LINEAR" if ratio is not None and ratio > growth_limit else ""
            report_rows.append((axis, sizes[idx], seconds, ratio, flag))

    lines = ["axis,size,seconds_per_epoch,ratio,flag"]
    for axis, size, seconds, ratio, flag in report_rows:
        ratio_s = "" if ratio is None else f"{ratio:.3f}"
        lines.append(f"{axis},{size},{seconds:.6f},{ratio_s},{flag}")
    Path(cfg.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    flagged = [row for row in report_rows if row[4]]
    if flagged:
        print(f"warning: {len(flagged)} measurement(s) grew faster than "
              f"x{growth_limit} per doubling", file=sys.stderr)
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "bench": cmd_bench,
}


def _add_schema_flags(parser: argparse.ArgumentParser, keys: Sequence[str]) -> None:
    for key in keys:
        converter, _ = _SCHEMA[key]
        flag = "--" + key.replace("_", "-")
        if converter is _parse_bool:
            parser.add_argument(flag, dest=key, default=None, type=_parse_bool,
                                metavar="BOOL")
        else:
            parser.add_argument(flag, dest=key, default=None, type=converter)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lbrank",
        description="Unsupervised rank aggregation of score-based permutations.")
    sub = parser.add_subparsers(dest="command", required=True)

    shared = ["seed", "threads", "model", "data", "out", "format", "gain",
              "normalize", "strict", "backend"]
    train_keys = shared + ["phi", "mu", "lam", "lam1", "lam2", "epochs", "samples",
                           "burn_in", "thinning", "acceptance_rule", "k2",
                           "init_jitter", "sampling", "shuffle"]
    p_train = sub.add_parser("train", help="fit a model and write it with its log")
    _add_schema_flags(p_train, train_keys)
    p_train.add_argument("--config", default=None)

    p_infer = sub.add_parser("infer", help="write aggregated rankings as CSV")
    _add_schema_flags(p_infer, shared + ["model_file"])
    p_infer.add_argument("--config", default=None)
    p_infer.add_argument("--baseline", default=None, choices=["averaging"],
                         help="rank with a baseline instead of a model file")

    p_eval = sub.add_parser("eval", help="NDCG report for baselines and models")
    _add_schema_flags(p_eval, shared + ["topk"])
    p_eval.add_argument("--config", default=None)
    p_eval.add_argument("--model-file", dest="model_files", action="append",
                        default=None, help="model file to evaluate (repeatable)")

    p_synth = sub.add_parser("synth", help="generate a planted synthetic dataset")
    _add_schema_flags(p_synth, ["seed", "out", "n_queries", "n_candidates",
                                "n_rankers", "noise_levels"])
    p_synth.add_argument("--config", default=None)

    p_bench = sub.add_parser("bench", help="per-epoch training time across doublings")
    _add_schema_flags(p_bench, ["seed", "out", "samples", "burn_in", "thinning",
                                "acceptance_rule", "bench_axes", "bench_doublings",
                                "bench_queries", "bench_base_n", "bench_base_k",
                                "bench_repeats"])
    p_bench.add_argument("--config", default=None)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors already
        return int(exc.code or 0)
    try:
        cfg = build_config(args)
        if args.command == "infer":
            cfg.values["baseline"] = args.baseline
        if args.command == "eval":
            cfg.values["model_files"] = args.model_files
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"lbrank: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"lbrank: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # invariant violations and unexpected failures
        print(f"lbrank: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
