"""Command-line entry point: encode, augment, synth, train, predict, eval, search.

Exit codes: 0 ok, 1 usage, 2 data / validation / config mismatch, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .arch_graph import GraphError, load_arch
from .augment import sample_augmented
from .autodiff import NonFiniteError
from .checkpoint import CheckpointError, ConfigMismatchError
from .data import DataError, load_dataset, synth_benchmark, write_dataset
from .model import ModelConfig
from .search import SearchConfig, SearchError, build_space, parse_oracle, run_search, write_log
from .tokenizer import EncoderSpec, to_binary, tokenize
from .trainer import Predictor, TrainConfig, evaluate, fit, write_history

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("narformer")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_json(path) -> dict:
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise DataError(f"config {path} must be a JSON object")
    return obj


def _make(cls, d: dict, what: str):
    try:
        return cls(**d)
    except TypeError as exc:
        raise DataError(f"bad {what} config: {exc}") from exc


def _encoder(d: dict | None) -> EncoderSpec:
    return _make(EncoderSpec, d or {}, "encoder")


def _model(d: dict | None, spec: EncoderSpec, task: str = "accuracy") -> ModelConfig:
    d = dict(d or {})
    d.setdefault("D", spec.D)
    # latency targets are log-transformed and unbounded
    d.setdefault("head_activation", "sigmoid" if task == "accuracy" else "identity")
    return _make(ModelConfig, d, "model")


def _overrides(base: dict, args, names) -> dict:
    out = dict(base)
    for name in names:
        val = getattr(args, name, None)
        if val is not None:
            out[name] = val
    return out


# ---- subcommands --------------------------------------------------------------


def cmd_encode(args) -> int:
    g = load_arch(args.arch)
    spec = _encoder(_read_json(args.spec) if args.spec else None)
    seq = tokenize(g, spec)
    if args.format == "bin":
        blob = to_binary(seq)
        if args.out:
            Path(args.out).write_bytes(blob)
        else:
            sys.stdout.buffer.write(blob)
        return EXIT_OK
    doc = {"shape": list(seq.tokens.shape), "n_nodes": seq.n_nodes, "tokens": seq.tokens.tolist()}
    text = json.dumps(doc)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_augment(args) -> int:
    g = load_arch(args.arch)
    mode = "isomorphic" if args.mode == "iso" else args.mode
    for h in sample_augmented(g, args.count, mode, args.seed):
        print(h.to_json())
    return EXIT_OK


def cmd_synth(args) -> int:
    ds = synth_benchmark(args.seed, args.n, max_nodes=args.max_nodes, vocab_size=args.vocab_size)
    write_dataset(ds, args.out)
    log.info("wrote %d graphs to %s", len(ds), args.out)
    return EXIT_OK


TRAIN_FLAGS = ("epochs", "batch_size", "lr", "seed", "aug_mode", "task", "lambda1", "lambda2")


def cmd_train(args) -> int:
    conf = _read_json(args.config) if args.config else {}
    spec = _encoder(conf.get("encoder"))
    tcfg = _make(TrainConfig, _overrides(conf.get("train", {}), args, TRAIN_FLAGS), "train")
    model_cfg = _model(conf.get("model"), spec, tcfg.task)
    ds = load_dataset(args.data)
    res = fit(ds, model_cfg, spec, tcfg)
    res.predictor.save(args.out, {"train": tcfg.to_dict()})
    if args.history:
        write_history(res.history, args.history)
    print(json.dumps({"best_val": res.best_val, "best_epoch": res.best_epoch, "metric": tcfg.eval_metric}))
    return EXIT_OK


def cmd_predict(args) -> int:
    pred = Predictor.load(args.ckpt)
    if args.spec:
        spec = _encoder(_read_json(args.spec))
        if spec.D != pred.model_cfg.D:
            raise ConfigMismatchError(f"encoder width {spec.D} does not match checkpoint width {pred.model_cfg.D}")
        pred.spec = spec
    for path in args.arch:
        print(f"{float(pred.predict([load_arch(path)])[0]):.10g}")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = Predictor.load(args.ckpt)
    ds = load_dataset(args.data)
    items = ds.items if args.split == "all" else ds.split(args.split)
    value = evaluate(pred, items, args.metric, args.delta)
    print(f"{value:.10g}")
    return EXIT_OK


SEARCH_FLAGS = ("budget", "init_size", "topk", "seed")


def cmd_search(args) -> int:
    conf = _read_json(args.config) if args.config else {}
    scfg = _make(SearchConfig, _overrides(conf.get("search", {}), args, SEARCH_FLAGS), "search")
    spec = _encoder(conf.get("encoder"))
    model_cfg = _model(conf.get("model"), spec)
    oracle = parse_oracle(args.oracle)
    if args.space in ("random", "table"):
        space_cfg = {"type": args.space}
    else:
        space_cfg = _read_json(args.space)
    space = build_space(space_cfg, oracle=oracle)
    res = run_search(space, oracle, scfg.budget, scfg.init_size, scfg.topk, scfg.seed, model_cfg, spec, scfg)
    if args.log:
        write_log(res.log, args.log)
    print(json.dumps({"best_value": res.best_value, "queries": len(res.log), "best": res.best.to_dict()}))
    return EXIT_OK


# ---- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="narformer", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("encode", help="tokenize an architecture")
    s.add_argument("arch")
    s.add_argument("--spec", help="JSON encoder spec")
    s.add_argument("--format", choices=("json", "bin"), default="json")
    s.add_argument("--out")
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("augment", help="sample relabelings of an architecture")
    s.add_argument("arch")
    s.add_argument("--mode", choices=("flow", "iso", "isomorphic"), default="flow")
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("synth", help="write a synthetic benchmark as JSONL")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--max-nodes", type=int, default=8)
    s.add_argument("--vocab-size", type=int, default=5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="fit a predictor")
    s.add_argument("--data", required=True)
    s.add_argument("--config", help="JSON with optional encoder/model/train sections")
    s.add_argument("--out", required=True)
    s.add_argument("--history", help="CSV path for the per-step history")
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--aug-mode", choices=("none", "flow", "iso", "isomorphic"))
    s.add_argument("--task", choices=("accuracy", "latency"))
    s.add_argument("--lambda1", type=float)
    s.add_argument("--lambda2", type=float)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="predict the target of architectures")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--arch", required=True, action="append")
    s.add_argument("--spec", help="JSON encoder spec (must match the checkpoint)")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", help="score a checkpoint on a dataset")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--metric", choices=("tau", "mape", "acc"), default="tau")
    s.add_argument("--delta", type=float, default=0.1)
    s.add_argument("--split", choices=("all", "train", "val", "test"), default="all")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("search", help="predictor-guided evolutionary search")
    s.add_argument("--space", default="random", help="'random', 'table' or a JSON space config")
    s.add_argument("--oracle", required=True, help="synthetic:<seed> or table:<path>")
    s.add_argument("--budget", type=int)
    s.add_argument("--init-size", type=int)
    s.add_argument("--topk", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--config", help="JSON with optional encoder/model/search sections")
    s.add_argument("--log", help="JSONL path for the query log")
    s.set_defaults(func=cmd_search)
    return p


def _setup_logging() -> None:
    level = os.environ.get("NAR_LOG", "error").lower()
    levels = {"error": logging.ERROR, "warning": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    limits = threadpool_limits(args.threads) if args.threads else contextlib.nullcontext()
    try:
        with limits:
            return args.func(args)
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigMismatchError as exc:
        print(f"config mismatch: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (GraphError, DataError, CheckpointError, SearchError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
