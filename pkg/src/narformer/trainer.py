"""Training loop, evaluation and a predictor bundle for downstream use."""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .arch_graph import ArchGraph
from .augment import PartnerSampler
from .checkpoint import load_checkpoint, load_meta, save_checkpoint
from .data import DataError, Dataset, Item, TargetTransform, normalize_targets
from .model import ModelConfig, collate, copy_params, forward_batch, init_params, param_shapes, predict
from .objectives import LossWeights, acc_delta, kendall_tau, mape, total_loss
from .optim import Adam
from .tokenizer import EncoderSpec, TokenSequence, tokenize

log = logging.getLogger(__name__)


class TrainingDiverged(ad.NonFiniteError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-4
    seed: int = 0
    task: str = "accuracy"  # "accuracy" (min-max targets) or "latency" (log targets)
    normalize_targets: bool = True
    aug_mode: str = "none"  # "none", "flow" or "isomorphic"
    aug_per_graph: int = 1
    lambda1: float = 0.1
    lambda2: float = 0.5
    sr_form: str = "abs"
    loss_reduction: str = "sum"
    eval_metric: str | None = None  # defaults to tau for accuracy, mape for latency
    lr_schedule: str = "constant"  # or "cosine"
    warmup_steps: int = 0
    init_seed: int | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.task not in ("accuracy", "latency"):
            raise ValueError("task must be 'accuracy' or 'latency'")
        if self.aug_mode == "iso":
            self.aug_mode = "isomorphic"
        if self.aug_mode not in ("none", "flow", "isomorphic"):
            raise ValueError(f"unknown aug_mode {self.aug_mode!r}")
        if self.eval_metric is None:
            self.eval_metric = "tau" if self.task == "accuracy" else "mape"
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError("lr_schedule must be 'constant' or 'cosine'")

    @property
    def weights(self) -> LossWeights:
        lam2 = self.lambda2 if self.aug_mode != "none" else 0.0
        return LossWeights(self.lambda1, lam2)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Predictor:
    """Trained parameters plus everything needed to predict in target units."""

    params: dict
    model_cfg: ModelConfig
    spec: EncoderSpec
    transform: TargetTransform = field(default_factory=TargetTransform)

    def tokens(self, graphs: Sequence[ArchGraph]) -> list[TokenSequence]:
        return [tokenize(g, self.spec) for g in graphs]

    def predict_raw(self, graphs: Sequence[ArchGraph], batch_size: int = 64) -> np.ndarray:
        """Predictions in the model's (normalized) output space."""
        return predict(self.tokens(graphs), self.params, self.model_cfg, batch_size)

    def predict(self, graphs: Sequence[ArchGraph], batch_size: int = 64) -> np.ndarray:
        return self.transform.inverse(self.predict_raw(graphs, batch_size))

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        meta = {
            "model": self.model_cfg.to_dict(),
            "encoder": self.spec.to_dict(),
            "target_transform": self.transform.to_dict(),
        }
        if extra:
            meta.update(extra)
        save_checkpoint(self.params, path, meta)

    @classmethod
    def load(cls, path: str | Path) -> "Predictor":
        meta = load_meta(path)
        cfg = ModelConfig.from_dict(meta["model"])
        spec = EncoderSpec.from_dict(meta["encoder"])
        params = load_checkpoint(path, param_shapes(cfg))
        tf = TargetTransform.from_dict(meta.get("target_transform", {"kind": "identity"}))
        return cls(params, cfg, spec, tf)


@dataclass
class FitResult:
    predictor: Predictor
    history: list[dict]
    best_val: float | None
    best_epoch: int


def _lr_at(cfg: TrainConfig, step: int, total_steps: int) -> float:
    lr = cfg.lr
    if cfg.warmup_steps and step < cfg.warmup_steps:
        return lr * (step + 1) / cfg.warmup_steps
    if cfg.lr_schedule == "cosine":
        span = max(1, total_steps - cfg.warmup_steps)
        frac = min(1.0, (step - cfg.warmup_steps) / span)
        return lr * 0.5 * (1 + math.cos(math.pi * frac))
    return lr


def _metric_better(metric: str, new: float, old: float | None) -> bool:
    if old is None:
        return True
    return new > old if metric == "tau" else new < old


def evaluate(
    predictor: Predictor,
    items: Sequence[Item],
    metric: str = "tau",
    delta: float = 0.1,
    batch_size: int = 64,
) -> float:
    """Tau on normalized outputs, or MAPE / Acc(delta) in original units.

    ``items`` carry targets in original units.
    """
    if not items:
        raise DataError("cannot evaluate on an empty split")
    graphs = [it.graph for it in items]
    targets = np.array([it.target for it in items])
    if metric == "tau":
        return kendall_tau(predictor.predict_raw(graphs, batch_size), targets)
    pred = predictor.predict(graphs, batch_size)
    if metric == "mape":
        return mape(pred, targets)
    if metric in ("acc", "acc_delta"):
        return acc_delta(pred, targets, delta)
    raise ValueError(f"unknown metric {metric!r}")


def fit(
    dataset: Dataset,
    model_cfg: ModelConfig,
    spec: EncoderSpec,
    cfg: TrainConfig,
    params: dict | None = None,
    transform: TargetTransform | None = None,
) -> FitResult:
    """Train on the train split, selecting the best epoch on the val split.

    ``dataset`` targets are in original units.  Passing ``params`` warm-starts
    from them (they are copied); ``transform`` overrides the normalization.
    """
    if model_cfg.D != spec.D:
        raise ValueError(f"model width {model_cfg.D} != encoder width {spec.D}")
    train_items = dataset.split("train")
    if not train_items:
        raise DataError("training needs a non-empty train split")
    val_items = dataset.split("val")

    if transform is None:
        if cfg.normalize_targets:
            kind = "minmax" if cfg.task == "accuracy" else "log"
            _, transform = normalize_targets(dataset, kind)
        else:
            transform = TargetTransform()
    y_train = transform.forward([it.target for it in train_items])

    rng = np.random.default_rng(cfg.seed)
    init_seed = cfg.seed if cfg.init_seed is None else cfg.init_seed
    params = copy_params(params) if params is not None else init_params(model_cfg, init_seed)
    dtype = next(iter(params.values())).dtype
    opt = Adam(list(params.values()), lr=cfg.lr)
    weights = cfg.weights
    sampler = PartnerSampler(cfg.aug_mode) if cfg.aug_mode != "none" else None

    train_tokens = [tokenize(it.graph, spec) for it in train_items]
    predictor = Predictor(params, model_cfg, spec, transform)
    n = len(train_items)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs

    history: list[dict] = []
    best_val: float | None = None
    best_params = copy_params(params)
    best_epoch = 0
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            seqs = [train_tokens[i] for i in idx]
            targets = list(y_train[idx])
            orig_pos, aug_pos = [], []
            if sampler is not None:
                for pos, i in enumerate(idx):
                    for _ in range(cfg.aug_per_graph):
                        partner = sampler.sample(int(i), train_items[i].graph, rng)
                        if partner is None:
                            break
                        orig_pos.append(pos)
                        aug_pos.append(len(seqs))
                        seqs.append(tokenize(partner, spec))
                        targets.append(y_train[i])
            batch = collate(seqs, dtype=dtype)
            pred = forward_batch(batch, params, model_cfg)
            target_arr = np.asarray(targets, dtype=dtype)
            shuffle = rng.permutation(len(seqs))
            pred_orig = ad.take(pred, orig_pos) if aug_pos else None
            pred_aug = ad.take(pred, aug_pos) if aug_pos else None
            terms = total_loss(
                pred,
                target_arr,
                weights,
                shuffle=shuffle,
                pred_orig=pred_orig,
                pred_aug=pred_aug,
                sr_form=cfg.sr_form,
                reduction=cfg.loss_reduction,
            )
            loss_val = terms.total.item()
            if not math.isfinite(loss_val):
                raise TrainingDiverged(f"non-finite loss at step {step} (epoch {epoch})")
            opt.zero_grad()
            ad.backward(terms.total)
            opt.step(_lr_at(cfg, step, total_steps))
            history.append(
                {
                    "step": step,
                    "epoch": epoch,
                    "loss": loss_val,
                    "mse": terms.mse,
                    "sr": terms.sr,
                    "ac": terms.ac,
                    "val_metric": None,
                }
            )
            step += 1

        if val_items:
            try:
                val = evaluate(predictor, val_items, cfg.eval_metric)
            except ValueError as exc:
                log.info("epoch %d: validation metric undefined (%s)", epoch, exc)
                val = None
            history[-1]["val_metric"] = val
            log.info("epoch %d loss %.5f val %s=%s", epoch, history[-1]["loss"], cfg.eval_metric, val)
            if val is not None and _metric_better(cfg.eval_metric, val, best_val):
                best_val, best_epoch = val, epoch
                best_params = copy_params(params)
        else:
            best_params, best_epoch = copy_params(params), epoch

    final = Predictor(best_params, model_cfg, spec, transform)
    return FitResult(final, history, best_val, best_epoch)


def write_history(history: list[dict], path: str | Path) -> None:
    fields = ["step", "epoch", "loss", "mse", "sr", "ac", "val_metric"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in history:
            w.writerow({k: ("" if row[k] is None else row[k]) for k in fields})
