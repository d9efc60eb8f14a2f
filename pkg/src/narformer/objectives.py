"""Training losses and evaluation metrics.

Losses accept Tensors or array-likes and return scalar Tensors so they can be
differentiated; metrics work on plain arrays and return floats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.1
    lambda2: float = 0.5

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")


def _pair(pred, target, name):
    pred, target = ad.as_tensor(pred), ad.as_tensor(target)
    if pred.shape != target.shape or pred.ndim != 1:
        raise ShapeError(f"{name}: length mismatch {pred.shape} vs {target.shape}")
    return pred, target


def mse_loss(pred, target, reduction: str = "sum") -> Tensor:
    pred, target = _pair(pred, target, "mse_loss")
    sq = ad.square(ad.sub(pred, target))
    return ad.mean(sq) if reduction == "mean" else ad.tsum(sq)


def sr_loss(pred, target, shuffle, form: str = "abs") -> Tensor:
    """Ranking loss on differences between each sample and a shuffled partner.

    ``form`` is "abs" (per-term absolute value), "square", or "signed"
    (the bare sum, which can be negative).
    """
    pred, target = _pair(pred, target, "sr_loss")
    shuffle = np.asarray(shuffle, dtype=np.int64)
    if shuffle.shape != pred.shape:
        raise ShapeError("sr_loss: shuffle length differs from prediction length")
    dp = ad.sub(ad.take(pred, shuffle), pred)
    dt = ad.sub(ad.take(target, shuffle), target)
    term = ad.sub(dp, dt)
    if form == "abs":
        term = ad.tabs(term)
    elif form == "square":
        term = ad.square(term)
    elif form != "signed":
        raise ValueError(f"unknown sr_loss form {form!r}")
    return ad.tsum(term)


def ac_loss(pred, pred_aug) -> Tensor:
    pred, pred_aug = _pair(pred, pred_aug, "ac_loss")
    return ad.tsum(ad.tabs(ad.sub(pred, pred_aug)))


@dataclass
class LossTerms:
    total: Tensor
    mse: float
    sr: float
    ac: float


def total_loss(
    pred,
    target,
    weights: LossWeights,
    shuffle=None,
    pred_orig=None,
    pred_aug=None,
    sr_form: str = "abs",
    reduction: str = "sum",
) -> LossTerms:
    """MSE + lambda1 * SR + lambda2 * AC.

    ``pred``/``target`` already include augmented samples; ``pred_orig`` and
    ``pred_aug`` are the paired predictions for the consistency term.  The AC
    term is dropped when no pairs are given.
    """
    pred, target = _pair(pred, target, "total_loss")
    mse = mse_loss(pred, target, reduction)
    total = mse
    sr_val = ac_val = 0.0
    if weights.lambda1 > 0:
        if shuffle is None:
            raise ValueError("sr term needs a shuffle permutation")
        sr = sr_loss(pred, target, shuffle, sr_form)
        sr_val = sr.item()
        total = ad.add(total, ad.mul(sr, weights.lambda1))
    has_pairs = pred_orig is not None and pred_aug is not None and ad.as_tensor(pred_orig).shape[0] > 0
    if weights.lambda2 > 0 and has_pairs:
        ac = ac_loss(pred_orig, pred_aug)
        ac_val = ac.item()
        total = ad.add(total, ad.mul(ac, weights.lambda2))
    return LossTerms(total, mse.item(), sr_val, ac_val)


# ---- metrics ----------------------------------------------------------------


def kendall_tau(a, b) -> float:
    """Tie-corrected Kendall rank correlation (tau-b) over all pairs."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError("kendall_tau: length mismatch")
    m = a.size
    if m < 2:
        raise ValueError("kendall_tau needs at least 2 samples")
    iu, ju = np.triu_indices(m, k=1)
    sa = np.sign(a[ju] - a[iu])
    sb = np.sign(b[ju] - b[iu])
    n_a = np.count_nonzero(sa)
    n_b = np.count_nonzero(sb)
    if n_a == 0 or n_b == 0:
        raise ValueError("kendall_tau is undefined for a constant input")
    return float(np.sum(sa * sb) / np.sqrt(float(n_a) * float(n_b)))


def _check_positive(target):
    if np.any(target <= 0):
        raise ValueError("targets must be strictly positive")


def mape(pred, target) -> float:
    """Mean absolute percentage error, in percent."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError("mape: length mismatch")
    _check_positive(target)
    return float(np.mean(np.abs(pred - target) / target) * 100.0)


def acc_delta(pred, target, delta: float) -> float:
    """Fraction of samples with relative error at most ``delta`` (inclusive)."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError("acc_delta: length mismatch")
    _check_positive(target)
    rel = np.abs(pred - target) / target
    # tolerate representation error at the boundary, e.g. |110-100|/100
    return float(np.mean(rel <= delta * (1 + 1e-12)))
