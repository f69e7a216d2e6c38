"""Training objectives: cross reconstruction, gait similarity, identity
classification variants, and their weighted combination.

Squared L2 norms are computed as means over elements, not sums, so the
default weights keep their meaning if feature dims or resolutions change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nn
from .errors import ContractViolation, NaNLossError
from .tensor import (Tensor, gather_rows, mean_all, mean_axis, narrow,
                     reshape)


def quadratic_weights(t: int) -> float:
    """Default per-step weight for the incremental identity loss."""
    return float(t * t)


def uniform_weights(t: int) -> float:
    return 1.0


@dataclass
class LossWeights:
    lambda_r: float = 0.1
    lambda_s: float = 0.005
    weight_fn: Callable[[int], float] = field(default=quadratic_weights)

    def __post_init__(self):
        if self.lambda_r < 0 or self.lambda_s < 0:
            raise ContractViolation("loss weights must be non-negative")
        if self.weight_fn(1) <= 0:
            raise ContractViolation("step weights must be positive for t >= 1")


def sample_cross_pairs(n_frames: int, count: int,
                       rng: np.random.Generator) -> list[tuple[int, int]]:
    """Uniform ordered (appearance step, pose/target step) pairs."""
    if n_frames < 1:
        raise ContractViolation("cannot sample frame pairs from an empty clip")
    return [(int(rng.integers(n_frames)), int(rng.integers(n_frames)))
            for _ in range(count)]


def cross_reconstruction_loss(f_a: Tensor, f_g: Tensor, targets: Tensor,
                              model, training: bool = True) -> Tensor:
    """Mean squared error of decoding row-aligned (appearance, pose) pairs
    against the pose-source frames.

    Rows of ``f_a``/``f_g``/``targets`` are the sampled pairs: row p holds the
    appearance feature of one frame, the pose feature of another frame of the
    same clip, and the pixels of that pose-source frame.
    """
    if f_a.data.shape[0] == 0:
        raise ContractViolation("cross reconstruction needs at least one pair")
    if not (f_a.data.shape[0] == f_g.data.shape[0] == targets.data.shape[0]):
        raise ContractViolation("cross reconstruction rows misaligned")
    recon = model.decode(f_a, f_g, training=training)
    diff = recon - targets
    return mean_all(diff * diff)


def gait_similarity_loss(seq1: Tensor, seq2: Tensor) -> Tensor:
    """Squared distance (mean over dims) between temporal means of two pose
    feature sequences, rows = time steps."""
    if seq1.data.shape[0] == 0 or seq2.data.shape[0] == 0:
        raise ContractViolation("gait similarity needs non-empty sequences")
    if seq1.data.shape[1] != seq2.data.shape[1]:
        raise ContractViolation("pose feature dims differ between sequences")
    m1 = mean_axis(seq1, 0)
    m2 = mean_axis(seq2, 0)
    diff = m1 - m2
    return mean_all(diff * diff)


def _check_h_seq(h_seq: Sequence[Tensor]) -> None:
    if len(h_seq) == 0:
        raise ContractViolation("identity loss needs a non-empty sequence")


def id_single_loss(h_seq: Sequence[Tensor], labels: np.ndarray,
                   cls_w: Tensor, cls_b: Tensor) -> Tensor:
    """Cross entropy of the classifier on the final LSTM output."""
    _check_h_seq(h_seq)
    logits = nn.linear(h_seq[-1], cls_w, cls_b)
    return nn.softmax_cross_entropy(logits, labels)


def id_avg_loss(h_seq: Sequence[Tensor], labels: np.ndarray,
                cls_w: Tensor, cls_b: Tensor) -> Tensor:
    """Cross entropy on the mean of all LSTM outputs."""
    _check_h_seq(h_seq)
    n = len(h_seq)
    mean = h_seq[0] * (1.0 / n)
    for h in h_seq[1:]:
        mean = mean + h * (1.0 / n)
    logits = nn.linear(mean, cls_w, cls_b)
    return nn.softmax_cross_entropy(logits, labels)


def id_inc_avg_loss(h_seq: Sequence[Tensor], labels: np.ndarray,
                    cls_w: Tensor, cls_b: Tensor,
                    weight_fn: Callable[[int], float] = quadratic_weights) -> Tensor:
    """Weighted cross entropy on every running mean of the LSTM outputs:
    (1/n) * sum_t w_t * CE(classifier(mean(h_1..h_t)), label)."""
    _check_h_seq(h_seq)
    n = len(h_seq)
    total = None
    f_gait = None
    for t, h in enumerate(h_seq, start=1):
        f_gait = h if t == 1 else f_gait * ((t - 1) / t) + h * (1.0 / t)
        logits = nn.linear(f_gait, cls_w, cls_b)
        ce = nn.softmax_cross_entropy(logits, labels) * (weight_fn(t) / n)
        total = ce if total is None else total + ce
    return total


def total_loss(id_term: Tensor, xrecon_term: Tensor, gaitsim_term: Tensor,
               weights: LossWeights) -> Tensor:
    """Weighted sum of the three objectives; aborts on non-finite parts."""
    for name, term in (("id", id_term), ("cross_reconstruction", xrecon_term),
                       ("gait_similarity", gaitsim_term)):
        v = float(term.data)
        if not math.isfinite(v):
            raise NaNLossError(name, v)
    return id_term + xrecon_term * weights.lambda_r + gaitsim_term * weights.lambda_s


# -- batched training objective ---------------------------------------------------


def batch_total_loss(model, frames: np.ndarray, labels: np.ndarray,
                     subjects: np.ndarray, conditions: Sequence[str],
                     weights: LossWeights, rng: np.random.Generator,
                     n_cross_pairs: int = 4,
                     id_variant: str = "inc") -> tuple[Tensor, dict[str, float]]:
    """Full objective over a batch of clip windows.

    ``frames`` is (B,T,C,H,W) in [0,1]; each window has a subject label, the
    subject id and a condition tag.  Returns the total loss tensor and the
    float values of each component for logging.
    """
    b, t_len = frames.shape[:2]
    flat = frames.transpose(1, 0, 2, 3, 4).reshape((b * t_len,) + frames.shape[2:])
    x = Tensor(np.ascontiguousarray(flat, dtype=model.dtype))
    f_a, f_g = model.encode(x, training=True)
    fg3 = reshape(f_g, (t_len, b, model.cfg.d_g))
    seq = [reshape(narrow(fg3, 0, t, 1), (b, model.cfg.d_g))
           for t in range(t_len)]
    h_seq, _ = model.aggregate(seq)

    cls_w, cls_b = model.params["cls.w"], model.params["cls.b"]
    if id_variant == "inc":
        id_term = id_inc_avg_loss(h_seq, labels, cls_w, cls_b, weights.weight_fn)
    elif id_variant == "avg":
        id_term = id_avg_loss(h_seq, labels, cls_w, cls_b)
    elif id_variant == "single":
        id_term = id_single_loss(h_seq, labels, cls_w, cls_b)
    else:
        raise ContractViolation(f"unknown id loss variant '{id_variant}'")

    zero = Tensor(np.zeros((), dtype=model.dtype))
    if weights.lambda_r > 0:
        idx_a, idx_g = [], []
        for i in range(b):
            for t1, t2 in sample_cross_pairs(t_len, n_cross_pairs, rng):
                idx_a.append(t1 * b + i)
                idx_g.append(t2 * b + i)
        xrecon_term = cross_reconstruction_loss(
            gather_rows(f_a, idx_a), gather_rows(f_g, idx_g),
            Tensor(flat[idx_g].astype(model.dtype)), model, training=True)
    else:
        xrecon_term = zero

    if weights.lambda_s > 0:
        by_subject: dict[int, list[int]] = {}
        for i, s in enumerate(subjects):
            by_subject.setdefault(int(s), []).append(i)
        pair_losses = []
        for s in sorted(by_subject):
            idxs = by_subject[s]
            cross = [(i, j) for ai, i in enumerate(idxs) for j in idxs[ai + 1:]
                     if conditions[i] != conditions[j]]
            if not cross:
                continue  # single-condition subject: contributes exactly 0
            i, j = cross[int(rng.integers(len(cross)))]
            s1 = reshape(narrow(fg3, 1, i, 1), (t_len, model.cfg.d_g))
            s2 = reshape(narrow(fg3, 1, j, 1), (t_len, model.cfg.d_g))
            pair_losses.append(gait_similarity_loss(s1, s2))
        if pair_losses:
            gaitsim_term = pair_losses[0]
            for pl in pair_losses[1:]:
                gaitsim_term = gaitsim_term + pl
            gaitsim_term = gaitsim_term * (1.0 / len(pair_losses))
        else:
            gaitsim_term = zero
    else:
        gaitsim_term = zero

    total = total_loss(id_term, xrecon_term, gaitsim_term, weights)
    parts = {
        "id": float(id_term.data),
        "xrecon": float(xrecon_term.data),
        "gaitsim": float(gaitsim_term.data),
        "total": float(total.data),
    }
    return total, parts
