"""Finite-difference verification of analytic gradients.

Every differentiable operation and every loss has a registered check case.
A case builds double-precision inputs, defines a scalar forward function,
and the runner compares the tape's gradients against central finite
differences element by element.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses as losses_mod
from . import nn
from .model import GaitModel, ModelConfig
from .tensor import (Tensor, concat, gather_rows, mean_axis, narrow, reshape,
                     sum_all)

DEFAULT_H = 1e-5
DEFAULT_TOL = 1e-3
MODEL_TOTAL_TOL = 1e-2  # end-to-end check through the full network


def finite_difference(forward: Callable[[], float], x: np.ndarray,
                      h: float = DEFAULT_H) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. ``x``.

    ``x`` is perturbed in place and restored; ``forward`` must recompute the
    scalar from the current contents of ``x``.
    """
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = forward()
        flat[i] = orig - h
        fm = forward()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise |a-n| / max(|a|+|n|, 1e-6)."""
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom))


@dataclass
class CheckCase:
    """Inputs to differentiate against and a graph-building forward."""

    inputs: dict[str, Tensor]
    forward: Callable[[], Tensor]


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float
    n_elements: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def run_case(case: CheckCase, h: float = DEFAULT_H,
             corrupt: bool = False) -> tuple[float, int]:
    """Compare analytic and numeric gradients for one case."""
    for t in case.inputs.values():
        t.grad = None
    loss = case.forward()
    loss.backward()
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in case.inputs.items()}
    if corrupt:
        for g in analytic.values():
            g += 0.05

    worst = 0.0
    n_elems = 0
    for k, t in case.inputs.items():
        numeric = finite_difference(lambda: case.forward().item(), t.data, h)
        worst = max(worst, relative_error(analytic[k], numeric))
        n_elems += t.data.size
    return worst, n_elems


def _proj(rng: np.random.Generator, shape) -> np.ndarray:
    """Fixed random projection; turns an op output into a scalar that is
    sensitive to permutation/transposition mistakes."""
    return rng.standard_normal(shape)


# -- per-op cases ---------------------------------------------------------------


def _case_conv2d(rng):
    x = Tensor(rng.standard_normal((1, 2, 6, 6)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.5, requires_grad=True)
    b = Tensor(rng.standard_normal(3) * 0.1, requires_grad=True)
    r = Tensor(_proj(rng, (1, 3, 3, 3)))

    def fwd():
        return sum_all(nn.conv2d(x, w, b, stride=2, padding=1) * r)

    return CheckCase({"input": x, "kernel": w, "bias": b}, fwd)


def _case_conv2d_transpose(rng):
    x = Tensor(rng.standard_normal((1, 3, 3, 3)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.5, requires_grad=True)
    b = Tensor(rng.standard_normal(2) * 0.1, requires_grad=True)
    r = Tensor(_proj(rng, (1, 2, 6, 6)))

    def fwd():
        return sum_all(nn.conv2d_transpose(x, w, b, stride=2, padding=1,
                                           output_padding=1) * r)

    return CheckCase({"input": x, "kernel": w, "bias": b}, fwd)


def _case_batch_norm_train(rng):
    x = Tensor(rng.standard_normal((4, 3, 2, 2)) * 2.0 + 1.0, requires_grad=True)
    gamma = Tensor(rng.uniform(0.5, 1.5, 3), requires_grad=True)
    beta = Tensor(rng.standard_normal(3) * 0.3, requires_grad=True)
    r = Tensor(_proj(rng, (4, 3, 2, 2)))

    def fwd():
        rm, rv = np.zeros(3), np.ones(3)  # fresh buffers: stats must not leak
        return sum_all(nn.batch_norm(x, gamma, beta, rm, rv, training=True) * r)

    return CheckCase({"input": x, "gamma": gamma, "beta": beta}, fwd)


def _case_batch_norm_eval(rng):
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    gamma = Tensor(rng.uniform(0.5, 1.5, 4), requires_grad=True)
    beta = Tensor(rng.standard_normal(4) * 0.3, requires_grad=True)
    rm = rng.standard_normal(4)
    rv = rng.uniform(0.5, 2.0, 4)
    r = Tensor(_proj(rng, (3, 4)))

    def fwd():
        return sum_all(nn.batch_norm(x, gamma, beta, rm, rv, training=False) * r)

    return CheckCase({"input": x, "gamma": gamma, "beta": beta}, fwd)


def _away_from_kink(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    x = np.where(np.abs(x) < margin, x + np.sign(x + 1e-12) * margin, x)
    return x


def _case_leaky_relu(rng):
    from .tensor import leaky_relu as lrelu
    x = Tensor(_away_from_kink(rng, (4, 5)), requires_grad=True)
    r = Tensor(_proj(rng, (4, 5)))
    return CheckCase({"input": x}, lambda: sum_all(lrelu(x, 0.2) * r))


def _case_sigmoid(rng):
    from .tensor import sigmoid as sig
    x = Tensor(rng.standard_normal((4, 5)) * 2.0, requires_grad=True)
    r = Tensor(_proj(rng, (4, 5)))
    return CheckCase({"input": x}, lambda: sum_all(sig(x) * r))


def _case_tanh(rng):
    from .tensor import tanh as th
    x = Tensor(rng.standard_normal((4, 5)) * 2.0, requires_grad=True)
    r = Tensor(_proj(rng, (4, 5)))
    return CheckCase({"input": x}, lambda: sum_all(th(x) * r))


def _case_linear(rng):
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 5)) * 0.5, requires_grad=True)
    b = Tensor(rng.standard_normal(5) * 0.1, requires_grad=True)
    r = Tensor(_proj(rng, (3, 5)))
    return CheckCase({"input": x, "weight": w, "bias": b},
                     lambda: sum_all(nn.linear(x, w, b) * r))


def _case_lstm_step(rng):
    """Three unrolled steps through one cell."""
    d, hdim, n = 3, 4, 2
    xs = [Tensor(rng.standard_normal((n, d)), requires_grad=True) for _ in range(3)]
    wx = Tensor(rng.standard_normal((d, 4 * hdim)) * 0.4, requires_grad=True)
    wh = Tensor(rng.standard_normal((hdim, 4 * hdim)) * 0.4, requires_grad=True)
    b = Tensor(rng.standard_normal(4 * hdim) * 0.2, requires_grad=True)
    r = Tensor(_proj(rng, (n, hdim)))

    def fwd():
        h = Tensor(np.zeros((n, hdim)))
        c = Tensor(np.zeros((n, hdim)))
        for x in xs:
            h, c = nn.lstm_step(x, h, c, wx, wh, b)
        return sum_all(h * r)

    inputs = {f"x{t}": x for t, x in enumerate(xs)}
    inputs.update({"wx": wx, "wh": wh, "b": b})
    return CheckCase(inputs, fwd)


def _case_softmax_cross_entropy(rng):
    logits = Tensor(rng.standard_normal((4, 6)) * 2.0, requires_grad=True)
    labels = rng.integers(0, 6, size=4)
    return CheckCase({"logits": logits},
                     lambda: nn.softmax_cross_entropy(logits, labels))


def _case_structural(rng):
    """reshape/narrow/concat/gather/mean_axis composed into one graph."""
    x = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
    y = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    idx = rng.integers(0, 4, size=5)
    r = Tensor(_proj(rng, (5, 4)))

    def fwd():
        a = narrow(x, 1, 1, 4)                      # (4,4)
        b = concat([a, y], axis=1)                  # (4,6)
        c = reshape(b, (4, 3, 2))
        d = mean_axis(c, 2)                         # (4,3)
        e = concat([d, narrow(x, 1, 0, 1)], axis=1)  # (4,4)
        return sum_all(gather_rows(e, idx) * r)

    return CheckCase({"x": x, "y": y}, fwd)


# -- loss cases -----------------------------------------------------------------


def _tiny_model(rng) -> GaitModel:
    cfg = ModelConfig(d_a=6, d_g=4, channels=(4, 6, 8, 8), hidden=8,
                      n_classes=5)
    return GaitModel(cfg, np.random.default_rng(int(rng.integers(1 << 31))),
                     dtype=np.float64)


def _case_loss_xrecon(rng):
    model = _tiny_model(rng)
    f_a = Tensor(rng.standard_normal((3, 6)) * 0.5, requires_grad=True)
    f_g = Tensor(rng.standard_normal((3, 4)) * 0.5, requires_grad=True)
    targets = Tensor(rng.uniform(0, 1, (3, 3, 64, 32)))
    dec_w = model.params["dec.head.w"]
    dec_w.requires_grad = True

    def fwd():
        return losses_mod.cross_reconstruction_loss(f_a, f_g, targets, model,
                                                    training=True)

    return CheckCase({"f_a": f_a, "f_g": f_g, "dec.head.w.sample": dec_w}, fwd)


def _case_loss_gait_sim(rng):
    s1 = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
    s2 = Tensor(rng.standard_normal((7, 4)), requires_grad=True)
    return CheckCase({"seq1": s1, "seq2": s2},
                     lambda: losses_mod.gait_similarity_loss(s1, s2))


def _case_loss_id_single(rng):
    h = [Tensor(rng.standard_normal((2, 4)), requires_grad=True) for _ in range(3)]
    w = Tensor(rng.standard_normal((4, 5)) * 0.5, requires_grad=True)
    b = Tensor(rng.standard_normal(5) * 0.1, requires_grad=True)
    labels = rng.integers(0, 5, size=2)
    inputs = {f"h{t}": ht for t, ht in enumerate(h)}
    inputs.update({"cls.w": w, "cls.b": b})
    return CheckCase(inputs,
                     lambda: losses_mod.id_single_loss(h, labels, w, b))


def _case_loss_id_avg(rng):
    h = [Tensor(rng.standard_normal((2, 4)), requires_grad=True) for _ in range(3)]
    w = Tensor(rng.standard_normal((4, 5)) * 0.5, requires_grad=True)
    b = Tensor(rng.standard_normal(5) * 0.1, requires_grad=True)
    labels = rng.integers(0, 5, size=2)
    inputs = {f"h{t}": ht for t, ht in enumerate(h)}
    inputs.update({"cls.w": w, "cls.b": b})
    return CheckCase(inputs,
                     lambda: losses_mod.id_avg_loss(h, labels, w, b))


def _case_loss_id_inc_avg(rng):
    h = [Tensor(rng.standard_normal((2, 4)), requires_grad=True) for _ in range(3)]
    w = Tensor(rng.standard_normal((4, 5)) * 0.5, requires_grad=True)
    b = Tensor(rng.standard_normal(5) * 0.1, requires_grad=True)
    labels = rng.integers(0, 5, size=2)
    inputs = {f"h{t}": ht for t, ht in enumerate(h)}
    inputs.update({"cls.w": w, "cls.b": b})
    return CheckCase(
        inputs,
        lambda: losses_mod.id_inc_avg_loss(h, labels, w, b,
                                           losses_mod.quadratic_weights))


def _case_loss_total(rng):
    a = Tensor(np.asarray(rng.uniform(0.5, 2.0)), requires_grad=True)
    b = Tensor(np.asarray(rng.uniform(0.5, 2.0)), requires_grad=True)
    c = Tensor(np.asarray(rng.uniform(0.5, 2.0)), requires_grad=True)
    weights = losses_mod.LossWeights()
    return CheckCase({"id": a, "xrecon": b, "gaitsim": c},
                     lambda: losses_mod.total_loss(a, b, c, weights))


def _case_model_total(rng):
    """Total loss through the full (tiny) network on a 2-clip micro-batch,
    checked against a random sample of encoder weights."""
    model = _tiny_model(rng)
    frames = rng.uniform(0, 1, (2, 6, 3, 64, 32))  # 2 clips x 6 frames
    labels = np.array([0, 1])
    conds = ["NM", "CL"]
    subjects = np.array([0, 0])  # same subject, two conditions: gait-sim active
    for p in model.params.values():
        p.requires_grad = False
    checked = {name: model.params[name] for name in
               ["enc.conv1.w", "enc.head.w", "lstm.l1.wx", "cls.w"]}
    for t in checked.values():
        t.requires_grad = True
    pair_rng_seed = int(rng.integers(1 << 31))

    def fwd():
        return losses_mod.batch_total_loss(
            model, frames, labels, subjects, conds,
            losses_mod.LossWeights(), np.random.default_rng(pair_rng_seed),
            n_cross_pairs=2)

    return CheckCase(checked, fwd)


OP_CASES: dict[str, Callable] = {
    "conv2d": _case_conv2d,
    "conv2d_transpose": _case_conv2d_transpose,
    "batch_norm_train": _case_batch_norm_train,
    "batch_norm_eval": _case_batch_norm_eval,
    "leaky_relu": _case_leaky_relu,
    "sigmoid": _case_sigmoid,
    "tanh": _case_tanh,
    "linear": _case_linear,
    "lstm_step": _case_lstm_step,
    "softmax_cross_entropy": _case_softmax_cross_entropy,
    "structural": _case_structural,
}

LOSS_CASES: dict[str, Callable] = {
    "loss_cross_reconstruction": _case_loss_xrecon,
    "loss_gait_similarity": _case_loss_gait_sim,
    "loss_id_single": _case_loss_id_single,
    "loss_id_avg": _case_loss_id_avg,
    "loss_id_inc_avg": _case_loss_id_inc_avg,
    "loss_total": _case_loss_total,
    "model_total": _case_model_total,
}

ALL_CASES = {**OP_CASES, **LOSS_CASES}


def run_all(seed: int = 0, instances_per_op: int = 20,
            corrupt: str | None = None) -> list[CheckResult]:
    """Run the whole registry.

    Primitive ops run ``instances_per_op`` random instances each; loss cases
    run a smaller fixed number since they are heavier.  ``corrupt`` names a
    case whose analytic gradients are deliberately perturbed (testing hook
    for the failure-reporting path).
    """
    results = []
    for name, factory in ALL_CASES.items():
        reps = instances_per_op if name in OP_CASES else 3
        tol = MODEL_TOTAL_TOL if name == "model_total" else DEFAULT_TOL
        worst, total_elems = 0.0, 0
        t0 = time.perf_counter()
        for i in range(reps):
            rng = np.random.default_rng((seed, hash(name) & 0xFFFF, i))
            case = factory(rng)
            err, n = run_case(case, corrupt=(name == corrupt))
            worst = max(worst, err)
            total_elems += n
        results.append(CheckResult(name, worst, tol, total_elems,
                                   time.perf_counter() - t0))
    return results
