"""Neural-network primitives built on the autodiff engine.

Convolutions run as im2col + GEMM; the transposed convolution is implemented
as the exact adjoint of ``conv2d`` (same column machinery, scatter instead of
gather), which makes ``<conv2d(x), y> == <x, conv2d_transpose(y)>`` hold to
floating-point reassociation error.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractViolation, DegenerateBatchError
from .tensor import Tensor, _accum, matmul, add, mul, sigmoid, tanh, narrow


# -- im2col helpers -----------------------------------------------------------


def _out_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def _im2col(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(N,C,Hp,Wp) -> (N*Ho*Wo, C*k*k) patch matrix."""
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return np.ascontiguousarray(cols)


def _col2im(cols: np.ndarray, n: int, c: int, hp: int, wp: int, k: int,
            stride: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches back onto a canvas."""
    canvas = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    patches = cols.reshape(n, ho, wo, c, k, k).transpose(0, 3, 1, 2, 4, 5)
    for i in range(k):
        for j in range(k):
            canvas[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                patches[:, :, :, :, i, j]
    return canvas


def _pad_hw(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


# -- convolution --------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Cross-correlation of (N,C,H,W) with (F,C,k,k) kernels."""
    if stride < 1:
        raise ContractViolation(f"conv2d stride must be >= 1, got {stride}")
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ContractViolation("conv2d expects 4-D input and kernel")
    n, c, h, w = x.data.shape
    f, ck, k, k2 = weight.data.shape
    if k != k2:
        raise ContractViolation("conv2d kernels must be square")
    if ck != c:
        raise ContractViolation(
            f"conv2d channel mismatch: input has {c}, kernel expects {ck}")
    ho, wo = _out_size(h, k, stride, padding), _out_size(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ContractViolation("conv2d output would be empty")

    cols = _im2col(_pad_hw(x.data, padding), k, stride)
    wmat = weight.data.reshape(f, c * k * k)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)

    def bw(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, f)
        if weight.requires_grad:
            _accum(weight, (gmat.T @ cols).reshape(weight.data.shape))
        if bias is not None and bias.requires_grad:
            _accum(bias, gmat.sum(axis=0))
        if x.requires_grad:
            dcols = gmat @ wmat
            dxp = _col2im(dcols, n, c, h + 2 * padding, w + 2 * padding,
                          k, stride, ho, wo)
            if padding:
                dxp = dxp[:, :, padding:padding + h, padding:padding + w]
            _accum(x, dxp)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._node(out, parents, bw)


def conv2d_transpose(x: Tensor, weight: Tensor, bias: Tensor | None,
                     stride: int = 1, padding: int = 0,
                     output_padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d`: (N,F,H,W) x (F,C,k,k) -> (N,C,Ho,Wo)
    with Ho = (H-1)*stride - 2*padding + k + output_padding."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ContractViolation("conv2d_transpose expects 4-D input and kernel")
    n, fin, h, w = x.data.shape
    f, c, k, k2 = weight.data.shape
    if k != k2:
        raise ContractViolation("conv2d_transpose kernels must be square")
    if fin != f:
        raise ContractViolation(
            f"conv2d_transpose channel mismatch: input has {fin}, kernel expects {f}")
    if not 0 <= output_padding < stride:
        raise ContractViolation("output_padding must lie in [0, stride)")
    ho = (h - 1) * stride - 2 * padding + k + output_padding
    wo = (w - 1) * stride - 2 * padding + k + output_padding

    xmat = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(-1, f)
    wmat = weight.data.reshape(f, c * k * k)
    cols = xmat @ wmat
    canvas = _col2im(cols, n, c, ho + 2 * padding, wo + 2 * padding,
                     k, stride, h, w)
    out = canvas[:, :, padding:padding + ho, padding:padding + wo]
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def bw(g):
        gp = np.zeros((n, c, ho + 2 * padding, wo + 2 * padding), dtype=g.dtype)
        gp[:, :, padding:padding + ho, padding:padding + wo] = g
        gcols = _im2col(gp, k, stride)
        if x.requires_grad:
            _accum(x, (gcols @ wmat.T).reshape(n, h, w, f).transpose(0, 3, 1, 2))
        if weight.requires_grad:
            _accum(weight, (xmat.T @ gcols).reshape(weight.data.shape))
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2, 3)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._node(np.ascontiguousarray(out), parents, bw)


# -- batch normalization --------------------------------------------------------


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-channel normalization for (N,C) or (N,C,H,W) inputs.

    Train mode normalizes with batch statistics and updates the running
    buffers in place (exponential moving average).  Eval mode reads the
    running buffers only and never mutates state.
    """
    nd = x.data.ndim
    if nd not in (2, 4):
        raise ContractViolation("batch_norm expects (N,C) or (N,C,H,W)")
    axes = (0,) if nd == 2 else (0, 2, 3)
    cshape = (1, -1) if nd == 2 else (1, -1, 1, 1)

    if training:
        if x.data.shape[0] < 2:
            raise DegenerateBatchError(
                "batch_norm in train mode needs a batch of at least 2")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu, var = running_mean, running_var

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(cshape)) * inv.reshape(cshape)
    out = gamma.data.reshape(cshape) * xhat + beta.data.reshape(cshape)
    m = int(np.prod([x.data.shape[a] for a in axes]))  # samples per channel

    def bw(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=axes))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=axes))
        if x.requires_grad:
            gi = g * gamma.data.reshape(cshape)
            if training:
                # gradient through the batch statistics
                s1 = gi.sum(axis=axes).reshape(cshape)
                s2 = (gi * xhat).sum(axis=axes).reshape(cshape)
                dx = (gi - s1 / m - xhat * s2 / m) * inv.reshape(cshape)
            else:
                dx = gi * inv.reshape(cshape)
            _accum(x, dx)

    return Tensor._node(out, (x, gamma, beta), bw)


# -- linear & classifier --------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map (N,D) @ (D,K) + (K,)."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ContractViolation("linear expects 2-D input and weight")
    if x.data.shape[1] != weight.data.shape[0]:
        raise ContractViolation(
            f"linear dim mismatch: input {x.data.shape} vs weight {weight.data.shape}")
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-softmax of the true class; max-stabilized."""
    labels = np.asarray(labels)
    n, k = logits.data.shape
    if labels.shape != (n,):
        raise ContractViolation("labels must be a vector matching the batch")
    if labels.min() < 0 or labels.max() >= k:
        raise ContractViolation(
            f"labels must lie in [0,{k}), got range [{labels.min()},{labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    nll = -(z[np.arange(n), labels] - np.log(ez.sum(axis=1)))
    data = np.asarray(nll.mean())

    def bw(g):
        if logits.requires_grad:
            grad = p.copy()
            grad[np.arange(n), labels] -= 1.0
            _accum(logits, grad * (g / n))

    return Tensor._node(data, (logits,), bw)


# -- LSTM -----------------------------------------------------------------------


def lstm_step(x: Tensor, h: Tensor, c: Tensor, wx: Tensor, wh: Tensor,
              b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM cell step.

    Gate layout along the 4H axis is [input, forget, candidate, output].
    Returns the new hidden and cell states.
    """
    hidden = h.data.shape[1]
    if wx.data.shape[1] != 4 * hidden or wh.data.shape != (hidden, 4 * hidden):
        raise ContractViolation("lstm_step parameter shapes inconsistent with hidden size")
    gates = add(add(matmul(x, wx), matmul(h, wh)), b)
    i = sigmoid(narrow(gates, 1, 0, hidden))
    f = sigmoid(narrow(gates, 1, hidden, hidden))
    g = tanh(narrow(gates, 1, 2 * hidden, hidden))
    o = sigmoid(narrow(gates, 1, 3 * hidden, hidden))
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new


# -- initialization --------------------------------------------------------------


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...],
                   fan_in: int, dtype=np.float32) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
