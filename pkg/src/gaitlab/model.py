"""Appearance/pose disentangling autoencoder and LSTM gait aggregator.

The encoder is four stride-2 convolutions (BatchNorm + LeakyReLU after each)
followed by a linear head whose output is split by index into an appearance
feature and a pose feature.  The decoder mirrors the encoder with transposed
convolutions and a sigmoid output.  Pose features of a clip are fed to a
stacked LSTM; the running mean of the LSTM outputs is the clip-level gait
feature used for matching.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .errors import ContractViolation
from .tensor import Tensor, concat, narrow, no_grad, reshape


@dataclass
class ModelConfig:
    d_a: int = 128
    d_g: int = 64
    channels: tuple[int, int, int, int] = (32, 64, 128, 256)
    hidden: int = 256
    lstm_layers: int = 3
    n_classes: int = 2
    frame_shape: tuple[int, int, int] = (3, 64, 32)
    kernel: int = 3
    stride: int = 2
    padding: int = 1
    leaky_slope: float = 0.2
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    @property
    def bottleneck_hw(self) -> tuple[int, int]:
        h, w = self.frame_shape[1], self.frame_shape[2]
        for _ in self.channels:
            h = (h + 2 * self.padding - self.kernel) // self.stride + 1
            w = (w + 2 * self.padding - self.kernel) // self.stride + 1
        return h, w

    @property
    def bottleneck_dim(self) -> int:
        h, w = self.bottleneck_hw
        return self.channels[-1] * h * w


class GaitModel:
    """Holds all trainable parameters and the forward passes."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator,
                 dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._build(rng)

    # -- construction -----------------------------------------------------

    def _param(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data.astype(self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def _bn(self, name: str, c: int) -> None:
        self._param(f"{name}.gamma", np.ones(c))
        self._param(f"{name}.beta", np.zeros(c))
        self.buffers[f"{name}.running_mean"] = np.zeros(c, dtype=self.dtype)
        self.buffers[f"{name}.running_var"] = np.ones(c, dtype=self.dtype)

    def _build(self, rng: np.random.Generator) -> None:
        cfg = self.cfg
        k = cfg.kernel
        c_in = cfg.frame_shape[0]
        for i, c_out in enumerate(cfg.channels, start=1):
            self._param(f"enc.conv{i}.w",
                        nn.uniform_fan_in(rng, (c_out, c_in, k, k), c_in * k * k))
            self._param(f"enc.conv{i}.b", np.zeros(c_out))
            self._bn(f"enc.bn{i}", c_out)
            c_in = c_out
        feat = cfg.d_a + cfg.d_g
        self._param("enc.head.w",
                    nn.uniform_fan_in(rng, (cfg.bottleneck_dim, feat),
                                      cfg.bottleneck_dim))
        self._param("enc.head.b", np.zeros(feat))

        self._param("dec.head.w",
                    nn.uniform_fan_in(rng, (feat, cfg.bottleneck_dim), feat))
        self._param("dec.head.b", np.zeros(cfg.bottleneck_dim))
        chain = list(cfg.channels[::-1]) + [cfg.frame_shape[0]]
        for i in range(len(cfg.channels)):
            f, c = chain[i], chain[i + 1]
            self._param(f"dec.deconv{i + 1}.w",
                        nn.uniform_fan_in(rng, (f, c, k, k), f * k * k))
            self._param(f"dec.deconv{i + 1}.b", np.zeros(c))
            if i + 1 < len(cfg.channels):  # no BN before the sigmoid output
                self._bn(f"dec.bn{i + 1}", c)

        d_in = cfg.d_g
        for layer in range(1, cfg.lstm_layers + 1):
            bound_in = 1.0 / np.sqrt(cfg.hidden)
            self._param(f"lstm.l{layer}.wx",
                        rng.uniform(-bound_in, bound_in,
                                    (d_in, 4 * cfg.hidden)))
            self._param(f"lstm.l{layer}.wh",
                        rng.uniform(-bound_in, bound_in,
                                    (cfg.hidden, 4 * cfg.hidden)))
            b = np.zeros(4 * cfg.hidden)
            b[cfg.hidden:2 * cfg.hidden] = 1.0  # forget gate bias
            self._param(f"lstm.l{layer}.b", b)
            d_in = cfg.hidden

        self._param("cls.w", nn.uniform_fan_in(rng, (cfg.hidden, cfg.n_classes),
                                               cfg.hidden))
        self._param("cls.b", np.zeros(cfg.n_classes))

    # -- forward passes -----------------------------------------------------

    def _bn_apply(self, x: Tensor, name: str, training: bool) -> Tensor:
        return nn.batch_norm(x, self.params[f"{name}.gamma"],
                             self.params[f"{name}.beta"],
                             self.buffers[f"{name}.running_mean"],
                             self.buffers[f"{name}.running_var"],
                             training, self.cfg.bn_momentum, self.cfg.bn_eps)

    def encode(self, frames, training: bool = False) -> tuple[Tensor, Tensor]:
        """Frames (N,3,H,W) -> appearance (N,d_a) and pose (N,d_g) features."""
        x = frames if isinstance(frames, Tensor) else Tensor(
            np.asarray(frames, dtype=self.dtype))
        if x.data.ndim != 4 or x.data.shape[1:] != self.cfg.frame_shape:
            raise ContractViolation(
                f"encode expects (N,{','.join(map(str, self.cfg.frame_shape))}), "
                f"got {x.data.shape}")
        cfg = self.cfg
        for i in range(1, len(cfg.channels) + 1):
            x = nn.conv2d(x, self.params[f"enc.conv{i}.w"],
                          self.params[f"enc.conv{i}.b"],
                          stride=cfg.stride, padding=cfg.padding)
            x = self._bn_apply(x, f"enc.bn{i}", training)
            from .tensor import leaky_relu
            x = leaky_relu(x, cfg.leaky_slope)
        x = reshape(x, (x.data.shape[0], cfg.bottleneck_dim))
        head = nn.linear(x, self.params["enc.head.w"], self.params["enc.head.b"])
        f_a = narrow(head, 1, 0, cfg.d_a)
        f_g = narrow(head, 1, cfg.d_a, cfg.d_g)
        return f_a, f_g

    def decode(self, f_a: Tensor, f_g: Tensor, training: bool = False) -> Tensor:
        """Feature pair -> frame batch (N,3,H,W) with sigmoid-range values."""
        cfg = self.cfg
        if f_a.data.shape[1] != cfg.d_a or f_g.data.shape[1] != cfg.d_g:
            raise ContractViolation(
                f"decode expects dims ({cfg.d_a},{cfg.d_g}), got "
                f"({f_a.data.shape[1]},{f_g.data.shape[1]})")
        x = concat([f_a, f_g], axis=1)
        x = nn.linear(x, self.params["dec.head.w"], self.params["dec.head.b"])
        bh, bw = cfg.bottleneck_hw
        x = reshape(x, (x.data.shape[0], cfg.channels[-1], bh, bw))
        n_layers = len(cfg.channels)
        from .tensor import leaky_relu, sigmoid
        for i in range(1, n_layers + 1):
            x = nn.conv2d_transpose(x, self.params[f"dec.deconv{i}.w"],
                                    self.params[f"dec.deconv{i}.b"],
                                    stride=cfg.stride, padding=cfg.padding,
                                    output_padding=1)
            if i < n_layers:
                x = self._bn_apply(x, f"dec.bn{i}", training)
                x = leaky_relu(x, cfg.leaky_slope)
            else:
                x = sigmoid(x)
        return x

    def aggregate(self, pose_seq: Sequence[Tensor]) -> tuple[list[Tensor], list[Tensor]]:
        """Pose feature sequence -> per-step LSTM outputs and running means.

        ``pose_seq`` is a list of (N,d_g) tensors, one per time step.  Returns
        the top-layer hidden states h_t and the running means of h_1..h_t.
        """
        if len(pose_seq) == 0:
            raise ContractViolation("aggregate requires a non-empty sequence")
        cfg = self.cfg
        n = pose_seq[0].data.shape[0]
        zeros = lambda: Tensor(np.zeros((n, cfg.hidden), dtype=self.dtype))
        h = [zeros() for _ in range(cfg.lstm_layers)]
        c = [zeros() for _ in range(cfg.lstm_layers)]
        h_out: list[Tensor] = []
        f_gait: list[Tensor] = []
        for t, x in enumerate(pose_seq, start=1):
            inp = x
            for l in range(cfg.lstm_layers):
                h[l], c[l] = nn.lstm_step(inp, h[l], c[l],
                                          self.params[f"lstm.l{l + 1}.wx"],
                                          self.params[f"lstm.l{l + 1}.wh"],
                                          self.params[f"lstm.l{l + 1}.b"])
                inp = h[l]
            h_out.append(h[-1])
            if t == 1:
                f_gait.append(h[-1])
            else:
                f_gait.append(f_gait[-1] * ((t - 1) / t) + h[-1] * (1.0 / t))
        return h_out, f_gait

    def classify(self, feature: Tensor) -> Tensor:
        return nn.linear(feature, self.params["cls.w"], self.params["cls.b"])

    # -- inference ----------------------------------------------------------

    def signatures(self, clips: Sequence[np.ndarray],
                   batch_clips: int = 64) -> np.ndarray:
        """Clip-level gait features, eval mode, no graph recording.

        Each clip is a (T,3,H,W) array; clips of equal length are batched
        through the encoder and LSTM together.
        """
        out = np.zeros((len(clips), self.cfg.hidden), dtype=self.dtype)
        by_len: dict[int, list[int]] = {}
        for i, clip in enumerate(clips):
            if len(clip) == 0:
                raise ContractViolation("gait signature of an empty clip")
            by_len.setdefault(len(clip), []).append(i)
        with no_grad():
            for t_len, idxs in by_len.items():
                for lo in range(0, len(idxs), batch_clips):
                    group = idxs[lo:lo + batch_clips]
                    stack = np.stack([clips[i] for i in group])  # (B,T,3,H,W)
                    b = stack.shape[0]
                    flat = stack.transpose(1, 0, 2, 3, 4).reshape(
                        (b * t_len,) + self.cfg.frame_shape)
                    _, f_g = self.encode(flat.astype(self.dtype), training=False)
                    fg3 = reshape(f_g, (t_len, b, self.cfg.d_g))
                    seq = [reshape(narrow(fg3, 0, t, 1), (b, self.cfg.d_g))
                           for t in range(t_len)]
                    _, f_gait = self.aggregate(seq)
                    out[group] = f_gait[-1].data
        return out

    def gait_signature(self, clip: np.ndarray) -> np.ndarray:
        """Gait feature of one clip (T,3,H,W) at the final time step."""
        return self.signatures([np.asarray(clip)])[0]

    def cross_decode_grid(self, appearance_frames: np.ndarray,
                          pose_frames: np.ndarray) -> np.ndarray:
        """Feature-swap mosaic.

        Row 0 decodes a zero appearance vector, column 0 a zero pose vector;
        cell (i,j) for i,j >= 1 decodes appearance of row source i with pose
        of column source j.  Returns (3, (R+1)*H, (C+1)*W).
        """
        ch, fh, fw = self.cfg.frame_shape
        with no_grad():
            f_a_src, _ = self.encode(appearance_frames, training=False)
            _, f_g_src = self.encode(pose_frames, training=False)
            r, c = f_a_src.data.shape[0], f_g_src.data.shape[0]
            f_a = np.concatenate([np.zeros((1, self.cfg.d_a), dtype=self.dtype),
                                  f_a_src.data])
            f_g = np.concatenate([np.zeros((1, self.cfg.d_g), dtype=self.dtype),
                                  f_g_src.data])
            pairs_a = np.repeat(f_a, c + 1, axis=0)
            pairs_g = np.tile(f_g, (r + 1, 1))
            frames = self.decode(Tensor(pairs_a), Tensor(pairs_g),
                                 training=False).data
        mosaic = np.zeros((ch, (r + 1) * fh, (c + 1) * fw), dtype=self.dtype)
        for i in range(r + 1):
            for j in range(c + 1):
                cell = frames[i * (c + 1) + j]
                mosaic[:, i * fh:(i + 1) * fh, j * fw:(j + 1) * fw] = cell
        return mosaic

    # -- persistence ----------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.params.items()}
        state.update(self.buffers)
        return state

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in arrays:
                raise ContractViolation(f"checkpoint missing parameter {name}")
            if arrays[name].shape != p.data.shape:
                raise ContractViolation(
                    f"checkpoint shape mismatch for {name}: "
                    f"{arrays[name].shape} vs {p.data.shape}")
            p.data = arrays[name].astype(self.dtype)
        for name in self.buffers:
            if name not in arrays:
                raise ContractViolation(f"checkpoint missing buffer {name}")
            self.buffers[name] = arrays[name].astype(self.dtype)
