"""Residual 1D U-Net with subpixel upscaling.

``B`` downsampling blocks (conv stride 2, batch norm, ReLU) are mirrored by
``B`` upsampling blocks (conv, batch norm, ReLU, subpixel shuffle, then
concatenation with the equal-length downsampling features). A single-filter
linear conv maps back to one channel and the input is added to the output.

Filter schedule (block b = 1..B)::

    filters_down[b] = min(2**(6 + b), 512)     kernel_down[b] = max(2**(7 - b) + 1, 9)
    filters_up[b]   = filters_down[B - b + 1]  kernel_up[b]   = kernel_down[B - b + 1]

Note the min/max placement: the opposite choice would pin every block to 512
filters of length 9, contradicting the grow-filters/shrink-length design.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from bwex import dsp
from bwex.audio_io import AudioBuffer
from bwex.errors import ConfigError, ShapeError
from bwex.nn import functional as F
from bwex.nn.layers import BatchNorm1d, Conv1d, Module, ReLU, Sequential
from bwex.nn.tensor import ParamStore

VARIANTS = ("full", "no_residual", "no_skip")


def paper_filters_down(blocks: int, divisor: int = 1) -> list[int]:
    return [min(2 ** (6 + b), 512) // divisor for b in range(1, blocks + 1)]


def paper_kernels_down(blocks: int) -> list[int]:
    return [max(2 ** (7 - b) + 1, 9) for b in range(1, blocks + 1)]


@dataclass
class ModelConfig:
    """Architecture of an :class:`AudioUNet`.

    ``channel_divisor`` shrinks the default filter schedule for desk-scale
    runs; explicit schedules override it.
    """

    blocks: int = 4
    patch_length: int = 6000
    use_skip_concat: bool = True
    use_additive_residual: bool = True
    channel_divisor: int = 1
    filters_down: list[int] = field(default_factory=list)
    kernel_down: list[int] = field(default_factory=list)
    filters_up: list[int] = field(default_factory=list)
    kernel_up: list[int] = field(default_factory=list)
    final_kernel: int = 9
    zero_final: bool = False

    def __post_init__(self):
        b = self.blocks
        if b < 1:
            raise ConfigError(f"blocks must be >= 1, got {b}")
        if self.channel_divisor < 1:
            raise ConfigError(f"channel_divisor must be >= 1, got {self.channel_divisor}")
        if not self.filters_down:
            self.filters_down = paper_filters_down(b, self.channel_divisor)
        if not self.kernel_down:
            self.kernel_down = paper_kernels_down(b)
        if not self.filters_up:
            self.filters_up = self.filters_down[::-1]
        if not self.kernel_up:
            self.kernel_up = self.kernel_down[::-1]
        self.filters_down = [int(v) for v in self.filters_down]
        self.kernel_down = [int(v) for v in self.kernel_down]
        self.filters_up = [int(v) for v in self.filters_up]
        self.kernel_up = [int(v) for v in self.kernel_up]
        for label in ("filters_down", "kernel_down", "filters_up", "kernel_up"):
            sched = getattr(self, label)
            if len(sched) != b:
                raise ConfigError(f"{label} needs {b} entries, got {len(sched)}")
            if any(v < 1 for v in sched):
                raise ConfigError(f"{label} entries must be positive: {sched}")
        if any(k % 2 == 0 for k in self.kernel_down + self.kernel_up + [self.final_kernel]):
            raise ConfigError("kernel lengths must be odd")
        if any(f % 2 for f in self.filters_up):
            raise ConfigError(f"filters_up must be even for the subpixel shuffle: {self.filters_up}")
        if self.patch_length % (2**b):
            raise ConfigError(f"patch_length {self.patch_length} is not divisible by 2**{b}")

    @property
    def multiple(self) -> int:
        return 2**self.blocks

    def variant(self, name: str) -> "ModelConfig":
        """Ablation variants; ``no_skip`` also drops the residual."""
        if name == "full":
            return replace(self, use_skip_concat=True, use_additive_residual=True)
        if name == "no_residual":
            return replace(self, use_skip_concat=True, use_additive_residual=False)
        if name == "no_skip":
            return replace(self, use_skip_concat=False, use_additive_residual=False)
        raise ConfigError(f"unknown variant {name!r}; expected one of {VARIANTS}")

    def skip_channels(self) -> list[int]:
        """Channels concatenated after up block b (0-based); the last block has none."""
        b = self.blocks
        return [self.filters_down[b - 2 - i] if i < b - 1 else 0 for i in range(b)]

    def up_conv_filters(self) -> list[int]:
        """Up-block conv widths. Without skips the conv widens so post-shuffle widths stay matched."""
        if self.use_skip_concat:
            return list(self.filters_up)
        return [f + 2 * s for f, s in zip(self.filters_up, self.skip_channels())]

    def up_out_channels(self) -> list[int]:
        return [f // 2 + s for f, s in zip(self.filters_up, self.skip_channels())]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class AudioUNet(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.seed = seed
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        st = self.store

        self.down: list[Sequential] = []
        c_in = 1
        for i in range(cfg.blocks):
            name = f"down{i + 1}"
            c_out = cfg.filters_down[i]
            self.down.append(Sequential(
                Conv1d(st, f"{name}.conv", c_in, c_out, cfg.kernel_down[i], stride=2, rng=rng, dtype=dtype),
                BatchNorm1d(st, f"{name}.bn", c_out, dtype=dtype),
                ReLU(),
            ))
            c_in = c_out

        self.up: list[Sequential] = []
        conv_widths = cfg.up_conv_filters()
        out_widths = cfg.up_out_channels()
        for i in range(cfg.blocks):
            name = f"up{i + 1}"
            c_out = conv_widths[i]
            self.up.append(Sequential(
                Conv1d(st, f"{name}.conv", c_in, c_out, cfg.kernel_up[i], stride=1, rng=rng, dtype=dtype),
                BatchNorm1d(st, f"{name}.bn", c_out, dtype=dtype),
                ReLU(),
            ))
            c_in = out_widths[i]

        self.final = Conv1d(st, "final.conv", c_in, 1, cfg.final_kernel, rng=rng, dtype=dtype)
        if cfg.zero_final:
            self.final.weight.data[...] = 0
        self._skip_split: list[int] = []

    def children(self):
        return self.down + self.up + [self.final]

    def forward(self, x: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        if x.ndim != 3 or x.shape[1] != 1:
            raise ShapeError(f"model input must be (batch, 1, length), got {x.shape}")
        if x.shape[2] % cfg.multiple:
            raise ShapeError(f"input length {x.shape[2]} is not divisible by 2**{cfg.blocks}")

        feats = []
        h = x
        for block in self.down:
            h = block.forward(h)
            feats.append(h)

        skips = cfg.skip_channels()
        self._skip_split = []
        for i, block in enumerate(self.up):
            h = F.subpixel_shuffle_1d(block.forward(h))
            self._skip_split.append(h.shape[1])
            if skips[i] and cfg.use_skip_concat:
                h = F.concat_channels(h, feats[cfg.blocks - 2 - i])
        out = self.final.forward(h)
        if cfg.use_additive_residual:
            out = out + x
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        b = cfg.blocks
        skip_grads: list[np.ndarray | None] = [None] * b
        g = self.final.backward(grad_out)
        skips = cfg.skip_channels()
        for i in reversed(range(b)):
            if skips[i] and cfg.use_skip_concat:
                g, g_skip = F.split_channels(g, self._skip_split[i])
                skip_grads[b - 2 - i] = g_skip
            g = self.up[i].backward(F.subpixel_unshuffle_1d(g))
        for i in reversed(range(b)):
            if skip_grads[i] is not None:
                g = g + skip_grads[i]
            g = self.down[i].backward(g)
        if cfg.use_additive_residual:
            g = g + grad_out
        return g

    def relu_signature(self) -> np.ndarray:
        return np.concatenate([blk.relu_signature() for blk in self.down + self.up])

    def num_parameters(self) -> int:
        return self.store.num_parameters()

    def predict(self, x: np.ndarray, batch_size: int = 16) -> np.ndarray:
        """Inference-mode forward over ``(N, 1, d)`` in fixed-order batches."""
        was_training = self.training
        self.eval()
        try:
            outs = [self.forward(x[i:i + batch_size]) for i in range(0, x.shape[0], batch_size)]
        finally:
            self.train(was_training)
        return np.concatenate(outs, axis=0)


def build(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> AudioUNet:
    return AudioUNet(cfg, seed=seed, dtype=dtype)


def predict_samples(net: AudioUNet, upscaled: np.ndarray) -> np.ndarray:
    """Run the network on a whole already-upscaled track, zero-padding to a multiple of 2**B."""
    n = upscaled.shape[0]
    mult = net.cfg.multiple
    padded = np.zeros(-(-n // mult) * mult, dtype=net.final.weight.data.dtype)
    padded[:n] = upscaled
    return net.predict(padded[None, None, :], batch_size=1)[0, 0, :n].astype(np.float64)


def predict_track(net: AudioUNet, low_res: AudioBuffer, r: int) -> AudioBuffer:
    """Spline-upscale ``low_res`` by ``r``, run the network on the whole track, trim padding."""
    up = dsp.spline_upscale(low_res, r)
    return AudioBuffer(predict_samples(net, up.samples), up.sample_rate)


def timed_predict_track(net: AudioUNet, low_res: AudioBuffer, r: int) -> tuple[AudioBuffer, float]:
    """Like :func:`predict_track`, also returning wall seconds per second of output audio."""
    t0 = time.perf_counter()
    out = predict_track(net, low_res, r)
    return out, (time.perf_counter() - t0) / out.duration
