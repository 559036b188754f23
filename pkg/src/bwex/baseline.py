"""Spectral dense-network baseline.

A fully connected ReLU network reads one STFT frame of the spline-upscaled
input, restricted to the bins the low-resolution signal can represent, and
predicts the remaining high bins. Features are ``log10`` power and phase in
radians; targets use the same encoding. Both are standardized per feature
with statistics from the training frames.

For frame length ``N`` there are ``K = N/2 + 1`` bins and the cutoff index is
``c = (N/2) // r``: bins ``0..c`` are inputs, bins ``c+1..K-1`` are predicted.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from bwex import dsp
from bwex.errors import ConfigError, ShapeError, UnsupportedRatioError, UsageError
from bwex.nn import functional as F
from bwex.nn.checkpoint import load_checkpoint, save_checkpoint
from bwex.nn.layers import Linear, ReLU, Sequential
from bwex.nn.optim import adam_step
from bwex.nn.tensor import ParamStore

SUPPORTED_RATIOS = (2, 4)
HIDDEN = (2048, 2048, 2048)
SIDECAR_SCHEMA_VERSION = 1


@dataclass
class SpectralDNNConfig:
    r: int = 2
    frame_length: int = 2048
    hop: int = 1024
    hidden: list[int] = field(default_factory=lambda: list(HIDDEN))

    def __post_init__(self):
        if self.r not in SUPPORTED_RATIOS:
            raise UnsupportedRatioError(f"spectral DNN baseline supports r in {SUPPORTED_RATIOS}, got r={self.r}")
        if self.frame_length < 4 or self.frame_length & (self.frame_length - 1):
            raise ConfigError(f"frame_length must be a power of two, got {self.frame_length}")
        if not 1 <= self.hop <= self.frame_length:
            raise ConfigError(f"hop must lie in [1, frame_length], got {self.hop}")

    @property
    def num_bins(self) -> int:
        return self.frame_length // 2 + 1

    @property
    def cutoff(self) -> int:
        return (self.frame_length // 2) // self.r

    @property
    def input_dim(self) -> int:
        return 2 * (self.cutoff + 1)

    @property
    def output_dim(self) -> int:
        return 2 * (self.num_bins - self.cutoff - 1)


def encode(bins: np.ndarray) -> np.ndarray:
    """Complex bins ``(F, n)`` to ``(F, 2n)`` features: log10 power then phase."""
    power = bins.real**2 + bins.imag**2
    return np.concatenate([np.log10(np.maximum(power, dsp.LOG_FLOOR)), np.angle(bins)], axis=1)


def decode(features: np.ndarray) -> np.ndarray:
    n = features.shape[1] // 2
    return np.sqrt(10.0 ** features[:, :n]) * np.exp(1j * features[:, n:])


def _padded_stft(x: np.ndarray, cfg: SpectralDNNConfig) -> tuple[dsp.Spectrogram, int]:
    """STFT with half a frame of zeros in front and enough behind to cover every sample."""
    n, half = x.shape[0], cfg.frame_length // 2
    frames = -(-(n + half) // cfg.hop) + 1
    total = (frames - 1) * cfg.hop + cfg.frame_length
    padded = np.zeros(total)
    padded[half:half + n] = x
    return dsp.stft(padded, cfg.frame_length, cfg.hop), half


def substitute_high_band(upscaled: np.ndarray, high_bins: np.ndarray | None, cfg: SpectralDNNConfig) -> np.ndarray:
    """Keep the input's low bins, replace bins above the cutoff and overlap-add back.

    ``high_bins`` is complex ``(frames, K - c - 1)``; ``None`` zeroes the high band.
    """
    upscaled = np.asarray(upscaled, dtype=np.float64)
    spec, half = _padded_stft(upscaled, cfg)
    c = cfg.cutoff
    frames = spec.frames.copy()
    if high_bins is None:
        frames[:, c + 1:] = 0
    else:
        if high_bins.shape != frames[:, c + 1:].shape:
            raise ShapeError(f"high bins have shape {high_bins.shape}, expected {frames[:, c + 1:].shape}")
        frames[:, c + 1:] = high_bins
    out = dsp.istft(dsp.Spectrogram(frames, spec.frame_length, spec.hop, spec.window),
                    (spec.num_frames - 1) * spec.hop + spec.frame_length)
    return out[half:half + upscaled.shape[0]]


def oracle_high_bins(target: np.ndarray, cfg: SpectralDNNConfig) -> np.ndarray:
    spec, _ = _padded_stft(np.asarray(target, dtype=np.float64), cfg)
    return spec.frames[:, cfg.cutoff + 1:]


def frame_pairs(upscaled: np.ndarray, target: np.ndarray, cfg: SpectralDNNConfig) -> tuple[np.ndarray, np.ndarray]:
    """Raw (unstandardized) feature and target rows for one track."""
    s_in, _ = _padded_stft(upscaled, cfg)
    s_out, _ = _padded_stft(target, cfg)
    c = cfg.cutoff
    return encode(s_in.frames[:, :c + 1]), encode(s_out.frames[:, c + 1:])


class SpectralDNN:
    def __init__(self, cfg: SpectralDNNConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.seed = seed
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        layers = []
        widths = [cfg.input_dim, *cfg.hidden]
        for i in range(len(cfg.hidden)):
            layers += [Linear(self.store, f"fc{i + 1}", widths[i], widths[i + 1], rng=rng, dtype=dtype), ReLU()]
        layers.append(Linear(self.store, "out", widths[-1], cfg.output_dim, rng=rng, dtype=dtype))
        self.net = Sequential(*layers)
        self.dtype = dtype
        for name, dim in (("in", cfg.input_dim), ("out", cfg.output_dim)):
            self.store.add_buffer(f"norm.{name}_mean", np.zeros(dim, dtype=dtype))
            self.store.add_buffer(f"norm.{name}_std", np.ones(dim, dtype=dtype))

    def fit_normalization(self, features: np.ndarray, targets: np.ndarray) -> None:
        b = self.store.buffers
        for name, arr in (("in", features), ("out", targets)):
            b[f"norm.{name}_mean"][...] = arr.mean(axis=0)
            b[f"norm.{name}_std"][...] = np.maximum(arr.std(axis=0), 1e-3)

    def normalize(self, features: np.ndarray, targets: np.ndarray | None = None):
        b = self.store.buffers
        fx = ((features - b["norm.in_mean"]) / b["norm.in_std"]).astype(self.dtype)
        if targets is None:
            return fx
        return fx, ((targets - b["norm.out_mean"]) / b["norm.out_std"]).astype(self.dtype)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.net.forward(x)

    def backward(self, g: np.ndarray) -> np.ndarray:
        return self.net.backward(g)

    def predict_features(self, features: np.ndarray) -> np.ndarray:
        b = self.store.buffers
        out = self.forward(self.normalize(features)).astype(np.float64)
        return out * b["norm.out_std"] + b["norm.out_mean"]

    def upscale(self, upscaled: np.ndarray) -> np.ndarray:
        """Super-resolve a whole spline-upscaled track."""
        spec, _ = _padded_stft(np.asarray(upscaled, dtype=np.float64), self.cfg)
        pred = self.predict_features(encode(spec.frames[:, :self.cfg.cutoff + 1]))
        return substitute_high_band(upscaled, decode(pred), self.cfg)

    def save(self, path) -> None:
        path = Path(path)
        save_checkpoint(self.store, path)
        meta = {"schema_version": SIDECAR_SCHEMA_VERSION, "model_type": "spectral_dnn",
                "config": asdict(self.cfg), "seed": self.seed}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "SpectralDNN":
        path = Path(path)
        sidecar = path.with_suffix(".json")
        if not sidecar.exists():
            raise UsageError(f"missing config sidecar {sidecar}")
        meta = json.loads(sidecar.read_text())
        if meta.get("model_type") != "spectral_dnn":
            raise UsageError(f"{sidecar}: model_type {meta.get('model_type')!r} is not spectral_dnn")
        dnn = cls(SpectralDNNConfig(**meta["config"]), seed=meta.get("seed", 0))
        load_checkpoint(dnn.store, path, load_optimizer=False)
        return dnn


def dnn_train(dnn: SpectralDNN, features: np.ndarray, targets: np.ndarray, steps: int = 200,
              lr: float = 1e-4, batch_size: int = 64, seed: int = 0, fit_norm: bool = True) -> list[float]:
    """ADAM on standardized-target MSE; returns the per-step loss."""
    if features.shape[0] != targets.shape[0] or features.shape[0] == 0:
        raise ShapeError(f"need equal non-zero frame counts, got {features.shape[0]} and {targets.shape[0]}")
    if fit_norm:
        dnn.fit_normalization(features, targets)
    x, y = dnn.normalize(features, targets)
    n = x.shape[0]
    losses = []
    epoch, order, pos = 0, None, n
    for _ in range(steps):
        if pos >= n:
            order = np.random.default_rng([seed, epoch]).permutation(n)
            epoch, pos = epoch + 1, 0
        idx = order[pos:pos + batch_size]
        pos += batch_size
        value, grad = F.mse_loss(dnn.forward(x[idx]), y[idx])
        dnn.store.zero_grad()
        dnn.backward(grad.astype(dnn.dtype))
        adam_step(dnn.store, lr)
        losses.append(float(value))
    return losses
