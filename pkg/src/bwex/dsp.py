"""Classical DSP used around the network.

Chebyshev type I low-pass design, zero-phase filtering, decimation, natural
cubic spline upscaling, and a radix-2 STFT with log-power view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, signal

from bwex.audio_io import AudioBuffer
from bwex.errors import DomainError, LengthError

DEFAULT_ORDER = 8
DEFAULT_RIPPLE_DB = 0.05
CUTOFF_FRACTION = 0.8
LOG_FLOOR = 1e-10


@dataclass
class IIRFilter:
    """Transfer function b(z)/a(z) with ``a[0] == 1``."""

    b: np.ndarray
    a: np.ndarray
    order: int

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        if self.a[0] == 0:
            raise DomainError("a[0] must be nonzero")
        self.b = self.b / self.a[0]
        self.a = self.a / self.a[0]
        if not (np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.a))):
            raise DomainError("filter coefficients must be finite")
        if not self.is_stable():
            raise DomainError("filter has poles on or outside the unit circle")

    def poles(self) -> np.ndarray:
        return np.roots(self.a)

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0))

    def response(self, w: np.ndarray) -> np.ndarray:
        """Complex frequency response at normalized frequencies ``w`` (1 = Nyquist)."""
        z = np.exp(-1j * np.pi * np.asarray(w, dtype=np.float64))
        return np.polyval(self.b[::-1], z) / np.polyval(self.a[::-1], z)

    def dc_gain(self) -> float:
        return float(self.b.sum() / self.a.sum())

    def normalized_dc(self) -> "IIRFilter":
        """Copy of this filter scaled so its DC gain is exactly one."""
        return IIRFilter(self.b / self.dc_gain(), self.a.copy(), self.order)


def design_cheby1_lowpass(
    order: int = DEFAULT_ORDER,
    ripple_db: float = DEFAULT_RIPPLE_DB,
    cutoff: float = 0.5,
    normalize_dc: bool = False,
) -> IIRFilter:
    """Digital Chebyshev type I low-pass filter.

    ``cutoff`` is a fraction of Nyquist and marks the passband edge, where the
    gain equals ``-ripple_db``. The analog prototype is mapped with a bilinear
    transform after pre-warping the cutoff.
    """
    if order < 1:
        raise DomainError(f"order must be >= 1, got {order}")
    if not 0.0 < cutoff < 1.0:
        raise DomainError(f"cutoff must lie in (0, 1), got {cutoff}")
    if ripple_db <= 0:
        raise DomainError(f"ripple_db must be positive, got {ripple_db}")

    eps = np.sqrt(10.0 ** (ripple_db / 10.0) - 1.0)
    mu = np.arcsinh(1.0 / eps) / order
    theta = np.pi * (2 * np.arange(1, order + 1) - 1) / (2 * order)
    poles = -np.sinh(mu) * np.sin(theta) + 1j * np.cosh(mu) * np.cos(theta)
    gain = np.prod(-poles).real
    if order % 2 == 0:
        gain /= np.sqrt(1.0 + eps**2)

    # analog edge at the pre-warped frequency, sampling rate 2 (Nyquist = 1)
    fs2 = 4.0
    warped = fs2 * np.tan(np.pi * cutoff / 2.0)
    poles = poles * warped
    gain = gain * warped**order

    z_poles = (fs2 + poles) / (fs2 - poles)
    z_gain = (gain / np.prod(fs2 - poles)).real
    b = z_gain * np.poly(-np.ones(order))
    a = np.poly(z_poles).real
    filt = IIRFilter(b, a, order)
    return filt.normalized_dc() if normalize_dc else filt


def filtfilt(f: IIRFilter, x: np.ndarray) -> np.ndarray:
    """Zero-phase forward-backward filtering with odd reflection padding of 3*order samples."""
    x = np.asarray(x, dtype=np.float64)
    padlen = 3 * f.order
    if x.shape[-1] <= padlen:
        raise LengthError(f"filtfilt needs more than {padlen} samples, got {x.shape[-1]}")
    return signal.filtfilt(f.b, f.a, x, padtype="odd", padlen=padlen)


def decimation_filter(r: int) -> IIRFilter:
    return design_cheby1_lowpass(DEFAULT_ORDER, DEFAULT_RIPPLE_DB, CUTOFF_FRACTION / r, normalize_dc=True)


def decimate_samples(x: np.ndarray, r: int, use_lpf: bool = True) -> np.ndarray:
    """Array form of :func:`decimate` (no sample-rate bookkeeping)."""
    if r < 2:
        raise DomainError(f"decimation ratio must be >= 2, got {r}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < r:
        raise LengthError(f"need at least {r} samples to decimate by {r}, got {x.shape[0]}")
    y = filtfilt(decimation_filter(r), x) if use_lpf else x
    return y[::r].copy()


def decimate(x: AudioBuffer, r: int, use_lpf: bool = True) -> AudioBuffer:
    """Keep every ``r``-th sample starting at 0, optionally after the anti-aliasing low-pass.

    Without the low-pass, content above the new Nyquist aliases.
    """
    if r >= 2 and x.sample_rate % r:
        raise DomainError(f"sample rate {x.sample_rate} is not divisible by {r}")
    return AudioBuffer(decimate_samples(x.samples, r, use_lpf), x.sample_rate // max(r, 1))


def natural_spline_second_derivatives(y: np.ndarray) -> np.ndarray:
    """Second derivatives at unit-spaced nodes with natural (zero) end conditions."""
    n = y.shape[0]
    m = np.zeros(n)
    if n < 3:
        return m
    rhs = 6.0 * (y[2:] - 2.0 * y[1:-1] + y[:-2])
    inner = n - 2
    bands = np.zeros((3, inner))
    bands[0, 1:] = 1.0
    bands[1, :] = 4.0
    bands[2, :-1] = 1.0
    m[1:-1] = linalg.solve_banded((1, 1), bands, rhs)
    return m


def spline_upscale_samples(y: np.ndarray, r: int) -> np.ndarray:
    """Array form of :func:`spline_upscale`."""
    if r < 2:
        raise DomainError(f"upscale ratio must be >= 2, got {r}")
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    if n < 4:
        raise LengthError(f"spline upscaling needs at least 4 samples, got {n}")
    m = natural_spline_second_derivatives(y)

    j = np.arange(r * n)
    seg = np.minimum(j // r, n - 2)
    t = j / r - seg
    y0, y1 = y[seg], y[seg + 1]
    m0, m1 = m[seg], m[seg + 1]
    c1 = (y1 - y0) - (2.0 * m0 + m1) / 6.0
    c2 = m0 / 2.0
    c3 = (m1 - m0) / 6.0
    out = y0 + t * (c1 + t * (c2 + t * c3))
    # the last node sits at t = 1 of the final piece; pin every node to its data value
    out[::r] = y
    return out


def spline_upscale(x: AudioBuffer, r: int) -> AudioBuffer:
    """Natural cubic spline through ``(i, x[i])`` sampled at ``j / r``.

    Output length is exactly ``r * len(x)``; the trailing ``r - 1`` points lie
    past the last node and are extrapolated with the last polynomial piece.
    """
    return AudioBuffer(spline_upscale_samples(x.samples, r), x.sample_rate * r)


def degrade(x: np.ndarray, r: int, use_lpf: bool = True) -> np.ndarray:
    """Decimate then spline back onto the original grid, truncated to ``len(x)``.

    This is the network input paired with target ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    return spline_upscale_samples(decimate_samples(x, r, use_lpf), r)[:x.shape[0]]


@dataclass
class Spectrogram:
    """One-sided STFT: ``frames[l, k]`` for frame ``l`` and bin ``k``."""

    frames: np.ndarray
    frame_length: int
    hop: int
    window: str

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_bins(self) -> int:
        return self.frames.shape[1]


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def make_window(name: str, n: int) -> np.ndarray:
    if name == "hann":
        # periodic Hann: overlap-adds to exactly one at hop n/2
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    if name == "rect":
        return np.ones(n)
    raise DomainError(f"unknown window {name!r}")


def stft(x: np.ndarray, frame_length: int = 2048, hop: int | None = None, window: str = "hann") -> Spectrogram:
    """Frames start at 0 and step by ``hop``; no centering or padding."""
    x = np.asarray(x, dtype=np.float64)
    if not _is_power_of_two(frame_length):
        raise DomainError(f"frame_length must be a power of two, got {frame_length}")
    hop = frame_length // 2 if hop is None else hop
    if hop < 1:
        raise DomainError(f"hop must be >= 1, got {hop}")
    if x.shape[0] < frame_length:
        raise LengthError(f"signal of {x.shape[0]} samples is shorter than one {frame_length}-sample frame")
    frames = np.lib.stride_tricks.sliding_window_view(x, frame_length)[::hop]
    spec = np.fft.rfft(frames * make_window(window, frame_length), axis=-1)
    return Spectrogram(spec, frame_length, hop, window)


def istft(spec: Spectrogram, length: int) -> np.ndarray:
    """Overlap-add inverse of :func:`stft`, normalized by the summed analysis window.

    Samples not covered by any frame come back as zero.
    """
    n = spec.frame_length
    total = max(length, (spec.num_frames - 1) * spec.hop + n)
    out = np.zeros(total)
    wsum = np.zeros(total)
    win = make_window(spec.window, n)
    frames = np.fft.irfft(spec.frames, n=n, axis=-1)
    for i in range(spec.num_frames):
        s = i * spec.hop
        out[s:s + n] += frames[i]
        wsum[s:s + n] += win
    covered = wsum > 1e-8
    out[covered] /= wsum[covered]
    return out[:length]


def log_power(spec: Spectrogram, floor: float = LOG_FLOOR) -> np.ndarray:
    """``log10(max(|S|^2, floor))`` per frame and bin."""
    if floor <= 0:
        raise DomainError(f"floor must be positive, got {floor}")
    power = spec.frames.real**2 + spec.frames.imag**2
    return np.log10(np.maximum(power, floor))
