"""Mono WAV reading/writing (RIFF little-endian, PCM16 and IEEE float32).

Integer samples are normalized with an asymmetric convention: reading divides
by 32768 (so -32768 maps to exactly -1.0), writing multiplies by 32767 after
clamping to [-1, 1], so +1.0 maps to 32767 without overflow.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from bwex.errors import DomainError, UnsupportedFormatError, WavFormatError

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

ENCODINGS = ("pcm16", "float32")


@dataclass
class AudioBuffer:
    """A mono sampled signal.

    ``samples`` is a 1-D float64 array of amplitudes nominally in [-1, 1];
    ``sample_rate`` is in Hz.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DomainError(f"samples must be 1-D, got shape {self.samples.shape}")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise DomainError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise DomainError("samples contain NaN or Inf")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def require_nonempty(self) -> "AudioBuffer":
        if len(self) == 0:
            raise DomainError("empty audio buffer")
        return self


def _parse_fmt(body: bytes, offset: int) -> tuple[int, int, int, int]:
    if len(body) < 16:
        raise WavFormatError("fmt chunk shorter than 16 bytes", offset)
    tag, channels, rate, _byte_rate, block_align, bits = struct.unpack_from("<HHIIHH", body, 0)
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(body) < 40:
            raise WavFormatError("WAVE_FORMAT_EXTENSIBLE fmt chunk shorter than 40 bytes", offset)
        # first two bytes of the subformat GUID carry the real format tag
        (tag,) = struct.unpack_from("<H", body, 24)
    if channels < 1:
        raise WavFormatError("fmt declares zero channels", offset + 2)
    if rate == 0:
        raise WavFormatError("fmt declares a zero sample rate", offset + 4)
    if block_align != channels * (bits // 8):
        raise WavFormatError(
            f"block_align {block_align} inconsistent with {channels} channels of {bits} bits", offset + 12
        )
    return tag, channels, rate, bits


def read_wav(path, downmix: bool = False) -> AudioBuffer:
    """Read a mono PCM16 or float32 WAV file.

    Multi-channel files are rejected unless ``downmix`` is set, in which case
    the channels are averaged.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12:
        raise WavFormatError("file too short for a RIFF header", 0)
    if data[0:4] != b"RIFF":
        raise WavFormatError(f"expected 'RIFF', found {data[0:4]!r}", 0)
    if data[8:12] != b"WAVE":
        raise WavFormatError(f"expected 'WAVE', found {data[8:12]!r}", 8)

    fmt = None
    payload = None
    payload_offset = 0
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body_start = pos + 8
        if body_start + size > len(data):
            raise WavFormatError(
                f"chunk {chunk_id!r} declares {size} bytes but only {len(data) - body_start} remain", pos + 4
            )
        body = data[body_start:body_start + size]
        if chunk_id == b"fmt ":
            fmt = _parse_fmt(body, body_start)
        elif chunk_id == b"data":
            payload = body
            payload_offset = body_start
        pos = body_start + size + (size & 1)

    if fmt is None:
        raise WavFormatError("missing fmt chunk", 12)
    if payload is None:
        raise WavFormatError("missing data chunk", 12)

    tag, channels, rate, bits = fmt
    if tag == WAVE_FORMAT_PCM and bits == 16:
        dtype = np.dtype("<i2")
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype = np.dtype("<f4")
    else:
        raise UnsupportedFormatError(f"{path}: format tag {tag:#06x} with {bits} bits per sample")

    frame_bytes = channels * dtype.itemsize
    if len(payload) % frame_bytes:
        raise WavFormatError(
            f"data length {len(payload)} is not a multiple of the {frame_bytes}-byte frame", payload_offset - 4
        )
    raw = np.frombuffer(payload, dtype=dtype).reshape(-1, channels)
    if dtype.kind == "i":
        samples = raw.astype(np.float64) / 32768.0
    else:
        samples = raw.astype(np.float64)
    if channels > 1:
        if not downmix:
            raise UnsupportedFormatError(f"{path}: {channels} channels (mono only; pass downmix=True to average)")
        samples = samples.mean(axis=1)
    else:
        samples = samples[:, 0]
    return AudioBuffer(samples, rate)


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    """Clamp to [-1, 1] and round half away from zero onto the 32767 grid."""
    v = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0) * 32767.0
    return (np.sign(v) * np.floor(np.abs(v) + 0.5)).astype("<i2")


def write_wav(buf: AudioBuffer, path, encoding: str = "float32") -> None:
    """Write ``buf`` as a mono WAV file in ``pcm16`` or ``float32`` encoding."""
    if encoding not in ENCODINGS:
        raise DomainError(f"encoding must be one of {ENCODINGS}, got {encoding!r}")
    if not np.all(np.isfinite(buf.samples)):
        raise DomainError("cannot write non-finite samples")

    if encoding == "pcm16":
        payload = quantize_pcm16(buf.samples).tobytes()
        fmt = struct.pack("<HHIIHH", WAVE_FORMAT_PCM, 1, buf.sample_rate, buf.sample_rate * 2, 2, 16)
        extra = b""
    else:
        payload = buf.samples.astype("<f4").tobytes()
        fmt = struct.pack("<HHIIHHH", WAVE_FORMAT_IEEE_FLOAT, 1, buf.sample_rate, buf.sample_rate * 4, 4, 32, 0)
        extra = b"fact" + struct.pack("<II", 4, len(buf))

    chunks = b"fmt " + struct.pack("<I", len(fmt)) + fmt + extra
    chunks += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        chunks += b"\x00"
    blob = b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks
    path = Path(path)
    try:
        path.write_bytes(blob)
    except OSError as exc:
        raise OSError(f"failed to write {path}: {exc}") from exc
