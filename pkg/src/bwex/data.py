"""Training data: synthetic corpora, corpus splits and patch archives.

A patch archive is a directory holding ``manifest.json`` and ``patches.bin``.
The payload layout (little-endian)::

    b"BWPA" | version u32 | patch_length u32 | count u32
    count * (input float32[patch_length] | target float32[patch_length])

Records have a fixed size, so record ``i`` starts at ``16 + i * 8 * patch_length``.
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from bwex import dsp
from bwex.audio_io import AudioBuffer, read_wav, write_wav
from bwex.errors import DomainError, UsageError

log = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1
PAYLOAD_MAGIC = b"BWPA"
PAYLOAD_VERSION = 1
HEADER_BYTES = 16
CORPUS_KINDS = ("sine-mixture", "chirp", "noise-band", "speech-like")


# --- synthetic corpora -------------------------------------------------------

def _sine_mixture(rng, n, rate, band_limit, components=3):
    t = np.arange(n) / rate
    freqs = rng.uniform(50.0, band_limit, size=components)
    amps = rng.uniform(0.2, 1.0, size=components)
    phases = rng.uniform(0, 2 * np.pi, size=components)
    return (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None])).sum(axis=0)


def _chirp(n, rate):
    # instantaneous frequency sweeps linearly from 0 to Nyquist over the track
    t = np.arange(n) / rate
    duration = n / rate
    return np.sin(np.pi * (rate / 2.0) * t**2 / duration)


def _noise_band(rng, n, rate, lo, hi):
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / rate)
    spec[(f < lo) | (f > hi)] = 0
    return np.fft.irfft(spec, n=n)


def _speech_like(rng, n, rate, band_limit, noise_db=-60.0):
    """Voiced-speech caricature.

    A gliding fundamental drives harmonics with a -6 dB/octave tilt, shaped by
    three slowly moving formant bumps and a syllable-rate envelope, over a
    faint white-noise floor.
    """
    t = np.arange(n) / rate
    f0_base = rng.uniform(90.0, 220.0)
    f0 = f0_base * (1.0 + 0.12 * np.sin(2 * np.pi * rng.uniform(0.3, 1.5) * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0) / rate
    formant_centres = [rng.uniform(400, 900), rng.uniform(1000, 2200), rng.uniform(2300, 3400)]
    formant_moves = [rng.uniform(0.2, 1.0) for _ in formant_centres]
    out = np.zeros(n)
    for k in range(1, int(band_limit / (0.8 * f0_base)) + 1):
        fk = k * f0
        gain = np.zeros(n)
        for i, (fc, rate_hz) in enumerate(zip(formant_centres, formant_moves)):
            centre = fc * (1.0 + 0.15 * np.sin(2 * np.pi * rate_hz * t + i))
            gain += np.exp(-0.5 * ((fk - centre) / (0.12 * centre)) ** 2) / (i + 1)
        gain = (0.15 + gain) / k
        gain[fk >= band_limit] = 0.0
        out += gain * np.sin(k * phase)
    syllable = 0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(2.5, 5.0) * t + rng.uniform(0, 2 * np.pi))
    out *= syllable
    out /= np.max(np.abs(out)) + 1e-12
    out += 10 ** (noise_db / 20.0) * rng.standard_normal(n)
    return out


def synth_track(kind: str, duration: float, rate: int, seed: int, index: int = 0,
                band_limit_hz: float | None = None) -> AudioBuffer:
    """One deterministic synthetic track.

    ``band_limit_hz`` caps sinusoid / harmonic / noise-band frequencies
    (default 0.45 * rate). Tracks are scaled to a 0.5 peak.
    """
    if kind not in CORPUS_KINDS:
        raise DomainError(f"unknown corpus kind {kind!r}; expected one of {CORPUS_KINDS}")
    rng = np.random.default_rng([seed, index])
    n = int(round(duration * rate))
    limit = 0.45 * rate if band_limit_hz is None else float(band_limit_hz)
    if kind == "sine-mixture":
        x = _sine_mixture(rng, n, rate, limit)
    elif kind == "chirp":
        x = _chirp(n, rate)
    elif kind == "noise-band":
        x = _noise_band(rng, n, rate, lo=0.25 * limit, hi=limit)
    else:
        x = _speech_like(rng, n, rate, limit)
    x = 0.5 * x / (np.max(np.abs(x)) + 1e-12)
    return AudioBuffer(x.astype(np.float32).astype(np.float64), rate)


def synth_corpus(out_dir, kind: str = "speech-like", n_tracks: int = 20, duration: float = 2.0,
                 rate: int = 16000, seed: int = 0, band_limit_hz: float | None = None) -> list[Path]:
    """Write ``n_tracks`` float32 WAV files named ``<kind>_<index>.wav``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n_tracks):
        buf = synth_track(kind, duration, rate, seed, i, band_limit_hz)
        path = out_dir / f"{kind}_{i:03d}.wav"
        write_wav(buf, path, encoding="float32")
        paths.append(path)
    return paths


# --- splits ------------------------------------------------------------------

def list_tracks(source) -> list[Path]:
    """Sorted WAV files of a directory, or the given list of paths sorted."""
    if isinstance(source, (str, Path)):
        source = Path(source)
        if source.is_dir():
            return sorted(source.glob("*.wav"))
        return [source]
    return sorted(Path(p) for p in source)


def split_corpus(files: Sequence, fractions=(0.88, 0.06, 0.06), seed: int = 0) -> tuple[list, list, list]:
    """Seeded shuffle of the sorted list, then floor-sized val/test slices; the remainder trains."""
    files = sorted(files)
    if not files:
        raise DomainError("cannot split an empty corpus")
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not np.isclose(sum(fractions), 1.0):
        raise DomainError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    order = np.random.default_rng(seed).permutation(len(files))
    shuffled = [files[i] for i in order]
    n = len(files)
    n_val = int(np.floor(n * fractions[1] + 1e-9))
    n_test = int(np.floor(n * fractions[2] + 1e-9))
    n_train = n - n_val - n_test
    train = sorted(shuffled[:n_train])
    val = sorted(shuffled[n_train:n_train + n_val])
    test = sorted(shuffled[n_train + n_val:])
    return train, val, test


# --- patch archives ----------------------------------------------------------

def window_starts(n: int, patch_length: int, stride: int) -> list[int]:
    return list(range(0, n - patch_length + 1, stride)) if n >= patch_length else []


def prepare(source, out_dir, r: int, patch_length: int = 6000, stride: int | None = None,
            use_lpf: bool = True, split: str | None = None, fractions=(0.88, 0.06, 0.06),
            seed: int = 0) -> "PatchArchive":
    """Cut aligned (degraded input, original target) windows from every track.

    The degraded input is computed on the whole track before windowing.
    ``split`` selects ``train``/``val``/``test`` from :func:`split_corpus`.
    """
    stride = patch_length // 2 if stride is None else stride
    if stride < 1:
        raise DomainError(f"stride must be >= 1, got {stride}")
    files = list_tracks(source)
    if split is not None:
        names = ("train", "val", "test")
        if split not in names:
            raise DomainError(f"split must be one of {names}, got {split!r}")
        files = split_corpus(files, fractions, seed)[names.index(split)]
    root = Path(source) if isinstance(source, (str, Path)) and Path(source).is_dir() else None

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sources, skipped = [], []
    count = 0
    rate = None
    with open(out_dir / "patches.bin", "wb") as fh:
        fh.write(PAYLOAD_MAGIC + struct.pack("<III", PAYLOAD_VERSION, patch_length, 0))
        for path in files:
            label = str(path.relative_to(root)) if root else path.name
            buf = read_wav(path)
            if rate is None:
                rate = buf.sample_rate
            elif buf.sample_rate != rate:
                raise DomainError(f"{label}: sample rate {buf.sample_rate} differs from {rate}")
            if len(buf) <= patch_length:
                log.warning("skipping %s: %d samples <= patch length %d", label, len(buf), patch_length)
                skipped.append({"path": label, "reason": f"{len(buf)} samples <= patch_length {patch_length}"})
                continue
            target = buf.samples
            inp = dsp.degrade(target, r, use_lpf)
            starts = window_starts(len(buf), patch_length, stride)
            for s in starts:
                fh.write(inp[s:s + patch_length].astype("<f4").tobytes())
                fh.write(target[s:s + patch_length].astype("<f4").tobytes())
            count += len(starts)
            sources.append({"path": label, "samples": len(buf), "patches": len(starts)})
        fh.seek(12)
        fh.write(struct.pack("<I", count))

    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "r": r,
        "patch_length": patch_length,
        "stride": stride,
        "use_lpf": use_lpf,
        "sample_rate": rate,
        "split": split,
        "fractions": list(fractions) if split is not None else None,
        "seed": seed,
        "count": count,
        "sources": sources,
        "skipped": skipped,
        "payload": "patches.bin",
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return PatchArchive(out_dir)


def write_archive(out_dir, inputs: np.ndarray, targets: np.ndarray, **manifest_fields) -> "PatchArchive":
    """Archive explicit ``(count, patch_length)`` arrays (tests and synthetic experiments)."""
    inputs = np.asarray(inputs, dtype="<f4")
    targets = np.asarray(targets, dtype="<f4")
    if inputs.shape != targets.shape or inputs.ndim != 2:
        raise DomainError(f"inputs {inputs.shape} and targets {targets.shape} must be equal 2-D arrays")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    count, length = inputs.shape
    payload = np.stack([inputs, targets], axis=1)
    with open(out_dir / "patches.bin", "wb") as fh:
        fh.write(PAYLOAD_MAGIC + struct.pack("<III", PAYLOAD_VERSION, length, count))
        fh.write(payload.tobytes())
    manifest = {"schema_version": MANIFEST_SCHEMA_VERSION, "patch_length": length, "count": count,
                "payload": "patches.bin", "seed": 0, "sources": [], "skipped": []}
    manifest.update(manifest_fields)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return PatchArchive(out_dir)


class PatchArchive:
    """Read side of a patch archive (memory-mapped payload)."""

    def __init__(self, path):
        self.path = Path(path)
        self.manifest = json.loads((self.path / "manifest.json").read_text())
        if self.manifest.get("schema_version") != MANIFEST_SCHEMA_VERSION:
            raise UsageError(f"{path}: unsupported manifest schema {self.manifest.get('schema_version')}")
        payload = self.path / self.manifest["payload"]
        with open(payload, "rb") as fh:
            head = fh.read(HEADER_BYTES)
        if head[:4] != PAYLOAD_MAGIC:
            raise UsageError(f"{payload}: bad magic {head[:4]!r}")
        version, length, count = struct.unpack("<III", head[4:])
        if version != PAYLOAD_VERSION:
            raise UsageError(f"{payload}: unsupported payload version {version}")
        if length != self.manifest["patch_length"] or count != self.manifest["count"]:
            raise UsageError(f"{payload}: header ({length}, {count}) disagrees with manifest")
        self.patch_length = length
        self._records = np.memmap(payload, dtype="<f4", mode="r", offset=HEADER_BYTES,
                                  shape=(count, 2, length)) if count else np.zeros((0, 2, length), "<f4")

    def __len__(self) -> int:
        return self._records.shape[0]

    def __getitem__(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        rec = self._records[i]
        return np.array(rec[0]), np.array(rec[1])

    @property
    def seed(self) -> int:
        return int(self.manifest.get("seed", 0))

    def batch(self, indices) -> tuple[np.ndarray, np.ndarray]:
        """``(N, 1, L)`` float32 inputs and targets for the given record indices."""
        recs = np.asarray(self._records[np.asarray(indices)], dtype=np.float32)
        return recs[:, 0:1, :], recs[:, 1:2, :]

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.batch(np.arange(len(self)))

    def epoch_order(self, epoch: int, seed: int | None = None) -> np.ndarray:
        """Seeded permutation for ``epoch``; identical across runs and resumes."""
        seed = self.seed if seed is None else seed
        return np.random.default_rng([seed, epoch]).permutation(len(self))

    def iter_batches(self, batch_size: int, epoch: int | None = None,
                     seed: int | None = None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Shuffled batches when ``epoch`` is given, archive order otherwise."""
        order = np.arange(len(self)) if epoch is None else self.epoch_order(epoch, seed)
        for i in range(0, len(order), batch_size):
            yield self.batch(order[i:i + batch_size])
