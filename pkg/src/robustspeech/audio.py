"""Mono waveform container and 16-bit PCM WAV I/O.

All audio in the package is a 1-D float array in [-1, 1]. Files are mono
16 kHz 16-bit integer PCM in RIFF/WAVE containers; samples convert to and
from reals by dividing/multiplying by 32768.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

PCM_SCALE = 32768.0
DEFAULT_SAMPLE_RATE = 16000


@dataclass
class AudioClip:
    """Mono waveform with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE
    id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or len(self.samples) < 1:
            raise DataError(f"clip {self.id!r}: need a non-empty 1-D sample array")
        if not np.all(np.isfinite(self.samples)):
            raise DataError(f"clip {self.id!r}: non-finite samples")
        if self.sample_rate <= 0:
            raise DataError(f"clip {self.id!r}: sample_rate must be positive")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def power(self) -> float:
        """Mean squared amplitude over the whole clip."""
        return float(np.mean(self.samples ** 2))


def write_wav(path, clip: AudioClip) -> None:
    """Write a clip as mono 16-bit PCM; deterministic for identical input."""
    pcm = np.clip(np.round(clip.samples * PCM_SCALE), -32768, 32767).astype("<i2")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(clip.sample_rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path, clip_id: str = "") -> AudioClip:
    """Read a mono 16-bit PCM WAV file."""
    path = Path(path)
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise DataError(f"{path}: expected mono audio")
        if fh.getsampwidth() != 2:
            raise DataError(f"{path}: expected 16-bit PCM")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioClip(pcm.astype(np.float64) / PCM_SCALE, rate, clip_id or path.stem)
