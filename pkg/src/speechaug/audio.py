"""Audio clip container and 16-bit mono PCM WAV interchange.

All module boundaries exchange audio as 16 kHz mono float arrays in
[-1, 1]; external audio is resampled on ingest so downstream DSP never
has to negotiate formats.
"""

from __future__ import annotations

import io
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_SAMPLE_RATE = 16_000


class AudioError(ValueError):
    """Raised for invalid clips or unreadable audio payloads."""


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioError(f"expected mono samples, got shape {samples.shape}")
        if samples.size and not np.all(np.isfinite(samples)):
            raise AudioError("samples contain non-finite values")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate

    def rms(self) -> float:
        if not len(self):
            return 0.0
        return float(np.sqrt(np.mean(np.square(self.samples))))


def to_wav_bytes(clip: AudioClip) -> bytes:
    """Encode as 16-bit mono PCM WAV; samples are clipped to [-1, 1]."""
    pcm = np.clip(clip.samples, -1.0, 1.0)
    ints = np.round(pcm * 32767.0).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate)
        w.writeframes(ints.tobytes())
    return buf.getvalue()


def from_wav_bytes(data: bytes) -> AudioClip:
    if not data:
        raise AudioError("empty audio payload")
    try:
        with wave.open(io.BytesIO(data), "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            frames = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as e:
        raise AudioError(f"unreadable WAV payload: {e}") from None
    if width != 2:
        raise AudioError(f"expected 16-bit PCM, got sample width {width}")
    samples = np.frombuffer(frames, dtype="<i2").astype(np.float64) / 32767.0
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    return AudioClip(samples=samples, sample_rate=rate)


def write_wav(clip: AudioClip, path) -> None:
    Path(path).write_bytes(to_wav_bytes(clip))


def read_wav(path) -> AudioClip:
    return from_wav_bytes(Path(path).read_bytes())


def resample(clip: AudioClip, sample_rate: int) -> AudioClip:
    """Linear-interpolation resample to a new sample rate."""
    if sample_rate <= 0:
        raise AudioError("target sample_rate must be positive")
    if sample_rate == clip.sample_rate or not len(clip):
        return AudioClip(clip.samples.copy(), sample_rate)
    n_out = int(round(len(clip) * sample_rate / clip.sample_rate))
    positions = np.arange(n_out) * (clip.sample_rate / sample_rate)
    positions = np.clip(positions, 0, len(clip) - 1)
    return AudioClip(np.interp(positions, np.arange(len(clip)), clip.samples), sample_rate)
