"""Text-to-speech bridging: deterministic mock synthesis, voice/speed/
pitch assignment, and an external TTS client with a content-addressed
audio cache.

The mock synthesizer exists so the whole pipeline and its tests run with
zero external dependencies; it produces harmonic pseudo-speech that is a
pure function of (text, voice, seed), not anything resembling a real
acoustic model.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import requests

from .audio import DEFAULT_SAMPLE_RATE, AudioClip, from_wav_bytes, read_wav, resample, to_wav_bytes
from .corpus import Corpus

logger = logging.getLogger(__name__)

SAMPLES_PER_CHAR = 320  # 20 ms at 16 kHz


class TtsError(ValueError):
    """Raised for invalid voice plans or synthesis contract violations."""


@dataclass(frozen=True)
class VoicePlan:
    voices: Tuple[str, ...]
    speeds: Tuple[float, ...] = (0.9, 1.0, 1.1)
    pitches: Tuple[float, ...] = (-2.0, -1.0, 0.0, 1.0, 2.0)

    def __post_init__(self):
        if not self.voices:
            raise TtsError("voice plan has no voices")
        if not self.speeds or not self.pitches:
            raise TtsError("voice plan needs at least one speed and one pitch")
        if any(s <= 0 for s in self.speeds):
            raise TtsError("speed multipliers must be positive")

    @classmethod
    def default_profile(cls) -> "VoicePlan":
        """96 voices, 3 speeds, 5 pitch steps."""
        return cls(voices=tuple(f"voice{i:02d}" for i in range(96)))

    @property
    def combinations(self) -> int:
        return len(self.voices) * len(self.speeds) * len(self.pitches)


def _voice_base_freq(voice: str) -> float:
    # Stable across processes (unlike hash()); spread over ~90-340 Hz.
    return 90.0 + (zlib.crc32(voice.encode("utf-8")) % 2500) / 10.0


def synthesize_mock(
    text: str,
    voice: str,
    seed: int = 0,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> AudioClip:
    """Deterministic harmonic pseudo-speech.

    Each character contributes a fixed-length segment whose base frequency
    is a pure function of (voice, character), so duration grows strictly
    with text length and identical inputs give bit-identical buffers.
    """
    if not text:
        raise TtsError("cannot synthesize empty text")
    base = _voice_base_freq(voice)
    phase = (zlib.crc32(f"{voice}|{seed}".encode("utf-8")) % 1000) / 1000.0 * 2 * np.pi
    segments = []
    t = np.arange(SAMPLES_PER_CHAR) / sample_rate
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(SAMPLES_PER_CHAR) / SAMPLES_PER_CHAR)
    for ch in text:
        if ch.isspace():
            segments.append(np.zeros(SAMPLES_PER_CHAR))
            continue
        freq = base * (1.0 + (ord(ch) % 16) / 16.0)
        tone = 0.35 * np.sin(2 * np.pi * freq * t + phase) + 0.12 * np.sin(
            2 * np.pi * 2 * freq * t + phase
        )
        segments.append(tone * window)
    return AudioClip(np.concatenate(segments), sample_rate)


def assign_voice_params(
    utterances: Corpus,
    plan: VoicePlan,
    seed: int = 0,
) -> List[Tuple[str, str, float, float]]:
    """Uniform independent (voice, speed, pitch) draw per utterance.

    Deterministic given the seed; returns (utterance id, voice, speed,
    pitch) tuples in corpus order.
    """
    rng = random.Random(seed)
    out = []
    for u in utterances:
        out.append((u.id, rng.choice(plan.voices), rng.choice(plan.speeds), rng.choice(plan.pitches)))
    return out


def _cache_key(text: str, voice: str, speed: float, pitch: float) -> str:
    payload = json.dumps(
        {"text": text, "voice": voice, "speed": speed, "pitch": pitch}, sort_keys=True
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class AudioCache:
    """Content-addressed WAV store: ``<hex key>.wav`` plus a JSON sidecar
    holding the request tuple, which lets corruption be detected by
    recomputing the key from the sidecar."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _paths(self, key: str) -> Tuple[Path, Path]:
        return self.root / f"{key}.wav", self.root / f"{key}.json"

    def get(self, text: str, voice: str, speed: float, pitch: float) -> Optional[AudioClip]:
        key = _cache_key(text, voice, speed, pitch)
        wav_path, sidecar_path = self._paths(key)
        if not wav_path.exists() or not sidecar_path.exists():
            return None
        try:
            sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
            recomputed = _cache_key(
                sidecar["text"], sidecar["voice"], sidecar["speed"], sidecar["pitch"]
            )
        except (ValueError, KeyError):
            recomputed = ""
        if recomputed != key:
            logger.warning("cache entry %s failed verification; dropping", key)
            wav_path.unlink(missing_ok=True)
            sidecar_path.unlink(missing_ok=True)
            return None
        return read_wav(wav_path)

    def put(self, text: str, voice: str, speed: float, pitch: float, clip: AudioClip) -> Path:
        key = _cache_key(text, voice, speed, pitch)
        wav_path, sidecar_path = self._paths(key)
        if not wav_path.exists():
            # First writer wins; concurrent writers of the same key write
            # identical content so the race is benign.
            tmp = wav_path.with_suffix(".wav.tmp")
            tmp.write_bytes(to_wav_bytes(clip))
            tmp.replace(wav_path)
            sidecar_path.write_text(
                json.dumps({"text": text, "voice": voice, "speed": speed, "pitch": pitch}),
                encoding="utf-8",
            )
        return wav_path

    def path_for(self, text: str, voice: str, speed: float, pitch: float) -> Path:
        return self._paths(_cache_key(text, voice, speed, pitch))[0]


@dataclass
class SynthesisResult:
    clips: List[Optional[AudioClip]]
    failures: List[Tuple[int, str]] = field(default_factory=list)
    upstream_calls: int = 0
    cache_hits: int = 0


def synthesize_external(
    batch: Sequence[Tuple[str, str, float, float]],
    endpoint: str,
    cache: AudioCache,
    timeout: float = 30.0,
    max_retries: int = 3,
    backoff_s: float = 0.25,
    expected_rate: int = DEFAULT_SAMPLE_RATE,
    session: Optional[requests.Session] = None,
) -> SynthesisResult:
    """Fetch (text, voice, speed, pitch) synthesis requests with caching.

    Cache hits skip the upstream call entirely. Responses are validated
    (decodable, non-empty) and resampled to the expected rate on ingest;
    failures are reported per item, never raised mid-batch.
    """
    session = session or requests.Session()
    result = SynthesisResult(clips=[None] * len(batch))
    for i, (text, voice, speed, pitch) in enumerate(batch):
        cached = cache.get(text, voice, speed, pitch)
        if cached is not None:
            result.clips[i] = cached
            result.cache_hits += 1
            continue
        payload = {"text": text, "voice": voice, "speed": speed, "pitch": pitch}
        body = None
        error = None
        for attempt in range(max_retries + 1):
            result.upstream_calls += 1
            try:
                response = session.post(endpoint, json=payload, timeout=timeout)
                response.raise_for_status()
                body = response.content
                break
            except requests.RequestException as e:
                error = str(e)
                if attempt < max_retries:
                    time.sleep(backoff_s * (2**attempt))
        if body is None:
            result.failures.append((i, f"transport failure: {error}"))
            continue
        try:
            clip = from_wav_bytes(body)
        except Exception as e:
            result.failures.append((i, f"invalid audio: {e}"))
            continue
        if not len(clip):
            result.failures.append((i, "empty audio"))
            continue
        if clip.sample_rate != expected_rate:
            clip = resample(clip, expected_rate)
        cache.put(text, voice, speed, pitch, clip)
        result.clips[i] = clip
    return result
