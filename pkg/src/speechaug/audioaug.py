"""Audio-level augmentation: speed distortion with fixed factor
probabilities and additive noise mixing at SNRs drawn from a normal
distribution.

Defaults: factors {0.9, 1.0, 1.1} at {0.40, 0.20, 0.40}; noise counts
{0: 0.40, 1: 0.594, 2: 0.003, 3: 0.002, 4: 0.001}; SNR ~ Normal(12.50,
sigma 17.31) dB clamped to [-10, 40]. All knobs are configurable.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .audio import AudioClip, AudioError, read_wav

logger = logging.getLogger(__name__)

_PROB_TOL = 1e-12


def _check_distribution(probs: Sequence[float], what: str) -> None:
    if any(p < 0 for p in probs):
        raise AudioError(f"{what} must be non-negative")
    if abs(sum(probs) - 1.0) > _PROB_TOL:
        raise AudioError(f"{what} sum to {sum(probs)!r}, expected 1")


@dataclass(frozen=True)
class SpeedPolicy:
    factors: Tuple[float, ...] = (0.9, 1.0, 1.1)
    probabilities: Tuple[float, ...] = (0.40, 0.20, 0.40)

    def __post_init__(self):
        if len(self.factors) != len(self.probabilities):
            raise AudioError("speed factors and probabilities differ in arity")
        if any(not math.isfinite(f) or f <= 0 for f in self.factors):
            raise AudioError("speed factors must be positive and finite")
        _check_distribution(self.probabilities, "speed probabilities")

    def sample(self, rng: random.Random) -> float:
        return rng.choices(self.factors, weights=self.probabilities)[0]


DEFAULT_NOISE_COUNTS = {0: 0.40, 1: 0.594, 2: 0.003, 3: 0.002, 4: 0.001}


@dataclass(frozen=True)
class AudioPolicy:
    speed: SpeedPolicy = field(default_factory=SpeedPolicy)
    noise_counts: Tuple[Tuple[int, float], ...] = tuple(sorted(DEFAULT_NOISE_COUNTS.items()))
    snr_mean_db: float = 12.50
    snr_std_db: float = 17.31
    snr_clamp_db: Tuple[float, float] = (-10.0, 40.0)

    def __post_init__(self):
        counts = dict(self.noise_counts)
        if not counts:
            raise AudioError("noise count distribution is empty")
        if any(not isinstance(k, int) or k < 0 for k in counts):
            raise AudioError("noise counts must be non-negative integers")
        _check_distribution(list(counts.values()), "noise count probabilities")
        object.__setattr__(self, "noise_counts", tuple(sorted(counts.items())))
        if self.snr_std_db < 0:
            raise AudioError("snr standard deviation must be non-negative")
        lo, hi = self.snr_clamp_db
        if lo >= hi:
            raise AudioError("snr clamp bounds must satisfy lo < hi")

    @property
    def max_noises(self) -> int:
        return max(k for k, _ in self.noise_counts)

    def sample_snr(self, rng: random.Random) -> float:
        """One raw (pre-clamp) SNR draw in dB."""
        return rng.gauss(self.snr_mean_db, self.snr_std_db)

    def sample_n_noises(self, rng: random.Random) -> int:
        keys = [k for k, _ in self.noise_counts]
        weights = [p for _, p in self.noise_counts]
        return rng.choices(keys, weights=weights)[0]


@dataclass(frozen=True)
class NoisePlan:
    speed_factor: float
    snr_dbs: Tuple[float, ...] = ()
    noise_ids: Tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.snr_dbs) != len(self.noise_ids):
            raise AudioError("plan has mismatched snr and noise-id arities")
        if self.speed_factor <= 0 or not math.isfinite(self.speed_factor):
            raise AudioError("plan speed factor must be positive and finite")

    @property
    def n_noises(self) -> int:
        return len(self.noise_ids)


def change_speed(clip: AudioClip, factor: float) -> AudioClip:
    """Resample the time axis by `factor` at unchanged sample rate.

    Output length is round(n / factor): faster speech is shorter. Linear
    interpolation; factor 1.0 returns a bit-identical copy.
    """
    if not math.isfinite(factor) or factor <= 0:
        raise AudioError(f"speed factor must be positive and finite, got {factor!r}")
    if factor == 1.0:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    n_in = len(clip)
    n_out = int(round(n_in / factor))
    if n_in == 0 or n_out == 0:
        return AudioClip(np.zeros(n_out), clip.sample_rate)
    positions = np.minimum(np.arange(n_out) * factor, n_in - 1)
    samples = np.interp(positions, np.arange(n_in), clip.samples)
    return AudioClip(samples, clip.sample_rate)


def _fit_length(noise: np.ndarray, n: int) -> np.ndarray:
    if len(noise) >= n:
        return noise[:n]
    reps = -(-n // len(noise))
    return np.tile(noise, reps)[:n]


def mix_noise(clean: AudioClip, noise: AudioClip, snr_db: float, track_id: str = "") -> AudioClip:
    """Add `noise` to `clean` at the requested SNR.

    The noise is looped or truncated to the clean length, then scaled by
    g = (RMS_clean / RMS_noise) * 10^(-snr_db / 20), so the achieved
    10*log10(P_clean / P_noise) equals snr_db. The mix is peak-normalized
    only when a sample would leave [-1, 1]; that rescaling preserves the
    SNR.
    """
    if clean.sample_rate != noise.sample_rate:
        raise AudioError(
            f"sample rate mismatch: clean {clean.sample_rate}, noise {noise.sample_rate}"
        )
    if not math.isfinite(snr_db):
        raise AudioError(f"snr must be finite, got {snr_db!r}")
    if len(clean) == 0 or clean.rms() == 0.0:
        raise AudioError("clean clip has zero power")
    name = repr(track_id) if track_id else "<unnamed>"
    if len(noise) == 0:
        raise AudioError(f"noise track {name} is empty")
    fitted = _fit_length(noise.samples, len(clean))
    noise_rms = float(np.sqrt(np.mean(np.square(fitted))))
    if noise_rms == 0.0:
        raise AudioError(f"noise track {name} is silent (zero RMS)")
    gain = (clean.rms() / noise_rms) * 10.0 ** (-snr_db / 20.0)
    mixed = clean.samples + gain * fitted
    peak = float(np.max(np.abs(mixed))) if len(mixed) else 0.0
    if peak > 1.0:
        logger.info("peak normalization applied: scale %.6f (track %s)", 1.0 / peak, track_id)
        mixed = mixed / peak
    return AudioClip(mixed, clean.sample_rate)


def sample_plan(
    policy: AudioPolicy,
    noise_ids: Sequence[str],
    rng: random.Random,
) -> NoisePlan:
    """Draw one augmentation plan: a speed factor, a noise count, and a
    clamped SNR plus a distinct noise track per noise."""
    factor = policy.speed.sample(rng)
    n_noises = policy.sample_n_noises(rng)
    if n_noises > len(noise_ids):
        raise AudioError(
            f"plan wants {n_noises} noise tracks but the pool has {len(noise_ids)}"
        )
    lo, hi = policy.snr_clamp_db
    snrs = tuple(min(hi, max(lo, policy.sample_snr(rng))) for _ in range(n_noises))
    ids = tuple(rng.sample(list(noise_ids), n_noises))
    return NoisePlan(speed_factor=factor, snr_dbs=snrs, noise_ids=ids)


class NoiseStore:
    """Noise pool backed by a JSONL manifest of {id, path, duration}.

    Relative paths resolve against the manifest's directory. Loaded clips
    are cached; pools are small relative to the audio they decorate.
    """

    def __init__(self, entries: Dict[str, Path]):
        self._paths = dict(entries)
        self._cache: Dict[str, AudioClip] = {}

    @classmethod
    def from_manifest(cls, path) -> "NoiseStore":
        path = Path(path)
        entries: Dict[str, Path] = {}
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    track_id = record["id"]
                    track_path = Path(record["path"])
                except (ValueError, KeyError, TypeError) as e:
                    raise AudioError(f"{path}:{lineno}: bad noise manifest entry: {e}") from e
                if track_id in entries:
                    raise AudioError(f"{path}:{lineno}: duplicate noise id {track_id!r}")
                if not track_path.is_absolute():
                    track_path = path.parent / track_path
                entries[track_id] = track_path
        return cls(entries)

    @property
    def ids(self) -> List[str]:
        return sorted(self._paths)

    def __len__(self) -> int:
        return len(self._paths)

    def load(self, track_id: str) -> AudioClip:
        if track_id in self._cache:
            return self._cache[track_id]
        if track_id not in self._paths:
            raise AudioError(f"unknown noise track {track_id!r}")
        track_path = self._paths[track_id]
        if not track_path.exists():
            raise AudioError(f"noise track {track_id!r} missing: {track_path}")
        clip = read_wav(track_path)
        self._cache[track_id] = clip
        return clip


def apply_plan(clip: AudioClip, plan: NoisePlan, pool: Optional[NoiseStore]) -> AudioClip:
    """Execute a plan: speed change first, then each noise mixed at its
    SNR relative to the current (already speed-changed, already mixed)
    signal. Deterministic given (clip, plan)."""
    current = change_speed(clip, plan.speed_factor)
    if plan.n_noises and pool is None:
        raise AudioError("plan references noise tracks but no pool was given")
    for snr_db, track_id in zip(plan.snr_dbs, plan.noise_ids):
        noise = pool.load(track_id)
        if noise.sample_rate != current.sample_rate:
            raise AudioError(
                f"noise track {track_id!r} sample rate {noise.sample_rate} "
                f"does not match audio rate {current.sample_rate}"
            )
        current = mix_noise(current, noise, snr_db, track_id=track_id)
    return current
