"""Training-manifest mixing: interleave real and synthetic entries so
the synthetic share of what a training loop sees is a tunable ratio.

The ratio is applied per emitted slot (Bernoulli source selection), not
by concatenating corpora, so it is independent of corpus sizes. Within
each source, entries are served in reshuffled epochs: every entry of a
source appears once before any entry of that source repeats.
"""

from __future__ import annotations

import json
import random
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence

VALID_MIX_SOURCES = frozenset({"real", "synthetic"})


class MixError(ValueError):
    """Raised for invalid manifest entries or mixing policies."""


@dataclass(frozen=True)
class ManifestEntry:
    audio_path: str
    text: str
    duration_s: float
    source: str
    origin: str = ""

    def __post_init__(self):
        if not self.audio_path:
            raise MixError("manifest entry needs an audio path")
        if not self.text:
            raise MixError("manifest entry text is empty")
        if not self.duration_s > 0:
            raise MixError(f"duration must be positive, got {self.duration_s!r}")
        if self.source not in VALID_MIX_SOURCES:
            raise MixError(
                f"source {self.source!r} not in {sorted(VALID_MIX_SOURCES)}"
            )

    def as_dict(self) -> Dict[str, object]:
        return {
            "audio_path": self.audio_path,
            "text": self.text,
            "duration_s": self.duration_s,
            "source": self.source,
            "origin": self.origin,
        }


@dataclass(frozen=True)
class MixPolicy:
    ratio: float
    epoch_len: int
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise MixError(f"mix ratio {self.ratio!r} outside [0, 1]")
        if self.epoch_len < 0:
            raise MixError(f"epoch length must be non-negative, got {self.epoch_len!r}")


def load_manifest(path) -> List[ManifestEntry]:
    path = Path(path)
    entries = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                entries.append(
                    ManifestEntry(
                        audio_path=record["audio_path"],
                        text=record["text"],
                        duration_s=record["duration_s"],
                        source=record["source"],
                        origin=record.get("origin", ""),
                    )
                )
            except (ValueError, KeyError, TypeError) as e:
                raise MixError(f"{path}:{lineno}: bad manifest entry: {e}") from e
    return entries


def save_manifest(entries: Sequence[ManifestEntry], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for entry in entries:
            f.write(json.dumps(entry.as_dict(), ensure_ascii=False) + "\n")


def mix_stream(
    real: Sequence[ManifestEntry],
    synthetic: Sequence[ManifestEntry],
    policy: MixPolicy,
) -> List[ManifestEntry]:
    """Emit `policy.epoch_len` entries: each slot is synthetic with
    probability `policy.ratio`, else real. Deterministic given the seed.
    """
    if not real:
        raise MixError("real manifest is empty")
    if policy.ratio > 0 and not synthetic:
        raise MixError("mix ratio > 0 requires a non-empty synthetic manifest")
    rng = random.Random(policy.seed)
    pools = {"real": list(real), "synthetic": list(synthetic)}
    queues: Dict[str, deque] = {"real": deque(), "synthetic": deque()}

    def next_entry(name: str) -> ManifestEntry:
        queue = queues[name]
        if not queue:
            epoch = list(pools[name])
            rng.shuffle(epoch)
            queue.extend(epoch)
        return queue.popleft()

    out = []
    for _ in range(policy.epoch_len):
        pick = "synthetic" if rng.random() < policy.ratio else "real"
        out.append(next_entry(pick))
    return out


@dataclass(frozen=True)
class BudgetReport:
    entries_by_source: Dict[str, int] = field(default_factory=dict)
    hours_by_source: Dict[str, float] = field(default_factory=dict)
    entries_by_origin: Dict[str, int] = field(default_factory=dict)
    hours_by_origin: Dict[str, float] = field(default_factory=dict)
    synthetic_share_by_count: float = 0.0
    synthetic_share_by_duration: float = 0.0
    ratio: float = 0.0

    def as_dict(self) -> Dict[str, object]:
        return {
            "entries_by_source": dict(self.entries_by_source),
            "hours_by_source": dict(self.hours_by_source),
            "entries_by_origin": dict(self.entries_by_origin),
            "hours_by_origin": dict(self.hours_by_origin),
            "synthetic_share_by_count": self.synthetic_share_by_count,
            "synthetic_share_by_duration": self.synthetic_share_by_duration,
            "ratio": self.ratio,
        }


def report_budget(
    real: Sequence[ManifestEntry],
    synthetic: Sequence[ManifestEntry],
    policy: MixPolicy,
) -> BudgetReport:
    """Raw data budget of the two manifests: totals and fractions by
    source and by origin, in entry counts and hours. Shares are of the
    pooled manifests, before any ratio weighting."""
    entries_by_source: Counter = Counter()
    seconds_by_source: Counter = Counter()
    entries_by_origin: Counter = Counter()
    seconds_by_origin: Counter = Counter()
    for entry in list(real) + list(synthetic):
        entries_by_source[entry.source] += 1
        seconds_by_source[entry.source] += entry.duration_s
        origin = entry.origin or "unknown"
        entries_by_origin[origin] += 1
        seconds_by_origin[origin] += entry.duration_s
    total_entries = sum(entries_by_source.values())
    total_seconds = sum(seconds_by_source.values())
    return BudgetReport(
        entries_by_source=dict(entries_by_source),
        hours_by_source={k: v / 3600.0 for k, v in seconds_by_source.items()},
        entries_by_origin=dict(entries_by_origin),
        hours_by_origin={k: v / 3600.0 for k, v in seconds_by_origin.items()},
        synthetic_share_by_count=(
            entries_by_source["synthetic"] / total_entries if total_entries else 0.0
        ),
        synthetic_share_by_duration=(
            seconds_by_source["synthetic"] / total_seconds if total_seconds else 0.0
        ),
        ratio=policy.ratio,
    )
