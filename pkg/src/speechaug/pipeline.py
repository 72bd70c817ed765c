"""Pipeline orchestration: one declarative JSON config drives the stage
sequence text -> tts -> audio -> mix, with content-addressed stage
caching, per-stage accounting, and a JSON run report.

All randomness derives from the master seed, and per-item seeds are
derived from stable content (never from worker scheduling), so results
are invariant to the worker count and reruns are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .audio import read_wav, write_wav
from .audioaug import AudioPolicy, NoiseStore, SpeedPolicy, apply_plan, change_speed, sample_plan
from .corpus import Corpus, compute_stats, load_corpus, save_corpus
from .filler import AugPlan, run_text_augmentation
from .grammar import load_grammar
from .masking import TagLexicon
from .mixer import (
    ManifestEntry,
    MixPolicy,
    load_manifest,
    mix_stream,
    report_budget,
    save_manifest,
)
from .ttsbridge import (
    AudioCache,
    VoicePlan,
    assign_voice_params,
    synthesize_external,
    synthesize_mock,
)

logger = logging.getLogger(__name__)

_TOP_KEYS = {"seed_corpus", "seed_format", "out_dir", "seed", "workers", "text", "tts", "audio", "mix"}
_TEXT_KEYS = {
    "methods", "factor", "backend", "endpoint", "grammar", "tag_lexicon", "mask_token",
    "templates_per_utterance", "mask_mode", "k_choices", "ngram_order", "ngram_k",
    "top_k", "temperature", "fills_per_template", "max_rounds", "grammar_max_depth",
}
_TTS_KEYS = {"backend", "endpoint", "voices", "speeds", "pitches"}
_AUDIO_KEYS = {
    "enabled", "apply_to", "speed_factors", "speed_probabilities", "noise_counts",
    "snr_mean_db", "snr_std_db", "snr_clamp_db", "noise_manifest",
}
_MIX_KEYS = {"ratio", "epoch_len", "real_manifest"}


class ConfigError(ValueError):
    """Invalid pipeline configuration; carries the full diagnostic list."""

    def __init__(self, diagnostics: Sequence[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = list(diagnostics)


class PipelineError(RuntimeError):
    """A stage failed; carries the stage name and the partial report."""

    def __init__(self, stage: str, report: "RunReport", cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.report = report
        self.cause = cause


@dataclass
class PipelineConfig:
    seed_corpus: str
    out_dir: str
    seed: int = 0
    workers: int = 1
    seed_format: Optional[str] = None
    text: Dict = field(default_factory=dict)
    tts: Dict = field(default_factory=dict)
    audio: Dict = field(default_factory=dict)
    mix: Optional[Dict] = None
    raw: Dict = field(default_factory=dict)
    unknown_keys: List[str] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: Dict, base_dir=".") -> "PipelineConfig":
        base = Path(base_dir)

        def _resolve(value):
            if not value:
                return None
            p = Path(value)
            return str(p if p.is_absolute() else base / p)

        unknown = [f"unknown config key {k!r}" for k in sorted(set(data) - _TOP_KEYS)]
        for section, keys in (("text", _TEXT_KEYS), ("tts", _TTS_KEYS), ("audio", _AUDIO_KEYS), ("mix", _MIX_KEYS)):
            sub = data.get(section) or {}
            if isinstance(sub, dict):
                unknown += [f"unknown config key {section}.{k!r}" for k in sorted(set(sub) - keys)]
        text = dict(data.get("text") or {})
        audio = dict(data.get("audio") or {})
        mix = data.get("mix")
        mix = dict(mix) if mix else None
        for section, key in ((text, "grammar"), (text, "tag_lexicon"), (audio, "noise_manifest")):
            if section.get(key):
                section[key] = _resolve(section[key])
        if mix and mix.get("real_manifest"):
            mix["real_manifest"] = _resolve(mix["real_manifest"])
        return cls(
            seed_corpus=_resolve(data.get("seed_corpus", "")) or "",
            out_dir=_resolve(data.get("out_dir", "")) or "",
            seed=data.get("seed", 0),
            workers=data.get("workers", 1),
            seed_format=data.get("seed_format"),
            text=text,
            tts=dict(data.get("tts") or {}),
            audio=audio,
            mix=mix,
            raw=dict(data),
            unknown_keys=unknown,
        )

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True).encode("utf-8")
        ).hexdigest()


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise ConfigError([f"cannot read config {path}: {e}"]) from e
    if not isinstance(data, dict):
        raise ConfigError([f"config {path} must hold a JSON object"])
    return PipelineConfig.from_dict(data, base_dir=path.parent)


def build_aug_plan(text: Dict, seed: int = 0) -> AugPlan:
    grammar = load_grammar(text["grammar"]) if text.get("grammar") else None
    lexicon = (
        TagLexicon.from_file(text["tag_lexicon"]) if text.get("tag_lexicon") else None
    )
    kwargs = {
        k: text[k]
        for k in (
            "backend", "endpoint", "mask_token", "templates_per_utterance", "mask_mode",
            "ngram_order", "ngram_k", "top_k", "temperature", "fills_per_template",
            "max_rounds", "grammar_max_depth",
        )
        if k in text
    }
    if "methods" in text:
        kwargs["methods"] = tuple(text["methods"])
    if "factor" in text:
        kwargs["factor"] = float(text["factor"])
    if "k_choices" in text:
        kwargs["k_choices"] = tuple(text["k_choices"])
    return AugPlan(seed=seed, grammar=grammar, tag_lexicon=lexicon, **kwargs)


def build_voice_plan(tts: Dict) -> VoicePlan:
    voices = tts.get("voices", 96)
    if isinstance(voices, int):
        voices = tuple(f"voice{i:02d}" for i in range(voices))
    else:
        voices = tuple(voices)
    kwargs = {}
    if "speeds" in tts:
        kwargs["speeds"] = tuple(float(s) for s in tts["speeds"])
    if "pitches" in tts:
        kwargs["pitches"] = tuple(float(p) for p in tts["pitches"])
    return VoicePlan(voices=voices, **kwargs)


def build_audio_policy(audio: Dict) -> AudioPolicy:
    speed_kwargs = {}
    if "speed_factors" in audio:
        speed_kwargs["factors"] = tuple(float(f) for f in audio["speed_factors"])
    if "speed_probabilities" in audio:
        speed_kwargs["probabilities"] = tuple(float(p) for p in audio["speed_probabilities"])
    kwargs = {"speed": SpeedPolicy(**speed_kwargs)}
    if "noise_counts" in audio:
        kwargs["noise_counts"] = tuple(
            sorted((int(k), float(v)) for k, v in audio["noise_counts"].items())
        )
    for key in ("snr_mean_db", "snr_std_db"):
        if key in audio:
            kwargs[key] = float(audio[key])
    if "snr_clamp_db" in audio:
        lo, hi = audio["snr_clamp_db"]
        kwargs["snr_clamp_db"] = (float(lo), float(hi))
    return AudioPolicy(**kwargs)


def build_mix_policy(mix: Optional[Dict], seed: int = 0) -> Optional[MixPolicy]:
    if mix is None:
        return None
    return MixPolicy(
        ratio=float(mix.get("ratio", 0.1)),
        epoch_len=int(mix.get("epoch_len", 1000)),
        seed=_derive_seed(seed, "mix"),
    )


def validate_config(config: PipelineConfig) -> List[str]:
    """Check every invariant of every sub-policy; empty list iff valid."""
    diags = list(config.unknown_keys)
    if not config.seed_corpus:
        diags.append("seed_corpus is required")
    elif not Path(config.seed_corpus).exists():
        diags.append(f"seed corpus not found: {config.seed_corpus}")
    if not config.out_dir:
        diags.append("out_dir is required")
    if config.workers < 1:
        diags.append(f"workers must be >= 1, got {config.workers}")
    if config.seed_format not in (None, "lines", "jsonl"):
        diags.append(f"seed_format must be 'lines' or 'jsonl', got {config.seed_format!r}")

    for key, label in (("grammar", "grammar file"), ("tag_lexicon", "tag lexicon")):
        path = config.text.get(key)
        if path and not Path(path).exists():
            diags.append(f"{label} not found: {path}")
    try:
        build_aug_plan(config.text, config.seed)
    except Exception as e:
        diags.append(f"text: {e}")

    tts_backend = config.tts.get("backend", "mock")
    if tts_backend not in ("mock", "external"):
        diags.append(f"tts backend must be 'mock' or 'external', got {tts_backend!r}")
    if tts_backend == "external" and not config.tts.get("endpoint"):
        diags.append("tts backend 'external' requires an endpoint")
    try:
        build_voice_plan(config.tts)
    except Exception as e:
        diags.append(f"tts: {e}")

    policy = None
    try:
        policy = build_audio_policy(config.audio)
    except Exception as e:
        diags.append(f"audio: {e}")
    noise_manifest = config.audio.get("noise_manifest")
    audio_enabled = config.audio.get("enabled", True)
    if noise_manifest and not Path(noise_manifest).exists():
        diags.append(f"noise manifest not found: {noise_manifest}")
    if (
        audio_enabled
        and policy is not None
        and policy.max_noises > 0
        and any(p > 0 for k, p in policy.noise_counts if k > 0)
        and not noise_manifest
    ):
        diags.append("audio policy can draw noises but no noise_manifest is configured")
    apply_to = config.audio.get("apply_to", ["synthetic"])
    if not set(apply_to) <= {"real", "synthetic"}:
        diags.append(f"audio.apply_to entries must be 'real' or 'synthetic', got {apply_to!r}")

    if config.mix is not None:
        try:
            build_mix_policy(config.mix, config.seed)
        except Exception as e:
            diags.append(f"mix: {e}")
        real_manifest = config.mix.get("real_manifest")
        if not real_manifest:
            diags.append("mix requires a real_manifest path")
        elif not Path(real_manifest).exists():
            diags.append(f"real manifest not found: {real_manifest}")
    return diags


@dataclass
class StageResult:
    name: str
    inputs: int
    outputs: int
    drops: int
    duration_s: float = 0.0
    cached: bool = False
    extra: Dict = field(default_factory=dict)

    def as_dict(self) -> Dict:
        return {
            "name": self.name,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "drops": self.drops,
            "duration_s": self.duration_s,
            "cached": self.cached,
            "extra": dict(self.extra),
        }


@dataclass
class RunReport:
    stages: List[StageResult] = field(default_factory=list)
    stats_before: Dict = field(default_factory=dict)
    stats_after: Dict = field(default_factory=dict)
    budget: Dict = field(default_factory=dict)
    seed: int = 0
    config_hash: str = ""
    status: str = "ok"
    failed_stage: Optional[str] = None
    error: Optional[str] = None

    @property
    def synthesis_calls(self) -> int:
        return sum(s.extra.get("synthesis_calls", 0) for s in self.stages)

    def as_dict(self) -> Dict:
        return {
            "status": self.status,
            "failed_stage": self.failed_stage,
            "error": self.error,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "stages": [s.as_dict() for s in self.stages],
            "stats_before": dict(self.stats_before),
            "stats_after": dict(self.stats_after),
            "budget": dict(self.budget),
            "synthesis_calls": self.synthesis_calls,
        }

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def _derive_seed(*parts) -> int:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).hexdigest()
    return int(digest[:16], 16)


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _stage_key(name: str, payload: Dict) -> str:
    return hashlib.sha256(
        json.dumps([name, payload], sort_keys=True).encode("utf-8")
    ).hexdigest()


def _load_stage_summary(stage_dir: Path, name: str, key: str) -> Optional[Dict]:
    state_path = stage_dir / f"{name}.json"
    if not state_path.exists():
        return None
    try:
        state = json.loads(state_path.read_text(encoding="utf-8"))
    except ValueError:
        return None
    if state.get("key") != key:
        return None
    if not all(Path(p).exists() for p in state.get("artifacts", [])):
        return None
    return state.get("summary", {})


def _save_stage_summary(stage_dir: Path, name: str, key: str, artifacts: Sequence, summary: Dict) -> None:
    state = {"key": key, "artifacts": [str(p) for p in artifacts], "summary": summary}
    (stage_dir / f"{name}.json").write_text(json.dumps(state, indent=2), encoding="utf-8")


def _seed_corpus_format(config: PipelineConfig) -> str:
    if config.seed_format:
        return config.seed_format
    return "jsonl" if config.seed_corpus.endswith(".jsonl") else "lines"


def _map_workers(fn, items, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items))


def stage_text(config: PipelineConfig, out: Path, stage_dir: Path) -> Tuple[Corpus, StageResult, Dict, Dict]:
    text_out = out / "text.jsonl"
    seed_corpus = load_corpus(config.seed_corpus, format=_seed_corpus_format(config))
    key = _stage_key(
        "text",
        {"config": config.text, "seed": config.seed, "input": _sha256_file(config.seed_corpus)},
    )
    summary = _load_stage_summary(stage_dir, "text", key)
    if summary is not None:
        corpus = load_corpus(text_out, format="jsonl")
        result = StageResult(
            name="text",
            inputs=summary["inputs"],
            outputs=summary["outputs"],
            drops=summary["drops"],
            cached=True,
            extra=summary.get("extra", {}),
        )
        return corpus, result, summary["stats_before"], summary["stats_after"]

    plan = build_aug_plan(config.text, config.seed)
    corpus, aug_report = run_text_augmentation(seed_corpus, plan)
    save_corpus(corpus, text_out)
    stats_before = compute_stats(seed_corpus).as_dict()
    stats_after = compute_stats(
        corpus, seed=seed_corpus, dedup_drop_rate=aug_report.seed_dedup_rate
    ).as_dict()
    extra = {
        "per_method": dict(aug_report.per_method),
        "filler_drops": aug_report.drops,
        "rounds": aug_report.rounds,
        "shortfall": aug_report.shortfall,
    }
    summary = {
        "inputs": aug_report.target,
        "outputs": aug_report.produced,
        "drops": aug_report.shortfall,
        "extra": extra,
        "stats_before": stats_before,
        "stats_after": stats_after,
    }
    _save_stage_summary(stage_dir, "text", key, [text_out], summary)
    result = StageResult(
        name="text",
        inputs=aug_report.target,
        outputs=aug_report.produced,
        drops=aug_report.shortfall,
        extra=extra,
    )
    return corpus, result, stats_before, stats_after


def stage_tts(config: PipelineConfig, corpus: Corpus, out: Path, stage_dir: Path) -> Tuple[List[ManifestEntry], StageResult]:
    tts_out = out / "tts.jsonl"
    cache = AudioCache(out / ".cache" / "tts")
    backend = config.tts.get("backend", "mock")
    key = _stage_key(
        "tts",
        {"config": config.tts, "seed": config.seed, "input": _sha256_file(out / "text.jsonl")},
    )
    summary = _load_stage_summary(stage_dir, "tts", key)
    if summary is not None:
        entries = load_manifest(tts_out)
        result = StageResult(
            name="tts",
            inputs=summary["inputs"],
            outputs=summary["outputs"],
            drops=summary["drops"],
            cached=True,
            extra={"backend": backend, "synthesis_calls": 0, "cache_hits": 0},
        )
        return entries, result

    plan = build_voice_plan(config.tts)
    assignments = assign_voice_params(corpus, plan, seed=_derive_seed(config.seed, "tts"))
    by_id = {u.id: u for u in corpus}
    items = [
        (by_id[uid], voice, speed, pitch) for uid, voice, speed, pitch in assignments
    ]
    entries: List[Optional[ManifestEntry]] = [None] * len(items)
    failures: List[Tuple[str, str]] = []
    calls = 0
    hits = 0

    if backend == "mock":
        def synth_one(item):
            utt, voice, speed, pitch = item
            clip = cache.get(utt.text, voice, speed, pitch)
            if clip is not None:
                return utt, voice, speed, pitch, clip, True
            # Mock audio is a function of the request tuple only, so the
            # content-addressed cache stays valid across master seeds.
            clip = synthesize_mock(utt.text, voice, seed=0)
            clip = change_speed(clip, speed)
            cache.put(utt.text, voice, speed, pitch, clip)
            return utt, voice, speed, pitch, clip, False

        results = _map_workers(synth_one, items, config.workers)
        for i, (utt, voice, speed, pitch, clip, was_hit) in enumerate(results):
            hits += was_hit
            calls += not was_hit
            entries[i] = ManifestEntry(
                audio_path=str(cache.path_for(utt.text, voice, speed, pitch)),
                text=utt.text,
                duration_s=clip.duration_s,
                source="synthetic",
                origin=utt.source,
            )
    else:
        batch = [(utt.text, voice, speed, pitch) for utt, voice, speed, pitch in items]
        result = synthesize_external(batch, config.tts["endpoint"], cache)
        calls = result.upstream_calls
        hits = result.cache_hits
        for i, clip in enumerate(result.clips):
            if clip is None:
                continue
            utt, voice, speed, pitch = items[i]
            entries[i] = ManifestEntry(
                audio_path=str(cache.path_for(utt.text, voice, speed, pitch)),
                text=utt.text,
                duration_s=clip.duration_s,
                source="synthetic",
                origin=utt.source,
            )
        failures = [(items[i][0].id, reason) for i, reason in result.failures]

    kept = [e for e in entries if e is not None]
    save_manifest(kept, tts_out)
    summary = {"inputs": len(items), "outputs": len(kept), "drops": len(items) - len(kept)}
    _save_stage_summary(stage_dir, "tts", key, [tts_out], summary)
    return kept, StageResult(
        name="tts",
        inputs=len(items),
        outputs=len(kept),
        drops=len(items) - len(kept),
        extra={
            "backend": backend,
            "synthesis_calls": calls,
            "cache_hits": hits,
            "failures": failures[:20],
        },
    )


def augment_entries(
    entries: Sequence[ManifestEntry],
    policy: AudioPolicy,
    pool: Optional[NoiseStore],
    wav_dir: Path,
    master_seed: int,
    workers: int,
) -> List[ManifestEntry]:
    wav_dir.mkdir(parents=True, exist_ok=True)
    pool_ids = pool.ids if pool is not None else []

    def augment_one(indexed):
        i, entry = indexed
        rng = random.Random(_derive_seed(master_seed, "audio", entry.text))
        plan = sample_plan(policy, pool_ids, rng)
        clip = read_wav(entry.audio_path)
        augmented = apply_plan(clip, plan, pool)
        name = hashlib.sha1(entry.text.encode("utf-8")).hexdigest()[:12]
        wav_path = wav_dir / f"{i:05d}-{name}.wav"
        write_wav(augmented, wav_path)
        return ManifestEntry(
            audio_path=str(wav_path),
            text=entry.text,
            duration_s=augmented.duration_s,
            source=entry.source,
            origin=entry.origin,
        )

    return _map_workers(augment_one, list(enumerate(entries)), workers)


def stage_audio(config: PipelineConfig, entries: List[ManifestEntry], out: Path, stage_dir: Path) -> Tuple[List[ManifestEntry], StageResult]:
    synth_out = out / "synthetic.jsonl"
    enabled = config.audio.get("enabled", True)
    apply_to = config.audio.get("apply_to", ["synthetic"])
    key = _stage_key(
        "audio",
        {
            "config": config.audio,
            "seed": config.seed,
            "input": _sha256_file(out / "tts.jsonl"),
            "noise": _sha256_file(config.audio["noise_manifest"])
            if config.audio.get("noise_manifest")
            else "",
        },
    )
    summary = _load_stage_summary(stage_dir, "audio", key)
    if summary is not None:
        kept = load_manifest(synth_out)
        return kept, StageResult(
            name="audio",
            inputs=summary["inputs"],
            outputs=summary["outputs"],
            drops=summary["drops"],
            cached=True,
            extra={"enabled": enabled, "apply_to": list(apply_to)},
        )

    if enabled and "synthetic" in apply_to:
        policy = build_audio_policy(config.audio)
        pool = (
            NoiseStore.from_manifest(config.audio["noise_manifest"])
            if config.audio.get("noise_manifest")
            else None
        )
        kept = augment_entries(
            entries, policy, pool, out / "audio", config.seed, config.workers
        )
    else:
        kept = list(entries)
    save_manifest(kept, synth_out)
    summary = {"inputs": len(entries), "outputs": len(kept), "drops": len(entries) - len(kept)}
    _save_stage_summary(stage_dir, "audio", key, [synth_out], summary)
    return kept, StageResult(
        name="audio",
        inputs=len(entries),
        outputs=len(kept),
        drops=len(entries) - len(kept),
        extra={"enabled": enabled, "apply_to": list(apply_to)},
    )


def load_real_manifest(config: PipelineConfig) -> List[ManifestEntry]:
    path = Path(config.mix["real_manifest"])
    entries = load_manifest(path)
    resolved = []
    for entry in entries:
        audio_path = Path(entry.audio_path)
        if not audio_path.is_absolute():
            audio_path = path.parent / audio_path
        resolved.append(
            ManifestEntry(
                audio_path=str(audio_path),
                text=entry.text,
                duration_s=entry.duration_s,
                source=entry.source,
                origin=entry.origin,
            )
        )
    return resolved


def stage_audio_real(config: PipelineConfig, real: List[ManifestEntry], out: Path, stage_dir: Path) -> Tuple[List[ManifestEntry], Optional[StageResult]]:
    """Optional speed/noise distortion of the real stream, controlled by
    audio.apply_to; the default leaves real audio untouched."""
    enabled = config.audio.get("enabled", True)
    apply_to = config.audio.get("apply_to", ["synthetic"])
    if not (enabled and "real" in apply_to and real):
        return real, None
    real_out = out / "real_augmented.jsonl"
    key = _stage_key(
        "audio_real",
        {
            "config": config.audio,
            "seed": config.seed,
            "input": _sha256_file(config.mix["real_manifest"]),
        },
    )
    summary = _load_stage_summary(stage_dir, "audio_real", key)
    if summary is not None:
        kept = load_manifest(real_out)
        return kept, StageResult(
            name="audio_real",
            inputs=summary["inputs"],
            outputs=summary["outputs"],
            drops=summary["drops"],
            cached=True,
        )
    policy = build_audio_policy(config.audio)
    pool = (
        NoiseStore.from_manifest(config.audio["noise_manifest"])
        if config.audio.get("noise_manifest")
        else None
    )
    kept = augment_entries(real, policy, pool, out / "audio_real", config.seed, config.workers)
    save_manifest(kept, real_out)
    summary = {"inputs": len(real), "outputs": len(kept), "drops": len(real) - len(kept)}
    _save_stage_summary(stage_dir, "audio_real", key, [real_out], summary)
    return kept, StageResult(
        name="audio_real", inputs=len(real), outputs=len(kept), drops=len(real) - len(kept)
    )


def stage_mix(config: PipelineConfig, synthetic: List[ManifestEntry], real: List[ManifestEntry], out: Path, stage_dir: Path) -> Tuple[Dict, StageResult]:
    schedule_out = out / "schedule.jsonl"
    policy = build_mix_policy(config.mix, config.seed)
    key = _stage_key(
        "mix",
        {
            "config": config.mix,
            "seed": config.seed,
            "synthetic": _sha256_file(out / "synthetic.jsonl"),
            "real": _sha256_file(config.mix["real_manifest"]),
        },
    )
    summary = _load_stage_summary(stage_dir, "mix", key)
    if summary is not None:
        return summary["budget"], StageResult(
            name="mix",
            inputs=summary["inputs"],
            outputs=summary["outputs"],
            drops=summary["drops"],
            cached=True,
            extra={"ratio": policy.ratio, "epoch_len": policy.epoch_len},
        )
    schedule = mix_stream(real, synthetic, policy)
    save_manifest(schedule, schedule_out)
    budget = report_budget(real, synthetic, policy).as_dict()
    summary = {
        "inputs": policy.epoch_len,
        "outputs": len(schedule),
        "drops": policy.epoch_len - len(schedule),
        "budget": budget,
    }
    _save_stage_summary(stage_dir, "mix", key, [schedule_out], summary)
    return budget, StageResult(
        name="mix",
        inputs=policy.epoch_len,
        outputs=len(schedule),
        drops=policy.epoch_len - len(schedule),
        extra={"ratio": policy.ratio, "epoch_len": policy.epoch_len},
    )


def run_pipeline(config: PipelineConfig) -> RunReport:
    """Execute text -> tts -> audio -> mix. Validation failures raise
    before any side effect; stage failures abort with the stage name and
    the partial report, which is also written to the output directory."""
    diagnostics = validate_config(config)
    if diagnostics:
        raise ConfigError(diagnostics)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stage_dir = out / ".stage"
    stage_dir.mkdir(exist_ok=True)
    report = RunReport(seed=config.seed, config_hash=config.config_hash())

    def run_stage(name, fn):
        # Wall-clock per stage is informational only; it never enters any
        # cache key or hashed artifact.
        start = time.perf_counter()
        try:
            value = fn()
        except Exception as e:
            report.status = "failed"
            report.failed_stage = name
            report.error = str(e)
            report.save(out / "report.json")
            raise PipelineError(name, report, e) from e
        return value, time.perf_counter() - start

    (corpus, result, before, after), dt = run_stage(
        "text", lambda: stage_text(config, out, stage_dir)
    )
    result.duration_s = dt
    report.stages.append(result)
    report.stats_before = before
    report.stats_after = after

    (entries, result), dt = run_stage("tts", lambda: stage_tts(config, corpus, out, stage_dir))
    result.duration_s = dt
    report.stages.append(result)

    (synthetic, result), dt = run_stage(
        "audio", lambda: stage_audio(config, entries, out, stage_dir)
    )
    result.duration_s = dt
    report.stages.append(result)

    if config.mix is not None:
        real, _ = run_stage("mix", lambda: load_real_manifest(config))
        (real, real_result), dt = run_stage(
            "audio_real", lambda: stage_audio_real(config, real, out, stage_dir)
        )
        if real_result is not None:
            real_result.duration_s = dt
            report.stages.append(real_result)
        (budget, result), dt = run_stage(
            "mix", lambda: stage_mix(config, synthetic, real, out, stage_dir)
        )
        result.duration_s = dt
        report.stages.append(result)
        report.budget = budget
    else:
        report.budget = report_budget([], synthetic, MixPolicy(ratio=0.0, epoch_len=0)).as_dict()

    report.save(out / "report.json")
    return report
