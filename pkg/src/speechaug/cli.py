"""Command-line entry point.

Subcommands cover the full pipeline (`run`) and the individual stages
(`text`, `tts`, `audio`, `mix`), plus `grammar` sampling and corpus
`stats`. Exit code 0 means no stage error; 1 a stage failure; 2 an
invalid configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .corpus import compute_stats, load_corpus, save_corpus
from .grammar import load_grammar, sample_utterances
from .mixer import MixPolicy, load_manifest, mix_stream, report_budget, save_manifest
from .pipeline import (
    ConfigError,
    PipelineConfig,
    PipelineError,
    augment_entries,
    build_audio_policy,
    build_mix_policy,
    load_config,
    run_pipeline,
    stage_text,
    stage_tts,
    validate_config,
)
from .audioaug import NoiseStore

logger = logging.getLogger(__name__)


def _add_common(parser: argparse.ArgumentParser, out_help: str) -> None:
    parser.add_argument("--seed", type=int, default=None, help="master rng seed override")
    parser.add_argument("--config", default=None, help="pipeline config JSON")
    parser.add_argument("--out", default=None, help=out_help)
    parser.add_argument("--workers", type=int, default=None, help="parallelism bound")


def _load_overridden_config(args) -> PipelineConfig:
    if not args.config:
        raise ConfigError(["--config is required for this command"])
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
        config.raw["seed"] = args.seed
    if getattr(args, "out", None):
        config.out_dir = str(Path(args.out).resolve())
        config.raw["out_dir"] = config.out_dir
    if getattr(args, "workers", None):
        config.workers = args.workers
        config.raw["workers"] = args.workers
    return config


def _require_valid(config) -> None:
    diagnostics = validate_config(config)
    if diagnostics:
        raise ConfigError(diagnostics)


def _print_stage(result) -> None:
    flag = " (cached)" if result.cached else ""
    print(
        f"stage {result.name}: in={result.inputs} out={result.outputs} "
        f"drops={result.drops}{flag}"
    )


def _cmd_run(args) -> int:
    config = _load_overridden_config(args)
    report = run_pipeline(config)
    for result in report.stages:
        _print_stage(result)
    print(f"synthesis calls: {report.synthesis_calls}")
    print(f"report: {Path(config.out_dir) / 'report.json'}")
    return 0


def _cmd_text(args) -> int:
    config = _load_overridden_config(args)
    _require_valid(config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stage_dir = out / ".stage"
    stage_dir.mkdir(exist_ok=True)
    corpus, result, _, stats_after = stage_text(config, out, stage_dir)
    _print_stage(result)
    print(f"texts: {out / 'text.jsonl'} ({len(corpus)} utterances)")
    print(json.dumps(stats_after, sort_keys=True))
    return 0


def _cmd_tts(args) -> int:
    config = _load_overridden_config(args)
    _require_valid(config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stage_dir = out / ".stage"
    stage_dir.mkdir(exist_ok=True)
    text_path = Path(args.infile) if args.infile else out / "text.jsonl"
    if not text_path.exists():
        raise ConfigError([f"input corpus not found: {text_path}"])
    if text_path != out / "text.jsonl":
        (out / "text.jsonl").write_bytes(text_path.read_bytes())
    corpus = load_corpus(out / "text.jsonl", format="jsonl")
    entries, result = stage_tts(config, corpus, out, stage_dir)
    _print_stage(result)
    print(f"manifest: {out / 'tts.jsonl'} ({len(entries)} entries)")
    return 0


def _cmd_audio(args) -> int:
    try:
        policy_cfg = json.loads(Path(args.policy).read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise ConfigError([f"cannot read policy {args.policy}: {e}"]) from e
    base = Path(args.policy).parent
    if policy_cfg.get("noise_manifest"):
        noise_path = Path(policy_cfg["noise_manifest"])
        if not noise_path.is_absolute():
            policy_cfg["noise_manifest"] = str(base / noise_path)
    policy = build_audio_policy(policy_cfg)
    pool = (
        NoiseStore.from_manifest(policy_cfg["noise_manifest"])
        if policy_cfg.get("noise_manifest")
        else None
    )
    entries = load_manifest(args.infile)
    out_path = Path(args.out)
    wav_dir = out_path.parent / f"{out_path.stem}_audio"
    augmented = augment_entries(
        entries, policy, pool, wav_dir, args.seed or 0, args.workers or 1
    )
    save_manifest(augmented, out_path)
    print(f"stage audio: in={len(entries)} out={len(augmented)} drops=0")
    print(f"manifest: {out_path}")
    return 0


def _cmd_mix(args) -> int:
    mix_cfg = {}
    if args.config:
        config = load_config(args.config)
        mix_cfg = dict(config.mix or {})
    if args.ratio is not None:
        mix_cfg["ratio"] = args.ratio
    if args.epoch_len is not None:
        mix_cfg["epoch_len"] = args.epoch_len
    if args.real:
        mix_cfg["real_manifest"] = args.real
    if not mix_cfg.get("real_manifest"):
        raise ConfigError(["a real manifest is required (--real or config mix.real_manifest)"])
    policy = build_mix_policy(mix_cfg, args.seed or 0)
    real = load_manifest(mix_cfg["real_manifest"])
    synthetic = load_manifest(args.synthetic) if args.synthetic else []
    schedule = mix_stream(real, synthetic, policy)
    save_manifest(schedule, args.out)
    budget = report_budget(real, synthetic, policy)
    print(f"stage mix: in={policy.epoch_len} out={len(schedule)} drops=0")
    print(json.dumps(budget.as_dict(), sort_keys=True))
    return 0


def _cmd_grammar(args) -> int:
    grammar = load_grammar(args.grammar)
    report = sample_utterances(grammar, args.n, seed=args.seed or 0)
    save_corpus(report.corpus, args.out)
    print(
        f"sampled {report.produced}/{report.requested} "
        f"(attempts {report.attempts}, shortfall {report.shortfall})"
    )
    if not report.complete:
        print("warning: grammar could not supply the requested count", file=sys.stderr)
    return 0


def _cmd_stats(args) -> int:
    fmt = args.format or ("jsonl" if str(args.infile).endswith(".jsonl") else "lines")
    corpus = load_corpus(args.infile, format=fmt)
    seed_corpus = None
    if args.seed_corpus:
        seed_fmt = "jsonl" if str(args.seed_corpus).endswith(".jsonl") else "lines"
        seed_corpus = load_corpus(args.seed_corpus, format=seed_fmt)
    stats = compute_stats(corpus, seed=seed_corpus)
    print(json.dumps(stats.as_dict(), sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="augment",
        description="Speech-training-data synthesis: text augmentation, TTS, audio augmentation, manifest mixing.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the full pipeline from a config")
    _add_common(p, "output directory override")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("text", help="run only text augmentation")
    _add_common(p, "output directory override")
    p.set_defaults(fn=_cmd_text)

    p = sub.add_parser("tts", help="synthesize audio for a text corpus")
    _add_common(p, "output directory override")
    p.add_argument("--in", dest="infile", default=None, help="corpus JSONL (default: <out>/text.jsonl)")
    p.set_defaults(fn=_cmd_tts)

    p = sub.add_parser("audio", help="apply speed/noise augmentation to a manifest")
    p.add_argument("--policy", required=True, help="audio policy JSON")
    p.add_argument("--in", dest="infile", required=True, help="input manifest JSONL")
    p.add_argument("--out", required=True, help="output manifest JSONL")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=_cmd_audio)

    p = sub.add_parser("mix", help="emit a mixed training schedule")
    p.add_argument("--config", default=None, help="pipeline config JSON (mix section)")
    p.add_argument("--real", default=None, help="real manifest JSONL")
    p.add_argument("--synthetic", default=None, help="synthetic manifest JSONL")
    p.add_argument("--ratio", type=float, default=None)
    p.add_argument("--epoch-len", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="schedule manifest JSONL")
    p.set_defaults(fn=_cmd_mix)

    p = sub.add_parser("grammar", help="sample utterances from a grammar file")
    p.add_argument("--grammar", required=True, help="grammar definition file")
    p.add_argument("--n", type=int, required=True, help="requested utterance count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="corpus JSONL")
    p.set_defaults(fn=_cmd_grammar)

    p = sub.add_parser("stats", help="corpus statistics")
    p.add_argument("--in", dest="infile", required=True, help="corpus file")
    p.add_argument("--format", choices=["lines", "jsonl"], default=None)
    p.add_argument("--seed-corpus", default=None, help="seed corpus for novelty rate")
    p.set_defaults(fn=_cmd_stats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except ConfigError as e:
        for diagnostic in e.diagnostics:
            print(f"config error: {diagnostic}", file=sys.stderr)
        return 2
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
