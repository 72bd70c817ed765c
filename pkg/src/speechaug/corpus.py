"""Corpus I/O, text normalization, deduplication, and diversity metrics.

A corpus is an ordered collection of utterances. Utterances carry a stable
id, the text itself, a source tag saying which generation method produced
them, and optionally the id of the seed utterance they were derived from.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Optional

VALID_SOURCES = frozenset({"seed", "grammar", "mask_random", "mask_custom", "external"})

_WHITESPACE_RE = re.compile(r"\s+")
_PUNCT_RE = re.compile(r"[^\w\s']", flags=re.UNICODE)


class CorpusError(ValueError):
    """Raised for malformed corpus files or invalid utterances."""


@dataclass(frozen=True)
class NormPolicy:
    """Text normalization policy.

    ``strip_punct_keys`` affects dedup keys only; normalized text keeps
    punctuation so question marks and apostrophes survive.
    """

    lowercase: bool = True
    strip_punct_keys: bool = False


DEFAULT_NORM = NormPolicy()


@dataclass(frozen=True)
class Utterance:
    id: str
    text: str
    source: str = "seed"
    parent_id: Optional[str] = None

    def __post_init__(self):
        if self.source not in VALID_SOURCES:
            raise CorpusError(f"unknown source {self.source!r} for utterance {self.id!r}")

    def tokens(self) -> list:
        return self.text.split()


@dataclass(frozen=True)
class CorpusStats:
    num_utterances: int
    vocab_size: int
    distinct_1: float
    distinct_2: float
    novel_ngram_rate: float
    dedup_drop_rate: float

    def as_dict(self) -> dict:
        return {
            "num_utterances": self.num_utterances,
            "vocab_size": self.vocab_size,
            "distinct_1": self.distinct_1,
            "distinct_2": self.distinct_2,
            "novel_ngram_rate": self.novel_ngram_rate,
            "dedup_drop_rate": self.dedup_drop_rate,
        }


@dataclass
class Corpus:
    """Ordered utterance collection with unique ids."""

    utterances: list = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for u in self.utterances:
            if u.id in seen:
                raise CorpusError(f"duplicate utterance id {u.id!r}")
            seen.add(u.id)

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self) -> Iterator[Utterance]:
        return iter(self.utterances)

    def __getitem__(self, i):
        return self.utterances[i]

    def texts(self) -> list:
        return [u.text for u in self.utterances]

    def ids(self) -> list:
        return [u.id for u in self.utterances]


def normalize(text: str, policy: NormPolicy = DEFAULT_NORM) -> str:
    """Collapse whitespace, strip ends, and lowercase per policy.

    Idempotent: normalize(normalize(x)) == normalize(x).
    """
    out = _WHITESPACE_RE.sub(" ", text).strip()
    if policy.lowercase:
        out = out.lower()
    return out


def dedup_key(text: str, policy: NormPolicy = DEFAULT_NORM) -> str:
    """Key used for duplicate detection; may strip punctuation per policy."""
    key = normalize(text, policy)
    if policy.strip_punct_keys:
        key = _WHITESPACE_RE.sub(" ", _PUNCT_RE.sub(" ", key)).strip()
    return key


def load_corpus(path, format: str = "lines") -> Corpus:
    """Read a corpus from disk.

    ``lines``: one utterance per non-blank line, tagged as seed data.
    ``jsonl``: records with fields {id, text, source, parent_id}.

    Ids for the ``lines`` format are positional: ``<file stem>-<index>``,
    so re-running on the same file yields byte-identical corpora.
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise CorpusError(f"{path}: not valid UTF-8: {e}") from None

    utterances = []
    if format == "lines":
        index = 0
        for line in raw.splitlines():
            if not line.strip():
                continue
            utterances.append(Utterance(id=f"{path.stem}-{index}", text=line.strip(), source="seed"))
            index += 1
    elif format == "jsonl":
        for lineno, line in enumerate(raw.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}: line {lineno}: malformed JSON: {e.msg}") from None
            if not isinstance(record, dict) or "text" not in record:
                raise CorpusError(f"{path}: line {lineno}: missing required field 'text'")
            utterances.append(
                Utterance(
                    id=str(record.get("id", f"{path.stem}-{lineno - 1}")),
                    text=str(record["text"]),
                    source=record.get("source", "seed"),
                    parent_id=record.get("parent_id"),
                )
            )
    else:
        raise CorpusError(f"unknown corpus format {format!r}")
    return Corpus(utterances)


def save_corpus(corpus: Corpus, path) -> None:
    """Write JSONL with fixed field order for byte-stable output."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        for u in corpus:
            record = {"id": u.id, "text": u.text, "source": u.source, "parent_id": u.parent_id}
            f.write(json.dumps(record, ensure_ascii=False, sort_keys=False) + "\n")


def dedup(
    corpus: Corpus,
    against: Optional[Corpus] = None,
    policy: NormPolicy = DEFAULT_NORM,
) -> tuple:
    """Drop duplicate utterances, keeping the first occurrence of each text.

    If ``against`` is given, utterances whose key appears there are dropped
    too. Returns (deduped corpus, drop rate); rate is dropped/input, 0 for
    an empty input.
    """
    seen = set()
    if against is not None:
        seen.update(dedup_key(u.text, policy) for u in against)
    kept = []
    for u in corpus:
        key = dedup_key(u.text, policy)
        if key in seen:
            continue
        seen.add(key)
        kept.append(u)
    total = len(corpus)
    rate = (total - len(kept)) / total if total else 0.0
    return Corpus(kept), rate


def _ngrams(tokens: list, n: int) -> Iterable[tuple]:
    return (tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def compute_stats(
    corpus: Corpus,
    seed: Optional[Corpus] = None,
    policy: NormPolicy = DEFAULT_NORM,
    dedup_drop_rate: float = 0.0,
) -> CorpusStats:
    """Diversity metrics over whitespace tokens of normalized text.

    distinct_n is unique-n-gram count over total n-gram count; the novel
    n-gram rate is the fraction of the corpus's bigram occurrences absent
    from the seed. An empty corpus yields all-zero metrics.
    """
    token_lists = [normalize(u.text, policy).split() for u in corpus]
    unigrams = [t for toks in token_lists for t in toks]
    bigrams = [g for toks in token_lists for g in _ngrams(toks, 2)]

    if not corpus or not unigrams:
        return CorpusStats(len(corpus), 0, 0.0, 0.0, 0.0, dedup_drop_rate)

    distinct_1 = len(set(unigrams)) / len(unigrams)
    distinct_2 = len(set(bigrams)) / len(bigrams) if bigrams else 0.0

    novel_rate = 0.0
    if seed is not None and bigrams:
        seed_bigrams = set()
        for u in seed:
            seed_bigrams.update(_ngrams(normalize(u.text, policy).split(), 2))
        novel = sum(1 for g in bigrams if g not in seed_bigrams)
        novel_rate = novel / len(bigrams)

    return CorpusStats(
        num_utterances=len(corpus),
        vocab_size=len(set(unigrams)),
        distinct_1=distinct_1,
        distinct_2=distinct_2,
        novel_ngram_rate=novel_rate,
        dedup_drop_rate=dedup_drop_rate,
    )


def with_normalized_text(corpus: Corpus, policy: NormPolicy = DEFAULT_NORM) -> Corpus:
    """Corpus copy with every utterance's text normalized; drops empties."""
    kept = []
    for u in corpus:
        text = normalize(u.text, policy)
        if text:
            kept.append(replace(u, text=text))
    return Corpus(kept)
