"""Masked-template production from seed utterances.

Two strategies mirror the upstream text generation recipe: random mask
insertion/replacement, and custom masking driven by part-of-speech tags
(nouns and verbs masked one unit at a time). Templates carry their seed
utterance's id so filled outputs keep provenance.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .corpus import Utterance

DEFAULT_MASK_TOKEN = "<mask>"

NOUN = "NOUN"
VERB = "VERB"
OTHER = "OTHER"
_TAGS = (NOUN, VERB, OTHER)

# Suffix fallbacks for tokens missing from the lexicon.
_SUFFIX_RULES = (("ing", VERB), ("ed", VERB), ("s", NOUN))


@dataclass(frozen=True)
class PosTag:
    token: str
    tag: str

    def __post_init__(self):
        if self.tag not in _TAGS:
            raise ValueError(f"unknown tag {self.tag!r} for token {self.token!r}")


@dataclass(frozen=True)
class MaskedTemplate:
    tokens: Tuple[str, ...]
    parent_id: str
    strategy: str
    mask_positions: Tuple[int, ...]
    mask_token: str = DEFAULT_MASK_TOKEN

    def __post_init__(self):
        if self.strategy not in ("random", "custom"):
            raise ValueError(f"unknown masking strategy {self.strategy!r}")
        positions = tuple(i for i, t in enumerate(self.tokens) if t == self.mask_token)
        if not positions:
            raise ValueError("template contains no mask token")
        if tuple(self.mask_positions) != positions:
            raise ValueError(
                f"mask_positions {self.mask_positions} inconsistent with tokens {self.tokens}"
            )

    def text(self) -> str:
        return " ".join(self.tokens)

    @property
    def num_masks(self) -> int:
        return len(self.mask_positions)


def make_template(
    tokens: Sequence[str],
    parent_id: str,
    strategy: str,
    mask_token: str = DEFAULT_MASK_TOKEN,
) -> MaskedTemplate:
    positions = tuple(i for i, t in enumerate(tokens) if t == mask_token)
    return MaskedTemplate(
        tokens=tuple(tokens),
        parent_id=parent_id,
        strategy=strategy,
        mask_positions=positions,
        mask_token=mask_token,
    )


class TagLexicon:
    """Word-to-tag map with suffix heuristics and optional compound phrases.

    File format: one ``word<TAB>TAG`` per line; ``#`` starts a comment. A
    word field containing spaces declares a compound phrase that custom
    masking treats as a single maskable unit.
    """

    def __init__(self, words: Dict[str, str], compounds: Optional[Dict[Tuple[str, ...], str]] = None):
        self.words = {w.lower(): t for w, t in words.items()}
        self.compounds = {tuple(p): t for p, t in (compounds or {}).items()}

    @classmethod
    def from_file(cls, path) -> "TagLexicon":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def from_text(cls, text: str) -> "TagLexicon":
        words: Dict[str, str] = {}
        compounds: Dict[Tuple[str, ...], str] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].rstrip()
            if not line.strip():
                continue
            if "\t" not in line:
                raise ValueError(f"tag lexicon line {lineno}: expected 'word<TAB>TAG'")
            word, tag = line.split("\t", 1)
            word, tag = word.strip().lower(), tag.strip().upper()
            if tag not in _TAGS:
                raise ValueError(f"tag lexicon line {lineno}: unknown tag {tag!r}")
            parts = tuple(word.split())
            if len(parts) > 1:
                compounds[parts] = tag
            else:
                words[word] = tag
        return cls(words, compounds)

    @classmethod
    def shipped(cls) -> "TagLexicon":
        """The lexicon bundled with the package."""
        text = resources.files("speechaug.data").joinpath("tag_lexicon.tsv").read_text("utf-8")
        return cls.from_text(text)

    def lookup(self, token: str) -> str:
        word = token.lower().strip("?!.,;:")
        if word in self.words:
            return self.words[word]
        for suffix, tag in _SUFFIX_RULES:
            if len(word) > len(suffix) + 1 and word.endswith(suffix):
                return tag
        return OTHER


def tag_pos(tokens: Sequence[str], lexicon: TagLexicon) -> List[PosTag]:
    """Tag every token: lexicon lookup, then suffix heuristics, else OTHER."""
    return [PosTag(token=t, tag=lexicon.lookup(t)) for t in tokens]


def mask_random(
    utterance: Utterance,
    n_templates: int = 4,
    k_choices: Sequence[int] = (1, 2, 3),
    mode: str = "mixed",
    seed: int = 0,
    mask_token: str = DEFAULT_MASK_TOKEN,
) -> List[MaskedTemplate]:
    """Templates with masks at random positions.

    Per template the mask count is drawn uniformly from ``k_choices``.
    ``replace`` substitutes existing tokens (count preserved), ``insert``
    adds masks at inter-token gaps (count grows by the mask count), and
    ``mixed`` flips a coin per mask. Deterministic for a fixed seed; the
    mask count is clamped to what the utterance can accommodate.
    """
    if mode not in ("replace", "insert", "mixed"):
        raise ValueError(f"unknown masking mode {mode!r}")
    tokens = utterance.tokens()
    if not tokens:
        raise ValueError(f"utterance {utterance.id!r} is empty")
    rng = random.Random(seed)
    templates = []
    for _ in range(n_templates):
        k = rng.choice(list(k_choices))
        if mode == "replace":
            n_replace, n_insert = min(k, len(tokens)), 0
        elif mode == "insert":
            n_replace, n_insert = 0, min(k, len(tokens) + 1)
        else:
            n_replace = sum(rng.random() < 0.5 for _ in range(k))
            n_insert = k - n_replace
            n_replace = min(n_replace, len(tokens))
            n_insert = min(n_insert, len(tokens) + 1)
            if n_replace + n_insert == 0:
                n_insert = 1
        out = list(tokens)
        for pos in rng.sample(range(len(out)), n_replace):
            out[pos] = mask_token
        # Insertion gaps are chosen against the post-replacement sequence,
        # applied right-to-left so earlier gap indices stay valid.
        for gap in sorted(rng.sample(range(len(out) + 1), n_insert), reverse=True):
            out.insert(gap, mask_token)
        templates.append(make_template(out, utterance.id, "random", mask_token))
    return templates


def _maskable_units(
    tokens: Sequence[str],
    tags: Sequence[PosTag],
    lexicon: Optional[TagLexicon],
) -> List[Tuple[int, int]]:
    """(start, end) spans to mask: compound phrase matches first, longest
    match wins, remaining NOUN/VERB tokens become single-token units."""
    spans: List[Tuple[int, int]] = []
    compound_keys = sorted(lexicon.compounds, key=len, reverse=True) if lexicon else []
    taken = [False] * len(tokens)
    lowered = [t.lower() for t in tokens]
    for phrase in compound_keys:
        if lexicon.compounds[phrase] not in (NOUN, VERB):
            continue
        width = len(phrase)
        for start in range(len(tokens) - width + 1):
            if any(taken[start : start + width]):
                continue
            if tuple(lowered[start : start + width]) == phrase:
                spans.append((start, start + width))
                for i in range(start, start + width):
                    taken[i] = True
    for i, tag in enumerate(tags):
        if not taken[i] and tag.tag in (NOUN, VERB):
            spans.append((i, i + 1))
    return sorted(spans)


def mask_custom(
    utterance: Utterance,
    tags: Sequence[PosTag],
    lexicon: Optional[TagLexicon] = None,
    mask_token: str = DEFAULT_MASK_TOKEN,
) -> List[MaskedTemplate]:
    """One template per maskable unit, that unit replaced by a single mask.

    Without compound phrases a unit is one NOUN or VERB token, so the
    template count equals the NOUN/VERB tag count exactly. Compound
    phrases from the lexicon are masked as one unit. An utterance with no
    maskable unit yields an empty list.
    """
    tokens = utterance.tokens()
    if len(tags) != len(tokens):
        raise ValueError(
            f"tags ({len(tags)}) not aligned with tokens ({len(tokens)})"
            f" for utterance {utterance.id!r}"
        )
    templates = []
    for start, end in _maskable_units(tokens, tags, lexicon):
        out = list(tokens[:start]) + [mask_token] + list(tokens[end:])
        templates.append(make_template(out, utterance.id, "custom", mask_token))
    return templates


def save_templates(templates: Iterable[MaskedTemplate], path) -> None:
    import json

    with Path(path).open("w", encoding="utf-8") as f:
        for t in templates:
            f.write(
                json.dumps(
                    {"parent_id": t.parent_id, "strategy": t.strategy, "tokens": list(t.tokens)},
                    ensure_ascii=False,
                )
                + "\n"
            )
