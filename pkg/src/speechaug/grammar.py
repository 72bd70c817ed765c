"""Feature-enhanced context-free grammar engine.

Parses a small grammar DSL, samples weighted derivations from it, and
answers membership queries with an Earley chart parser. Grammars consist
of production rules whose symbols may carry flat feature constraints, plus
named lexicons of terminal phrases.

DSL summary (full EBNF in docs/grammar_dsl.md):

    @start S
    @lexicon TIME_PP: this tuesday, last week, today
    S -> NP[num=sg] VP[num=sg] @2.5
    NP[num=sg] -> "the photo" | "a pic"
    VP -> "show" "me" TIME_PP

Nonterminals are uppercase identifiers; terminals are double-quoted and
may contain spaces (a quoted phrase expands to consecutive one-token
terminals). ``|`` separates alternatives, each with its own optional
``@weight`` suffix (default 1.0). A rule's left-hand side may declare
features it produces; right-hand side symbols may declare features they
require.
"""

from __future__ import annotations

import random
import re
from pathlib import Path
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple

from .corpus import Corpus, Utterance

NONTERMINAL_RE = re.compile(r"^[A-Z][A-Z0-9_]*$")
_SYMBOL_TOKEN_RE = re.compile(
    r'"(?P<term>[^"]*)"'
    r"|(?P<name>[A-Z][A-Z0-9_]*)(?:\[(?P<feats>[^\]]*)\])?"
    r"|(?P<weight>@[0-9.]+)"
)

FeatureStruct = FrozenSet[Tuple[str, str]]

EMPTY_FEATURES: FeatureStruct = frozenset()


class GrammarError(ValueError):
    """Raised for DSL syntax errors and structural validation failures."""


def unify(a: FeatureStruct, b: FeatureStruct) -> Optional[FeatureStruct]:
    """Combine two flat feature structures.

    Fails (returns None) iff a shared feature name maps to different
    values. Commutative and idempotent; failure is absorbing.
    """
    da, db = dict(a), dict(b)
    for key, value in db.items():
        if key in da and da[key] != value:
            return None
    da.update(db)
    return frozenset(da.items())


def features(**kwargs) -> FeatureStruct:
    """Convenience constructor: features(num="sg") -> frozenset of pairs."""
    return frozenset((k, str(v)) for k, v in kwargs.items())


@dataclass(frozen=True)
class Symbol:
    """One right-hand-side item: a terminal token or a constrained nonterminal."""

    name: str
    is_terminal: bool
    constraint: FeatureStruct = EMPTY_FEATURES


@dataclass(frozen=True)
class GrammarRule:
    lhs: str
    rhs: Tuple[Symbol, ...]
    weight: float = 1.0
    lhs_features: FeatureStruct = EMPTY_FEATURES
    line: int = 0

    def __post_init__(self):
        if not self.rhs:
            raise GrammarError(f"line {self.line}: rule for {self.lhs} has empty right-hand side")
        if self.weight <= 0:
            raise GrammarError(f"line {self.line}: rule for {self.lhs} has non-positive weight")


@dataclass
class Grammar:
    rules: List[GrammarRule]
    start: str
    lexicons: Dict[str, List[str]] = field(default_factory=dict)

    def __post_init__(self):
        # Index rules by nonterminal, expanding lexicons into plain rules so
        # generation and parsing share one uniform representation.
        self._by_lhs: Dict[str, List[GrammarRule]] = {}
        for rule in self.rules:
            self._by_lhs.setdefault(rule.lhs, []).append(rule)
        for name, phrases in self.lexicons.items():
            expanded = self._by_lhs.setdefault(name, [])
            for phrase in phrases:
                tokens = phrase.split()
                rhs = tuple(Symbol(t, is_terminal=True) for t in tokens)
                expanded.append(GrammarRule(lhs=name, rhs=rhs))

    def rules_for(self, nonterminal: str) -> List[GrammarRule]:
        return self._by_lhs.get(nonterminal, [])

    def nonterminals(self) -> FrozenSet[str]:
        return frozenset(self._by_lhs)


@dataclass
class SampleReport:
    """Outcome of a sampling run, including any shortfall against the request."""

    corpus: Corpus
    requested: int
    produced: int
    attempts: int
    shortfall: int

    @property
    def complete(self) -> bool:
        return self.shortfall == 0


def _parse_features(text: str, lineno: int) -> FeatureStruct:
    pairs = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise GrammarError(f"line {lineno}: feature {part!r} is not name=value")
        name, value = part.split("=", 1)
        pairs.append((name.strip(), value.strip()))
    return frozenset(pairs)


def _parse_rhs(text: str, lineno: int) -> List[Tuple[Tuple[Symbol, ...], float]]:
    """Parse one right-hand side into alternatives split on top-level ``|``.

    A ``|`` inside a quoted terminal never splits; the tokenizer consumes
    quoted phrases atomically. Each alternative carries its own weight.
    """
    alternatives: List[Tuple[Tuple[Symbol, ...], float]] = []
    symbols: List[Symbol] = []
    weight = 1.0
    pos = 0

    def close_alternative():
        nonlocal symbols, weight
        if not symbols:
            raise GrammarError(f"line {lineno}: empty alternative")
        alternatives.append((tuple(symbols), weight))
        symbols, weight = [], 1.0

    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        if text[pos] == "|":
            close_alternative()
            pos += 1
            continue
        m = _SYMBOL_TOKEN_RE.match(text, pos)
        if not m:
            raise GrammarError(f"line {lineno}: cannot parse right-hand side at {text[pos:]!r}")
        if m.group("term") is not None:
            # Multi-word terminals expand to consecutive single-token terminals.
            phrase = m.group("term")
            if not phrase.strip():
                raise GrammarError(f"line {lineno}: empty terminal")
            symbols.extend(Symbol(t, is_terminal=True) for t in phrase.split())
        elif m.group("name"):
            constraint = _parse_features(m.group("feats") or "", lineno)
            symbols.append(Symbol(m.group("name"), is_terminal=False, constraint=constraint))
        elif m.group("weight"):
            try:
                weight = float(m.group("weight")[1:])
            except ValueError:
                raise GrammarError(f"line {lineno}: bad weight {m.group('weight')!r}") from None
        pos = m.end()
    close_alternative()
    return alternatives


def parse_grammar(source: str) -> Grammar:
    """Parse DSL source into a validated Grammar.

    Validation errors carry line numbers. Rejects undefined nonterminals,
    nonterminals that cannot derive any terminal string, and duplicate
    lexicon names. The start symbol defaults to the first rule's left-hand
    side unless an ``@start`` directive names one.
    """
    rules: List[GrammarRule] = []
    lexicons: Dict[str, List[str]] = {}
    lexicon_lines: Dict[str, int] = {}
    start: Optional[str] = None

    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("@start"):
            name = line[len("@start") :].strip()
            if not NONTERMINAL_RE.match(name):
                raise GrammarError(f"line {lineno}: bad start symbol {name!r}")
            start = name
        elif line.startswith("@lexicon"):
            body = line[len("@lexicon") :].strip()
            if ":" not in body:
                raise GrammarError(f"line {lineno}: lexicon needs 'NAME: phrase, ...'")
            name, entries = body.split(":", 1)
            name = name.strip()
            if not NONTERMINAL_RE.match(name):
                raise GrammarError(f"line {lineno}: bad lexicon name {name!r}")
            if name in lexicons:
                raise GrammarError(
                    f"line {lineno}: duplicate lexicon {name!r}"
                    f" (first defined on line {lexicon_lines[name]})"
                )
            phrases = [p.strip() for p in entries.split(",") if p.strip()]
            if not phrases:
                raise GrammarError(f"line {lineno}: lexicon {name!r} has no entries")
            lexicons[name] = phrases
            lexicon_lines[name] = lineno
        elif "->" in line:
            lhs_text, rhs_text = line.split("->", 1)
            lhs_text = lhs_text.strip()
            feats = EMPTY_FEATURES
            m = re.match(r"^([A-Z][A-Z0-9_]*)(?:\[([^\]]*)\])?$", lhs_text)
            if not m:
                raise GrammarError(f"line {lineno}: bad rule left-hand side {lhs_text!r}")
            lhs = m.group(1)
            if m.group(2):
                feats = _parse_features(m.group(2), lineno)
            for rhs, weight in _parse_rhs(rhs_text, lineno):
                rules.append(
                    GrammarRule(lhs=lhs, rhs=rhs, weight=weight, lhs_features=feats, line=lineno)
                )
        else:
            raise GrammarError(f"line {lineno}: cannot parse {line!r}")

    if not rules:
        raise GrammarError("grammar has no rules")
    if start is None:
        start = rules[0].lhs

    grammar = Grammar(rules=rules, start=start, lexicons=lexicons)
    _validate(grammar, rules)
    return grammar


def _validate(grammar: Grammar, authored_rules: List[GrammarRule]) -> None:
    defined = grammar.nonterminals()
    if not grammar.rules_for(grammar.start):
        raise GrammarError(f"start symbol {grammar.start!r} has no rule")
    for rule in authored_rules:
        for sym in rule.rhs:
            if not sym.is_terminal and sym.name not in defined:
                raise GrammarError(
                    f"line {rule.line}: undefined nonterminal {sym.name!r}"
                    f" referenced by rule for {rule.lhs}"
                )
    # Reachability-to-terminal fixpoint: a nonterminal is productive when
    # some rule has every nonterminal child productive.
    productive: set = set()
    changed = True
    while changed:
        changed = False
        for nt in defined:
            if nt in productive:
                continue
            for rule in grammar.rules_for(nt):
                if all(s.is_terminal or s.name in productive for s in rule.rhs):
                    productive.add(nt)
                    changed = True
                    break
    dead = sorted(defined - productive)
    if dead:
        lines = sorted({r.line for nt in dead for r in grammar.rules_for(nt) if r.line})
        where = f" (rule lines {', '.join(map(str, lines))})" if lines else ""
        raise GrammarError(
            f"nonterminal(s) {', '.join(dead)} cannot derive any terminal string{where}"
        )


def load_grammar(path) -> Grammar:
    return parse_grammar(Path(path).read_text(encoding="utf-8"))


class _DepthExceeded(Exception):
    pass


class _DeadEnd(Exception):
    pass


def _expand(
    grammar: Grammar,
    symbol: Symbol,
    rng: random.Random,
    depth: int,
    max_depth: int,
    out: List[str],
) -> None:
    if symbol.is_terminal:
        out.append(symbol.name)
        return
    if depth > max_depth:
        raise _DepthExceeded()
    candidates = [
        r for r in grammar.rules_for(symbol.name) if unify(r.lhs_features, symbol.constraint) is not None
    ]
    if not candidates:
        raise _DeadEnd()
    weights = [r.weight for r in candidates]
    rule = rng.choices(candidates, weights=weights, k=1)[0]
    for child in rule.rhs:
        _expand(grammar, child, rng, depth + 1, max_depth, out)


def generate_one(grammar: Grammar, rng: random.Random, max_depth: int = 30) -> Optional[str]:
    """One random weighted derivation from the start symbol.

    Returns None when the derivation exceeds max_depth or hits a
    nonterminal with no rule satisfying the feature constraint.
    """
    out: List[str] = []
    try:
        _expand(grammar, Symbol(grammar.start, is_terminal=False), rng, 1, max_depth, out)
    except (_DepthExceeded, _DeadEnd):
        return None
    return " ".join(out)


def sample_utterances(
    grammar: Grammar,
    n: int,
    seed: int = 0,
    max_depth: int = 30,
    attempt_budget: Optional[int] = None,
    id_prefix: str = "grammar",
) -> SampleReport:
    """Sample up to ``n`` unique utterances by weighted top-down derivation.

    Rule choice is proportional to weight; feature constraints are enforced
    by unification along each derivation. Duplicates are suppressed after
    derivation. Stops at ``n`` unique outputs or when the attempt budget
    (default 50 * n) is exhausted, reporting the shortfall. Deterministic
    for a fixed (grammar, n, seed, max_depth).
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    budget = attempt_budget if attempt_budget is not None else 50 * n
    rng = random.Random(seed)
    seen = set()
    utterances: List[Utterance] = []
    attempts = 0
    while len(utterances) < n and attempts < budget:
        attempts += 1
        text = generate_one(grammar, rng, max_depth)
        if text is None or text in seen:
            continue
        seen.add(text)
        utterances.append(
            Utterance(id=f"{id_prefix}-{len(utterances)}", text=text, source="grammar")
        )
    return SampleReport(
        corpus=Corpus(utterances),
        requested=n,
        produced=len(utterances),
        attempts=attempts,
        shortfall=n - len(utterances),
    )


@dataclass(frozen=True)
class _EarleyState:
    rule: GrammarRule
    dot: int
    origin: int

    @property
    def complete(self) -> bool:
        return self.dot >= len(self.rule.rhs)

    @property
    def expected(self) -> Optional[Symbol]:
        return None if self.complete else self.rule.rhs[self.dot]


def membership(grammar: Grammar, text: str) -> bool:
    """True iff ``text`` is derivable from the grammar, ignoring weights.

    Earley chart parse over whitespace tokens; feature constraints are
    checked when a completed constituent is consumed by its parent.
    """
    tokens = text.split()
    if not tokens:
        return False

    chart: List[set] = [set() for _ in range(len(tokens) + 1)]
    order: List[List[_EarleyState]] = [[] for _ in range(len(tokens) + 1)]

    def add(pos: int, state: _EarleyState) -> None:
        if state not in chart[pos]:
            chart[pos].add(state)
            order[pos].append(state)

    for rule in grammar.rules_for(grammar.start):
        add(0, _EarleyState(rule, 0, 0))

    for pos in range(len(tokens) + 1):
        i = 0
        while i < len(order[pos]):
            state = order[pos][i]
            i += 1
            sym = state.expected
            if sym is None:
                # Completion: feature check happens against the consumer's
                # constraint on the completed nonterminal.
                produced = state.rule.lhs_features
                for parent in list(order[state.origin]):
                    expected = parent.expected
                    if (
                        expected is not None
                        and not expected.is_terminal
                        and expected.name == state.rule.lhs
                        and unify(produced, expected.constraint) is not None
                    ):
                        add(pos, _EarleyState(parent.rule, parent.dot + 1, parent.origin))
            elif sym.is_terminal:
                if pos < len(tokens) and tokens[pos] == sym.name:
                    add(pos + 1, _EarleyState(state.rule, state.dot + 1, state.origin))
            else:
                for rule in grammar.rules_for(sym.name):
                    add(pos, _EarleyState(rule, 0, pos))

    return any(
        state.complete and state.origin == 0 and state.rule.lhs == grammar.start
        for state in chart[len(tokens)]
    )
