"""Mask filling: turn masked templates into complete utterances.

Two backends: a built-in add-k smoothed n-gram model whose probabilities
are small enough to check by hand, and an external fill-mask service
reached over a JSON-over-HTTP wire protocol. Slot candidates under the
n-gram backend are scored by the product of a left-context score and a
right-context score from a model trained on reversed sequences, a cheap
stand-in for bidirectional masked-LM scoring.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
import time
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import requests

from .corpus import Corpus, Utterance, dedup, dedup_key, normalize, with_normalized_text
from .masking import MaskedTemplate, TagLexicon

logger = logging.getLogger(__name__)

BOS = "<s>"
EOS = "</s>"
_BOUNDARY = (BOS, EOS)


class FillerError(ValueError):
    """Raised for contract violations in filling operations."""


class StageFailure(RuntimeError):
    """Stage-level error; may carry partial results in ``partial``."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class FillCandidate:
    tokens_per_slot: Tuple[Tuple[str, ...], ...]
    score: float
    backend: str


class NgramModel:
    """Add-k smoothed n-gram model over whitespace tokens.

    Holds forward counts and counts over reversed sequences so a mask
    slot can be scored from both sides. Conditional distributions are
    exactly normalized: P(w | ctx) = (c(ctx, w) + k) / (c(ctx) + k * |V|)
    with c(ctx) derived as the sum over continuations.
    """

    def __init__(self, order: int = 3, k: float = 0.1):
        if order < 2:
            raise ValueError("order must be >= 2")
        if k <= 0:
            raise ValueError("smoothing constant k must be > 0")
        self.order = order
        self.k = k
        self.vocab: set = set()
        self._fwd: Dict[Tuple[str, ...], Counter] = defaultdict(Counter)
        self._bwd: Dict[Tuple[str, ...], Counter] = defaultdict(Counter)
        self._totals: Dict[int, Dict[Tuple[str, ...], int]] = {id(self._fwd): {}, id(self._bwd): {}}

    def _observe(self, table, tokens: Sequence[str]) -> None:
        padded = [BOS] * (self.order - 1) + list(tokens) + [EOS]
        for i in range(self.order - 1, len(padded)):
            context = tuple(padded[i - self.order + 1 : i])
            table[context][padded[i]] += 1

    def train(self, corpus: Corpus) -> "NgramModel":
        if not len(corpus):
            raise FillerError("cannot train n-gram model on an empty corpus")
        for u in corpus:
            tokens = normalize(u.text).split()
            self.vocab.update(tokens)
            self._observe(self._fwd, tokens)
            self._observe(self._bwd, list(reversed(tokens)))
        self.vocab.update(_BOUNDARY)
        self._totals = {
            id(self._fwd): {c: sum(v.values()) for c, v in self._fwd.items()},
            id(self._bwd): {c: sum(v.values()) for c, v in self._bwd.items()},
        }
        return self

    def _clip(self, context: Sequence[str]) -> Tuple[str, ...]:
        ctx = [BOS] * (self.order - 1) + list(context)
        return tuple(ctx[-(self.order - 1) :])

    def _prob(self, table, token: str, context: Sequence[str]) -> float:
        clipped = self._clip(context)
        counts = table.get(clipped)
        total = self._totals[id(table)].get(clipped, 0)
        c = counts.get(token, 0) if counts else 0
        return (c + self.k) / (total + self.k * len(self.vocab))

    def prob(self, token: str, context: Sequence[str]) -> float:
        """P(token | last order-1 tokens of context), forward direction."""
        return self._prob(self._fwd, token, context)

    def prob_backward(self, token: str, following: Sequence[str]) -> float:
        """Score a token against what follows it.

        ``following`` is given in reversed order (token nearest the slot
        last), matching the reversed-sequence training direction.
        """
        return self._prob(self._bwd, token, following)

    def candidates(self) -> List[str]:
        """Fillable vocabulary: trained tokens minus boundary markers."""
        return sorted(self.vocab - set(_BOUNDARY))


def train_ngram(seed: Corpus, order: int = 3, k: float = 0.1) -> NgramModel:
    return NgramModel(order=order, k=k).train(seed)


def _slot_scores(model: NgramModel, tokens: Sequence[str], position: int) -> List[Tuple[str, float]]:
    """Score every candidate token for the slot at ``position``."""
    left_ctx = list(tokens[:position])
    right_ctx = list(reversed(tokens[position + 1 :]))
    scored = []
    for cand in model.candidates():
        scored.append((cand, model.prob(cand, left_ctx) * model.prob_backward(cand, right_ctx)))
    return scored


def _top_k(scored: List[Tuple[str, float]], top_k: int) -> List[Tuple[str, float]]:
    # Ties break lexicographically so greedy filling is fully deterministic.
    return sorted(scored, key=lambda cs: (-cs[1], cs[0]))[:top_k]


def _temperature_weights(scores: List[float], temperature: float) -> List[float]:
    if temperature <= 0:
        raise FillerError("temperature must be > 0; use top_k=1 for greedy")
    logs = [math.log(s) if s > 0 else -1e9 for s in scores]
    peak = max(logs)
    return [math.exp((l - peak) / temperature) for l in logs]


def _strategy_source(strategy: str) -> str:
    return {"random": "mask_random", "custom": "mask_custom"}[strategy]


def _fill_id(parent_id: Optional[str], strategy: str, text: str) -> str:
    digest = hashlib.sha1(text.encode("utf-8")).hexdigest()[:10]
    return f"{parent_id or 'root'}.{strategy[0]}{digest}"


def fill(
    template: MaskedTemplate,
    model: NgramModel,
    top_k: int = 10,
    temperature: float = 1.0,
    n_outputs: int = 3,
    seed: int = 0,
) -> List[Utterance]:
    """Fill each mask slot with a single n-gram-scored token.

    Slots are filled left to right, each conditioned on the text as filled
    so far. Per slot the top_k candidates are renormalized with
    ``temperature`` and sampled; top_k=1 reproduces the greedy argmax and
    is deterministic regardless of the seed. Outputs are distinct texts;
    fewer than n_outputs come back when sampling keeps re-hitting the
    same fills.
    """
    if template.num_masks == 0:
        raise FillerError("template has no mask slot")
    if top_k < 1:
        raise FillerError("top_k must be >= 1")
    rng = random.Random(seed)
    outputs = []
    seen = set()
    attempts = 0
    # Distinct outcomes are capped by top_k^num_masks, so duplicates are
    # common on tiny corpora; a bounded retry keeps this total.
    max_attempts = max(n_outputs * 5, n_outputs + 5)
    while len(outputs) < n_outputs and attempts < max_attempts:
        attempts += 1
        tokens = list(template.tokens)
        for position in template.mask_positions:
            ranked = _top_k(_slot_scores(model, tokens, position), top_k)
            if top_k == 1:
                choice = ranked[0][0]
            else:
                weights = _temperature_weights([s for _, s in ranked], temperature)
                choice = rng.choices([c for c, _ in ranked], weights=weights, k=1)[0]
            tokens[position] = choice
        text = " ".join(tokens)
        if text in seen:
            if top_k == 1:
                break
            continue
        seen.add(text)
        outputs.append(
            Utterance(
                id=_fill_id(template.parent_id, template.strategy, text),
                text=text,
                source=_strategy_source(template.strategy),
                parent_id=template.parent_id,
            )
        )
    return outputs


@dataclass
class ExternalFillResult:
    utterances: List[Utterance]
    drops: int = 0
    drop_reasons: List[str] = field(default_factory=list)
    requests_made: int = 0


def _validate_candidate(text: str, mask_token: str) -> Optional[str]:
    if not text or not text.strip():
        return "empty candidate"
    if mask_token in text:
        return "residual mask token"
    return None


def fill_external(
    templates: Sequence[MaskedTemplate],
    endpoint: str,
    n_outputs: int = 3,
    timeout: float = 10.0,
    batch_size: int = 32,
    max_retries: int = 3,
    backoff_s: float = 0.25,
    session: Optional[requests.Session] = None,
) -> ExternalFillResult:
    """Fill templates through the external fill-mask service.

    Requests are batched; each response candidate is validated (non-empty,
    no residual mask) and invalid ones are dropped with counted
    diagnostics rather than crashing the run. Transport failures retry
    with exponential backoff; exhausted retries raise a StageFailure
    carrying the partial results.
    """
    session = session or requests.Session()
    result = ExternalFillResult(utterances=[])
    for start in range(0, len(templates), batch_size):
        batch = templates[start : start + batch_size]
        payload = {
            "texts": [t.text() for t in batch],
            "n_candidates": n_outputs,
            "mask_token": batch[0].mask_token,
        }
        response = None
        for attempt in range(max_retries + 1):
            try:
                response = session.post(endpoint, json=payload, timeout=timeout)
                response.raise_for_status()
                break
            except requests.RequestException as e:
                if attempt == max_retries:
                    raise StageFailure(
                        f"fill-mask service failed after {max_retries} retries: {e}",
                        partial=result,
                    ) from e
                time.sleep(backoff_s * (2**attempt))
        result.requests_made += 1
        try:
            body = response.json()
            per_text = body["results"]
            if len(per_text) != len(batch):
                raise KeyError("results length mismatch")
        except (ValueError, KeyError, TypeError) as e:
            result.drops += len(batch)
            result.drop_reasons.append(f"malformed response for batch at {start}: {e}")
            continue
        for template, candidates in zip(batch, per_text):
            if not candidates:
                result.drops += 1
                result.drop_reasons.append(f"{template.parent_id}: no candidates returned")
                continue
            for cand in candidates:
                text = cand.get("text", "") if isinstance(cand, dict) else ""
                reason = _validate_candidate(text, template.mask_token)
                if reason is not None:
                    result.drops += 1
                    result.drop_reasons.append(f"{template.parent_id}: {reason}")
                    continue
                result.utterances.append(
                    Utterance(
                        id=_fill_id(template.parent_id, template.strategy, text),
                        text=text,
                        source=_strategy_source(template.strategy),
                        parent_id=template.parent_id,
                    )
                )
    return result


@dataclass
class AugPlan:
    """What to generate and how much.

    ``factor`` targets an output of factor * |seed| unique utterances with
    the seed always included. Budgets (attempt multipliers, round caps)
    bound the work per method so an unreachable factor degrades to a
    partial corpus plus a shortfall report instead of looping forever.
    """

    methods: Tuple[str, ...] = ("random",)
    factor: float = 8.0
    backend: str = "ngram"
    seed: int = 0
    grammar: Optional[object] = None
    endpoint: Optional[str] = None
    tag_lexicon: Optional[TagLexicon] = None
    mask_token: str = "<mask>"
    templates_per_utterance: int = 4
    mask_mode: str = "mixed"
    k_choices: Tuple[int, ...] = (1, 2, 3)
    ngram_order: int = 3
    ngram_k: float = 0.1
    top_k: int = 10
    temperature: float = 1.0
    fills_per_template: int = 3
    max_rounds: int = 50
    grammar_max_depth: int = 30

    def __post_init__(self):
        for m in self.methods:
            if m not in ("grammar", "random", "custom"):
                raise FillerError(f"unknown augmentation method {m!r}")
        if self.factor < 1:
            raise FillerError("augmentation factor must be >= 1")
        if self.backend not in ("ngram", "external"):
            raise FillerError(f"unknown filler backend {self.backend!r}")
        if "grammar" in self.methods and self.grammar is None:
            raise FillerError("grammar method enabled but no grammar given")
        if self.backend == "external" and not self.endpoint and self.methods:
            if any(m in ("random", "custom") for m in self.methods):
                raise FillerError("external backend requires an endpoint")


@dataclass
class AugReport:
    target: int
    produced: int
    shortfall: int
    rounds: int
    per_method: Dict[str, int]
    drops: int = 0
    seed_dedup_rate: float = 0.0


def _stable_seed(*parts) -> int:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _make_templates(
    seed_corpus: Corpus, plan: AugPlan, method: str, lexicon: Optional[TagLexicon], round_no: int
) -> List[MaskedTemplate]:
    from .masking import mask_custom, mask_random, tag_pos

    templates: List[MaskedTemplate] = []
    for u in seed_corpus:
        if method == "random":
            templates.extend(
                mask_random(
                    u,
                    n_templates=plan.templates_per_utterance,
                    k_choices=plan.k_choices,
                    mode=plan.mask_mode,
                    seed=_stable_seed(plan.seed, "random", u.id, round_no),
                    mask_token=plan.mask_token,
                )
            )
        else:
            templates.extend(
                mask_custom(u, tag_pos(u.tokens(), lexicon), lexicon, mask_token=plan.mask_token)
            )
    return templates


def run_text_augmentation(
    seed: Corpus,
    plan: AugPlan,
    session: Optional[requests.Session] = None,
) -> Tuple[Corpus, AugReport]:
    """Expand the seed corpus to factor * |seed| unique utterances.

    The seed text is always included in the output. Enabled methods are
    drained round-robin, deduplicating against the seed and the output
    accumulated so far; generation stops at the target size or when every
    method's budget is exhausted, in which case the report carries the
    shortfall.
    """
    from .grammar import sample_utterances

    seed_unique, seed_rate = dedup(with_normalized_text(seed))
    target = int(round(plan.factor * len(seed_unique)))

    out: List[Utterance] = list(seed_unique)
    seen = {dedup_key(u.text) for u in out}
    per_method: Dict[str, int] = {m: 0 for m in plan.methods}
    drops = 0

    model = None
    if plan.backend == "ngram" and any(m in ("random", "custom") for m in plan.methods):
        model = train_ngram(seed_unique, order=plan.ngram_order, k=plan.ngram_k)
    lexicon = plan.tag_lexicon
    if lexicon is None and "custom" in plan.methods:
        lexicon = TagLexicon.shipped()

    def admit(candidates: List[Utterance], method: str, budget: int) -> int:
        taken = 0
        for cand in candidates:
            if len(out) >= target or taken >= budget:
                break
            text = normalize(cand.text)
            if not text or plan.mask_token in text:
                continue
            key = dedup_key(text)
            if key in seen:
                continue
            seen.add(key)
            out.append(
                Utterance(id=f"aug-{len(out)}", text=text, source=cand.source, parent_id=cand.parent_id)
            )
            per_method[method] += 1
            taken += 1
        return taken

    rounds = 0
    empty_rounds: Dict[str, int] = {m: 0 for m in plan.methods}
    exhausted: set = set()
    while len(out) < target and rounds < plan.max_rounds and len(exhausted) < len(plan.methods):
        for method in plan.methods:
            if len(out) >= target or method in exhausted:
                continue
            # Fair-share cap per round so one productive method does not
            # starve the others; shares grow as methods drain.
            active = len(plan.methods) - len(exhausted)
            share = max(1, math.ceil((target - len(out)) / active))
            before = len(out)
            if method == "grammar":
                want = min(target - len(out), share)
                report = sample_utterances(
                    plan.grammar,
                    n=want,
                    seed=_stable_seed(plan.seed, "grammar", rounds),
                    max_depth=plan.grammar_max_depth,
                    attempt_budget=50 * max(want, 1),
                    id_prefix=f"grammar-r{rounds}",
                )
                admit(list(report.corpus), method, share)
            else:
                templates = _make_templates(seed_unique, plan, method, lexicon, rounds)
                if plan.backend == "external":
                    result = fill_external(
                        templates, plan.endpoint, n_outputs=plan.fills_per_template, session=session
                    )
                    drops += result.drops
                    admit(result.utterances, method, share)
                else:
                    remaining = share
                    for t in templates:
                        remaining -= admit(
                            fill(
                                t,
                                model,
                                top_k=plan.top_k,
                                temperature=plan.temperature,
                                n_outputs=plan.fills_per_template,
                                seed=_stable_seed(plan.seed, "fill", t.parent_id, t.mask_positions, rounds),
                            ),
                            method,
                            remaining,
                        )
                        if remaining <= 0 or len(out) >= target:
                            break
            # A method that stops yielding new unique text twice in a row is
            # treated as drained; sampling methods get a second chance.
            if len(out) == before:
                empty_rounds[method] += 1
                if empty_rounds[method] >= 2 or method == "grammar":
                    exhausted.add(method)
            else:
                empty_rounds[method] = 0
        rounds += 1

    produced = len(out)
    report = AugReport(
        target=target,
        produced=produced,
        shortfall=max(0, target - produced),
        rounds=rounds,
        per_method=per_method,
        drops=drops,
        seed_dedup_rate=seed_rate,
    )
    if report.shortfall:
        logger.warning(
            "text augmentation shortfall: produced %d of %d (factor %.2f)",
            produced,
            target,
            plan.factor,
        )
    return Corpus(out), report
