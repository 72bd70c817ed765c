"""Masked-LM fill engine: build a tiny word-level BERT from a text corpus,
load a saved model directory, and fill mask slots with scored candidates.

The base model is constructed entirely locally: its vocabulary comes from
the corpus and its weights are randomly initialised, so nothing is ever
downloaded. A freshly built model fills masks with essentially arbitrary
vocabulary words; quality comes from `adapt`, which continues masked-LM
training on seed text.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from transformers import (
    AutoModelForMaskedLM,
    AutoTokenizer,
    BertConfig,
    BertForMaskedLM,
    BertTokenizer,
)
from transformers.utils import logging as hf_logging

logger = logging.getLogger(__name__)

hf_logging.disable_progress_bar()

# Order fixes the low token ids; [PAD] must stay at 0 to match the config.
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")


class ModelError(ValueError):
    """Raised for unloadable models, empty corpora, or bad fill arguments."""


def read_corpus(path) -> List[str]:
    """Read one utterance per line, skipping blanks."""
    p = Path(path)
    try:
        raw = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ModelError(f"cannot read corpus: {e}") from e
    lines = [line.strip() for line in raw.splitlines() if line.strip()]
    if not lines:
        raise ModelError(f"corpus is empty: {p}")
    return lines


def _word_pieces(tokenizer: BertTokenizer, line: str) -> List[str]:
    """Pre-tokenize with the model's own normalizer so the vocabulary
    matches what encoding will later produce."""
    backend = tokenizer.backend_tokenizer
    norm = backend.normalizer.normalize_str(line)
    return [piece for piece, _ in backend.pre_tokenizer.pre_tokenize_str(norm)]


def build_base_model(
    corpus_path,
    out_dir,
    hidden_size: int = 64,
    layers: int = 2,
    heads: int = 2,
    seed: int = 0,
) -> Path:
    """Create and persist a randomly initialised masked LM whose word-level
    vocabulary covers the corpus. Returns the artifact directory."""
    if hidden_size < heads or hidden_size % heads != 0:
        raise ModelError(f"hidden size {hidden_size} must be a multiple of {heads} heads")
    lines = read_corpus(corpus_path)

    boot = BertTokenizer(
        vocab={t: i for i, t in enumerate(SPECIAL_TOKENS)}, do_lower_case=False
    )
    words = sorted({w for line in lines for w in _word_pieces(boot, line)})
    vocab = {t: i for i, t in enumerate(SPECIAL_TOKENS + tuple(words))}
    tokenizer = BertTokenizer(vocab=vocab, do_lower_case=False)

    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=hidden_size,
        num_hidden_layers=layers,
        num_attention_heads=heads,
        intermediate_size=4 * hidden_size,
        max_position_embeddings=128,
        pad_token_id=tokenizer.pad_token_id,
    )
    torch.manual_seed(seed)
    model = BertForMaskedLM(config)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(out)
    tokenizer.save_pretrained(out)
    logger.info(
        "built base model at %s (vocab %d, hidden %d, layers %d)",
        out, len(vocab), hidden_size, layers,
    )
    return out


def load_model_dir(model_dir):
    """Load (model, tokenizer) from a directory, eval mode, no downloads."""
    path = Path(model_dir)
    if not path.is_dir():
        raise ModelError(f"model directory not found: {path}")
    try:
        tokenizer = AutoTokenizer.from_pretrained(path)
        model = AutoModelForMaskedLM.from_pretrained(path)
    except (OSError, ValueError, EnvironmentError) as e:
        raise ModelError(f"cannot load model from {path}: {e}") from e
    model.eval()
    return model, tokenizer


@dataclass(frozen=True)
class Candidate:
    """One filled text with its summed log-probability score."""

    text: str
    score: float


@dataclass
class ItemResult:
    """Per-input outcome: candidates sorted by descending score, or an
    error string with no candidates."""

    candidates: List[Candidate] = field(default_factory=list)
    error: Optional[str] = None


class FillEngine:
    """Read-only fill-mask inference over a loaded masked LM.

    Mask slots are whitespace-delimited occurrences of the caller's mask
    token; each slot is filled with a single vocabulary word. Scores are
    sums of per-slot log-softmax values, so multi-slot candidates rank by
    joint probability under a slot-independence assumption.
    """

    def __init__(self, model, tokenizer, model_id: str):
        self.model = model
        self.tokenizer = tokenizer
        self.model_id = model_id
        vocab = tokenizer.get_vocab()
        banned = set(tokenizer.all_special_ids)
        banned |= {i for t, i in vocab.items() if t.startswith("##")}
        self._banned_ids = sorted(banned)

    @classmethod
    def load(cls, model_dir) -> "FillEngine":
        model, tokenizer = load_model_dir(model_dir)
        return cls(model, tokenizer, model_id=str(model_dir))

    def fill(
        self, texts: Sequence[str], n_candidates: int, mask_token: str
    ) -> List[ItemResult]:
        """Fill every text in one forward pass; order matches the input.

        Texts without a usable mask slot get an error entry instead of
        failing the whole batch.
        """
        if n_candidates < 1:
            raise ModelError(f"n_candidates must be >= 1, got {n_candidates}")
        if not mask_token:
            raise ModelError("mask token is empty")

        results: List[ItemResult] = [ItemResult() for _ in texts]
        prepared: List[Tuple[int, List[str], List[int]]] = []
        for i, text in enumerate(texts):
            words = text.split()
            slots = [j for j, w in enumerate(words) if w == mask_token]
            if not slots:
                if mask_token in text:
                    results[i].error = (
                        f"mask token {mask_token!r} must stand alone as a "
                        "whitespace-separated token"
                    )
                else:
                    results[i].error = f"text contains no mask token {mask_token!r}"
                continue
            prepared.append((i, words, slots))
        if not prepared:
            return results

        encoded_texts = []
        for _, words, slots in prepared:
            masked = list(words)
            for j in slots:
                masked[j] = self.tokenizer.mask_token
            encoded_texts.append(" ".join(masked))
        enc = self.tokenizer(
            encoded_texts, padding=True, truncation=True, return_tensors="pt"
        )
        with torch.no_grad():
            logits = self.model(**enc).logits

        for row, (i, words, slots) in enumerate(prepared):
            positions = (
                (enc["input_ids"][row] == self.tokenizer.mask_token_id)
                .nonzero()
                .flatten()
                .tolist()
            )
            if len(positions) != len(slots):
                results[i].error = (
                    f"{len(slots)} mask slots but {len(positions)} survived "
                    "tokenization (text too long?)"
                )
                continue
            log_probs = F.log_softmax(logits[row, positions], dim=-1)
            log_probs[:, self._banned_ids] = float("-inf")
            results[i].candidates = self._decode(words, slots, log_probs, n_candidates)
        return results

    def _decode(
        self,
        words: Sequence[str],
        slots: Sequence[int],
        log_probs: torch.Tensor,
        n_candidates: int,
    ) -> List[Candidate]:
        """Exact top-n joint fills: scores are additive across slots, so a
        beam of width n over per-slot top-n choices cannot miss one."""
        top = torch.topk(log_probs, min(n_candidates, log_probs.shape[1]), dim=-1)
        beams: List[Tuple[float, List[int]]] = [(0.0, [])]
        for s in range(len(slots)):
            grown = [
                (score + value.item(), ids + [idx.item()])
                for score, ids in beams
                for value, idx in zip(top.values[s], top.indices[s])
                if value.item() > float("-inf")
            ]
            beams = heapq.nlargest(n_candidates, grown, key=lambda b: b[0])

        candidates = []
        seen = set()
        for score, ids in beams:
            filled = list(words)
            for j, token_id in zip(slots, ids):
                filled[j] = self.tokenizer.convert_ids_to_tokens(token_id)
            text = " ".join(filled)
            if text in seen:
                continue
            seen.add(text)
            candidates.append(Candidate(text=text, score=score))
        return candidates
