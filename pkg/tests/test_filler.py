import itertools
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from speechaug.corpus import Corpus, Utterance
from speechaug.filler import (
    AugPlan,
    FillerError,
    NgramModel,
    StageFailure,
    fill,
    fill_external,
    run_text_augmentation,
    train_ngram,
)
from speechaug.grammar import load_grammar
from speechaug.masking import DEFAULT_MASK_TOKEN, make_template

from helpers import BOS, EOS, OracleNgram



def _corpus(texts):
    return Corpus([Utterance(id=f"u{i}", text=t) for i, t in enumerate(texts)])


class TestNgramModel:
    def test_hand_computed_probabilities(self):
        model = train_ngram(_corpus(["a b"]), order=2, k=0.1)
        # vocab {a, b, <s>, </s>}; counts: (<s>)->a, (a)->b, (b)-></s>
        assert model.vocab == {"a", "b", BOS, EOS}
        assert model.prob("b", ["a"]) == pytest.approx(1.1 / 1.4)
        assert model.prob("a", ["a"]) == pytest.approx(0.1 / 1.4)
        assert model.prob("a", []) == pytest.approx(1.1 / 1.4)  # empty clips to <s>
        # unseen context: uniform 1/|V|
        assert model.prob("a", ["zzz"]) == pytest.approx(0.25)
        assert model.prob_backward("a", ["b"]) == pytest.approx(1.1 / 1.4)

    def test_matches_oracle_on_fixture(self):
        sentences = ["play some jazz music", "play some loud music", "stop the music"]
        model = train_ngram(_corpus(sentences), order=3, k=0.1)
        oracle = OracleNgram(sentences, order=3, k=0.1)
        assert model.vocab == oracle.vocab
        rng = random.Random(0)
        pool = sorted(oracle.vocab)
        for _ in range(50):
            token = rng.choice(pool)
            context = [rng.choice(pool) for _ in range(rng.randrange(4))]
            assert model.prob(token, context) == pytest.approx(
                oracle.prob(oracle.fwd, oracle.fwd_tot, token, context)
            )
            assert model.prob_backward(token, context) == pytest.approx(
                oracle.prob(oracle.bwd, oracle.bwd_tot, token, context)
            )

    @given(st.integers(min_value=0, max_value=10**9))
    def test_conditional_distributions_normalize(self, seed):
        model = train_ngram(
            _corpus(["play some jazz music", "stop the music", "play it loud"]),
            order=3,
            k=0.1,
        )
        rng = random.Random(seed)
        pool = sorted(model.vocab)
        context = [rng.choice(pool) for _ in range(rng.randrange(3))]
        total = sum(model.prob(w, context) for w in model.vocab)
        assert abs(total - 1.0) <= 1e-9

    def test_candidates_exclude_boundaries(self):
        model = train_ngram(_corpus(["b a"]))
        assert model.candidates() == ["a", "b"]

    def test_validation(self):
        with pytest.raises(ValueError, match="order"):
            NgramModel(order=1)
        with pytest.raises(ValueError, match="k must be > 0"):
            NgramModel(k=0.0)
        with pytest.raises(FillerError, match="empty corpus"):
            train_ngram(_corpus([]))


class TestFill:
    _SENTENCES = ["play some jazz music", "play some loud music", "stop the music"]

    def _model(self):
        return train_ngram(_corpus(self._SENTENCES), order=3, k=0.1)

    def test_greedy_matches_oracle_single_slot(self):
        model = self._model()
        oracle = OracleNgram(self._SENTENCES, order=3, k=0.1)
        for tokens in (
            ["play", "some", DEFAULT_MASK_TOKEN, "music"],
            ["stop", DEFAULT_MASK_TOKEN, "music"],
            [DEFAULT_MASK_TOKEN, "some", "jazz", "music"],
        ):
            template = make_template(tokens, "p0", "random")
            out = fill(template, model, top_k=1, n_outputs=1)
            assert out[0].text == oracle.greedy_fill(template)

    def test_greedy_matches_oracle_two_slots_left_to_right(self):
        model = self._model()
        oracle = OracleNgram(self._SENTENCES, order=3, k=0.1)
        template = make_template(
            ["play", DEFAULT_MASK_TOKEN, DEFAULT_MASK_TOKEN, "music"], "p0", "random"
        )
        out = fill(template, model, top_k=1, n_outputs=1)
        assert out[0].text == oracle.greedy_fill(template)

    def test_greedy_ignores_seed(self):
        model = self._model()
        template = make_template(["play", "some", DEFAULT_MASK_TOKEN, "music"], "p0", "random")
        texts = {fill(template, model, top_k=1, n_outputs=1, seed=s)[0].text for s in range(5)}
        assert len(texts) == 1

    def test_sampled_fills_stay_within_top_k(self):
        model = self._model()
        oracle = OracleNgram(self._SENTENCES, order=3, k=0.1)
        template = make_template(["play", "some", DEFAULT_MASK_TOKEN, "music"], "p0", "random")
        scored = sorted(
            (
                (
                    oracle.prob(oracle.fwd, oracle.fwd_tot, c, ["play", "some"])
                    * oracle.prob(oracle.bwd, oracle.bwd_tot, c, ["music"]),
                    c,
                )
                for c in oracle.vocab - {BOS, EOS}
            ),
            key=lambda sc: (-sc[0], sc[1]),
        )
        top3 = {c for _, c in scored[:3]}
        for seed in range(10):
            for utt in fill(template, model, top_k=3, n_outputs=3, seed=seed):
                assert utt.tokens()[2] in top3

    def test_outputs_are_distinct_and_provenance_tagged(self):
        model = self._model()
        template = make_template(["play", DEFAULT_MASK_TOKEN, "music"], "seed-4", "custom")
        outputs = fill(template, model, top_k=5, n_outputs=3, seed=2)
        texts = [u.text for u in outputs]
        assert len(texts) == len(set(texts))
        assert all(u.source == "mask_custom" for u in outputs)
        assert all(u.parent_id == "seed-4" for u in outputs)
        ids = [u.id for u in outputs]
        assert len(ids) == len(set(ids))

    def test_duplicate_capped_greedy_returns_single_output(self):
        model = self._model()
        template = make_template(["play", DEFAULT_MASK_TOKEN, "music"], "p", "random")
        assert len(fill(template, model, top_k=1, n_outputs=5)) == 1

    def test_validation(self):
        model = self._model()
        template = make_template(["play", DEFAULT_MASK_TOKEN], "p", "random")
        with pytest.raises(FillerError, match="top_k"):
            fill(template, model, top_k=0)
        with pytest.raises(FillerError, match="temperature"):
            fill(template, model, top_k=2, temperature=0.0)


def _fill_hook(counter=None):
    """Echo hook: replaces each mask with a unique token per request."""
    counter = counter if counter is not None else itertools.count()

    def hook(body, index):
        results = []
        for text in body["texts"]:
            results.append(
                [
                    {"text": text.replace(body["mask_token"], f"w{next(counter)}"), "score": 1.0}
                    for _ in range(body["n_candidates"])
                ]
            )
        return 200, {"results": results}

    return hook


def _templates(n, parent="p"):
    return [
        make_template(["find", DEFAULT_MASK_TOKEN, f"number{i}"], f"{parent}{i}", "random")
        for i in range(n)
    ]


class TestFillExternal:
    def test_happy_path(self, http_server):
        server = http_server(_fill_hook())
        result = fill_external(_templates(3), server.url, n_outputs=2)
        assert len(result.utterances) == 6
        assert result.drops == 0
        assert result.requests_made == 1
        assert server.requests[0]["texts"] == [t.text() for t in _templates(3)]
        assert server.requests[0]["n_candidates"] == 2
        assert server.requests[0]["mask_token"] == DEFAULT_MASK_TOKEN
        assert all(u.source == "mask_random" for u in result.utterances)
        assert all(DEFAULT_MASK_TOKEN not in u.text for u in result.utterances)

    def test_residual_mask_and_empty_candidates_dropped(self, http_server):
        def hook(body, index):
            results = [
                [
                    {"text": body["texts"][0], "score": 0.9},  # mask left in place
                    {"text": "  ", "score": 0.5},
                    {"text": "find this number0", "score": 0.1},
                ]
            ]
            return 200, {"results": results}

        server = http_server(hook)
        result = fill_external(_templates(1), server.url, n_outputs=3)
        assert [u.text for u in result.utterances] == ["find this number0"]
        assert result.drops == 2
        assert any("residual mask" in r for r in result.drop_reasons)
        assert any("empty candidate" in r for r in result.drop_reasons)

    def test_malformed_response_drops_batch(self, http_server):
        server = http_server(lambda body, index: (200, {"nope": True}))
        result = fill_external(_templates(4), server.url)
        assert result.utterances == []
        assert result.drops == 4
        assert "malformed response" in result.drop_reasons[0]

    def test_result_length_mismatch_drops_batch(self, http_server):
        server = http_server(lambda body, index: (200, {"results": [[]]}))
        result = fill_external(_templates(3), server.url)
        assert result.drops == 3

    def test_no_candidates_for_one_text_drops_only_it(self, http_server):
        def hook(body, index):
            results = [[{"text": t.replace(body["mask_token"], "x"), "score": 1.0}] for t in body["texts"]]
            results[1] = []
            return 200, {"results": results}

        server = http_server(hook)
        result = fill_external(_templates(3), server.url, n_outputs=1)
        assert len(result.utterances) == 2
        assert result.drops == 1
        assert "no candidates returned" in result.drop_reasons[0]

    def test_batching_request_count(self, http_server):
        server = http_server(_fill_hook())
        result = fill_external(_templates(1000), server.url, n_outputs=1, batch_size=32)
        assert result.requests_made == 32  # ceil(1000 / 32)
        assert len(server.requests) == 32
        sizes = [len(r["texts"]) for r in server.requests]
        assert sizes == [32] * 31 + [8]
        assert len(result.utterances) == 1000

    def test_retry_then_success(self, http_server):
        inner = _fill_hook()

        def hook(body, index):
            if index == 0:
                return 500, {"error": "warming up"}
            return inner(body, index)

        server = http_server(hook)
        result = fill_external(
            _templates(2), server.url, max_retries=2, backoff_s=0.01
        )
        assert len(result.utterances) == 6
        assert result.requests_made == 1  # one successful batch
        assert len(server.requests) == 2  # but two POSTs on the wire

    def test_exhausted_retries_raise_with_partial(self, http_server):
        inner = _fill_hook()

        def hook(body, index):
            if index == 0:
                return 200, inner(body, index)[1]
            return 503, {"error": "down"}

        server = http_server(hook)
        with pytest.raises(StageFailure, match="failed after 1 retries") as excinfo:
            fill_external(
                _templates(4),
                server.url,
                n_outputs=1,
                batch_size=2,
                max_retries=1,
                backoff_s=0.01,
            )
        partial = excinfo.value.partial
        assert partial is not None
        assert len(partial.utterances) == 2  # first batch landed before the outage

    def test_connection_refused_raises_stage_failure(self):
        with pytest.raises(StageFailure):
            fill_external(
                _templates(1), "http://127.0.0.1:9/", max_retries=0, backoff_s=0.01
            )


class TestAugPlanValidation:
    def test_rejects_bad_plans(self):
        with pytest.raises(FillerError, match="unknown augmentation method"):
            AugPlan(methods=("osmosis",))
        with pytest.raises(FillerError, match="factor"):
            AugPlan(factor=0.5)
        with pytest.raises(FillerError, match="unknown filler backend"):
            AugPlan(backend="markov")
        with pytest.raises(FillerError, match="no grammar given"):
            AugPlan(methods=("grammar",))
        with pytest.raises(FillerError, match="requires an endpoint"):
            AugPlan(methods=("random",), backend="external")


class TestRunTextAugmentation:
    def _seed(self, fixtures_dir, n):
        lines = (fixtures_dir / "seed_corpus.txt").read_text().splitlines()[:n]
        return _corpus(lines)

    def test_factor_accounting_exact(self, fixtures_dir):
        seed = self._seed(fixtures_dir, 10)
        out, report = run_text_augmentation(
            seed, AugPlan(methods=("random", "custom"), factor=3.0, seed=1)
        )
        texts = out.texts()
        assert len(texts) == len(set(texts)) == 30
        assert report.target == 30 and report.produced == 30 and report.shortfall == 0
        assert {u.text for u in seed} <= set(texts)

    def test_no_output_contains_mask_token(self, fixtures_dir):
        seed = self._seed(fixtures_dir, 10)
        out, _ = run_text_augmentation(
            seed, AugPlan(methods=("random", "custom"), factor=4.0, seed=2)
        )
        assert all(DEFAULT_MASK_TOKEN not in u.text for u in out)

    def test_deterministic(self, fixtures_dir):
        seed = self._seed(fixtures_dir, 8)
        a, _ = run_text_augmentation(seed, AugPlan(methods=("random",), factor=3.0, seed=5))
        b, _ = run_text_augmentation(seed, AugPlan(methods=("random",), factor=3.0, seed=5))
        assert a.texts() == b.texts()

    def test_methods_share_the_budget(self, fixtures_dir):
        seed = self._seed(fixtures_dir, 30)
        _, report = run_text_augmentation(
            seed, AugPlan(methods=("random", "custom"), factor=4.0, seed=0)
        )
        assert report.per_method["random"] > 0
        assert report.per_method["custom"] > 0

    def test_unreachable_factor_reports_shortfall(self):
        # 3 vocabulary tokens and <= 3 inserted masks bound the fillable
        # space below 400 strings, so the target cannot be met.
        seed = _corpus(["red light", "blue light"])
        out, report = run_text_augmentation(
            seed, AugPlan(methods=("random", "custom"), factor=200.0, seed=3)
        )
        assert report.target == 400
        assert 0 < report.produced < report.target
        assert report.shortfall == report.target - report.produced
        assert report.produced == len(out)
        texts = out.texts()
        assert len(texts) == len(set(texts))

    def test_grammar_method(self, fixtures_dir):
        seed = self._seed(fixtures_dir, 10)
        grammar = load_grammar(fixtures_dir / "catalog_search.nlx")
        out, report = run_text_augmentation(
            seed, AugPlan(methods=("grammar",), factor=3.0, seed=4, grammar=grammar)
        )
        assert report.produced == 30
        assert report.per_method["grammar"] == 20
        sampled = [u for u in out if u.source == "grammar"]
        assert len(sampled) == 20

    def test_external_backend(self, fixtures_dir, http_server):
        server = http_server(_fill_hook())
        seed = self._seed(fixtures_dir, 5)
        out, report = run_text_augmentation(
            seed,
            AugPlan(methods=("random",), backend="external", endpoint=server.url, factor=2.0, seed=6),
        )
        assert report.produced == 10
        assert report.shortfall == 0
        assert len(server.requests) >= 1
        new = [u for u in out if u.source == "mask_random"]
        assert len(new) == 5

    def test_seed_duplicates_are_collapsed_and_reported(self):
        seed = _corpus(["same line", "Same   LINE", "other line"])
        out, report = run_text_augmentation(seed, AugPlan(methods=("random",), factor=2.0, seed=0))
        assert report.seed_dedup_rate == pytest.approx(1 / 3)
        assert report.target == 4
