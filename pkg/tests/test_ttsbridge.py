import json
from collections import Counter

import numpy as np
import pytest
from scipy.stats import chi2

from speechaug.audio import AudioClip, to_wav_bytes
from speechaug.corpus import Corpus, Utterance
from speechaug.ttsbridge import (
    SAMPLES_PER_CHAR,
    AudioCache,
    TtsError,
    VoicePlan,
    assign_voice_params,
    synthesize_external,
    synthesize_mock,
)

from helpers import det_signal


def _corpus(n, prefix="t"):
    return Corpus([Utterance(id=f"{prefix}{i}", text=f"utterance {i}") for i in range(n)])


class TestSynthesizeMock:
    def test_bit_identical_across_calls(self):
        a = synthesize_mock("hello world", "voice01", seed=3)
        b = synthesize_mock("hello world", "voice01", seed=3)
        assert np.array_equal(a.samples, b.samples)

    def test_duration_law(self):
        for text in ("a", "hello", "hello world again"):
            clip = synthesize_mock(text, "voice00")
            assert len(clip) == len(text) * SAMPLES_PER_CHAR

    def test_duration_strictly_monotonic_in_text_length(self):
        lengths = [len(synthesize_mock("x" * n, "voice00")) for n in (1, 4, 9, 30)]
        assert lengths == sorted(lengths) and len(set(lengths)) == 4

    def test_spaces_are_silence(self):
        clip = synthesize_mock("a b", "voice00")
        middle = clip.samples[SAMPLES_PER_CHAR : 2 * SAMPLES_PER_CHAR]
        assert np.array_equal(middle, np.zeros(SAMPLES_PER_CHAR))
        assert np.abs(clip.samples[:SAMPLES_PER_CHAR]).max() > 0

    def test_voices_differ(self):
        a = synthesize_mock("same text", "voice00")
        b = synthesize_mock("same text", "voice55")
        assert not np.array_equal(a.samples, b.samples)

    def test_empty_text_rejected(self):
        with pytest.raises(TtsError, match="empty text"):
            synthesize_mock("", "voice00")

    def test_samples_bounded(self):
        clip = synthesize_mock("loudness check", "voice07")
        assert np.abs(clip.samples).max() <= 1.0


class TestVoicePlan:
    def test_default_profile_combinations(self):
        plan = VoicePlan.default_profile()
        assert len(plan.voices) == 96
        assert plan.speeds == (0.9, 1.0, 1.1)
        assert plan.pitches == (-2.0, -1.0, 0.0, 1.0, 2.0)
        assert plan.combinations == 96 * 3 * 5 == 1440

    def test_validation(self):
        with pytest.raises(TtsError, match="no voices"):
            VoicePlan(voices=())
        with pytest.raises(TtsError, match="at least one speed"):
            VoicePlan(voices=("v",), speeds=())
        with pytest.raises(TtsError, match="positive"):
            VoicePlan(voices=("v",), speeds=(0.0,))


class TestAssignVoiceParams:
    def test_deterministic_and_order_preserving(self):
        corpus = _corpus(20)
        plan = VoicePlan(voices=("a", "b", "c"))
        first = assign_voice_params(corpus, plan, seed=9)
        second = assign_voice_params(corpus, plan, seed=9)
        assert first == second
        assert [row[0] for row in first] == corpus.ids()
        assert first != assign_voice_params(corpus, plan, seed=10)

    def test_draws_come_from_the_plan(self):
        corpus = _corpus(50)
        plan = VoicePlan(voices=("a", "b"), speeds=(1.0,), pitches=(0.0, 1.0))
        for _, voice, speed, pitch in assign_voice_params(corpus, plan, seed=0):
            assert voice in plan.voices and speed in plan.speeds and pitch in plan.pitches

    def test_joint_uniformity_chi_square(self):
        # 4 voices x 3 speeds x 5 pitches = 60 cells at 240 expected each.
        plan = VoicePlan(voices=("v0", "v1", "v2", "v3"))
        n = 14_400
        counts = Counter(
            (voice, speed, pitch)
            for _, voice, speed, pitch in assign_voice_params(_corpus(n), plan, seed=123)
        )
        cells = [
            counts.get((v, s, p), 0)
            for v in plan.voices
            for s in plan.speeds
            for p in plan.pitches
        ]
        expected = n / len(cells)
        statistic = sum((c - expected) ** 2 / expected for c in cells)
        assert statistic < chi2.isf(0.001, len(cells) - 1)

    def test_default_profile_spreads_voices(self):
        rows = assign_voice_params(_corpus(960), VoicePlan.default_profile(), seed=0)
        used = {voice for _, voice, _, _ in rows}
        assert len(used) >= 90


class TestAudioCache:
    def _clip(self, n=2000, salt=5):
        return AudioClip(det_signal(n, salt=salt, amplitude=0.6))

    def test_round_trip_within_quantization(self, tmp_path):
        cache = AudioCache(tmp_path)
        clip = self._clip()
        cache.put("text", "v", 1.0, 0.0, clip)
        got = cache.get("text", "v", 1.0, 0.0)
        assert got is not None
        assert np.allclose(got.samples, clip.samples, atol=1.0 / 32767)

    def test_miss_returns_none(self, tmp_path):
        assert AudioCache(tmp_path).get("nothing", "v", 1.0, 0.0) is None

    def test_distinct_keys_per_request_field(self, tmp_path):
        cache = AudioCache(tmp_path)
        paths = {
            cache.path_for("t", "v", 1.0, 0.0),
            cache.path_for("t", "v", 1.1, 0.0),
            cache.path_for("t", "v", 1.0, 1.0),
            cache.path_for("t", "w", 1.0, 0.0),
            cache.path_for("u", "v", 1.0, 0.0),
        }
        assert len(paths) == 5

    def test_first_writer_wins(self, tmp_path):
        cache = AudioCache(tmp_path)
        first = self._clip(salt=1)
        cache.put("t", "v", 1.0, 0.0, first)
        cache.put("t", "v", 1.0, 0.0, self._clip(salt=2))
        got = cache.get("t", "v", 1.0, 0.0)
        assert np.allclose(got.samples, first.samples, atol=1.0 / 32767)

    def test_tampered_sidecar_invalidates_entry(self, tmp_path):
        cache = AudioCache(tmp_path)
        wav_path = cache.put("t", "v", 1.0, 0.0, self._clip())
        sidecar = wav_path.with_suffix(".json")
        sidecar.write_text(
            json.dumps({"text": "other", "voice": "v", "speed": 1.0, "pitch": 0.0}),
            encoding="utf-8",
        )
        assert cache.get("t", "v", 1.0, 0.0) is None
        assert not wav_path.exists() and not sidecar.exists()

    def test_unreadable_sidecar_invalidates_entry(self, tmp_path):
        cache = AudioCache(tmp_path)
        wav_path = cache.put("t", "v", 1.0, 0.0, self._clip())
        wav_path.with_suffix(".json").write_text("{not json", encoding="utf-8")
        assert cache.get("t", "v", 1.0, 0.0) is None

    def test_missing_sidecar_is_a_miss(self, tmp_path):
        cache = AudioCache(tmp_path)
        wav_path = cache.put("t", "v", 1.0, 0.0, self._clip())
        wav_path.with_suffix(".json").unlink()
        assert cache.get("t", "v", 1.0, 0.0) is None


def _wav_hook(sample_rate=16_000, n=1600):
    def hook(body, index):
        salt = (len(body.get("text", "")) % 7) + 1
        clip = AudioClip(det_signal(n, salt=salt, amplitude=0.5), sample_rate)
        return 200, to_wav_bytes(clip)

    return hook


def _batch(n):
    return [(f"text {i}", "voice00", 1.0, 0.0) for i in range(n)]


class TestSynthesizeExternal:
    def test_happy_path_then_cache_hits(self, tmp_path, http_server):
        server = http_server(_wav_hook())
        cache = AudioCache(tmp_path)
        first = synthesize_external(_batch(4), server.url, cache)
        assert first.upstream_calls == 4 and first.cache_hits == 0
        assert all(clip is not None for clip in first.clips)
        assert first.failures == []
        second = synthesize_external(_batch(4), server.url, cache)
        assert second.upstream_calls == 0 and second.cache_hits == 4
        assert len(server.requests) == 4

    def test_request_payload_shape(self, tmp_path, http_server):
        server = http_server(_wav_hook())
        synthesize_external([("hola", "v9", 1.1, -2.0)], server.url, AudioCache(tmp_path))
        assert server.requests[0] == {"text": "hola", "voice": "v9", "speed": 1.1, "pitch": -2.0}

    def test_undecodable_audio_is_reported_not_raised(self, tmp_path, http_server):
        server = http_server(lambda body, index: (200, b"not a wav"))
        result = synthesize_external(_batch(2), server.url, AudioCache(tmp_path))
        assert result.clips == [None, None]
        assert len(result.failures) == 2
        assert all("invalid audio" in reason for _, reason in result.failures)

    def test_zero_frame_audio_dropped(self, tmp_path, http_server):
        server = http_server(lambda body, index: (200, to_wav_bytes(AudioClip(np.zeros(0)))))
        result = synthesize_external(_batch(1), server.url, AudioCache(tmp_path))
        assert result.clips == [None]
        assert result.failures[0][1] == "empty audio"

    def test_resamples_to_expected_rate(self, tmp_path, http_server):
        server = http_server(_wav_hook(sample_rate=8_000, n=800))
        result = synthesize_external(_batch(1), server.url, AudioCache(tmp_path))
        clip = result.clips[0]
        assert clip.sample_rate == 16_000
        assert len(clip) == 1600

    def test_retry_counts_every_post(self, tmp_path, http_server):
        wav = _wav_hook()

        def hook(body, index):
            if index == 0:
                return 500, {"error": "busy"}
            return wav(body, index)

        server = http_server(hook)
        result = synthesize_external(
            _batch(1), server.url, AudioCache(tmp_path), max_retries=1, backoff_s=0.01
        )
        assert result.clips[0] is not None
        assert result.upstream_calls == 2

    def test_exhausted_retries_fail_only_that_item(self, tmp_path, http_server):
        server = http_server(lambda body, index: (503, {"error": "down"}))
        result = synthesize_external(
            _batch(2), server.url, AudioCache(tmp_path), max_retries=1, backoff_s=0.01
        )
        assert result.clips == [None, None]
        assert result.upstream_calls == 4  # 2 items x (1 try + 1 retry)
        assert all("transport failure" in reason for _, reason in result.failures)

    def test_cache_survives_corruption_by_refetching(self, tmp_path, http_server):
        server = http_server(_wav_hook())
        cache = AudioCache(tmp_path)
        synthesize_external(_batch(1), server.url, cache)
        wav_path = cache.path_for("text 0", "voice00", 1.0, 0.0)
        wav_path.with_suffix(".json").write_text("{broken", encoding="utf-8")
        result = synthesize_external(_batch(1), server.url, cache)
        assert result.upstream_calls == 1 and result.cache_hits == 0
        assert result.clips[0] is not None
