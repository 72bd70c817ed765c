import json
import time
from pathlib import Path

import pytest
from hypothesis import settings

from speechaug.audio import AudioClip, write_wav

from helpers import MockServer, det_signal

settings.register_profile("suite", deadline=None, max_examples=60)
settings.load_profile("suite")


def pytest_sessionstart(session):
    session.config._suite_start = time.time()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    start = getattr(config, "_suite_start", None)
    if start is None:
        return
    elapsed = time.time() - start
    status = "PASS" if elapsed < 120.0 else "FAIL"
    terminalreporter.write_line(f"[{status}] suite runtime {elapsed:.1f}s (budget 120s)")

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def noise_bank(tmp_path_factory) -> Path:
    """Five noise tracks of varied length plus their JSONL manifest.

    Paths in the manifest are relative, exercising manifest-directory
    resolution.
    """
    root = tmp_path_factory.mktemp("noise")
    entries = []
    for i, seconds in enumerate((0.3, 0.45, 0.6, 0.9, 1.5)):
        n = int(16_000 * seconds)
        write_wav(AudioClip(det_signal(n, salt=11 + i, amplitude=0.3)), root / f"noise{i}.wav")
        entries.append({"id": f"noise{i}", "path": f"noise{i}.wav", "duration": seconds})
    manifest = root / "noise.jsonl"
    manifest.write_text("".join(json.dumps(e) + "\n" for e in entries), encoding="utf-8")
    return manifest


@pytest.fixture(scope="session")
def real_bank(tmp_path_factory) -> Path:
    """Three human-recorded stand-ins plus their JSONL manifest."""
    root = tmp_path_factory.mktemp("real")
    texts = ["turn on the lights", "what is the time", "call my sister"]
    entries = []
    for i, text in enumerate(texts):
        seconds = 1.0 + 0.4 * i
        n = int(16_000 * seconds)
        write_wav(AudioClip(det_signal(n, salt=31 + i, amplitude=0.4)), root / f"real{i}.wav")
        entries.append(
            {
                "audio_path": f"real{i}.wav",
                "text": text,
                "duration_s": seconds,
                "source": "real",
                "origin": "human",
            }
        )
    manifest = root / "real.jsonl"
    manifest.write_text("".join(json.dumps(e) + "\n" for e in entries), encoding="utf-8")
    return manifest


@pytest.fixture
def make_workspace(tmp_path, noise_bank, real_bank):
    """Factory for a pipeline workspace: seed corpus + config JSON.

    By default uses a 12-line slice of the fixture seed corpus at a small
    factor so orchestration tests stay fast; the acceptance suite asks
    for the full corpus explicitly.
    """

    def build(
        n_lines: int = 12,
        factor: float = 4.0,
        seed: int = 7,
        voices: int = 6,
        ratio: float = 0.5,
        epoch_len: int = 400,
        overrides: dict = None,
    ) -> Path:
        lines = (FIXTURES / "seed_corpus.txt").read_text(encoding="utf-8").splitlines()
        (tmp_path / "seed_corpus.txt").write_text(
            "\n".join(lines[:n_lines]) + "\n", encoding="utf-8"
        )
        data = {
            "seed": seed,
            "seed_corpus": "seed_corpus.txt",
            "out_dir": "out",
            "text": {"methods": ["random", "custom"], "factor": factor},
            "tts": {"backend": "mock", "voices": voices},
            "audio": {"apply_to": ["synthetic"], "noise_manifest": str(noise_bank)},
            "mix": {"ratio": ratio, "epoch_len": epoch_len, "real_manifest": str(real_bank)},
        }
        for key, value in (overrides or {}).items():
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                data[key].update(value)
            else:
                data[key] = value
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(data, indent=2), encoding="utf-8")
        return config_path

    return build


@pytest.fixture
def http_server():
    """Factory for MockServer instances, all stopped at teardown."""
    servers = []

    def start(hook) -> MockServer:
        server = MockServer(hook)
        servers.append(server)
        return server

    yield start
    for server in servers:
        server.stop()
