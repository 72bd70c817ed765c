"""Shared fixtures: a tiny seed corpus, a session-scoped base model built
from it, and HTTP clients for the app."""

import threading
import time

import pytest
import uvicorn
from fastapi.testclient import TestClient

from fillmask_service.app import create_app
from fillmask_service.model import FillEngine, build_base_model

CORPUS_LINES = [
    "does anyone have a travel discount code please ?",
    "does anyone have a delivery discount code please ?",
    "play the next song on the kitchen speaker",
    "play some quiet music in the bedroom",
    "set a timer for twenty minutes",
    "set an alarm for six in the morning",
    "what is the weather like this afternoon",
    "turn off all the lights downstairs",
    "remind me to call the dentist tomorrow",
    "add olive oil to my shopping list",
    "how long is the drive to the airport",
    "show me photos from last weekend",
    "lower the thermostat by two degrees",
    "skip this track and raise the volume",
]


@pytest.fixture(scope="session")
def corpus_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "seed.txt"
    path.write_text("\n".join(CORPUS_LINES) + "\n", encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def base_model_dir(tmp_path_factory, corpus_file):
    out = tmp_path_factory.mktemp("models") / "base"
    return build_base_model(corpus_file, out, seed=0)


@pytest.fixture(scope="session")
def engine(base_model_dir):
    return FillEngine.load(base_model_dir)


@pytest.fixture()
def client(engine):
    return TestClient(create_app(engine, batch_size=4))


@pytest.fixture(scope="session")
def live_server(engine):
    """Real uvicorn server on an ephemeral port, for clients that need a
    TCP endpoint rather than an ASGI test client."""
    app = create_app(engine, batch_size=4)
    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("server did not start")
        time.sleep(0.01)
    port = server.servers[0].sockets[0].getsockname()[1]
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5)
