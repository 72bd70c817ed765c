"""Shared test utilities: a programmable local HTTP endpoint,
deterministic signal construction that avoids transcendentals so byte
comparisons are stable across platforms, and an independent n-gram
reference implementation."""

from __future__ import annotations

import json
import threading
from collections import Counter
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

BOS, EOS = "<s>", "</s>"


def det_signal(n: int, salt: int = 1, amplitude: float = 0.5) -> np.ndarray:
    """Deterministic pseudo-random samples in [-amplitude/2, amplitude/2).

    Pure integer arithmetic (Weyl sequence) followed by exact power-of-two
    division, so the result is bit-identical everywhere.
    """
    step = (2654435761 * (2 * salt + 1)) % (1 << 32)
    phases = (np.arange(n, dtype=np.uint64) * np.uint64(step)) % np.uint64(1 << 32)
    return (phases.astype(np.float64) / float(1 << 32) - 0.5) * amplitude


class MockServer:
    """Local HTTP server whose POST behavior is a supplied hook.

    The hook receives (parsed JSON body, request index) and returns
    (status, payload); bytes payloads are sent raw, anything else as
    JSON. Request bodies are recorded in order in ``requests``.
    """

    def __init__(self, hook):
        self.hook = hook
        self.requests: list = []
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                try:
                    body = json.loads(raw) if raw else {}
                except ValueError:
                    body = {}
                with outer._lock:
                    index = len(outer.requests)
                    outer.requests.append(body)
                try:
                    status, payload = outer.hook(body, index)
                except Exception as e:  # a buggy hook should fail the test, not hang it
                    status, payload = 500, {"error": str(e)}
                data = payload if isinstance(payload, bytes) else json.dumps(payload).encode("utf-8")
                ctype = "application/octet-stream" if isinstance(payload, bytes) else "application/json"
                self.send_response(status)
                self.send_header("Content-Type", ctype)
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}/"

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)


class OracleNgram:
    """Independent add-k reference built with plain Counters."""

    def __init__(self, sentences, order, k):
        self.order, self.k = order, k
        self.fwd, self.fwd_tot = Counter(), Counter()
        self.bwd, self.bwd_tot = Counter(), Counter()
        self.vocab = {BOS, EOS}
        for s in sentences:
            tokens = s.split()
            self.vocab.update(tokens)
            self._count(self.fwd, self.fwd_tot, tokens)
            self._count(self.bwd, self.bwd_tot, list(reversed(tokens)))

    def _count(self, table, totals, seq):
        padded = [BOS] * (self.order - 1) + list(seq) + [EOS]
        for i in range(self.order - 1, len(padded)):
            ctx = tuple(padded[i - self.order + 1 : i])
            table[(ctx, padded[i])] += 1
            totals[ctx] += 1

    def _clip(self, context):
        padded = [BOS] * (self.order - 1) + list(context)
        return tuple(padded[-(self.order - 1) :])

    def prob(self, table, totals, token, context):
        ctx = self._clip(context)
        return (table[(ctx, token)] + self.k) / (totals[ctx] + self.k * len(self.vocab))

    def slot_argmax(self, tokens, position):
        """Best filler for one slot; ties break lexicographically."""
        left = list(tokens[:position])
        right = list(reversed(tokens[position + 1 :]))
        best = None
        for cand in sorted(self.vocab - {BOS, EOS}):
            score = self.prob(self.fwd, self.fwd_tot, cand, left) * self.prob(
                self.bwd, self.bwd_tot, cand, right
            )
            if best is None or score > best[1]:
                best = (cand, score)
        return best[0]

    def greedy_fill(self, template):
        tokens = list(template.tokens)
        for position in template.mask_positions:
            tokens[position] = self.slot_argmax(tokens, position)
        return " ".join(tokens)
