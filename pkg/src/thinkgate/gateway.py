"""Live routing gateway: score a question once, answer in the chosen mode.

One endpoint, ``POST /v1/route``, accepting ``{"question": str}`` (an
optional ``"id"`` pins the question identity for seeded or feature-keyed
scorers). The decision path is byte-for-byte the batch pipeline's: render
the zero-step monitor context, score, decide, then generate under the
selected mode's template.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .answers import QuestionRecord
from .backend import BackendError, CompletionBackend, SamplingParams
from .prompting import DEFAULT_FAKE, DEFAULT_MARKERS, ChatMarkers, FakeThought, PromptKind, render_prompt
from .scorers import (
    HiddenStateStore,
    MissingFeatureError,
    MlpWeights,
    ScorerKind,
    compute_score,
    decide,
)

logger = logging.getLogger(__name__)

MODE_THINKING = "thinking"
MODE_NOTHINKING = "nothinking"


@dataclass
class GatewayService:
    """The routing logic behind the endpoint; usable in-process too."""

    backend: CompletionBackend
    scorer: ScorerKind
    lam: float
    alpha: float = 1.0
    markers: ChatMarkers = DEFAULT_MARKERS
    fake: FakeThought = DEFAULT_FAKE
    params: SamplingParams = SamplingParams()
    seed: int = 0
    dynasor_samples: int = 3
    hidden_states: HiddenStateStore | None = None
    probe_weights: MlpWeights | None = None

    def __post_init__(self) -> None:
        if self.scorer is ScorerKind.PROBECONF and (
            self.hidden_states is None or self.probe_weights is None
        ):
            raise ValueError(
                "probe scoring needs a hidden-state provider and weights;"
                " configure both or choose another scorer"
            )

    def route(self, question_text: str, question_id: str | None = None) -> dict:
        """Score, decide, generate. Returns the response document."""
        if not question_text or not isinstance(question_text, str):
            raise ValueError("'question' must be a non-empty string")
        qid = question_id or hashlib.sha256(question_text.encode()).hexdigest()[:16]
        question = QuestionRecord(id=qid, text=question_text, gold="-", answer_type="string")

        score = compute_score(
            self.scorer,
            question,
            backend=self.backend,
            markers=self.markers,
            fake=self.fake,
            params=self.params,
            seed=self.seed,
            dynasor_samples=self.dynasor_samples,
            hidden_states=self.hidden_states,
            probe_weights=self.probe_weights,
        )
        exit_flag = decide(score, self.lam, self.alpha).exit
        kind = PromptKind.NOTHINKING if exit_flag else PromptKind.THINKING
        prompt = render_prompt(kind, question_text, self.markers, self.fake)
        completion = self.backend.complete(prompt, self.params)
        return {
            "mode": MODE_NOTHINKING if exit_flag else MODE_THINKING,
            "score": score.value,
            "completion": completion.text,
            "tokens": completion.n_tokens,
        }


def _make_handler(service: GatewayService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # route through logging, not stderr
            logger.debug("gateway: " + fmt, *args)

        def _send(self, status: int, doc: dict) -> None:
            body = json.dumps(doc).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_POST(self) -> None:  # noqa: N802 (http.server API)
            if self.path != "/v1/route":
                self._send(404, {"error": f"unknown path {self.path}"})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                payload = json.loads(self.rfile.read(length).decode("utf-8"))
                if not isinstance(payload, dict) or "question" not in payload:
                    raise ValueError("body must be a JSON object with a 'question' field")
                question = payload["question"]
                question_id = payload.get("id")
            except (ValueError, json.JSONDecodeError) as exc:
                self._send(400, {"error": f"bad request: {exc}"})
                return
            try:
                self._send(200, service.route(question, question_id))
            except (ValueError, MissingFeatureError) as exc:
                self._send(400, {"error": str(exc)})
            except BackendError as exc:
                self._send(502, {"error": str(exc), "trace": {"scorer": service.scorer.value}})

    return Handler


def serve_gateway(
    service: GatewayService, host: str = "127.0.0.1", port: int = 8080
) -> ThreadingHTTPServer:
    """Create the HTTP server (call ``serve_forever`` or run it in a thread)."""
    return ThreadingHTTPServer((host, port), _make_handler(service))


def serve_in_thread(service: GatewayService, host: str = "127.0.0.1") -> tuple[ThreadingHTTPServer, int]:
    """Start the gateway on an ephemeral port; returns (server, port)."""
    server = ThreadingHTTPServer((host, 0), _make_handler(service))
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, server.server_address[1]
