"""Shared test helpers: fixture paths, mock gateways, random corpora, a stub chat server."""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from dictation_rag.gateway import Gateway, LlmProfile, ScriptedMock, load_templates

FIXTURES = Path(__file__).parent / "fixtures"


def mock_gateway(script=None, model="mock-mini"):
    mock = ScriptedMock.from_file(script) if script else ScriptedMock()
    return Gateway(LlmProfile(backend="mock", model=model), templates=load_templates(), mock=mock)


def random_corpus(rng, max_docs=20, max_tokens=8, vocab_size=10):
    vocab = [f"t{i}" for i in range(rng.randint(1, vocab_size))]
    n_docs = rng.randint(1, max_docs)
    return {f"d{i:02d}": [rng.choice(vocab) for _ in range(rng.randint(0, max_tokens))] for i in range(n_docs)}, vocab


class StubChatServer:
    """Local OpenAI-style server replaying a list of HTTP statuses, then 200s."""

    def __init__(self, statuses, content="ok", always=None):
        self.statuses = list(statuses)
        self.always = always
        self.content = content
        self.requests = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                stub.requests.append({"path": self.path, "body": body, "auth": self.headers.get("Authorization")})
                status = stub.always or (stub.statuses.pop(0) if stub.statuses else 200)
                if status == 200:
                    payload = {"choices": [{"message": {"role": "assistant", "content": stub.content}}]}
                else:
                    payload = {"error": {"message": f"status {status}"}}
                data = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def base_url(self):
        return f"http://127.0.0.1:{self.server.server_address[1]}/v1"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()
