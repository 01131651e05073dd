"""Line-delimited JSON translation server for demos.

One request per line: ``{"src": "...", "n_best": 1}``; one response line per
request: ``{"translations": [{"text": ..., "score": ...}]}`` or
``{"error": ...}``. Malformed requests get an error line and the connection
stays open. The model is loaded once and shared read-only, so requests may
be handled concurrently.
"""

from __future__ import annotations

import json
import logging
import socketserver
from dataclasses import replace

from .decoding import DecodeOptions, translate_batch
from .errors import SeqforgeError

log = logging.getLogger("seqforge.serve")


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            reply = self.server.answer(line)
            self.wfile.write((reply + "\n").encode("utf-8"))
            self.wfile.flush()


class TranslationServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, params, config, vocabs, opts: DecodeOptions):
        super().__init__(address, _Handler)
        self.params = params
        self.config = config
        self.vocabs = vocabs
        self.opts = opts

    @property
    def port(self) -> int:
        return self.server_address[1]

    def answer(self, line: str) -> str:
        try:
            request = json.loads(line)
            if not isinstance(request, dict) or not isinstance(request.get("src"), str):
                raise SeqforgeError('request must be an object with a string "src"')
            opts = self.opts
            if "n_best" in request:
                opts = replace(opts, n_best=int(request["n_best"])).validate()
            results = translate_batch(
                self.params, self.config, [request["src"]], self.vocabs, opts
            )
            payload = {
                "translations": [
                    {"text": t.text, "score": t.score} for t in results[0]
                ]
            }
        except (SeqforgeError, json.JSONDecodeError, ValueError, TypeError) as exc:
            payload = {"error": str(exc)}
        return json.dumps(payload, sort_keys=True, ensure_ascii=False)
