"""LLM clients speaking newline-delimited JSON.

Request:  {"id": int, "system": str, "user": str, "temperature": float, "top_p": float}
Response: {"id": int, "text": str}  (optional "prob": float, used verbatim)
"""

from __future__ import annotations

import csv
import json
import queue
import socket
import subprocess
import threading
from dataclasses import dataclass
from typing import Optional

from ..errors import SchemaError, TransportError


@dataclass(frozen=True)
class LlmReply:
    id: int
    text: str
    prob: Optional[float] = None


def encode_request(req_id: int, system: str, user: str, temperature: float, top_p: float) -> bytes:
    msg = {"id": req_id, "system": system, "user": user, "temperature": temperature, "top_p": top_p}
    return (json.dumps(msg, ensure_ascii=False) + "\n").encode("utf-8")


def decode_reply(line: bytes) -> LlmReply:
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TransportError(f"malformed response line: {exc.msg}") from None
    if not isinstance(msg, dict) or not isinstance(msg.get("id"), int) or not isinstance(msg.get("text"), str):
        raise TransportError(f"response missing integer 'id' or string 'text': {line[:200]!r}")
    prob = msg.get("prob")
    if prob is not None:
        prob = float(prob)
        if not 0.0 <= prob <= 1.0:
            raise TransportError(f"response prob {prob} outside [0, 1]")
    return LlmReply(msg["id"], msg["text"], prob)


class NdjsonClient:
    """Sequential request/response over any pair of binary streams.

    A reader thread feeds response lines into a queue so each exchange can
    time out without blocking forever on a silent peer.
    """

    def __init__(self, rfile, wfile, timeout: Optional[float] = 30.0, closer=None):
        self._rfile = rfile
        self._wfile = wfile
        self.timeout = timeout
        self._closer = closer
        self._next_id = 1
        self._lines: "queue.Queue[Optional[bytes]]" = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self):
        try:
            for line in iter(self._rfile.readline, b""):
                if line.strip():
                    self._lines.put(line)
        except (OSError, ValueError):
            pass
        finally:
            self._lines.put(None)

    @classmethod
    def spawn(cls, command, timeout: Optional[float] = 30.0) -> "NdjsonClient":
        proc = subprocess.Popen(command, stdin=subprocess.PIPE, stdout=subprocess.PIPE)

        def close():
            proc.stdin.close()
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()

        return cls(proc.stdout, proc.stdin, timeout, close)

    @classmethod
    def connect(cls, host: str, port: int, timeout: Optional[float] = 30.0) -> "NdjsonClient":
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.settimeout(None)
        rfile, wfile = sock.makefile("rb"), sock.makefile("wb")

        def close():
            # shutdown wakes the reader thread, which holds rfile's lock
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            wfile.close()
            sock.close()

        return cls(rfile, wfile, timeout, close)

    def complete(self, system: str, user: str, temperature: float = 0.1, top_p: float = 0.9) -> LlmReply:
        req_id = self._next_id
        self._next_id += 1
        try:
            self._wfile.write(encode_request(req_id, system, user, temperature, top_p))
            self._wfile.flush()
        except (OSError, ValueError) as exc:
            raise TransportError(f"request {req_id}: write failed ({exc})") from None
        while True:
            try:
                line = self._lines.get(timeout=self.timeout)
            except queue.Empty:
                raise TransportError(f"request {req_id}: no response within {self.timeout} s") from None
            if line is None:
                self._lines.put(None)
                raise TransportError(f"request {req_id}: peer closed the stream")
            reply = decode_reply(line)
            if reply.id == req_id:
                return reply
            # stale reply from a timed-out request

    def close(self):
        if self._closer is not None:
            self._closer()
            self._closer = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ReplayClient:
    """Answers from a CSV ``id,text[,prob]`` file in request order."""

    def __init__(self, path):
        self._replies = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"id", "text"} <= set(reader.fieldnames):
                raise SchemaError(f"{path}: expected header id,text")
            for row in reader:
                prob = row.get("prob")
                self._replies[int(row["id"])] = LlmReply(int(row["id"]), row["text"], float(prob) if prob else None)
        self._next_id = 1
        self.requests = []

    def complete(self, system: str, user: str, temperature: float = 0.1, top_p: float = 0.9) -> LlmReply:
        req_id = self._next_id
        self._next_id += 1
        self.requests.append((req_id, system, user))
        if req_id not in self._replies:
            raise TransportError(f"replay file has no reply for request {req_id}")
        return self._replies[req_id]

    def close(self):
        pass


class StaticClient:
    """Always returns the same text; handy for dry runs."""

    def __init__(self, text: str, prob: Optional[float] = None):
        self.text, self.prob = text, prob
        self.requests = []

    def complete(self, system: str, user: str, temperature: float = 0.1, top_p: float = 0.9) -> LlmReply:
        self.requests.append((len(self.requests) + 1, system, user))
        return LlmReply(len(self.requests), self.text, self.prob)

    def close(self):
        pass
