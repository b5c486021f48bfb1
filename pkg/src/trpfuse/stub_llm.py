"""Minimal NDJSON responder for exercising the LLM wire protocol offline.

    python -m trpfuse.stub_llm --reply yes            # serve on stdio
    python -m trpfuse.stub_llm --reply no --port 0    # serve on TCP, prints port

With ``--vap-rule`` the reply follows the VAP suggestion embedded in the
prompt instead of a fixed text.
"""

from __future__ import annotations

import argparse
import json
import re
import socketserver
import sys

_SUGGESTION = re.compile(r"prediction: (yes|no)\)")


def respond(line: bytes, reply: str, vap_rule: bool = False, prob=None) -> bytes:
    req = json.loads(line)
    text = reply
    if vap_rule:
        m = _SUGGESTION.search(req.get("user", ""))
        text = m.group(1) if m else reply
    out = {"id": req["id"], "text": text}
    if prob is not None:
        out["prob"] = prob
    return (json.dumps(out) + "\n").encode()


def serve(rfile, wfile, reply: str, vap_rule: bool = False, prob=None) -> None:
    for line in iter(rfile.readline, b""):
        if line.strip():
            wfile.write(respond(line, reply, vap_rule, prob))
            wfile.flush()


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--reply", default="yes")
    ap.add_argument("--prob", type=float, default=None)
    ap.add_argument("--vap-rule", action="store_true")
    ap.add_argument("--port", type=int, default=None)
    args = ap.parse_args(argv)

    if args.port is None:
        serve(sys.stdin.buffer, sys.stdout.buffer, args.reply, args.vap_rule, args.prob)
        return 0

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            serve(self.rfile, self.wfile, args.reply, args.vap_rule, args.prob)

    with socketserver.ThreadingTCPServer(("127.0.0.1", args.port), Handler) as server:
        print(server.server_address[1], flush=True)
        server.serve_forever()
    return 0


if __name__ == "__main__":
    sys.exit(main())
