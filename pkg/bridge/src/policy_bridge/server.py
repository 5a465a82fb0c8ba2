"""Line-delimited JSON server for the policy wire protocol.

One JSON object per line; requests carry a client-assigned ``id`` echoed in
the response.  Malformed requests produce a structured error response and
the connection stays alive.  Updates are serialized globally by the
adapter's lock; one request is in flight per connection.
"""

from __future__ import annotations

import json
import socketserver
import sys

from .adapter import Adapter, AdapterError

PROTOCOL_VERSION = 1
CAPABILITIES = ["sample", "score", "update", "freeze_reference", "save"]


def error_response(request_id, kind: str, message: str) -> dict:
    return {"id": request_id, "ok": False, "error": {"type": kind, "message": message}}


def handle_request(adapter: Adapter, request: dict, backend_name: str) -> tuple[dict, bool]:
    request_id = request.get("id")
    op = request.get("op")
    try:
        if op == "hello":
            payload = {
                "protocol_version": PROTOCOL_VERSION,
                "backend": backend_name,
                "capabilities": list(CAPABILITIES),
            }
        elif op == "sample":
            payload = {
                "solutions": adapter.sample(
                    prompt=request["prompt"],
                    n=int(request["n"]),
                    top_p=float(request.get("top_p", 0.8)),
                    temperature=float(request.get("temperature", 0.95)),
                    max_len=int(request.get("max_len", 512)),
                    mode=request.get("mode", "nucleus"),
                )
            }
        elif op == "score":
            payload = adapter.score(request["prompt"], request["completion"])
        elif op == "update":
            payload = {
                "objective": adapter.update(
                    request["items"], float(request["learning_rate"])
                )
            }
        elif op == "freeze_reference":
            adapter.freeze_reference()
            payload = {}
        elif op == "save":
            adapter.save(request["path"])
            payload = {}
        elif op == "shutdown":
            return {"id": request_id, "ok": True}, False
        else:
            return error_response(request_id, "bad_request", f"unknown op {op!r}"), True
    except AdapterError as exc:
        return error_response(request_id, "bad_request", str(exc)), True
    except (KeyError, TypeError, ValueError) as exc:
        return error_response(request_id, type(exc).__name__, str(exc)), True
    except MemoryError:
        response = error_response(request_id, "resource_exhausted", "out of memory")
        response["error"]["retryable"] = True
        return response, True
    response = {"id": request_id, "ok": True}
    response.update(payload)
    return response, True


def serve_streams(adapter: Adapter, rfile, wfile, backend_name: str) -> None:
    while True:
        line = rfile.readline()
        if not line:
            return
        if not line.strip():
            continue
        try:
            request = json.loads(line)
            if not isinstance(request, dict):
                raise ValueError("message must be a JSON object")
        except ValueError as exc:
            wfile.write(
                (json.dumps(error_response(None, "bad_request", str(exc))) + "\n").encode()
            )
            wfile.flush()
            continue
        response, keep_serving = handle_request(adapter, request, backend_name)
        wfile.write((json.dumps(response, ensure_ascii=False) + "\n").encode("utf-8"))
        wfile.flush()
        if not keep_serving:
            return


def serve_stdio(adapter: Adapter, backend_name: str) -> None:
    serve_streams(adapter, sys.stdin.buffer, sys.stdout.buffer, backend_name)


def serve_tcp(adapter: Adapter, port: int, backend_name: str, connections: int = 1) -> None:
    """Serve ``connections`` sequential connections (updates stay serialized)."""
    remaining = [connections]

    class Handler(socketserver.StreamRequestHandler):
        def handle(self) -> None:
            serve_streams(adapter, self.rfile, self.wfile, backend_name)
            remaining[0] -= 1

    with socketserver.TCPServer(("127.0.0.1", port), Handler) as server:
        server.allow_reuse_address = True
        while remaining[0] > 0:
            server.handle_request()
