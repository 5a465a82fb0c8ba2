"""Line-delimited JSON wire protocol for external policies.

Each message is one JSON object per line.  Requests carry a client-assigned
``id`` (echoed in the response) and an ``op`` from {hello, sample, score,
update, freeze_reference, save, shutdown}.  Responses carry ``ok`` plus
op-specific fields, or ``ok: false`` with an ``error`` object.  Numeric
fields are decimal; log-probabilities are natural log.

Op-specific fields
------------------
hello:            -> protocol_version, backend, capabilities
sample:           prompt, n, top_p, temperature, max_len
                  -> solutions: [{text, tokens, logp_policy, logp_reference}]
score:            prompt, completion
                  -> logp_policy, logp_reference, tokens, embedding (optional)
update:           items: [{prompt, completion, advantage, weight}], learning_rate
                  -> objective
freeze_reference: -> {}
save:             path -> {}
shutdown:         -> {} (server exits afterwards)
"""

from __future__ import annotations

import json
import socket
import subprocess
from dataclasses import dataclass

PROTOCOL_VERSION = 1

OPS = ("hello", "sample", "score", "update", "freeze_reference", "save", "shutdown")


class ProtocolError(RuntimeError):
    """Malformed message or a server-reported failure."""


class TransportError(RuntimeError):
    """The connection to the external policy broke."""


def encode_message(payload: dict) -> bytes:
    return (json.dumps(payload, ensure_ascii=False) + "\n").encode("utf-8")


def decode_message(line: bytes | str) -> dict:
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    try:
        payload = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"invalid JSON message: {exc}") from exc
    if not isinstance(payload, dict):
        raise ProtocolError("message must be a JSON object")
    return payload


def error_response(request_id, kind: str, message: str) -> dict:
    return {"id": request_id, "ok": False, "error": {"type": kind, "message": message}}


@dataclass
class Connection:
    """A read/write pair of line streams plus cleanup hooks."""

    rfile: object
    wfile: object
    proc: subprocess.Popen | None = None
    sock: socket.socket | None = None

    def send(self, payload: dict) -> None:
        try:
            self.wfile.write(encode_message(payload))
            self.wfile.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise TransportError(f"write failed: {exc}") from exc

    def receive(self) -> dict:
        try:
            line = self.rfile.readline()
        except OSError as exc:
            raise TransportError(f"read failed: {exc}") from exc
        if not line:
            raise TransportError("connection closed by peer")
        return decode_message(line)

    def close(self) -> None:
        for stream in (self.wfile, self.rfile):
            try:
                stream.close()
            except OSError:
                pass
        if self.sock is not None:
            try:
                self.sock.close()
            except OSError:
                pass
        if self.proc is not None:
            try:
                self.proc.terminate()
                self.proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self.proc.kill()


def open_connection(address: str) -> Connection:
    """Connect to an external policy.

    Address forms: ``tcp:HOST:PORT`` for a listening server, or ``cmd:<shell
    command>`` to spawn the server as a child and speak over its stdio.
    """
    if address.startswith("tcp:"):
        _, host, port = address.split(":", 2)
        sock = socket.create_connection((host, int(port)), timeout=60)
        return Connection(
            rfile=sock.makefile("rb"), wfile=sock.makefile("wb"), sock=sock
        )
    if address.startswith("cmd:"):
        import shlex

        argv = shlex.split(address[len("cmd:") :])
        proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0
        )
        return Connection(rfile=proc.stdout, wfile=proc.stdin, proc=proc)
    raise ValueError(f"unsupported policy address {address!r} (use tcp:... or cmd:...)")
