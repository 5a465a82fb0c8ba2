"""Server side of the policy protocol, wrapping any in-process PolicyHandle.

Used to serve the built-in toy policy for conformance fixtures and tests:

    python -m utrl.policy.serve --seed 7 [--vocab-from FILE] [--port N]

Without ``--port`` the server speaks line-delimited JSON on stdin/stdout.
"""

from __future__ import annotations

import argparse
import socketserver
import sys

from .base import DecodingParams, PolicyHandle, Trajectory, UpdateItem
from .protocol import PROTOCOL_VERSION, decode_message, encode_message, error_response
from .toy import DEFAULT_VOCABULARY, ToyPolicy, derive_vocabulary


def _handle_sample(policy: PolicyHandle, request: dict) -> dict:
    params = DecodingParams(
        top_p=request.get("top_p", 0.8),
        temperature=request.get("temperature", 0.95),
        max_len=request.get("max_len", 512),
        mode=request.get("mode", "nucleus"),
    )
    trajectories = policy.sample_batch(request["prompt"], int(request["n"]), params)
    return {
        "solutions": [
            {
                "text": t.text,
                "tokens": t.tokens,
                "logp_policy": t.logp_policy,
                "logp_reference": t.logp_reference,
            }
            for t in trajectories
        ]
    }


def _handle_score(policy: PolicyHandle, request: dict) -> dict:
    result = policy.score(request["prompt"], request["completion"])
    payload = {
        "logp_policy": result.logp_policy,
        "logp_reference": result.logp_reference,
        "tokens": result.tokens,
    }
    if result.embedding is not None:
        payload["embedding"] = result.embedding
    return payload


def _handle_update(policy: PolicyHandle, request: dict) -> dict:
    batch = []
    for item in request["items"]:
        score = policy.score(item["prompt"], item["completion"])
        trajectory = Trajectory(
            prompt=item["prompt"],
            text=item["completion"],
            tokens=score.tokens,
            logp_policy=score.logp_policy,
            logp_reference=score.logp_reference,
        )
        batch.append(
            UpdateItem(
                trajectory=trajectory,
                advantage=float(item["advantage"]),
                weight=float(item.get("weight", 1.0)),
            )
        )
    objective = policy.apply_update(batch, float(request["learning_rate"]))
    return {"objective": objective}


def handle_request(policy: PolicyHandle, request: dict, backend: str) -> tuple[dict, bool]:
    """Dispatch one request; returns (response, keep_serving)."""
    request_id = request.get("id")
    op = request.get("op")
    try:
        if op == "hello":
            payload = {
                "protocol_version": PROTOCOL_VERSION,
                "backend": backend,
                "capabilities": ["sample", "score", "update", "freeze_reference", "save"],
            }
        elif op == "sample":
            payload = _handle_sample(policy, request)
        elif op == "score":
            payload = _handle_score(policy, request)
        elif op == "update":
            payload = _handle_update(policy, request)
        elif op == "freeze_reference":
            policy.freeze_reference()
            payload = {}
        elif op == "save":
            policy.save(request["path"])
            payload = {}
        elif op == "shutdown":
            return {"id": request_id, "ok": True}, False
        else:
            return error_response(request_id, "bad_request", f"unknown op {op!r}"), True
    except (KeyError, TypeError, ValueError, RuntimeError) as exc:
        return error_response(request_id, type(exc).__name__, str(exc)), True
    response = {"id": request_id, "ok": True}
    response.update(payload)
    return response, True


def serve_streams(policy: PolicyHandle, rfile, wfile, backend: str = "toy") -> None:
    """Serve requests from a byte stream pair until shutdown or EOF."""
    while True:
        line = rfile.readline()
        if not line:
            return
        if not line.strip():
            continue
        try:
            request = decode_message(line)
        except Exception as exc:
            wfile.write(encode_message(error_response(None, "bad_request", str(exc))))
            wfile.flush()
            continue
        response, keep_serving = handle_request(policy, request, backend)
        wfile.write(encode_message(response))
        wfile.flush()
        if not keep_serving:
            return


def serve_tcp(policy: PolicyHandle, port: int, backend: str = "toy") -> None:
    """Accept one connection at a time; requests serialize per connection."""

    class Handler(socketserver.StreamRequestHandler):
        def handle(self) -> None:
            serve_streams(policy, self.rfile, self.wfile, backend)

    with socketserver.TCPServer(("127.0.0.1", port), Handler) as server:
        server.allow_reuse_address = True
        server.handle_request()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Serve the built-in toy policy over the wire protocol")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--context-len", type=int, default=16)
    parser.add_argument("--rows", type=int, default=1 << 16)
    parser.add_argument("--vocab-from", help="derive the vocabulary from this text file")
    parser.add_argument("--load", help="load a saved policy directory instead of a fresh one")
    parser.add_argument("--port", type=int, help="listen on TCP instead of stdio")
    parser.add_argument("--no-freeze", action="store_true", help="skip the initial reference freeze")
    args = parser.parse_args(argv)

    if args.load:
        policy = ToyPolicy.load(args.load)
    else:
        vocabulary = DEFAULT_VOCABULARY
        if args.vocab_from:
            with open(args.vocab_from, encoding="utf-8") as fh:
                vocabulary = derive_vocabulary([fh.read()])
        policy = ToyPolicy(
            vocabulary=vocabulary,
            context_len=args.context_len,
            rows=args.rows,
            seed=args.seed,
        )
    if not args.no_freeze and not policy.reference_frozen:
        policy.freeze_reference()

    if args.port is not None:
        serve_tcp(policy, args.port)
    else:
        serve_streams(policy, sys.stdin.buffer, sys.stdout.buffer)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
