"""Entry point: ``policy-bridge --stub`` or ``policy-bridge --model PATH``."""

from __future__ import annotations

import argparse

from .adapter import Adapter
from .server import serve_stdio, serve_tcp


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="policy-bridge",
        description="Serve the policy wire protocol around a neural language model",
    )
    backend = parser.add_mutually_exclusive_group(required=True)
    backend.add_argument(
        "--stub", action="store_true", help="deterministic tiny stand-in model (CI)"
    )
    backend.add_argument("--model", help="Hugging Face model identifier or local path")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-batch", type=int, default=256)
    parser.add_argument("--port", type=int, help="serve TCP on this port instead of stdio")
    parser.add_argument(
        "--connections", type=int, default=1, help="TCP connections to serve before exiting"
    )
    args = parser.parse_args(argv)

    if args.stub:
        from .model import StubBackend

        backend_impl = StubBackend(seed=args.seed, device=args.device)
    else:
        from .model import HFBackend

        backend_impl = HFBackend(args.model, device=args.device)

    adapter = Adapter(backend_impl, seed=args.seed, max_batch=args.max_batch)
    if args.port is not None:
        serve_tcp(adapter, args.port, backend_impl.name, connections=args.connections)
    else:
        serve_stdio(adapter, backend_impl.name)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
