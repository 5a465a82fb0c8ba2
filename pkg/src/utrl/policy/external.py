"""Client-side adapter: a PolicyHandle backed by the wire protocol."""

from __future__ import annotations

import logging

from .base import (
    ORIGIN_GENERATED,
    DecodingParams,
    PolicyHandle,
    ScoreResult,
    Trajectory,
    UpdateItem,
)
from .protocol import Connection, ProtocolError, TransportError, open_connection

log = logging.getLogger(__name__)


class ExternalPolicy(PolicyHandle):
    """Talks to a protocol server; requests are serialized per connection."""

    def __init__(self, address: str, retries: int = 2):
        self.address = address
        self.retries = retries
        self._next_id = 0
        self._conn: Connection | None = None
        self._connect()
        hello = self._request({"op": "hello"})
        version = hello.get("protocol_version")
        if version != 1:
            raise ProtocolError(f"unsupported protocol version {version!r}")
        self.backend = hello.get("backend", "unknown")

    def _connect(self) -> None:
        if self._conn is not None:
            self._conn.close()
        self._conn = open_connection(self.address)

    def _request(self, payload: dict) -> dict:
        attempts = self.retries + 1
        last_error: Exception | None = None
        for attempt in range(attempts):
            self._next_id += 1
            message = dict(payload, id=self._next_id)
            try:
                assert self._conn is not None
                self._conn.send(message)
                response = self._conn.receive()
            except TransportError as exc:
                last_error = exc
                log.warning("transport error (attempt %d/%d): %s", attempt + 1, attempts, exc)
                if attempt + 1 < attempts:
                    self._connect()
                continue
            if response.get("id") != message["id"]:
                raise ProtocolError(
                    f"response id {response.get('id')!r} does not match request {message['id']}"
                )
            if not response.get("ok", False):
                err = response.get("error", {})
                raise ProtocolError(f"{err.get('type', 'error')}: {err.get('message', '')}")
            return response
        raise TransportError(f"retry budget exhausted: {last_error}")

    # -- PolicyHandle ------------------------------------------------------

    def sample_batch(self, prompt: str, n: int, params: DecodingParams) -> list[Trajectory]:
        response = self._request(
            {
                "op": "sample",
                "prompt": prompt,
                "n": n,
                "top_p": params.top_p,
                "temperature": params.temperature,
                "max_len": params.max_len,
                "mode": params.mode,
            }
        )
        return [
            Trajectory(
                prompt=prompt,
                text=s["text"],
                tokens=list(s["tokens"]),
                logp_policy=[float(x) for x in s["logp_policy"]],
                logp_reference=[float(x) for x in s["logp_reference"]],
                origin=ORIGIN_GENERATED,
            )
            for s in response["solutions"]
        ]

    def greedy(self, prompt: str, params: DecodingParams) -> Trajectory:
        greedy_params = DecodingParams(
            top_p=params.top_p,
            temperature=params.temperature,
            max_len=params.max_len,
            mode="greedy",
        )
        return self.sample_batch(prompt, 1, greedy_params)[0]

    def score(self, prompt: str, completion: str) -> ScoreResult:
        response = self._request({"op": "score", "prompt": prompt, "completion": completion})
        return ScoreResult(
            logp_policy=[float(x) for x in response["logp_policy"]],
            logp_reference=[float(x) for x in response["logp_reference"]],
            tokens=list(response.get("tokens", [])),
            embedding=response.get("embedding"),
        )

    def apply_update(self, batch: list[UpdateItem], learning_rate: float) -> float:
        items = [
            {
                "prompt": item.trajectory.prompt,
                "completion": item.trajectory.text,
                "advantage": item.advantage,
                "weight": item.weight,
            }
            for item in batch
        ]
        response = self._request(
            {"op": "update", "items": items, "learning_rate": learning_rate}
        )
        return float(response["objective"])

    def freeze_reference(self) -> None:
        self._request({"op": "freeze_reference"})

    def save(self, directory) -> None:
        self._request({"op": "save", "path": str(directory)})

    def shutdown(self) -> None:
        try:
            self._request({"op": "shutdown"})
        except (TransportError, ProtocolError):
            pass

    def close(self) -> None:
        if self._conn is not None:
            self.shutdown()
            self._conn.close()
            self._conn = None
