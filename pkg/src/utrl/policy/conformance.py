"""Conformance fixtures for the wire protocol.

Two layers: golden-transcript replay (responses must match a recorded
transcript byte-for-byte apart from floating-point fields, compared at
1e-6) and live invariant checks any conforming server must satisfy
(echoed ids, consistent track lengths, sample/score agreement, reference
invariance under updates).  External adapters run the same suite the
built-in toy policy passes.
"""

from __future__ import annotations

import json
from pathlib import Path

from .protocol import Connection, open_connection

FLOAT_TOLERANCE = 1e-6

CANNED_SEQUENCE = [
    {"op": "hello"},
    {"op": "score", "prompt": "add\ndef add(a, b):\n", "completion": "    return a + b\n"},
    {
        "op": "sample",
        "prompt": "add\ndef add(a, b):\n",
        "n": 2,
        "top_p": 0.8,
        "temperature": 0.95,
        "max_len": 24,
    },
    {
        "op": "update",
        "items": [
            {
                "prompt": "add\ndef add(a, b):\n",
                "completion": "    return a + b\n",
                "advantage": 2.0,
                "weight": 1.0,
            },
            {
                "prompt": "add\ndef add(a, b):\n",
                "completion": "    return 0\n",
                "advantage": -1.0,
                "weight": 0.2,
            },
        ],
        "learning_rate": 0.05,
    },
    {"op": "score", "prompt": "add\ndef add(a, b):\n", "completion": "    return a + b\n"},
    {"op": "freeze_reference"},
    {"op": "score", "prompt": "add\ndef add(a, b):\n", "completion": "    return a + b\n"},
    {
        "op": "sample",
        "prompt": "add\ndef add(a, b):\n",
        "n": 1,
        "top_p": 1.0,
        "temperature": 1.0,
        "max_len": 24,
        "mode": "greedy",
    },
]


class ConformanceFailure(AssertionError):
    pass


def values_match(expected, actual, path="$") -> None:
    """Exact match except floats, which compare at FLOAT_TOLERANCE."""
    if isinstance(expected, bool) or isinstance(actual, bool):
        if expected is not actual:
            raise ConformanceFailure(f"{path}: {expected!r} != {actual!r}")
        return
    if isinstance(expected, (int, float)) and isinstance(actual, (int, float)):
        if isinstance(expected, int) and isinstance(actual, int):
            if expected != actual:
                raise ConformanceFailure(f"{path}: {expected} != {actual}")
            return
        if abs(float(expected) - float(actual)) > FLOAT_TOLERANCE * max(
            1.0, abs(float(expected))
        ):
            raise ConformanceFailure(f"{path}: {expected} != {actual}")
        return
    if type(expected) is not type(actual):
        raise ConformanceFailure(f"{path}: type {type(expected)} != {type(actual)}")
    if isinstance(expected, dict):
        if expected.keys() != actual.keys():
            raise ConformanceFailure(
                f"{path}: keys {sorted(expected)} != {sorted(actual)}"
            )
        for key in expected:
            values_match(expected[key], actual[key], f"{path}.{key}")
    elif isinstance(expected, list):
        if len(expected) != len(actual):
            raise ConformanceFailure(f"{path}: length {len(expected)} != {len(actual)}")
        for i, (e, a) in enumerate(zip(expected, actual)):
            values_match(e, a, f"{path}[{i}]")
    elif expected != actual:
        raise ConformanceFailure(f"{path}: {expected!r} != {actual!r}")


def record_transcript(address: str, path: str | Path, sequence=None) -> None:
    """Run the canned op sequence against a server and freeze the exchange."""
    connection = open_connection(address)
    try:
        lines = []
        for i, op in enumerate(sequence or CANNED_SEQUENCE, start=1):
            request = dict(op, id=i)
            connection.send(request)
            response = connection.receive()
            lines.append(json.dumps({"request": request}, ensure_ascii=False))
            lines.append(json.dumps({"response": response}, ensure_ascii=False))
        connection.send({"op": "shutdown", "id": 0})
        connection.receive()
    finally:
        connection.close()
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def replay_transcript(address: str, path: str | Path) -> int:
    """Re-send recorded requests; responses must match at FLOAT_TOLERANCE.

    Returns the number of request/response pairs checked.
    """
    records = [
        json.loads(line)
        for line in Path(path).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    pairs = []
    pending = None
    for record in records:
        if "request" in record:
            pending = record["request"]
        else:
            pairs.append((pending, record["response"]))
    connection = open_connection(address)
    try:
        for request, expected in pairs:
            connection.send(request)
            actual = connection.receive()
            values_match(expected, actual, path=f"$.op={request.get('op')}")
        connection.send({"op": "shutdown", "id": 0})
        connection.receive()
    finally:
        connection.close()
    return len(pairs)


def check_invariants(connection: Connection) -> None:
    """Live checks any conforming policy server must pass."""
    seq = [0]

    def call(op: dict) -> dict:
        seq[0] += 1
        request = dict(op, id=seq[0])
        connection.send(request)
        response = connection.receive()
        if response.get("id") != request["id"]:
            raise ConformanceFailure(f"id not echoed: {response.get('id')}")
        if not response.get("ok"):
            raise ConformanceFailure(f"op {op['op']} failed: {response.get('error')}")
        return response

    hello = call({"op": "hello"})
    if hello.get("protocol_version") != 1:
        raise ConformanceFailure("protocol_version must be 1")

    prompt = "p\ndef p(x):\n"
    sample = call(
        {"op": "sample", "prompt": prompt, "n": 3, "top_p": 0.9, "temperature": 1.0, "max_len": 12}
    )
    solutions = sample["solutions"]
    if len(solutions) != 3:
        raise ConformanceFailure(f"expected 3 solutions, got {len(solutions)}")
    for s in solutions:
        if not (len(s["tokens"]) == len(s["logp_policy"]) == len(s["logp_reference"])):
            raise ConformanceFailure("track lengths differ")
        if len(s["tokens"]) > 12:
            raise ConformanceFailure("max_len exceeded")

    scored = call({"op": "score", "prompt": prompt, "completion": solutions[0]["text"]})
    sampled_lp = solutions[0]["logp_policy"]
    scored_lp = scored["logp_policy"]
    for a, b in zip(sampled_lp, scored_lp):
        if abs(a - b) > 1e-5:
            raise ConformanceFailure(f"sample/score log-probs disagree: {a} vs {b}")

    call({"op": "freeze_reference"})
    reference_before = call(
        {"op": "score", "prompt": prompt, "completion": solutions[0]["text"]}
    )["logp_reference"]
    for _ in range(3):
        call(
            {
                "op": "update",
                "items": [
                    {
                        "prompt": prompt,
                        "completion": solutions[0]["text"],
                        "advantage": 1.0,
                        "weight": 1.0,
                    }
                ],
                "learning_rate": 0.01,
            }
        )
    reference_after = call(
        {"op": "score", "prompt": prompt, "completion": solutions[0]["text"]}
    )["logp_reference"]
    values_match(reference_before, reference_after, path="$.logp_reference")

    bad = dict({"op": "sample", "prompt": prompt, "n": "not-a-number"}, id=999)
    connection.send(bad)
    response = connection.receive()
    if response.get("ok"):
        raise ConformanceFailure("malformed request must produce an error response")
    call({"op": "hello"})  # connection stays alive after an error
