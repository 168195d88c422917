"""Typed wire messages and the in-process message bus.

Every exchange between the active party p and the passive party C travels
as a ``PartyMessage`` through a ``MessageBus`` that records a replayable
trace.  The bus enforces the privacy schema structurally: everything p
sends is ciphertext, and the only plaintext payloads C may send are the
masked logit and the masked gradient (both already offset by p's mask).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from fedada.phe import Ciphertext


class ProtocolError(Exception):
    pass


class MessageKind(Enum):
    ENC_MU = "EncMu"
    MASKED_LOGIT = "MaskedLogit"
    LOGIT_PLUS_MASK = "LogitPlusMask"
    MASKED_GRAD_C = "MaskedGradC"
    MASKED_GRAD_TILDE = "MaskedGradTilde"
    ENC_ACCUM_NOISE = "EncAccumNoise"
    ENC_DELTA_C = "EncDeltaC"
    CONTROL = "Control"


CIPHERTEXT_KINDS = frozenset(
    {
        MessageKind.ENC_MU,
        MessageKind.MASKED_LOGIT,
        MessageKind.MASKED_GRAD_C,
        MessageKind.ENC_ACCUM_NOISE,
        MessageKind.ENC_DELTA_C,
    }
)
# The only plaintext C may emit: both values are additively masked by p's
# fresh round noise before C ever sees them.
PLAINTEXT_KINDS = frozenset({MessageKind.LOGIT_PLUS_MASK, MessageKind.MASKED_GRAD_TILDE})

PASSIVE_PARTY = "C"


@dataclass(frozen=True)
class PartyMessage:
    sender: str
    receiver: str
    round_id: int
    iteration: int
    kind: MessageKind
    payload: object


def _iter_leaves(payload):
    if isinstance(payload, (list, tuple)):
        for item in payload:
            yield from _iter_leaves(item)
    elif isinstance(payload, np.ndarray) and payload.dtype == object:
        for item in payload.ravel():
            yield from _iter_leaves(item)
    else:
        yield payload


def _all_ciphertext(payload) -> bool:
    leaves = list(_iter_leaves(payload))
    return bool(leaves) and all(isinstance(x, Ciphertext) for x in leaves)


def validate_message(msg: PartyMessage) -> None:
    """Schema check: payload type per kind plus the plaintext-direction rule."""
    if msg.kind in CIPHERTEXT_KINDS:
        if not _all_ciphertext(msg.payload):
            raise ProtocolError(f"{msg.kind.value} payload must be ciphertext only")
    elif msg.kind in PLAINTEXT_KINDS:
        arr = np.asarray(msg.payload, dtype=np.float64)
        if arr.ndim != 1:
            raise ProtocolError(f"{msg.kind.value} payload must be a flat real array")
        if msg.sender != PASSIVE_PARTY:
            raise ProtocolError(
                f"plaintext kind {msg.kind.value} may only originate at the passive party"
            )
    elif msg.kind is MessageKind.CONTROL:
        if not isinstance(msg.payload, (dict, str)):
            raise ProtocolError("Control payload must be a dict or string")
    else:
        raise ProtocolError(f"unknown message kind {msg.kind!r}")
    if msg.sender != PASSIVE_PARTY and msg.kind in PLAINTEXT_KINDS:
        raise ProtocolError("active parties must never send plaintext payloads")
    if (
        msg.sender != PASSIVE_PARTY
        and msg.kind is not MessageKind.CONTROL
        and msg.kind not in CIPHERTEXT_KINDS
    ):
        raise ProtocolError("active parties may send only ciphertext payloads")


class MessageBus:
    """Sequential, recorded message transport between parties."""

    def __init__(self, record: bool = True):
        self.record = record
        self.trace: list[PartyMessage] = []

    def send(self, msg: PartyMessage) -> PartyMessage:
        validate_message(msg)
        if self.record:
            self.trace.append(msg)
        return msg


def _payload_digest(payload) -> str:
    h = hashlib.sha256()
    for leaf in _iter_leaves(payload):
        if isinstance(leaf, Ciphertext):
            h.update(leaf.raw.to_bytes((leaf.raw.bit_length() + 7) // 8 or 1, "big"))
        elif isinstance(leaf, np.ndarray):
            h.update(np.ascontiguousarray(leaf).tobytes())
        else:
            h.update(repr(leaf).encode())
    return h.hexdigest()


def dump_transcript(trace: list[PartyMessage], path: str) -> None:
    """Write message envelopes (payload digests only, never plaintexts)."""
    with open(path, "w", encoding="utf-8") as fh:
        for msg in trace:
            fh.write(
                json.dumps(
                    {
                        "sender": msg.sender,
                        "receiver": msg.receiver,
                        "round_id": msg.round_id,
                        "iteration": msg.iteration,
                        "kind": msg.kind.value,
                        "payload_digest": _payload_digest(msg.payload),
                    }
                )
                + "\n"
            )
