"""Wire-message schema and transcript tests."""

import json
import random

import numpy as np
import pytest

from fedada import phe
from fedada.messages import (
    CIPHERTEXT_KINDS,
    MessageBus,
    MessageKind,
    PartyMessage,
    PLAINTEXT_KINDS,
    ProtocolError,
    dump_transcript,
    validate_message,
)

_KP = phe.keygen(512, random.Random(1))


def ct(v=1.0):
    return phe.encrypt(_KP.public_key, v, random.Random(0))


def msg(sender, kind, payload, receiver="C"):
    return PartyMessage(sender, receiver, 0, 0, kind, payload)


def test_every_kind_is_classified():
    assert CIPHERTEXT_KINDS | PLAINTEXT_KINDS | {MessageKind.CONTROL} == set(MessageKind)


def test_ciphertext_kinds_accept_only_ciphertext():
    validate_message(msg("B", MessageKind.ENC_MU, [[ct(), ct()]]))
    with pytest.raises(ProtocolError):
        validate_message(msg("B", MessageKind.ENC_MU, [[1.0, 2.0]]))
    with pytest.raises(ProtocolError):
        validate_message(msg("B", MessageKind.MASKED_LOGIT, [ct(), 3.0]))
    with pytest.raises(ProtocolError):
        validate_message(msg("B", MessageKind.ENC_MU, []))  # empty is suspect


def test_plaintext_kinds_only_from_passive_party():
    validate_message(msg("C", MessageKind.LOGIT_PLUS_MASK, np.ones(3), receiver="B"))
    with pytest.raises(ProtocolError):
        validate_message(msg("B", MessageKind.LOGIT_PLUS_MASK, np.ones(3)))
    with pytest.raises(ProtocolError):
        validate_message(msg("A", MessageKind.MASKED_GRAD_TILDE, np.ones(3)))
    with pytest.raises(ProtocolError):
        validate_message(
            msg("C", MessageKind.LOGIT_PLUS_MASK, np.ones((2, 2)), receiver="B")
        )


def test_control_payloads():
    validate_message(msg("B", MessageKind.CONTROL, {"round": 1}))
    validate_message(msg("B", MessageKind.CONTROL, "sync"))
    with pytest.raises(ProtocolError):
        validate_message(msg("B", MessageKind.CONTROL, 3.5))


def test_bus_records_and_enforces():
    bus = MessageBus()
    good = msg("B", MessageKind.ENC_MU, [[ct()]])
    assert bus.send(good) is good
    with pytest.raises(ProtocolError):
        bus.send(msg("B", MessageKind.LOGIT_PLUS_MASK, np.ones(2)))
    assert bus.trace == [good]


def test_transcript_contains_digests_not_payloads(tmp_path):
    bus = MessageBus()
    secret = np.array([42.125, -7.5])
    bus.send(msg("C", MessageKind.LOGIT_PLUS_MASK, secret, receiver="B"))
    bus.send(msg("B", MessageKind.ENC_MU, [[ct(3.0)]]))
    path = tmp_path / "t.jsonl"
    dump_transcript(bus.trace, str(path))
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(lines) == 2
    assert lines[0]["kind"] == "LogitPlusMask"
    assert set(lines[0]) == {
        "sender", "receiver", "round_id", "iteration", "kind", "payload_digest",
    }
    assert "42.125" not in path.read_text()
