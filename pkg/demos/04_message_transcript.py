"""What actually crosses the wire during federated training.

Runs a few encrypted training rounds and prints the recorded message
trace: every payload the active party sends is ciphertext, and the only
plaintext the key-holding passive party returns is offset by the active
party's fresh additive mask.

Run from the repository root:

    python3 demos/04_message_transcript.py
"""

import numpy as np

from fedada.config import load_config, make_data, make_run
from fedada.messages import PLAINTEXT_KINDS
from fedada.phe import Ciphertext
from fedada.protocol import make_shards, pretrain


def describe(payload):
    def leaves(p):
        if isinstance(p, (list, tuple)):
            for x in p:
                yield from leaves(x)
        else:
            yield p

    items = list(leaves(payload))
    if items and all(isinstance(x, Ciphertext) for x in items):
        return f"{len(items)} ciphertexts"
    arr = np.asarray(payload, dtype=np.float64)
    return (f"{arr.size} plaintext values, |max| = {np.max(np.abs(arr)):.1f} "
            f"(mask-scale, true values are O(1))")


def main():
    cfg = load_config("configs/smoke.yaml")
    run = make_run(cfg)
    _, split = make_data(cfg)
    shards = make_shards(split)
    result = pretrain(
        run, shards["source_B"], shards["source_C"], shards["target_C_pool"]
    )

    per_round = 7  # messages of one full training round
    print(f"{len(result.bus.trace)} messages total; the first training round:\n")
    print(f"{'from':>4} {'to':>3}  {'kind':<16} payload")
    for msg in result.bus.trace[:per_round]:
        print(f"{msg.sender:>4} {msg.receiver:>3}  {msg.kind.value:<16} "
              f"{describe(msg.payload)}")

    plaintext = [m for m in result.bus.trace if m.kind in PLAINTEXT_KINDS]
    senders = {m.sender for m in plaintext}
    print(f"\nplaintext messages in the whole run: {len(plaintext)}, "
          f"all sent by {senders} and all mask-offset")


if __name__ == "__main__":
    main()
