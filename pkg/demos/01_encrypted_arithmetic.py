"""Additively homomorphic arithmetic on fixed-point numbers.

Walks through the building blocks the federated protocol relies on: key
generation, fixed-point encoding, ciphertext addition, plaintext
multiplication and an encrypted dot product.

Run from the repository root:

    python3 demos/01_encrypted_arithmetic.py
"""

import random

from fedada import phe


def main():
    rng = random.Random(42)
    print("generating a 512-bit keypair (use 1024+ outside demos)...")
    kp = phe.keygen(512, rng)
    print(f"  modulus n has {kp.public_key.n.bit_length()} bits\n")

    a, b = 3.25, -1.125
    ca = phe.encrypt(kp.public_key, a, rng)
    cb = phe.encrypt(kp.public_key, b, rng)
    print(f"enc({a}) + enc({b})  ->  {phe.decrypt(kp.private_key, phe.add_ct(ca, cb))}")
    print(f"enc({a}) * 4.0       ->  {phe.decrypt(kp.private_key, phe.mul_pt(ca, 4.0))}")
    print(f"enc({a}) + 10.5      ->  {phe.decrypt(kp.private_key, phe.add_pt(ca, 10.5))}\n")

    v = [0.5, -2.0, 3.0]
    w = [1.0, 0.25, -1.5]
    cts = [phe.encrypt(kp.public_key, x, rng) for x in v]
    dot = phe.decrypt(kp.private_key, phe.enc_dot(cts, w))
    print(f"encrypted dot product {v} . {w} -> {dot}")
    print(f"plain                              -> {sum(x * y for x, y in zip(v, w))}\n")

    # encryption is probabilistic: same plaintext, fresh ciphertext
    r1 = phe.encrypt(kp.public_key, 7.0, rng).raw
    r2 = phe.encrypt(kp.public_key, 7.0, rng).raw
    print(f"two encryptions of 7.0 share raw ciphertext: {r1 == r2}")

    # everything rides on an exact fixed-point grid (2^-40 quanta)
    enc = phe.EncodedNumber.encode(0.1)
    print(f"0.1 encodes to mantissa {enc.mantissa} * 2^{enc.exponent}"
          f" -> decodes to {enc.decode()!r}")


if __name__ == "__main__":
    main()
