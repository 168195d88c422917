"""Paillier additively homomorphic encryption with fixed-point encoding.

Supplies the three primitives the secure training protocol is built on:
encryption ``[[x]]``, ciphertext addition (``add_ct`` / ``add_pt``) and
ciphertext-by-plaintext multiplication (``mul_pt``), plus ``enc_dot`` for
encrypted dot products.  Real numbers are encoded as base-2 fixed point
(round-half-even, 40 fractional bits by default) with negative values
mapped onto the upper half of ``Z_n``.

Keys and ciphertexts are immutable; all randomness (prime search and
encryption nonces) comes from caller-supplied ``random.Random`` instances
so runs are reproducible.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass

import gmpy2

DEFAULT_KEY_BITS = 2048
ALLOWED_KEY_BITS = (512, 1024, 2048)  # 512 is for tests only
DEFAULT_FRAC_BITS = 40

_KEY_FORMAT_VERSION = 1


class PheError(Exception):
    """Base class for encryption-layer failures."""


class KeyMismatchError(PheError):
    """Operands or ciphertexts belong to different keypairs."""


class EncodingOverflowError(PheError):
    """Encoded mantissa left the safe plaintext range."""


@dataclass(frozen=True)
class EncodedNumber:
    """Signed base-2 fixed-point number: value = mantissa * 2**exponent."""

    mantissa: int
    exponent: int

    @classmethod
    def encode(cls, x: float, frac_bits: int = DEFAULT_FRAC_BITS) -> "EncodedNumber":
        if not math.isfinite(x):
            raise EncodingOverflowError(f"cannot encode non-finite value {x!r}")
        # round() on the scaled float gives round-half-even and is
        # deterministic for a given input.
        return cls(mantissa=round(x * (1 << frac_bits)), exponent=-frac_bits)

    def decode(self) -> float:
        return float(self.mantissa) * 2.0 ** self.exponent

    def align_to(self, exponent: int) -> "EncodedNumber":
        """Re-express at a lower (finer) exponent; exact."""
        if exponent > self.exponent:
            raise ValueError("cannot align to a coarser exponent without loss")
        shift = self.exponent - exponent
        return EncodedNumber(self.mantissa << shift, exponent)


class PublicKey:
    """Paillier public key with generator g = n + 1."""

    def __init__(self, n: int):
        self.n = int(n)
        self.nsquare = self.n * self.n
        # Mantissas beyond n//3 are ambiguous with negative encodings.
        self.max_int = self.n // 3 - 1

    def __eq__(self, other):
        return isinstance(other, PublicKey) and self.n == other.n

    def __hash__(self):
        return hash(self.n)

    def __repr__(self):
        return f"<PublicKey {self.n.bit_length()} bits>"

    def raw_encrypt(self, plaintext: int, rng: random.Random) -> int:
        """Encrypt an integer in Z_n with a fresh obfuscating nonce."""
        m = plaintext % self.n
        c = (1 + self.n * m) % self.nsquare
        r = rng.randrange(1, self.n)
        return int(c * gmpy2.powmod(r, self.n, self.nsquare) % self.nsquare)


class PrivateKey:
    """Holds the factorization of n and the derived decryption parameters."""

    def __init__(self, public_key: PublicKey, p: int, q: int):
        if p * q != public_key.n:
            raise ValueError("p*q does not match the public modulus")
        self.public_key = public_key
        self.p = int(p)
        self.q = int(q)
        self._lam = int(gmpy2.lcm(p - 1, q - 1))
        self._mu = int(gmpy2.invert(self._lam, public_key.n))

    def raw_decrypt(self, raw: int) -> int:
        n = self.public_key.n
        if not 0 <= raw < self.public_key.nsquare:
            raise PheError("ciphertext value outside Z_{n^2}")
        u = gmpy2.powmod(raw, self._lam, self.public_key.nsquare)
        ell = (u - 1) // n
        return int(ell * self._mu % n)


@dataclass(frozen=True)
class Keypair:
    public_key: PublicKey
    private_key: PrivateKey
    key_bits: int


def _random_prime(bits: int, rng: random.Random) -> int:
    while True:
        candidate = rng.getrandbits(bits) | (1 << (bits - 1)) | 1
        p = int(gmpy2.next_prime(candidate))
        if p.bit_length() == bits:
            return p


def keygen(key_bits: int = DEFAULT_KEY_BITS, rng: random.Random | None = None) -> Keypair:
    """Generate a Paillier keypair with a modulus of exactly ``key_bits`` bits."""
    if key_bits not in ALLOWED_KEY_BITS:
        raise ValueError(f"key_bits must be one of {ALLOWED_KEY_BITS}, got {key_bits}")
    rng = rng if rng is not None else random.Random()
    half = key_bits // 2
    while True:
        p = _random_prime(half, rng)
        q = _random_prime(half, rng)
        if p == q:
            continue
        n = p * q
        if n.bit_length() == key_bits:
            break
    pk = PublicKey(n)
    return Keypair(public_key=pk, private_key=PrivateKey(pk, p, q), key_bits=key_bits)


class Ciphertext:
    """An encrypted fixed-point number: raw value mod n^2 plus its exponent."""

    __slots__ = ("public_key", "raw", "exponent")

    def __init__(self, public_key: PublicKey, raw: int, exponent: int):
        self.public_key = public_key
        self.raw = int(raw)
        self.exponent = int(exponent)

    def __repr__(self):
        return f"<Ciphertext exp={self.exponent}>"

    def _decrease_exponent_to(self, exponent: int) -> "Ciphertext":
        if exponent > self.exponent:
            raise ValueError("cannot increase ciphertext exponent")
        factor = 1 << (self.exponent - exponent)
        raw = gmpy2.powmod(self.raw, factor, self.public_key.nsquare)
        return Ciphertext(self.public_key, raw, exponent)


def encrypt(
    public_key: PublicKey,
    x: float,
    rng: random.Random | None = None,
    frac_bits: int = DEFAULT_FRAC_BITS,
) -> Ciphertext:
    """Encrypt a real number; probabilistic (fresh nonce per call)."""
    rng = rng if rng is not None else random.Random()
    enc = EncodedNumber.encode(x, frac_bits)
    return encrypt_encoded(public_key, enc, rng)


def encrypt_encoded(public_key: PublicKey, enc: EncodedNumber, rng: random.Random) -> Ciphertext:
    if abs(enc.mantissa) > public_key.max_int:
        raise EncodingOverflowError(
            f"mantissa {enc.mantissa.bit_length()} bits exceeds the safe plaintext range"
        )
    return Ciphertext(public_key, public_key.raw_encrypt(enc.mantissa, rng), enc.exponent)


def decrypt_to_encoded(private_key: PrivateKey, c: Ciphertext) -> EncodedNumber:
    """Decrypt to the exact fixed-point mantissa (no float rounding)."""
    if c.public_key != private_key.public_key:
        raise KeyMismatchError("ciphertext was encrypted under a different key")
    m = private_key.raw_decrypt(c.raw)
    pk = private_key.public_key
    if m <= pk.max_int:
        mantissa = m
    elif m >= pk.n - pk.max_int:
        mantissa = m - pk.n
    else:
        raise EncodingOverflowError("decrypted mantissa is outside the valid range")
    return EncodedNumber(mantissa, c.exponent)


def decrypt(private_key: PrivateKey, c: Ciphertext) -> float:
    """Decrypt and decode to a float."""
    return decrypt_to_encoded(private_key, c).decode()


def add_ct(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    """Homomorphic addition of two ciphertexts under the same key."""
    if a.public_key != b.public_key:
        raise KeyMismatchError("cannot add ciphertexts under different keys")
    if a.exponent > b.exponent:
        a = a._decrease_exponent_to(b.exponent)
    elif b.exponent > a.exponent:
        b = b._decrease_exponent_to(a.exponent)
    raw = a.raw * b.raw % a.public_key.nsquare
    return Ciphertext(a.public_key, raw, a.exponent)


def add_encoded(a: Ciphertext, enc: EncodedNumber) -> Ciphertext:
    """Add an already-encoded plaintext; exact at the mantissa level."""
    pk = a.public_key
    if enc.exponent < a.exponent:
        a = a._decrease_exponent_to(enc.exponent)
    elif enc.exponent > a.exponent:
        enc = enc.align_to(a.exponent)
    raw = a.raw * (1 + pk.n * (enc.mantissa % pk.n)) % pk.nsquare
    return Ciphertext(pk, raw, a.exponent)


def add_pt(a: Ciphertext, x: float, frac_bits: int = DEFAULT_FRAC_BITS) -> Ciphertext:
    """Homomorphic addition of a plaintext real."""
    return add_encoded(a, EncodedNumber.encode(x, frac_bits))


def mul_encoded(a: Ciphertext, enc: EncodedNumber) -> Ciphertext:
    raw = gmpy2.powmod(a.raw, enc.mantissa, a.public_key.nsquare)
    return Ciphertext(a.public_key, raw, a.exponent + enc.exponent)


def mul_pt(a: Ciphertext, x: float, frac_bits: int = DEFAULT_FRAC_BITS) -> Ciphertext:
    """Homomorphic multiplication by a plaintext real."""
    return mul_encoded(a, EncodedNumber.encode(x, frac_bits))


def enc_dot(v: list[Ciphertext], w, frac_bits: int = DEFAULT_FRAC_BITS) -> Ciphertext:
    """Encrypted dot product: sum_i v_i * w_i with plaintext weights w."""
    if len(v) != len(w):
        raise ValueError(f"length mismatch: {len(v)} ciphertexts vs {len(w)} weights")
    if len(v) == 0:
        raise ValueError("enc_dot requires at least one element")
    acc = mul_pt(v[0], float(w[0]), frac_bits)
    for ci, wi in zip(v[1:], w[1:]):
        acc = add_ct(acc, mul_pt(ci, float(wi), frac_bits))
    return acc


def keypair_to_json(keypair: Keypair) -> str:
    """Serialize a keypair (including the private factors) as versioned JSON."""
    return json.dumps(
        {
            "version": _KEY_FORMAT_VERSION,
            "key_bits": keypair.key_bits,
            "n": str(keypair.public_key.n),
            "p": str(keypair.private_key.p),
            "q": str(keypair.private_key.q),
        }
    )


def keypair_from_json(text: str) -> Keypair:
    obj = json.loads(text)
    if obj.get("version") != _KEY_FORMAT_VERSION:
        raise ValueError(f"unsupported key format version: {obj.get('version')!r}")
    pk = PublicKey(int(obj["n"]))
    return Keypair(
        public_key=pk,
        private_key=PrivateKey(pk, int(obj["p"]), int(obj["q"])),
        key_bits=int(obj["key_bits"]),
    )
