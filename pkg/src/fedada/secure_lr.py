"""Privacy-preserving split logistic regression.

The active party p holds the label-predictor weights for its own features
(``W^p``, ``b^p``) plus a noise-masked copy ``W~^C`` of the weights for the
passive party's high-order features.  The passive party C holds the PHE
keypair and the accumulated noise ``eps^C_t`` with the running invariant

    W~^C_t = W^C_t - eps^C_t

so the true C-side weights are secret-shared between the two parties.  The
forward pass exchanges a masked encrypted logit, the backward pass a masked
encrypted gradient, C's freshly-masked gradient response and the encrypted
accumulated noise, and finally the encrypted upstream gradient for C's
local models.

Gradient-mask bookkeeping: C samples its per-round noise ``nu`` directly on
the fixed-point grid and transmits ``dW + nu``; the accumulator advances by
``eta * nu``, which is algebraically the same as the eps/eta formulation
but avoids dividing a grid sample by the learning rate.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from fedada import phe
from fedada.messages import MessageBus, MessageKind, PartyMessage, PASSIVE_PARTY, ProtocolError
from fedada.nn import bce_loss, sigmoid, sgd_step
from fedada.phe import Ciphertext, EncodedNumber, Keypair

# Mask magnitude: uniform on the fixed-point lattice within +/- 2^52 quanta.
# Capped at 52 bits so every mask value is exactly representable in float64;
# larger masks would leak rounding error into the unmasked results.
MASK_QUANTA_BITS = 52


@dataclass
class SplitLRState:
    """The active party's split label-predictor state."""

    w_tilde_c: np.ndarray  # (g,) noise-masked weights for party C's inputs
    w_p: np.ndarray  # (m,) weights for the local features
    b_p: float
    t: int = 0

    @classmethod
    def init(cls, g: int, m: int, rng: np.random.Generator) -> "SplitLRState":
        limit = np.sqrt(6.0 / (g + m + 1))
        w = rng.uniform(-limit, limit, size=g + m)
        return cls(w_tilde_c=w[:g].copy(), w_p=w[g:].copy(), b_p=0.0, t=0)

    def check_finite(self) -> None:
        if not (
            np.all(np.isfinite(self.w_tilde_c))
            and np.all(np.isfinite(self.w_p))
            and np.isfinite(self.b_p)
        ):
            raise ProtocolError("non-finite label-predictor state after update")


def grid_noise(
    rng: random.Random,
    size: int,
    frac_bits: int = phe.DEFAULT_FRAC_BITS,
    quanta_bits: int = MASK_QUANTA_BITS,
) -> tuple[np.ndarray, list[EncodedNumber]]:
    """Uniform noise on the fixed-point lattice, as floats plus exact encodings."""
    bound = 1 << quanta_bits
    mantissas = [rng.randrange(-bound, bound + 1) for _ in range(size)]
    values = np.array([float(m) * 2.0 ** (-frac_bits) for m in mantissas])
    return values, [EncodedNumber(m, -frac_bits) for m in mantissas]


@dataclass
class NoiseState:
    """Party C's accumulated weight noise eps^C_t and its grid sampler."""

    eps_accum: np.ndarray  # (g,)
    rng: random.Random
    frac_bits: int = phe.DEFAULT_FRAC_BITS
    quanta_bits: int = MASK_QUANTA_BITS

    @classmethod
    def init(cls, g: int, rng: random.Random, frac_bits: int = phe.DEFAULT_FRAC_BITS) -> "NoiseState":
        return cls(eps_accum=np.zeros(g), rng=rng, frac_bits=frac_bits)


@dataclass
class PassiveLRParty:
    """Party C's endpoint of the split-LR protocol.

    Retains the plaintext high-order features of each in-flight round (keyed
    by round id) because the forward noise-cancellation term mu @ eps^C_t
    needs them.
    """

    keypair: Keypair
    noise: NoiseState
    nonce_rng: random.Random
    t: int = 0
    mu_cache: dict[int, np.ndarray] = field(default_factory=dict)
    name: str = PASSIVE_PARTY

    @property
    def frac_bits(self) -> int:
        return self.noise.frac_bits

    def encrypt_mu(self, mu: np.ndarray, round_id: int, receiver: str) -> PartyMessage:
        mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
        # cache the grid-quantized features (exactly what the ciphertexts
        # carry) so the noise-cancellation term uses the same values the
        # masked weights were multiplied with
        quantized = np.empty_like(mu)
        payload = []
        for i, row in enumerate(mu):
            cts = []
            for j, v in enumerate(row):
                enc = EncodedNumber.encode(float(v), self.frac_bits)
                quantized[i, j] = enc.decode()
                cts.append(
                    phe.encrypt_encoded(self.keypair.public_key, enc, self.nonce_rng)
                )
            payload.append(cts)
        self.mu_cache[round_id] = quantized
        return PartyMessage(self.name, receiver, round_id, self.t, MessageKind.ENC_MU, payload)

    def _check_iteration(self, msg: PartyMessage) -> None:
        if msg.iteration != self.t:
            raise ProtocolError(
                f"iteration counter desync: message says {msg.iteration}, party C is at {self.t}"
            )

    def handle_masked_logit(self, msg: PartyMessage) -> PartyMessage:
        self._check_iteration(msg)
        mu = self.mu_cache.get(msg.round_id)
        if mu is None:
            raise ProtocolError(f"no cached features for round {msg.round_id}")
        if len(msg.payload) != mu.shape[0]:
            raise ProtocolError("batch misalignment between cached features and ciphertexts")
        decrypted = np.array(
            [phe.decrypt(self.keypair.private_key, ct) for ct in msg.payload]
        )
        correction = mu @ self.noise.eps_accum
        return PartyMessage(
            self.name,
            msg.sender,
            msg.round_id,
            self.t,
            MessageKind.LOGIT_PLUS_MASK,
            decrypted + correction,
        )

    def handle_masked_grad(self, msg: PartyMessage, eta: float) -> tuple[PartyMessage, PartyMessage]:
        self._check_iteration(msg)
        decrypted = np.array(
            [phe.decrypt(self.keypair.private_key, ct) for ct in msg.payload]
        )
        nu_vals, _ = grid_noise(self.noise.rng, len(decrypted), self.frac_bits, self.noise.quanta_bits)
        masked = PartyMessage(
            self.name,
            msg.sender,
            msg.round_id,
            self.t,
            MessageKind.MASKED_GRAD_TILDE,
            decrypted + nu_vals,
        )
        self.noise.eps_accum = self.noise.eps_accum + eta * nu_vals
        self.t += 1
        enc_noise = PartyMessage(
            self.name,
            msg.sender,
            msg.round_id,
            self.t,
            MessageKind.ENC_ACCUM_NOISE,
            [
                phe.encrypt(self.keypair.public_key, float(v), self.nonce_rng, self.frac_bits)
                for v in self.noise.eps_accum
            ],
        )
        return masked, enc_noise

    def receive_delta_c(self, msg: PartyMessage) -> np.ndarray:
        self._check_iteration(msg)
        rows = [
            [phe.decrypt(self.keypair.private_key, ct) for ct in row] for row in msg.payload
        ]
        self.mu_cache.pop(msg.round_id, None)
        return np.asarray(rows)

    def finish_round(self, round_id: int) -> None:
        """Drop the cached plaintext features of a forward-only round."""
        self.mu_cache.pop(round_id, None)


@dataclass
class ActiveLRParty:
    """An active party's (A or B) endpoint of the split-LR protocol."""

    name: str
    state: SplitLRState
    public_key: phe.PublicKey
    mask_rng: random.Random
    frac_bits: int = phe.DEFAULT_FRAC_BITS


def _check_mu_enc(active: ActiveLRParty, mu_enc) -> int:
    for row in mu_enc:
        for ct in row:
            if ct.public_key != active.public_key:
                raise phe.KeyMismatchError("encrypted features are under a different key")
        if len(row) != len(active.state.w_tilde_c):
            raise ProtocolError("feature width does not match W~^C")
    return len(mu_enc)


def _masked_logit_exchange(
    active: ActiveLRParty,
    passive: PassiveLRParty,
    mu_enc,
    x_p: np.ndarray,
    bus: MessageBus,
    round_id: int,
) -> np.ndarray:
    """Algorithm steps shared by training forward and inference: returns z."""
    batch = _check_mu_enc(active, mu_enc)
    st = active.state
    z_p = x_p @ st.w_p + st.b_p
    enc_z_tilde = [phe.enc_dot(row, st.w_tilde_c, active.frac_bits) for row in mu_enc]
    # fresh per-round mask; lives only in this frame
    eps_vals, eps_encs = grid_noise(active.mask_rng, batch, active.frac_bits)
    masked = [phe.add_encoded(ct, enc) for ct, enc in zip(enc_z_tilde, eps_encs)]
    reply = passive.handle_masked_logit(
        bus.send(
            PartyMessage(active.name, passive.name, round_id, st.t, MessageKind.MASKED_LOGIT, masked)
        )
    )
    bus.send(reply)
    z_c = np.asarray(reply.payload) - eps_vals
    return z_p + z_c


def secure_forward(
    active: ActiveLRParty,
    passive: PassiveLRParty,
    mu_enc,
    x_p: np.ndarray,
    y: np.ndarray,
    bus: MessageBus,
    round_id: int,
):
    """Privacy-preserving forward propagation.

    Returns (mean loss, per-sample logit gradient delta^l, logits z).
    """
    z = _masked_logit_exchange(active, passive, mu_enc, x_p, bus, round_id)
    p_hat = sigmoid(z)
    loss, delta_l = bce_loss(p_hat, y)
    return loss, delta_l, z


def secure_backward(
    active: ActiveLRParty,
    passive: PassiveLRParty,
    mu_enc,
    x_p: np.ndarray,
    delta_l: np.ndarray,
    eta: float,
    bus: MessageBus,
    round_id: int,
) -> np.ndarray:
    """Privacy-preserving backward propagation.

    Updates the active party's split weights, advances C's accumulated
    noise, and returns the decrypted per-sample upstream gradient delta^C
    (batch x g) that party C feeds to its aggregators and extractors.
    """
    batch = _check_mu_enc(active, mu_enc)
    st = active.state
    g = len(st.w_tilde_c)
    inv_b = 1.0 / batch

    # [[dW^C]] = (1/B) sum_b [[mu_b]] * delta_b, kept encrypted at p
    enc_grad = []
    for j in range(g):
        acc = phe.mul_pt(mu_enc[0][j], float(delta_l[0]) * inv_b, active.frac_bits)
        for b in range(1, batch):
            acc = phe.add_ct(
                acc, phe.mul_pt(mu_enc[b][j], float(delta_l[b]) * inv_b, active.frac_bits)
            )
        enc_grad.append(acc)
    grad_w_p = x_p.T @ delta_l * inv_b
    grad_b = float(np.mean(delta_l))

    eps_vals, eps_encs = grid_noise(active.mask_rng, g, active.frac_bits)
    masked = [phe.add_encoded(ct, enc) for ct, enc in zip(enc_grad, eps_encs)]
    grad_msg = bus.send(
        PartyMessage(active.name, passive.name, round_id, st.t, MessageKind.MASKED_GRAD_C, masked)
    )
    tilde_msg, enc_noise_msg = passive.handle_masked_grad(grad_msg, eta)
    bus.send(tilde_msg)
    bus.send(enc_noise_msg)

    grad_w_tilde = np.asarray(tilde_msg.payload) - eps_vals
    st.w_tilde_c = sgd_step(st.w_tilde_c, grad_w_tilde, eta)
    st.w_p = sgd_step(st.w_p, grad_w_p, eta)
    st.b_p = st.b_p - eta * grad_b
    st.t += 1
    st.check_finite()

    # [[delta^C_b]] = delta_b * (W~^C_{t+1} + [[eps^C_{t+1}]]) per sample
    enc_eps = enc_noise_msg.payload
    delta_rows = []
    for b in range(batch):
        d_enc = EncodedNumber.encode(float(delta_l[b]), active.frac_bits)
        row = []
        for j in range(g):
            w_enc = EncodedNumber.encode(float(st.w_tilde_c[j]), active.frac_bits)
            row.append(phe.mul_encoded(phe.add_encoded(enc_eps[j], w_enc), d_enc))
        delta_rows.append(row)
    delta_msg = bus.send(
        PartyMessage(
            active.name, passive.name, round_id, st.t, MessageKind.ENC_DELTA_C, delta_rows
        )
    )
    return passive.receive_delta_c(delta_msg)


def secure_predict(
    active: ActiveLRParty,
    passive: PassiveLRParty,
    mu_enc,
    x_p: np.ndarray,
    bus: MessageBus,
    round_id: int,
) -> np.ndarray:
    """Inference: the forward masked-logit exchange without loss or backward."""
    if len(mu_enc) == 0:
        passive.finish_round(round_id)
        return np.empty(0)
    z = _masked_logit_exchange(active, passive, mu_enc, x_p, bus, round_id)
    passive.finish_round(round_id)
    return sigmoid(z)
