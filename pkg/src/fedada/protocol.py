"""Party orchestration: federated pre-training, fine-tuning and evaluation.

The simulator drives all three parties in one process over a recorded
message bus.  The training loop is shared with the plaintext oracle
pipeline: both paths run the identical model math (grouping, extractors,
aggregators, logistic-regression updates) and differ only in the
label-predictor exchange backend plugged into the loop.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from fedada import phe
from fedada.adversarial import (
    GroupModels,
    aggregate_high_order,
    backward_from_mu,
    discriminator_accuracy,
    domain_adv_step,
)
from fedada.data import PASSIVE_C, ACTIVE, DomainSplit
from fedada.grouping import FeatureGroupSpec, assemble, build_spec
from fedada.messages import MessageBus, ProtocolError
from fedada.metrics import auc as auc_metric, ks as ks_metric
from fedada.nn import EmbeddingTable
from fedada.secure_lr import (
    ActiveLRParty,
    NoiseState,
    PassiveLRParty,
    SplitLRState,
    secure_backward,
    secure_forward,
    secure_predict,
)

_STREAM_NAMES = (
    "keygen",
    "models_c",
    "embeddings_c",
    "lr_b",
    "lr_a",
    "shuffle_pre",
    "shuffle_ft",
    "target_sample",
    "noise_c_pre",
    "noise_c_ft",
    "mask_b",
    "mask_a",
    "nonce_c_pre",
    "nonce_c_ft",
)


def seed_streams(seed: int) -> dict:
    """Named, independent random streams derived from one run seed."""
    children = np.random.SeedSequence(seed).spawn(len(_STREAM_NAMES))
    return dict(zip(_STREAM_NAMES, children))


def np_rng(stream) -> np.random.Generator:
    return np.random.default_rng(stream)


def py_rng(stream) -> random.Random:
    return random.Random(int(stream.generate_state(2, np.uint64)[0]))


@dataclass
class RunConfig:
    """Hyperparameters and wiring of one federated run."""

    group_map: dict[str, list[str]]
    epochs_pretrain: int = 1
    epochs_finetune: int = 1
    batch_size: int = 64
    eta_pretrain: float = 0.05
    eta_finetune: float = 0.05
    lam: float = 1.0
    seed: int = 0
    key_bits: int = 512
    frac_bits: int = phe.DEFAULT_FRAC_BITS
    interactions_enabled: bool = True
    extractor_archs: list[str] | None = None
    da_enabled: bool = True
    reshuffle_each_epoch: bool = True
    freeze_extractors_finetune: bool = False
    lambda_warmup_iters: int = 0  # 0 disables the warm-up ramp
    log_interval: int = 10

    def __post_init__(self):
        if self.epochs_pretrain < 0 or self.epochs_finetune < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")

    def spec(self) -> FeatureGroupSpec:
        return build_spec(self.group_map, self.interactions_enabled)


@dataclass
class Shard:
    """One party's view of a set of aligned rows."""

    columns: dict[str, np.ndarray]
    labels: np.ndarray | None = None
    indices: np.ndarray | None = None  # alignment indices, for audit only

    @property
    def n(self) -> int:
        if self.labels is not None:
            return len(self.labels)
        return len(next(iter(self.columns.values())))

    def matrix(self) -> np.ndarray:
        """Stack columns into (n, m) in insertion order."""
        if not self.columns:
            return np.zeros((self.n, 0))
        return np.column_stack([np.asarray(v, dtype=np.float64) for v in self.columns.values()])

    def take(self, idx: np.ndarray) -> "Shard":
        return Shard(
            {k: v[idx] for k, v in self.columns.items()},
            None if self.labels is None else self.labels[idx],
            None if self.indices is None else self.indices[idx],
        )


def make_shards(split: DomainSplit) -> dict[str, Shard]:
    """Cut the per-party shards of every partition from one aligned dataset."""
    ds = split.dataset
    target_pool = np.concatenate([split.target_labeled, split.target_unlabeled])

    def shard(indices, party, with_labels):
        return Shard(
            ds.view(indices, party),
            ds.labels[indices] if with_labels else None,
            indices,
        )

    shards = {
        "source_B": shard(split.source, ACTIVE, True),
        "source_C": shard(split.source, PASSIVE_C, False),
        "target_C_pool": shard(target_pool, PASSIVE_C, False),
        "target_A_labeled": shard(split.target_labeled, ACTIVE, True),
        "target_C_labeled": shard(split.target_labeled, PASSIVE_C, False),
        "test_A": shard(split.target_test, ACTIVE, True),
        "test_C": shard(split.target_test, PASSIVE_C, False),
    }
    if split.source_test is not None and len(split.source_test):
        shards["source_test_B"] = shard(split.source_test, ACTIVE, True)
        shards["source_test_C"] = shard(split.source_test, PASSIVE_C, False)
    return shards


def build_embeddings(shard: Shard, schema, rng: np.random.Generator) -> EmbeddingTable | None:
    """Embedding tables for the categorical passive-party columns, if any."""
    vocab_sizes = {
        s.name: len(s.vocab)
        for s in schema
        if s.party == PASSIVE_C and s.kind == "categorical" and s.name in shard.columns
    }
    if not vocab_sizes:
        return None
    return EmbeddingTable.create(vocab_sizes, rng)


class SecureLRBackend:
    """Label-predictor exchange over PHE ciphertexts and mutual masking."""

    def __init__(
        self,
        g: int,
        m: int,
        keypair: phe.Keypair,
        init_rng: np.random.Generator,
        noise_rng: random.Random,
        mask_rng: random.Random,
        nonce_rng: random.Random,
        bus: MessageBus,
        frac_bits: int = phe.DEFAULT_FRAC_BITS,
        active_name: str = "B",
    ):
        self.active = ActiveLRParty(
            active_name, SplitLRState.init(g, m, init_rng), keypair.public_key, mask_rng, frac_bits
        )
        self.passive = PassiveLRParty(
            keypair, NoiseState.init(g, noise_rng, frac_bits), nonce_rng
        )
        self.bus = bus
        self.round_id = 0

    def _next_round(self, mu):
        rid = self.round_id
        self.round_id += 1
        msg = self.passive.encrypt_mu(mu, rid, self.active.name)
        self.bus.send(msg)
        return rid, msg.payload

    def round(self, mu, x, y, eta):
        rid, mu_enc = self._next_round(mu)
        return run_algorithm3(self.active, self.passive, mu_enc, x, y, eta, self.bus, rid)

    def predict(self, mu, x):
        rid, mu_enc = self._next_round(mu)
        return secure_predict(self.active, self.passive, mu_enc, x, self.bus, rid)

    @property
    def w_c(self) -> np.ndarray:
        # oracle-harness reconstruction of the true C-side weights; in a real
        # deployment neither party can compute this on its own
        return self.active.state.w_tilde_c + self.passive.noise.eps_accum

    @property
    def w_p(self) -> np.ndarray:
        return self.active.state.w_p

    @property
    def b(self) -> float:
        return self.active.state.b_p

    @property
    def t(self) -> int:
        return self.active.state.t


def run_algorithm3(active, passive, mu_enc, x_p, y, eta, bus, round_id):
    """One privacy-preserving training round: forward then backward, once."""
    loss, delta_l, z = secure_forward(active, passive, mu_enc, x_p, y, bus, round_id)
    delta_c = secure_backward(active, passive, mu_enc, x_p, delta_l, eta, bus, round_id)
    return loss, z, delta_l, delta_c


def _epoch_batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_loop(
    models: GroupModels | None,
    backend,
    active_shard: Shard,
    passive_shard: Shard | None,
    epochs: int,
    batch_size: int,
    eta: float,
    da_enabled: bool = False,
    lam: float = 0.0,
    lambda_warmup_iters: int = 0,
    target_pool: Shard | None = None,
    shuffle_rng: np.random.Generator | None = None,
    target_rng: np.random.Generator | None = None,
    reshuffle_each_epoch: bool = True,
    update_extractors: bool = True,
    log_interval: int = 10,
) -> list[dict]:
    """The batch loop shared by the secure protocol and the plaintext oracle.

    Per batch: (optionally) one adversarial min-max step at party C, then
    the high-order features are computed and one label-predictor round is
    run through ``backend``; the upstream gradient that comes back updates
    C's aggregators and extractors.
    """
    if da_enabled and (models is None or target_pool is None):
        raise ProtocolError("domain adaptation requires party C models and a target pool")
    history: list[dict] = []
    n = active_shard.n
    x_all = active_shard.matrix()
    y_all = active_shard.labels
    if y_all is None:
        raise ProtocolError("the active party's shard must carry labels")
    order = np.arange(n)
    iteration = 0
    for epoch in range(epochs):
        if shuffle_rng is not None and (reshuffle_each_epoch or epoch == 0):
            order = shuffle_rng.permutation(n)
        for batch_idx in _epoch_batches(n, batch_size, order):
            record = {"epoch": epoch, "iteration": iteration, "batch_size": len(batch_idx)}
            if passive_shard is not None:
                c_batch = assemble(
                    passive_shard.take(batch_idx).columns,
                    models.spec,
                    models.embeddings,
                )
            if da_enabled:
                lam_t = lam
                if lambda_warmup_iters > 0:
                    lam_t = lam * min(1.0, iteration / lambda_warmup_iters)
                t_idx = target_rng.integers(0, target_pool.n, size=len(batch_idx))
                t_batch = assemble(
                    target_pool.take(t_idx).columns, models.spec, models.embeddings
                )
                record["l_adv"] = domain_adv_step(models, c_batch, t_batch, lam_t, eta)
                if log_interval and iteration % log_interval == 0:
                    record["disc_acc"] = discriminator_accuracy(models, c_batch, t_batch)
            if models is not None:
                mu, tapes = aggregate_high_order(models, c_batch, with_tapes=True)
            else:
                mu = np.zeros((len(batch_idx), 0))
            loss, z, delta_l, delta_c = backend.round(
                mu, x_all[batch_idx], y_all[batch_idx], eta
            )
            if not np.isfinite(loss):
                raise ProtocolError(f"non-finite training loss at iteration {iteration}")
            if models is not None:
                backward_from_mu(
                    models, tapes, delta_c / len(batch_idx), eta, update_extractors
                )
            record.update(
                loss=loss,
                logits=np.asarray(z, dtype=np.float64).copy(),
                w_c=np.asarray(backend.w_c, dtype=np.float64).copy(),
                w_p=np.asarray(backend.w_p, dtype=np.float64).copy(),
                b=float(backend.b),
            )
            history.append(record)
            iteration += 1
    return history


@dataclass
class TrainResult:
    models: GroupModels | None
    backend: object
    history: list[dict]
    bus: MessageBus | None = None
    keypair: phe.Keypair | None = None
    streams: dict = field(default_factory=dict)


def pretrain(
    run: RunConfig,
    source_shard_B: Shard,
    source_shard_C: Shard,
    target_shard_C: Shard,
    schema=None,
    keypair: phe.Keypair | None = None,
    bus: MessageBus | None = None,
) -> TrainResult:
    """Federated pre-training between source party B and passive party C."""
    streams = seed_streams(run.seed)
    spec = run.spec()
    embeddings = (
        build_embeddings(source_shard_C, schema, np_rng(streams["embeddings_c"]))
        if schema is not None
        else None
    )
    models = GroupModels.build(
        spec, np_rng(streams["models_c"]), run.extractor_archs, embeddings
    )
    if keypair is None:
        keypair = phe.keygen(run.key_bits, py_rng(streams["keygen"]))
    bus = bus if bus is not None else MessageBus()
    backend = SecureLRBackend(
        g=spec.g,
        m=len(source_shard_B.columns),
        keypair=keypair,
        init_rng=np_rng(streams["lr_b"]),
        noise_rng=py_rng(streams["noise_c_pre"]),
        mask_rng=py_rng(streams["mask_b"]),
        nonce_rng=py_rng(streams["nonce_c_pre"]),
        bus=bus,
        frac_bits=run.frac_bits,
        active_name="B",
    )
    history = train_loop(
        models,
        backend,
        source_shard_B,
        source_shard_C,
        epochs=run.epochs_pretrain,
        batch_size=run.batch_size,
        eta=run.eta_pretrain,
        da_enabled=run.da_enabled,
        lam=run.lam,
        lambda_warmup_iters=run.lambda_warmup_iters,
        target_pool=target_shard_C,
        shuffle_rng=np_rng(streams["shuffle_pre"]),
        target_rng=np_rng(streams["target_sample"]),
        reshuffle_each_epoch=run.reshuffle_each_epoch,
        log_interval=run.log_interval,
    )
    return TrainResult(models, backend, history, bus, keypair, streams)


def finetune(
    run: RunConfig,
    models: GroupModels,
    target_shard_A: Shard,
    target_shard_C: Shard,
    keypair: phe.Keypair | None = None,
    bus: MessageBus | None = None,
) -> TrainResult:
    """Federated fine-tuning between target party A and passive party C.

    The label predictor R^A always starts from a fresh initialization; only
    party C's extractors carry over from pre-training.  No domain
    adaptation happens in this phase.
    """
    streams = seed_streams(run.seed)
    if keypair is None:
        keypair = phe.keygen(run.key_bits, py_rng(streams["keygen"]))
    bus = bus if bus is not None else MessageBus()
    backend = SecureLRBackend(
        g=models.spec.g,
        m=len(target_shard_A.columns),
        keypair=keypair,
        init_rng=np_rng(streams["lr_a"]),
        noise_rng=py_rng(streams["noise_c_ft"]),
        mask_rng=py_rng(streams["mask_a"]),
        nonce_rng=py_rng(streams["nonce_c_ft"]),
        bus=bus,
        frac_bits=run.frac_bits,
        active_name="A",
    )
    history = train_loop(
        models,
        backend,
        target_shard_A,
        target_shard_C,
        epochs=run.epochs_finetune,
        batch_size=run.batch_size,
        eta=run.eta_finetune,
        da_enabled=False,
        shuffle_rng=np_rng(streams["shuffle_ft"]),
        reshuffle_each_epoch=run.reshuffle_each_epoch,
        update_extractors=not run.freeze_extractors_finetune,
        log_interval=run.log_interval,
    )
    return TrainResult(models, backend, history, bus, keypair, streams)


def predict(
    models: GroupModels | None,
    backend,
    shard_A: Shard,
    shard_C: Shard | None,
    batch_size: int = 256,
) -> np.ndarray:
    """Score a test shard with the trained states (batched inference)."""
    n = shard_A.n
    x_all = shard_A.matrix()
    preds = []
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        if models is not None:
            batch = assemble(shard_C.take(idx).columns, models.spec, models.embeddings)
            mu = aggregate_high_order(models, batch)
        else:
            mu = np.zeros((len(idx), 0))
        preds.append(backend.predict(mu, x_all[idx]))
    return np.concatenate(preds) if preds else np.empty(0)


def evaluate(
    models: GroupModels | None,
    backend,
    test_shard_A: Shard,
    test_shard_C: Shard | None,
    batch_size: int = 256,
):
    """AUC / KS of the trained model over an aligned test shard."""
    if test_shard_A.n == 0:
        raise ProtocolError("empty test set")
    preds = predict(models, backend, test_shard_A, test_shard_C, batch_size)
    labels = test_shard_A.labels
    return auc_metric(preds, labels), ks_metric(preds, labels), preds
