"""Plaintext reference pipeline and baseline-setting runner.

``PlainLRBackend`` performs the exact update equations of the secure
split-LR protocol in float64 with no encryption and no masking; plugged
into the shared training loop it yields the ground-truth trajectory that
protocol-equivalence tests compare against.  ``oracle_train`` also runs
the evaluation-setting ladder (A-Local, A-VFL, AB-VFL, B->A) and the
model-ablation variants in plaintext.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from fedada.adversarial import GroupModels
from fedada.data import DomainSplit, PASSIVE_C
from fedada.nn import bce_loss, sigmoid
from fedada.protocol import (
    RunConfig,
    Shard,
    make_shards,
    np_rng,
    seed_streams,
    train_loop,
)
from fedada.secure_lr import SplitLRState

SETTINGS = ("ALocal", "AVFL", "ABVFL", "BtoA")
VARIANTS = ("prada", "no_ir", "no_fg_ir", "no_da_fg_ir")

# Tolerance constant for trajectory comparison: tol(t) = t * c * 2^-frac_bits.
# c is dominated by float64 rounding of mask-sized intermediates (masks span
# 2^64 fixed-point quanta), not by the encoding quantum itself.
DEFAULT_TOL_CONSTANT = 2.0 ** 16


class OracleError(Exception):
    pass


class PlainLRBackend:
    """The label-predictor exchange with no encryption and no masking.

    Shares the weight initialization and update equations with the secure
    backend, including the quirk that the upstream gradient delta^C uses
    the post-update weights W^C_{t+1}.
    """

    def __init__(self, g: int, m: int, init_rng: np.random.Generator):
        state = SplitLRState.init(g, m, init_rng)
        self.w_c = state.w_tilde_c  # eps_0 = 0, so W~_0 = W_0
        self.w_p = state.w_p
        self.b = state.b_p
        self.t = 0

    def _logits(self, mu, x):
        return mu @ self.w_c + x @ self.w_p + self.b

    def round(self, mu, x, y, eta):
        mu = np.asarray(mu, dtype=np.float64)
        z = self._logits(mu, x)
        p_hat = sigmoid(z)
        loss, delta_l = bce_loss(p_hat, y)
        batch = len(delta_l)
        self.w_c = self.w_c - eta * (mu.T @ delta_l) / batch
        self.w_p = self.w_p - eta * (x.T @ delta_l) / batch
        self.b = self.b - eta * float(np.mean(delta_l))
        self.t += 1
        delta_c = np.outer(delta_l, self.w_c)
        return loss, z, delta_l, delta_c

    def predict(self, mu, x):
        return sigmoid(self._logits(np.asarray(mu, dtype=np.float64), x))


def apply_variant(run: RunConfig, variant: str, all_c_columns: list[str]) -> RunConfig:
    """Specialize a run config for one of the ablation variants."""
    if variant == "prada":
        return run
    if variant == "no_ir":
        return replace(run, interactions_enabled=False)
    single = {"all_feat": list(all_c_columns)}
    if variant == "no_fg_ir":
        return replace(run, group_map=single, interactions_enabled=False, extractor_archs=None)
    if variant == "no_da_fg_ir":
        return replace(
            run,
            group_map=single,
            interactions_enabled=False,
            extractor_archs=None,
            da_enabled=False,
        )
    raise OracleError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


@dataclass
class OracleResult:
    setting: str
    variant: str
    models: GroupModels | None
    backend: PlainLRBackend
    history: list[dict]
    pretrain_history: list[dict] | None = None
    pretrain_backend: PlainLRBackend | None = None


def _plain_backend(g: int, m: int, streams, which: str) -> PlainLRBackend:
    return PlainLRBackend(g, m, np_rng(streams[which]))


def oracle_train(
    run: RunConfig, split: DomainSplit, setting: str, variant: str = "prada"
) -> OracleResult:
    """Train one setting of the evaluation ladder entirely in plaintext.

    - ALocal: party A's columns only, labeled target rows, plain LR.
    - AVFL:   A + C columns, labeled target rows, no domain adaptation.
    - ABVFL:  A + C columns, source and labeled target rows pooled.
    - BtoA:   full pipeline: DA pre-training on source, fine-tune on target.
    """
    if setting not in SETTINGS:
        raise OracleError(f"unknown setting {setting!r}; expected one of {SETTINGS}")
    all_c_columns = split.dataset.party_columns(PASSIVE_C)
    run = apply_variant(run, variant, all_c_columns)
    shards = make_shards(split)
    streams = seed_streams(run.seed)

    if setting == "ALocal":
        backend = _plain_backend(0, len(shards["target_A_labeled"].columns), streams, "lr_a")
        history = train_loop(
            None,
            backend,
            shards["target_A_labeled"],
            None,
            epochs=run.epochs_finetune,
            batch_size=run.batch_size,
            eta=run.eta_finetune,
            shuffle_rng=np_rng(streams["shuffle_ft"]),
            reshuffle_each_epoch=run.reshuffle_each_epoch,
            log_interval=run.log_interval,
        )
        return OracleResult(setting, variant, None, backend, history)

    spec = run.spec()
    models = GroupModels.build(spec, np_rng(streams["models_c"]), run.extractor_archs)

    if setting in ("AVFL", "ABVFL"):
        if setting == "AVFL":
            shard_active, shard_c = shards["target_A_labeled"], shards["target_C_labeled"]
            epochs, eta = run.epochs_finetune, run.eta_finetune
            shuffle = np_rng(streams["shuffle_ft"])
        else:
            shard_active = _concat_shards(shards["source_B"], shards["target_A_labeled"])
            shard_c = _concat_shards(shards["source_C"], shards["target_C_labeled"])
            epochs, eta = run.epochs_pretrain, run.eta_pretrain
            shuffle = np_rng(streams["shuffle_pre"])
        backend = _plain_backend(spec.g, len(shard_active.columns), streams, "lr_a")
        history = train_loop(
            models,
            backend,
            shard_active,
            shard_c,
            epochs=epochs,
            batch_size=run.batch_size,
            eta=eta,
            shuffle_rng=shuffle,
            reshuffle_each_epoch=run.reshuffle_each_epoch,
            log_interval=run.log_interval,
        )
        return OracleResult(setting, variant, models, backend, history)

    # BtoA: plaintext replica of pretrain + finetune
    pre_backend = _plain_backend(spec.g, len(shards["source_B"].columns), streams, "lr_b")
    pre_history = train_loop(
        models,
        pre_backend,
        shards["source_B"],
        shards["source_C"],
        epochs=run.epochs_pretrain,
        batch_size=run.batch_size,
        eta=run.eta_pretrain,
        da_enabled=run.da_enabled,
        lam=run.lam,
        lambda_warmup_iters=run.lambda_warmup_iters,
        target_pool=shards["target_C_pool"],
        shuffle_rng=np_rng(streams["shuffle_pre"]),
        target_rng=np_rng(streams["target_sample"]),
        reshuffle_each_epoch=run.reshuffle_each_epoch,
        log_interval=run.log_interval,
    )
    ft_backend = _plain_backend(spec.g, len(shards["target_A_labeled"].columns), streams, "lr_a")
    history = train_loop(
        models,
        ft_backend,
        shards["target_A_labeled"],
        shards["target_C_labeled"],
        epochs=run.epochs_finetune,
        batch_size=run.batch_size,
        eta=run.eta_finetune,
        shuffle_rng=np_rng(streams["shuffle_ft"]),
        reshuffle_each_epoch=run.reshuffle_each_epoch,
        update_extractors=not run.freeze_extractors_finetune,
        log_interval=run.log_interval,
    )
    return OracleResult(setting, variant, models, ft_backend, history, pre_history, pre_backend)


def _concat_shards(a: Shard, b: Shard) -> Shard:
    cols = {k: np.concatenate([a.columns[k], b.columns[k]]) for k in a.columns}
    labels = None
    if a.labels is not None and b.labels is not None:
        labels = np.concatenate([a.labels, b.labels])
    return Shard(cols, labels)


def compare_trajectories(
    secure_history: list[dict],
    oracle_history: list[dict],
    tol_constant: float = DEFAULT_TOL_CONSTANT,
    frac_bits: int = 40,
) -> dict:
    """Per-iteration divergence report between the two trajectories.

    The tolerance schedule is tol(t) = (t+1) * tol_constant * 2^-frac_bits:
    quantization and mask-rounding errors accumulate at most linearly.
    """
    if len(secure_history) != len(oracle_history):
        raise OracleError(
            f"history length mismatch: {len(secure_history)} vs {len(oracle_history)}"
        )
    rows = []
    first_failure = None
    for t, (sec, orc) in enumerate(zip(secure_history, oracle_history)):
        div_w = max(
            float(np.max(np.abs(sec["w_c"] - orc["w_c"]))) if len(sec["w_c"]) else 0.0,
            float(np.max(np.abs(sec["w_p"] - orc["w_p"]))),
            abs(sec["b"] - orc["b"]),
        )
        div_z = float(np.max(np.abs(sec["logits"] - orc["logits"])))
        tol = (t + 1) * tol_constant * 2.0 ** (-frac_bits)
        ok = max(div_w, div_z) <= tol
        if not ok and first_failure is None:
            first_failure = t
        rows.append(
            {"iteration": t, "weight_divergence": div_w, "logit_divergence": div_z, "tol": tol, "ok": ok}
        )
    return {
        "iterations": len(rows),
        "per_iteration": rows,
        "max_weight_divergence": max((r["weight_divergence"] for r in rows), default=0.0),
        "max_logit_divergence": max((r["logit_divergence"] for r in rows), default=0.0),
        "first_failure": first_failure,
        "passed": first_failure is None,
    }
