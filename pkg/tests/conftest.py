"""Shared fixtures: a tiny synthetic federation that keeps the
encrypted-protocol tests fast."""

import dataclasses

import pytest

from fedada.data import SynthConfig, synth_shift
from fedada.protocol import RunConfig, make_shards

TINY_SYNTH = SynthConfig(
    k=2,
    group_dim=2,
    m_active=2,
    n_source=48,
    n_source_test=32,
    n_target_labeled=24,
    n_target_unlabeled=24,
    n_target_test=40,
    shift=1.0,
)


def tiny_run(**overrides) -> RunConfig:
    base = dict(
        group_map={"g0": ["c0_0", "c0_1"], "g1": ["c1_0", "c1_1"]},
        epochs_pretrain=1,
        epochs_finetune=1,
        batch_size=16,
        eta_pretrain=0.05,
        eta_finetune=0.05,
        lam=1.0,
        seed=7,
        key_bits=512,
        interactions_enabled=True,
        log_interval=1,
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture(scope="session")
def tiny_split():
    _, split = synth_shift(TINY_SYNTH, seed=7)
    return split


@pytest.fixture(scope="session")
def tiny_shards(tiny_split):
    return make_shards(tiny_split)


def replace_run(run, **kw):
    return dataclasses.replace(run, **kw)
