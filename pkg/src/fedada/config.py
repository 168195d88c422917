"""Experiment configuration: one YAML file drives every CLI subcommand.

Layout::

    data:
      kind: synth                # or "csv"
      synth: {k: 3, group_dim: 4, shift: 1.5, ...}   # SynthConfig fields
      csv:   {path: ..., schema: ..., split: {...}, subsample_positives: {...}}
    groups:                      # optional; synth derives its own mapping
      demo: [age, education]
      ...
    run:                         # RunConfig fields (group_map comes from above)
      seed: 0
      batch_size: 64
      ...
    ablation:
      seeds: [0, 1, 2, 3, 4]
      variants: [prada, no_ir, no_fg_ir, no_da_fg_ir]
"""

from __future__ import annotations

import dataclasses
import hashlib
import json

import yaml

from fedada.data import (
    DataError,
    DomainSplit,
    SynthConfig,
    TabularDataset,
    load_csv,
    split_domains,
    subsample_positives,
    synth_group_map,
    synth_shift,
)
from fedada.protocol import RunConfig


class ConfigError(Exception):
    pass


_RUN_FIELDS = {f.name for f in dataclasses.fields(RunConfig)} - {"group_map"}
_SYNTH_FIELDS = {f.name for f in dataclasses.fields(SynthConfig)}


def load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    cfg["_path"] = path
    return cfg


def _where(cfg: dict, field: str) -> str:
    return f"{cfg.get('_path', '<config>')}: field {field!r}"


def config_hash(cfg: dict) -> str:
    clean = {k: v for k, v in cfg.items() if not k.startswith("_")}
    return hashlib.sha256(
        json.dumps(clean, sort_keys=True, default=str).encode()
    ).hexdigest()


def synth_config(cfg: dict) -> SynthConfig:
    section = cfg.get("data", {}).get("synth", {})
    unknown = set(section) - _SYNTH_FIELDS
    if unknown:
        raise ConfigError(f"{_where(cfg, 'data.synth')}: unknown keys {sorted(unknown)}")
    try:
        return SynthConfig(**section)
    except (TypeError, DataError) as exc:
        raise ConfigError(f"{_where(cfg, 'data.synth')}: {exc}") from None


def make_run(cfg: dict, seed: int | None = None) -> RunConfig:
    """Build the RunConfig, resolving the group map from config or generator."""
    section = dict(cfg.get("run", {}))
    unknown = set(section) - _RUN_FIELDS
    if unknown:
        raise ConfigError(f"{_where(cfg, 'run')}: unknown keys {sorted(unknown)}")
    groups = cfg.get("groups")
    if groups is None:
        if cfg.get("data", {}).get("kind", "synth") != "synth":
            raise ConfigError(f"{_where(cfg, 'groups')}: required for csv datasets")
        groups = synth_group_map(synth_config(cfg))
    if seed is not None:
        section["seed"] = seed
    try:
        return RunConfig(group_map=groups, **section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{_where(cfg, 'run')}: {exc}") from None


def make_data(cfg: dict, seed: int | None = None) -> tuple[TabularDataset, DomainSplit]:
    """Materialize the dataset + domain split the config describes.

    ``seed`` overrides the run seed for data generation/splitting so that
    multi-seed sweeps regenerate independent datasets.
    """
    data = cfg.get("data", {})
    kind = data.get("kind", "synth")
    if seed is None:
        seed = cfg.get("run", {}).get("seed", 0)
    if kind == "synth":
        return synth_shift(synth_config(cfg), seed)
    if kind == "csv":
        section = data.get("csv", {})
        for key in ("path", "schema", "split"):
            if key not in section:
                raise ConfigError(f"{_where(cfg, 'data.csv')}: missing key {key!r}")
        try:
            with open(section["schema"], encoding="utf-8") as fh:
                schema_config = json.load(fh)
            dataset = load_csv(section["path"], schema_config)
            split = split_domains(dataset, section["split"], seed)
            if "subsample_positives" in section:
                sub = section["subsample_positives"]
                split = subsample_positives(
                    split, sub["n_pos"], seed, sub.get("total")
                )
        except (OSError, json.JSONDecodeError, DataError, KeyError) as exc:
            raise ConfigError(f"{_where(cfg, 'data.csv')}: {exc}") from None
        return dataset, split
    raise ConfigError(f"{_where(cfg, 'data.kind')}: unknown kind {kind!r}")
