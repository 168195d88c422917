"""Command-line entry point.

Subcommands: ``keygen``, ``synth-data``, ``pretrain``, ``finetune``,
``evaluate``, ``verify-protocol``, ``ablate``.  One YAML experiment config
drives every subcommand; each training run writes a run directory with a
reproducibility manifest, a JSONL + CSV history, metrics and checkpoints.

Exit codes: 0 success, 1 configuration/usage error, 2 numeric or protocol
failure.
"""

from __future__ import annotations

import argparse
import csv as csv_mod
import dataclasses
import json
import math
import os
import platform
import random
import sys
import time

import numpy as np
import scipy

import fedada
from fedada import phe
from fedada.adversarial import AdversarialError, GroupModels
from fedada.config import ConfigError, config_hash, load_config, make_data, make_run, synth_config
from fedada.data import DataError, save_csv
from fedada.grouping import GroupingError, build_spec
from fedada.messages import ProtocolError, dump_transcript
from fedada.metrics import MetricError
from fedada.nn import EmbeddingTable, NnError, sigmoid
from fedada.oracle import (
    SETTINGS,
    VARIANTS,
    OracleError,
    compare_trajectories,
    oracle_train,
)
from fedada.protocol import RunConfig, evaluate, finetune, make_shards, pretrain

_RUNTIME_ERRORS = (
    ProtocolError,
    OracleError,
    AdversarialError,
    NnError,
    MetricError,
    phe.PheError,
    FloatingPointError,
)


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems via exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


class _FrozenScorer:
    """Inference-only label predictor restored from a checkpoint."""

    def __init__(self, w_c, w_p, b):
        self.w_c = np.asarray(w_c, dtype=np.float64)
        self.w_p = np.asarray(w_p, dtype=np.float64)
        self.b = float(b)

    def predict(self, mu, x):
        return sigmoid(np.asarray(mu) @ self.w_c + np.asarray(x) @ self.w_p + self.b)


# ---------------------------------------------------------------- run dirs


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _write_manifest(out_dir, command, cfg, seed, extra=None):
    manifest = {
        "command": command,
        "config_path": cfg.get("_path") if cfg else None,
        "config_hash": config_hash(cfg) if cfg else None,
        "seed": seed,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "fedada": getattr(fedada, "__version__", "0"),
        },
    }
    if extra:
        manifest.update(extra)
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)


_HISTORY_COLUMNS = ("epoch", "iteration", "batch_size", "loss", "l_adv", "disc_acc_mean")


def _history_row(record):
    row = {
        "epoch": record["epoch"],
        "iteration": record["iteration"],
        "batch_size": record["batch_size"],
        "loss": record["loss"],
    }
    if "l_adv" in record:
        row["l_adv"] = record["l_adv"]
    if "disc_acc" in record:
        row["disc_acc_mean"] = float(np.mean(record["disc_acc"]))
    return row


def _write_history(out_dir, history, stem="history"):
    """JSON-lines history plus a plot-ready CSV with the same columns."""
    with open(os.path.join(out_dir, f"{stem}.jsonl"), "w", encoding="utf-8") as fh:
        for record in history:
            fh.write(json.dumps(_history_row(record)) + "\n")
    with open(os.path.join(out_dir, f"{stem}.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv_mod.DictWriter(fh, fieldnames=_HISTORY_COLUMNS, restval="")
        writer.writeheader()
        for record in history:
            writer.writerow(_history_row(record))


def _save_models(out_dir, models: GroupModels | None, backend):
    model_dir = os.path.join(out_dir, "model")
    os.makedirs(model_dir, exist_ok=True)
    if models is not None:
        obj = {
            "group_map": {
                name: list(cols) for name, cols in models.spec.base_groups
            },
            "interactions_enabled": models.spec.interactions_enabled,
            "models": models.to_dict(),
        }
        if models.embeddings is not None:
            obj["embeddings"] = models.embeddings.to_dict()
        _write_json(os.path.join(model_dir, "group_models.json"), obj)
    if backend is not None:
        _write_json(
            os.path.join(model_dir, "label_predictor.json"),
            {
                "w_c": np.asarray(backend.w_c).tolist(),
                "w_p": np.asarray(backend.w_p).tolist(),
                "b": float(backend.b),
                "t": int(backend.t),
            },
        )


def _load_models(model_dir) -> GroupModels:
    with open(os.path.join(model_dir, "group_models.json"), encoding="utf-8") as fh:
        obj = json.load(fh)
    spec = build_spec(obj["group_map"], obj["interactions_enabled"])
    embeddings = (
        EmbeddingTable.from_dict(obj["embeddings"]) if obj.get("embeddings") else None
    )
    return GroupModels.from_dict(obj["models"], spec, embeddings)


def _load_scorer(model_dir) -> _FrozenScorer:
    with open(os.path.join(model_dir, "label_predictor.json"), encoding="utf-8") as fh:
        obj = json.load(fh)
    return _FrozenScorer(obj["w_c"], obj["w_p"], obj["b"])


# --------------------------------------------------------------- commands


def _cmd_keygen(args):
    if args.bits not in phe.ALLOWED_KEY_BITS:
        raise ConfigError(f"--bits must be one of {phe.ALLOWED_KEY_BITS}")
    keypair = phe.keygen(args.bits, random.Random(args.seed))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(phe.keypair_to_json(keypair))
    print(f"wrote {args.bits}-bit keypair to {args.out}")
    return 0


def _cmd_synth_data(args):
    cfg = load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    dataset, split = make_data(cfg, args.seed)
    save_csv(
        dataset,
        os.path.join(args.out, "data.csv"),
        os.path.join(args.out, "schema.json"),
    )
    _write_json(
        os.path.join(args.out, "split.json"),
        {
            "source": split.source.tolist(),
            "target_labeled": split.target_labeled.tolist(),
            "target_unlabeled": split.target_unlabeled.tolist(),
            "target_test": split.target_test.tolist(),
        },
    )
    seed = args.seed if args.seed is not None else cfg.get("run", {}).get("seed", 0)
    _write_manifest(
        args.out, "synth-data", cfg, seed,
        {"rows": dataset.n, "generator": dataclasses.asdict(synth_config(cfg))},
    )
    print(f"wrote {dataset.n} rows to {args.out}/data.csv " f"({split.counts()})")
    return 0


def _cmd_pretrain(args):
    cfg = load_config(args.config)
    run = make_run(cfg)
    dataset, split = make_data(cfg)
    shards = make_shards(split)
    os.makedirs(args.out, exist_ok=True)
    keypair = None
    if args.keys:
        with open(args.keys, encoding="utf-8") as fh:
            keypair = phe.keypair_from_json(fh.read())
    result = pretrain(
        run,
        shards["source_B"],
        shards["source_C"],
        shards["target_C_pool"],
        schema=dataset.schema,
        keypair=keypair,
    )
    _write_manifest(args.out, "pretrain", cfg, run.seed, {"iterations": len(result.history)})
    _write_history(args.out, result.history)
    _save_models(args.out, result.models, result.backend)
    if args.transcript:
        dump_transcript(result.bus.trace, os.path.join(args.out, "transcript.jsonl"))
    final_loss = result.history[-1]["loss"] if result.history else float("nan")
    print(f"pretrain finished: {len(result.history)} iterations, final loss {final_loss:.4f}")
    return 0


def _cmd_finetune(args):
    cfg = load_config(args.config)
    run = make_run(cfg)
    _, split = make_data(cfg)
    shards = make_shards(split)
    models = _load_models(os.path.join(args.pretrained, "model"))
    os.makedirs(args.out, exist_ok=True)
    result = finetune(run, models, shards["target_A_labeled"], shards["target_C_labeled"])
    auc, ks, _ = evaluate(result.models, result.backend, shards["test_A"], shards["test_C"])
    _write_manifest(args.out, "finetune", cfg, run.seed, {"iterations": len(result.history)})
    _write_history(args.out, result.history)
    _save_models(args.out, result.models, result.backend)
    metrics = {"auc": auc, "ks": ks, "n_test": int(shards["test_A"].n)}
    _write_json(os.path.join(args.out, "metrics.json"), metrics)
    if args.transcript:
        dump_transcript(result.bus.trace, os.path.join(args.out, "transcript.jsonl"))
    print(json.dumps({"split": "test", **metrics}))
    return 0


def _cmd_evaluate(args):
    cfg = load_config(args.config)
    _, split = make_data(cfg)
    shards = make_shards(split)
    model_dir = os.path.join(args.model, "model")
    models = (
        _load_models(model_dir)
        if os.path.exists(os.path.join(model_dir, "group_models.json"))
        else None
    )
    scorer = _load_scorer(model_dir)
    auc, ks, _ = evaluate(models, scorer, shards["test_A"], shards["test_C"])
    print(json.dumps({"split": args.split, "auc": auc, "ks": ks, "n_test": int(shards["test_A"].n)}))
    return 0


def _cmd_verify_protocol(args):
    cfg = load_config(args.config)
    run = make_run(cfg)
    _, split = make_data(cfg)
    shards = make_shards(split)
    # enough epochs to cover the requested iteration count, then truncate
    iters_per_epoch = math.ceil(shards["source_B"].n / run.batch_size)
    epochs = max(1, math.ceil(args.iters / iters_per_epoch))
    run = dataclasses.replace(run, epochs_pretrain=epochs, epochs_finetune=0)

    secure = pretrain(
        run, shards["source_B"], shards["source_C"], shards["target_C_pool"]
    )
    plain = oracle_train(run, split, "BtoA", "prada")
    report = compare_trajectories(
        secure.history[: args.iters],
        plain.pretrain_history[: args.iters],
        frac_bits=run.frac_bits,
    )
    print(
        f"secure vs plaintext over {report['iterations']} iterations: "
        f"max weight divergence {report['max_weight_divergence']:.3e}, "
        f"max logit divergence {report['max_logit_divergence']:.3e}"
    )
    if report["passed"]:
        print("verify-protocol: PASS")
        return 0
    print(
        f"verify-protocol: FAIL (first divergent iteration {report['first_failure']})",
        file=sys.stderr,
    )
    return 2


def _cmd_ablate(args):
    cfg = load_config(args.config)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    settings = [s.strip() for s in args.settings.split(",") if s.strip()]
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; expected one of {VARIANTS}")
    for s in settings:
        if s not in SETTINGS:
            raise ConfigError(f"unknown setting {s!r}; expected one of {SETTINGS}")
    seeds = cfg.get("ablation", {}).get("seeds", [cfg.get("run", {}).get("seed", 0)])

    out_fh = None
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_manifest(args.out, "ablate", cfg, seeds[0], {"seeds": seeds})
        out_fh = open(os.path.join(args.out, "metrics.jsonl"), "w", encoding="utf-8")
    rows = []
    try:
        for setting in settings:
            for variant in variants:
                aucs, kss = [], []
                for seed in seeds:
                    run = make_run(cfg, seed=seed)
                    _, split = make_data(cfg, seed=seed)
                    result = oracle_train(run, split, setting, variant)
                    shards = make_shards(split)
                    auc, ks, _ = evaluate(
                        result.models, result.backend, shards["test_A"], shards["test_C"]
                    )
                    aucs.append(auc)
                    kss.append(ks)
                    line = {"setting": setting, "variant": variant, "seed": seed,
                            "auc": auc, "ks": ks}
                    print(json.dumps(line))
                    if out_fh:
                        out_fh.write(json.dumps(line) + "\n")
                rows.append(
                    (setting, variant, float(np.mean(aucs)), float(np.std(aucs)),
                     float(np.mean(kss)))
                )
    finally:
        if out_fh:
            out_fh.close()

    print(f"\n{'setting':<8} {'variant':<14} {'auc':>8} {'auc_sd':>8} {'ks':>8}")
    for setting, variant, auc_m, auc_s, ks_m in rows:
        print(f"{setting:<8} {variant:<14} {auc_m:>8.4f} {auc_s:>8.4f} {ks_m:>8.4f}")
    if args.out:
        _write_json(
            os.path.join(args.out, "metrics.json"),
            [
                {"setting": s, "variant": v, "auc_mean": a, "auc_std": sd, "ks_mean": k}
                for s, v, a, sd, k in rows
            ],
        )
    return 0


# ------------------------------------------------------------------ main


def _build_parser() -> _Parser:
    parser = _Parser(prog="fedada", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate and save a Paillier keypair")
    p.add_argument("--bits", type=int, default=1024)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_keygen)

    p = sub.add_parser("synth-data", help="generate the synthetic covariate-shift dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("pretrain", help="federated pre-training (B + C, adversarial DA)")
    p.add_argument("--config", required=True)
    p.add_argument("--keys", default=None, help="keypair JSON from keygen (optional)")
    p.add_argument("--out", required=True)
    p.add_argument("--transcript", action="store_true", help="dump the message transcript")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("finetune", help="federated fine-tuning (A + C) and test metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--pretrained", required=True, help="run directory from pretrain")
    p.add_argument("--out", required=True)
    p.add_argument("--transcript", action="store_true")
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("evaluate", help="score a saved model on the test split")
    p.add_argument("--config", required=True)
    p.add_argument("--model", required=True, help="run directory containing model/")
    p.add_argument("--split", choices=["test"], default="test")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser(
        "verify-protocol", help="run secure vs plaintext and print the divergence report"
    )
    p.add_argument("--config", required=True)
    p.add_argument("--iters", type=int, default=50)
    p.set_defaults(func=_cmd_verify_protocol)

    p = sub.add_parser("ablate", help="run the ablation ladder in plaintext")
    p.add_argument("--config", required=True)
    p.add_argument("--variants", default=",".join(VARIANTS))
    p.add_argument("--settings", default="BtoA")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, DataError, GroupingError, OSError) as exc:
        print(f"fedada {args.command}: config error: {exc}", file=sys.stderr)
        return 1
    except _RUNTIME_ERRORS as exc:
        print(f"fedada {args.command}: protocol/numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
