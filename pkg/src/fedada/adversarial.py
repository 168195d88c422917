"""Per-group adversarial domain adaptation at the passive party.

Each feature group gets a feature extractor, a domain discriminator and a
scalar aggregator.  ``domain_adv_step`` performs one simultaneous min-max
update: discriminators descend the domain classification loss while
extractors ascend it through gradient reversal.  ``aggregate_high_order``
compresses every group into one scalar per sample, producing the
high-order feature matrix the split logistic regression consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedada.grouping import FeatureGroupSpec, GroupedBatch, group_input_dims
from fedada.nn import DenseNet, EmbeddingTable, grl_backward

TARGET_DOMAIN_LABEL = 1  # source domain is labeled 0
_CLIP = 1e-12


class AdversarialError(Exception):
    pass


def default_extractor_arch(in_dim: int) -> list[tuple[int, int]]:
    hidden = max(2 * in_dim, 4)
    out = max(in_dim // 2, 2)
    return [(in_dim, hidden), (hidden, out)]


def default_discriminator_arch(in_dim: int) -> list[tuple[int, int]]:
    hidden = max(in_dim, 4)
    return [(in_dim, hidden), (hidden, 1)]


@dataclass
class GroupModels:
    """The passive party's per-group networks F_i, D_i, G_i."""

    spec: FeatureGroupSpec
    extractors: list[DenseNet]
    discriminators: list[DenseNet]
    aggregators: list[DenseNet]
    embeddings: EmbeddingTable | None = None

    def __post_init__(self):
        g = self.spec.g
        if not (len(self.extractors) == len(self.discriminators) == len(self.aggregators) == g):
            raise AdversarialError("model lists must have one entry per feature group")
        for f, d, a in zip(self.extractors, self.discriminators, self.aggregators):
            if f.out_dim != d.in_dim or f.out_dim != a.in_dim:
                raise AdversarialError("extractor output dim must feed discriminator and aggregator")
            if a.out_dim != 1 or d.out_dim != 1:
                raise AdversarialError("discriminators and aggregators must output a scalar")

    @classmethod
    def build(
        cls,
        spec: FeatureGroupSpec,
        rng: np.random.Generator,
        extractor_archs: list[str] | None = None,
        embeddings: EmbeddingTable | None = None,
    ) -> "GroupModels":
        """Construct models for every group.

        ``extractor_archs`` may give per-group "FC(a->b)-..." strings; when
        omitted a small default shape is derived from each group's input
        width.  The aggregator is a single identity-activation dense layer,
        so the high-order feature stays a linear readout of the extractor.
        """
        dims = group_input_dims(spec, embeddings)
        extractors, discriminators, aggregators = [], [], []
        for i, in_dim in enumerate(dims):
            if extractor_archs is not None:
                f = DenseNet.create(extractor_archs[i], rng)
            else:
                f = DenseNet.create(default_extractor_arch(in_dim), rng)
            if f.in_dim != in_dim:
                raise AdversarialError(
                    f"extractor {i} expects input dim {f.in_dim}, group provides {in_dim}"
                )
            d = DenseNet.create(
                default_discriminator_arch(f.out_dim), rng, final_activation="sigmoid"
            )
            a = DenseNet.create([(f.out_dim, 1)], rng, final_activation="identity")
            extractors.append(f)
            discriminators.append(d)
            aggregators.append(a)
        return cls(spec, extractors, discriminators, aggregators, embeddings)

    def copy(self) -> "GroupModels":
        return GroupModels(
            self.spec,
            [f.copy() for f in self.extractors],
            [d.copy() for d in self.discriminators],
            [a.copy() for a in self.aggregators],
            self.embeddings,
        )

    def shared_parameters(self) -> list[np.ndarray]:
        """Extractor + aggregator parameters (the ones the VFL path trains)."""
        out = []
        for f, a in zip(self.extractors, self.aggregators):
            out.extend(f.parameters())
            out.extend(a.parameters())
        return out

    def to_dict(self) -> dict:
        return {
            "groups": self.spec.group_names,
            "interactions_enabled": self.spec.interactions_enabled,
            "extractors": [f.to_dict() for f in self.extractors],
            "discriminators": [d.to_dict() for d in self.discriminators],
            "aggregators": [a.to_dict() for a in self.aggregators],
        }

    @classmethod
    def from_dict(cls, obj: dict, spec: FeatureGroupSpec, embeddings=None) -> "GroupModels":
        return cls(
            spec,
            [DenseNet.from_dict(x) for x in obj["extractors"]],
            [DenseNet.from_dict(x) for x in obj["discriminators"]],
            [DenseNet.from_dict(x) for x in obj["aggregators"]],
            embeddings,
        )


def aggregate_high_order(models: GroupModels, batch: GroupedBatch, with_tapes: bool = False):
    """High-order feature matrix mu[:, i] = G_i(F_i(x_(i))).

    With ``with_tapes=True`` also returns the per-group forward tapes needed
    to backpropagate a gradient on mu through aggregators and extractors.
    """
    if batch.g != models.spec.g:
        raise AdversarialError(f"batch has {batch.g} groups, models expect {models.spec.g}")
    cols, tapes = [], []
    for f, a, x in zip(models.extractors, models.aggregators, batch.groups):
        feat, f_tape = f.forward(x)
        mu_i, a_tape = a.forward(feat)
        cols.append(mu_i[:, 0])
        tapes.append((f_tape, a_tape))
    mu = np.column_stack(cols)
    return (mu, tapes) if with_tapes else mu


def backward_from_mu(
    models: GroupModels,
    tapes,
    d_mu: np.ndarray,
    eta: float,
    update_extractors: bool = True,
) -> None:
    """Backpropagate a gradient on mu and SGD-update aggregators/extractors."""
    if d_mu.shape[1] != models.spec.g:
        raise AdversarialError("gradient width must equal the number of groups")
    for i, (f, a) in enumerate(zip(models.extractors, models.aggregators)):
        f_tape, a_tape = tapes[i]
        a_grads, d_feat = a.backward(a_tape, d_mu[:, i : i + 1])
        a.apply_gradients(a_grads, eta)
        if update_extractors:
            f_grads, _ = f.backward(f_tape, d_feat)
            f.apply_gradients(f_grads, eta)


def _domain_loss_terms(p_target: np.ndarray, p_source: np.ndarray) -> float:
    pt = np.clip(p_target, _CLIP, 1.0)
    ps = np.clip(1.0 - p_source, _CLIP, 1.0)
    return float(-np.mean(np.log(pt)) - np.mean(np.log(ps)))


def domain_adv_step(
    models: GroupModels,
    source_batch: GroupedBatch,
    target_batch: GroupedBatch,
    lam: float,
    eta: float,
) -> float:
    """One simultaneous min-max update of all discriminators and extractors.

    Discriminators descend the summed domain classification loss; extractor
    gradients flow through gradient reversal, so extractors ascend the same
    loss scaled by ``lam``.  Returns the pre-update loss.
    """
    if source_batch.g != models.spec.g or target_batch.g != models.spec.g:
        raise AdversarialError("batches were assembled under a different group spec")
    total = 0.0
    pending = []
    for i in range(models.spec.g):
        f, d = models.extractors[i], models.discriminators[i]
        feat_s, tape_fs = f.forward(source_batch.groups[i])
        feat_t, tape_ft = f.forward(target_batch.groups[i])
        p_s, tape_ds = d.forward(feat_s)
        p_t, tape_dt = d.forward(feat_t)
        total += _domain_loss_terms(p_t[:, 0], p_s[:, 0])

        n_s, n_t = p_s.shape[0], p_t.shape[0]
        # dL/dp for mean BCE with domain labels target=1, source=0
        up_t = -1.0 / (np.clip(p_t, _CLIP, 1.0) * n_t)
        up_s = 1.0 / (np.clip(1.0 - p_s, _CLIP, 1.0) * n_s)
        d_grads_t, d_feat_t = d.backward(tape_dt, up_t)
        d_grads_s, d_feat_s = d.backward(tape_ds, up_s)
        d_grads = [(gt[0] + gs[0], gt[1] + gs[1]) for gt, gs in zip(d_grads_t, d_grads_s)]

        f_grads_t, _ = f.backward(tape_ft, grl_backward(d_feat_t, lam))
        f_grads_s, _ = f.backward(tape_fs, grl_backward(d_feat_s, lam))
        f_grads = [(gt[0] + gs[0], gt[1] + gs[1]) for gt, gs in zip(f_grads_t, f_grads_s)]
        pending.append((d, d_grads, f, f_grads))

    if not np.isfinite(total):
        raise AdversarialError(f"non-finite adversarial loss: {total}")
    # apply after all gradients are computed: one simultaneous step
    for d, d_grads, f, f_grads in pending:
        d.apply_gradients(d_grads, eta)
        f.apply_gradients(f_grads, eta)
    return total


def discriminator_accuracy(
    models: GroupModels, source_batch: GroupedBatch, target_batch: GroupedBatch
) -> np.ndarray:
    """Per-group accuracy of the domain discriminators at threshold 0.5."""
    accs = []
    for i in range(models.spec.g):
        f, d = models.extractors[i], models.discriminators[i]
        p_s, _ = d.forward(f.forward(source_batch.groups[i])[0])
        p_t, _ = d.forward(f.forward(target_batch.groups[i])[0])
        correct = np.sum(p_s[:, 0] <= 0.5) + np.sum(p_t[:, 0] > 0.5)
        accs.append(correct / (p_s.shape[0] + p_t.shape[0]))
    return np.asarray(accs)
