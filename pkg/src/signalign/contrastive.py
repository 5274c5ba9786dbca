"""Bidirectional multi-positive alignment losses.

A batch pairs skeleton features against a pool of text features where
each skeleton may have several matching texts (same class label) and
vice versa.  Matching targets are uniform over the label matches; the
loss is the symmetrized KL from those targets to temperature-scaled
softmax distributions over the similarity matrix, read row-wise for
skeleton-to-text and column-wise for text-to-skeleton.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "ContrastiveConfig",
    "BatchPairing",
    "DegeneratePairingError",
    "similarity_matrix",
    "skeleton_to_text_distribution",
    "text_to_skeleton_distribution",
    "match_distribution",
    "contrastive_loss",
    "multipart_loss",
    "total_loss",
]


class DegeneratePairingError(ValueError):
    """An anchor has no candidate sharing its label; its target is undefined."""


@dataclass(frozen=True)
class ContrastiveConfig:
    """Alignment hyperparameters: softmax temperature and loss mixing weight."""

    temperature: float = 0.1
    alpha: float = 0.5

    def __post_init__(self):
        if not np.isfinite(self.temperature) or self.temperature <= 0.0:
            raise ValueError("temperature must be positive")
        if not np.isfinite(self.alpha) or self.alpha < 0.0:
            raise ValueError("alpha must be nonnegative")


def _check_labels(labels, rows: int, name: str) -> tuple[int, ...]:
    labels = tuple(int(x) for x in labels)
    if len(labels) != rows:
        raise ValueError(f"{name} must have one label per row ({rows}), got {len(labels)}")
    if any(x < 0 for x in labels):
        raise ValueError(f"{name} must be nonnegative")
    return labels


@dataclass(frozen=True)
class BatchPairing:
    """Skeleton rows against candidate text rows, both carrying class labels.

    Feature rows must be unit norm (they come from normalized heads);
    several texts may share a label, several skeletons may share a label.
    """

    skeleton_features: Tensor
    text_features: Tensor
    skeleton_labels: tuple[int, ...]
    text_labels: tuple[int, ...]

    def __post_init__(self):
        s, t = self.skeleton_features, self.text_features
        if not isinstance(s, Tensor) or not isinstance(t, Tensor):
            raise TypeError("features must be Tensors")
        if s.ndim != 2 or t.ndim != 2:
            raise ad.ShapeError("feature matrices must be 2-D")
        if s.shape[1] != t.shape[1]:
            raise ad.ShapeError(f"feature dims differ: {s.shape} vs {t.shape}")
        for name, mat in (("skeleton_features", s), ("text_features", t)):
            norms = np.linalg.norm(mat.data, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError(f"{name} rows must be unit norm")
        object.__setattr__(
            self, "skeleton_labels", _check_labels(self.skeleton_labels, s.shape[0], "skeleton_labels")
        )
        object.__setattr__(
            self, "text_labels", _check_labels(self.text_labels, t.shape[0], "text_labels")
        )

    @property
    def batch_size(self) -> int:
        return self.skeleton_features.shape[0]

    @property
    def text_count(self) -> int:
        return self.text_features.shape[0]


def similarity_matrix(skeleton_features: Tensor, text_features: Tensor) -> Tensor:
    """Dot products of every skeleton row with every text row: [B, M]."""
    return ad.matmul(skeleton_features, ad.transpose(text_features))


def skeleton_to_text_distribution(sim: Tensor, temperature: float) -> Tensor:
    """Each skeleton's distribution over the text pool (rows sum to 1)."""
    return ad.softmax(sim, axis=1, temperature=temperature)


def text_to_skeleton_distribution(sim: Tensor, temperature: float) -> Tensor:
    """Each text's distribution over the skeletons, presented [M, B]."""
    return ad.transpose(ad.softmax(sim, axis=0, temperature=temperature))


def match_distribution(anchor_labels: Sequence[int], candidate_labels: Sequence[int]) -> Tensor:
    """Uniform target over candidates sharing each anchor's label: [A, C].

    Raises :class:`DegeneratePairingError` when an anchor matches nothing.
    """
    anchors = tuple(int(x) for x in anchor_labels)
    cands = np.asarray([int(x) for x in candidate_labels])
    if not anchors or cands.size == 0:
        raise ValueError("labels must be non-empty")
    rows = np.zeros((len(anchors), cands.size))
    for i, lab in enumerate(anchors):
        mask = cands == lab
        count = int(mask.sum())
        if count == 0:
            raise DegeneratePairingError(f"anchor {i} (label {lab}) has no matching candidate")
        rows[i, mask] = 1.0 / count
    return Tensor(rows)


def contrastive_loss(pairing: BatchPairing, config: ContrastiveConfig) -> Tensor:
    """Symmetrized multi-positive alignment loss for one pairing.

    Mean over skeleton rows of KL(match || skeleton-to-text) plus mean
    over text rows of KL(match || text-to-skeleton), halved.
    """
    sim = similarity_matrix(pairing.skeleton_features, pairing.text_features)
    q_st = skeleton_to_text_distribution(sim, config.temperature)
    q_ts = text_to_skeleton_distribution(sim, config.temperature)
    p_st = match_distribution(pairing.skeleton_labels, pairing.text_labels)
    p_ts = match_distribution(pairing.text_labels, pairing.skeleton_labels)
    forward = ad.mean(ad.kl_divergence(p_st, q_st, axis=1))
    backward = ad.mean(ad.kl_divergence(p_ts, q_ts, axis=1))
    return ad.scale(ad.add(forward, backward), 0.5)


def multipart_loss(
    global_pairing: BatchPairing | None,
    synonym_pairing: BatchPairing | None,
    part_pairings: Mapping[str, BatchPairing] | None,
    config: ContrastiveConfig,
) -> Tensor:
    """Average alignment loss over whichever pairings are present.

    One term for the refined-text pairing, one for the synonym pairing,
    and one per body-part pairing; absent pairings simply drop out of the
    average.  With nothing present there is no loss to compute.
    """
    terms: list[Tensor] = []
    if global_pairing is not None:
        terms.append(contrastive_loss(global_pairing, config))
    if synonym_pairing is not None:
        terms.append(contrastive_loss(synonym_pairing, config))
    if part_pairings:
        for name in sorted(part_pairings):
            terms.append(contrastive_loss(part_pairings[name], config))
    if not terms:
        raise ValueError("multipart_loss needs at least one pairing")
    acc = terms[0]
    for term in terms[1:]:
        acc = ad.add(acc, term)
    return ad.scale(acc, 1.0 / len(terms))


def total_loss(classification: Tensor, alignment: Tensor, config: ContrastiveConfig) -> Tensor:
    """Classification loss plus alpha-weighted alignment loss."""
    return ad.add(classification, ad.scale(alignment, config.alpha))
