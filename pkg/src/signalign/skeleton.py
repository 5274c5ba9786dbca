"""87-joint skeleton layout, pose streams, and the part-grouped graph encoder.

The layout groups joints into five named parts (body, both hands, mouth,
face) and carries an undirected edge list read parent->child where bone
vectors are needed.  The encoder stacks graph-convolution layers over the
symmetrically normalized adjacency (self-loops added), mean-pools, and
emits unit-norm global and per-part embeddings plus class logits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "PART_NAMES",
    "PART_SIZES",
    "LayoutError",
    "SkeletonLayout",
    "default_layout",
    "SkeletonSequence",
    "normalized_adjacency",
    "bone_stream",
    "motion_stream",
    "EncodedSkeleton",
    "EncodedBatch",
    "SkeletonEncoder",
    "classify_loss",
]

PART_NAMES = ("body", "left_hand", "right_hand", "mouth", "face")
PART_SIZES = {"body": 15, "left_hand": 21, "right_hand": 21, "mouth": 10, "face": 20}
JOINT_COUNT = 87


class LayoutError(ValueError):
    """Skeleton layout violates its structural contract."""


@dataclass(frozen=True)
class SkeletonLayout:
    """Joint grouping and connectivity for the 87-joint skeleton.

    ``parts`` maps each of the five part names to its joint indices;
    ``edges`` is the bone list, each pair read (parent, child).
    """

    parts: Mapping[str, tuple[int, ...]]
    edges: tuple[tuple[int, int], ...]
    joint_count: int = JOINT_COUNT

    def __post_init__(self):
        if tuple(self.parts.keys()) != PART_NAMES:
            raise LayoutError(f"parts must be exactly {PART_NAMES} in order")
        seen: set[int] = set()
        for name, idx in self.parts.items():
            idx = tuple(int(i) for i in idx)
            if len(idx) != PART_SIZES[name]:
                raise LayoutError(f"part {name!r} must have {PART_SIZES[name]} joints, got {len(idx)}")
            if any(i < 0 or i >= self.joint_count for i in idx):
                raise LayoutError(f"part {name!r} has joint indices outside 0..{self.joint_count - 1}")
            if seen & set(idx):
                raise LayoutError(f"part {name!r} overlaps another part")
            seen |= set(idx)
        if len(seen) != self.joint_count:
            raise LayoutError("part sizes must cover every joint exactly once")
        canon = set()
        for a, b in self.edges:
            a, b = int(a), int(b)
            if not (0 <= a < self.joint_count and 0 <= b < self.joint_count):
                raise LayoutError(f"edge ({a}, {b}) endpoint out of range")
            if a == b:
                raise LayoutError(f"edge ({a}, {b}) is a self-loop")
            key = (min(a, b), max(a, b))
            if key in canon:
                raise LayoutError(f"edge ({a}, {b}) is duplicated")
            canon.add(key)
        for name in PART_NAMES:
            self._check_part_connected(name)

    def _check_part_connected(self, name: str) -> None:
        members = set(self.parts[name])
        neigh: dict[int, list[int]] = {i: [] for i in members}
        for a, b in self.edges:
            if a in members and b in members:
                neigh[a].append(b)
                neigh[b].append(a)
        start = next(iter(members))
        stack, reached = [start], {start}
        while stack:
            for nxt in neigh[stack.pop()]:
                if nxt not in reached:
                    reached.add(nxt)
                    stack.append(nxt)
        if reached != members:
            raise LayoutError(f"part {name!r} is not connected through intra-part edges")

    def part_of(self, joint: int) -> str:
        for name, idx in self.parts.items():
            if joint in idx:
                return name
        raise LayoutError(f"joint {joint} not assigned to any part")

    def to_json(self, path) -> None:
        """Write the layout; parts must be contiguous ranges in file form."""
        parts_json = {}
        for name, idx in self.parts.items():
            lo, hi = min(idx), max(idx)
            if sorted(idx) != list(range(lo, hi + 1)):
                raise LayoutError(f"part {name!r} is not a contiguous range; cannot serialize")
            parts_json[name] = [lo, hi + 1]
        doc = {
            "joint_count": self.joint_count,
            "parts": parts_json,
            "edges": [[a, b] for a, b in self.edges],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "SkeletonLayout":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        try:
            parts = {
                name: tuple(range(int(span[0]), int(span[1])))
                for name, span in doc["parts"].items()
            }
            edges = tuple((int(a), int(b)) for a, b in doc["edges"])
            count = int(doc["joint_count"])
        except (KeyError, TypeError, IndexError) as exc:
            raise LayoutError(f"malformed layout file: {exc}") from exc
        return cls(parts=parts, edges=edges, joint_count=count)


def _finger_chains(root: int, first: int) -> list[tuple[int, int]]:
    edges = []
    for f in range(5):
        base = first + 4 * f
        edges.append((root, base))
        for j in range(base, base + 3):
            edges.append((j, j + 1))
    return edges


def default_layout() -> SkeletonLayout:
    """Reference 87-joint layout: a spanning tree rooted at the neck.

    Body joints 0..14 (0 nose, 1 neck, 2-4 left arm, 5-7 right arm,
    8/9 hips, 10-13 legs, 14 mid-hip), hands as wrist-rooted five-finger
    chains, mouth and face as chains hung off the nose.
    """
    body = [
        (1, 0), (1, 2), (2, 3), (3, 4), (1, 5), (5, 6), (6, 7),
        (1, 14), (14, 8), (14, 9), (8, 10), (9, 11), (10, 12), (11, 13),
    ]
    left_hand = _finger_chains(15, 16)
    right_hand = _finger_chains(36, 37)
    mouth = [(j, j + 1) for j in range(57, 66)]
    face = [(j, j + 1) for j in range(67, 86)]
    connectors = [(4, 15), (7, 36), (0, 57), (0, 67)]
    parts = {
        "body": tuple(range(0, 15)),
        "left_hand": tuple(range(15, 36)),
        "right_hand": tuple(range(36, 57)),
        "mouth": tuple(range(57, 67)),
        "face": tuple(range(67, 87)),
    }
    edges = tuple(body + left_hand + right_hand + mouth + face + connectors)
    return SkeletonLayout(parts=parts, edges=edges)


@dataclass(frozen=True)
class SkeletonSequence:
    """One clip: channels (x, y, confidence) x joints x frames, plus its label."""

    values: np.ndarray
    label: int

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ValueError(f"values must be [3, joints, frames], got {arr.shape}")
        if arr.shape[2] < 2:
            raise ValueError("a sequence needs at least 2 frames")
        if not np.all(np.isfinite(arr)):
            raise ValueError("sequence values must be finite")
        conf = arr[2]
        if np.any(conf < 0.0) or np.any(conf > 1.0):
            raise ValueError("confidence channel must lie in [0, 1]")
        if int(self.label) < 0:
            raise ValueError("label must be nonnegative")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "label", int(self.label))

    @property
    def joints(self) -> int:
        return self.values.shape[1]

    @property
    def frames(self) -> int:
        return self.values.shape[2]


def normalized_adjacency(layout: SkeletonLayout) -> Tensor:
    """Symmetrically normalized adjacency with self-loops: D^-1/2 (A + I) D^-1/2."""
    n = layout.joint_count
    a = np.zeros((n, n))
    for i, j in layout.edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    a_tilde = a + np.eye(n)
    deg = a_tilde.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    return Tensor(a_tilde * inv_sqrt[:, None] * inv_sqrt[None, :])


def bone_stream(seq: SkeletonSequence, layout: SkeletonLayout) -> SkeletonSequence:
    """Difference along each bone: child position minus parent position.

    Joints that never appear as a child (the tree roots) keep a zero bone.
    Bone confidence is the min of the two endpoint confidences; roots keep
    their own confidence.
    """
    if seq.joints != layout.joint_count:
        raise LayoutError(f"sequence has {seq.joints} joints, layout {layout.joint_count}")
    out = np.zeros_like(seq.values)
    out[2] = seq.values[2]
    for parent, child in layout.edges:
        out[0:2, child, :] = seq.values[0:2, child, :] - seq.values[0:2, parent, :]
        out[2, child, :] = np.minimum(seq.values[2, child, :], seq.values[2, parent, :])
    return SkeletonSequence(values=out, label=seq.label)


def motion_stream(seq: SkeletonSequence) -> SkeletonSequence:
    """Frame-to-frame displacement; the final frame is zero motion.

    Confidence is copied from the source frames unchanged.
    """
    out = np.zeros_like(seq.values)
    out[0:2, :, :-1] = seq.values[0:2, :, 1:] - seq.values[0:2, :, :-1]
    out[2] = seq.values[2]
    return SkeletonSequence(values=out, label=seq.label)


@dataclass(frozen=True)
class EncodedSkeleton:
    """Single-clip encoder output, detached from the tape (numpy vectors)."""

    global_feature: np.ndarray
    part_features: dict[str, np.ndarray]
    logits: np.ndarray


@dataclass
class EncodedBatch:
    """Batched encoder output; tensors participate in the active tape."""

    global_feature: Tensor
    logits: Tensor
    part_features: dict[str, Tensor] = field(default_factory=dict)


class SkeletonEncoder:
    """Stacked graph convolutions with global/part projection heads.

    Parameters live in a flat name->Tensor dict so the optimizer can walk
    and replace them; tensors themselves are immutable.  ``part_branch_calls``
    counts how many times the per-part heads were evaluated (the evaluation
    path must leave it untouched).
    """

    def __init__(
        self,
        layout: SkeletonLayout,
        params: dict[str, Tensor],
        channels: tuple[int, ...],
        feature_dim: int,
        num_classes: int,
    ) -> None:
        self.layout = layout
        self.params = params
        self.channels = tuple(int(c) for c in channels)
        self.feature_dim = int(feature_dim)
        self.num_classes = int(num_classes)
        self.adjacency = normalized_adjacency(layout)
        self.part_branch_calls = 0

    @classmethod
    def create(
        cls,
        layout: SkeletonLayout,
        channels: Sequence[int] = (64, 64, 64),
        feature_dim: int = 256,
        num_classes: int = 10,
        seed: int = 0,
    ) -> "SkeletonEncoder":
        channels = tuple(int(c) for c in channels)
        if not channels or any(c < 1 for c in channels):
            raise ValueError("channels must be a non-empty tuple of positive ints")
        if feature_dim < 1 or num_classes < 2:
            raise ValueError("feature_dim must be >= 1 and num_classes >= 2")
        rng = np.random.default_rng(seed)
        n = layout.joint_count
        params: dict[str, Tensor] = {}
        c_in = 3
        for i, c_out in enumerate(channels):
            params[f"layer{i}.theta"] = Tensor(rng.normal(size=(c_in, c_out)) * np.sqrt(2.0 / c_in))
            params[f"layer{i}.offset"] = Tensor(np.zeros((n, n)))
            c_in = c_out
        for head in ("project_global", "project_part"):
            params[f"{head}.weight"] = Tensor(rng.normal(size=(c_in, feature_dim)) * np.sqrt(1.0 / c_in))
            # small nonzero bias keeps the normalized feature defined at zero input
            params[f"{head}.bias"] = Tensor(rng.normal(size=feature_dim) * 0.01)
        params["classifier.weight"] = Tensor(rng.normal(size=(c_in, num_classes)) * np.sqrt(1.0 / c_in))
        params["classifier.bias"] = Tensor(np.zeros(num_classes))
        return cls(layout, params, channels, feature_dim, num_classes)

    def set_param(self, name: str, value: Tensor) -> None:
        if name not in self.params:
            raise KeyError(name)
        if value.shape != self.params[name].shape:
            raise ad.ShapeError(f"parameter {name} shape {self.params[name].shape} != {value.shape}")
        self.params[name] = value

    def encode_batch(self, values: np.ndarray, with_parts: bool = True) -> EncodedBatch:
        """Encode a [batch, 3, joints, frames] array.

        Global and part features come out unit-norm per row; logits are the
        raw classifier outputs.  ``with_parts=False`` skips the part heads
        entirely (the inference configuration).
        """
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 4 or arr.shape[1] != 3 or arr.shape[2] != self.layout.joint_count:
            raise ad.ShapeError(
                f"expected [batch, 3, {self.layout.joint_count}, frames], got {arr.shape}"
            )
        # [B, 3, N, T] -> [B, T, N, 3] so graph mixing acts on the joint axis
        h = Tensor(np.ascontiguousarray(np.transpose(arr, (0, 3, 2, 1))))
        for i in range(len(self.channels)):
            adj = ad.add(self.adjacency, self.params[f"layer{i}.offset"])
            h = ad.relu(ad.channel_map(ad.graph_apply(adj, h), self.params[f"layer{i}.theta"]))
        pooled = ad.mean(h, axis=(1, 2))
        logits = ad.add(
            ad.channel_map(pooled, self.params["classifier.weight"]),
            self.params["classifier.bias"],
        )
        global_feature = ad.l2_normalize(
            ad.add(
                ad.channel_map(pooled, self.params["project_global.weight"]),
                self.params["project_global.bias"],
            ),
            axis=1,
        )
        batch = EncodedBatch(global_feature=global_feature, logits=logits)
        if with_parts:
            for name in PART_NAMES:
                self.part_branch_calls += 1
                part_h = ad.take(h, self.layout.parts[name], axis=2)
                part_pooled = ad.mean(part_h, axis=(1, 2))
                batch.part_features[name] = ad.l2_normalize(
                    ad.add(
                        ad.channel_map(part_pooled, self.params["project_part.weight"]),
                        self.params["project_part.bias"],
                    ),
                    axis=1,
                )
        return batch

    def encode(self, seq: SkeletonSequence, with_parts: bool = True) -> EncodedSkeleton:
        """Encode one clip; returns detached numpy vectors."""
        batch = self.encode_batch(seq.values[None, ...], with_parts=with_parts)
        return EncodedSkeleton(
            global_feature=batch.global_feature.data[0].copy(),
            part_features={k: v.data[0].copy() for k, v in batch.part_features.items()},
            logits=batch.logits.data[0].copy(),
        )


def classify_loss(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of the classifier logits against integer labels."""
    return ad.cross_entropy(logits, labels)
