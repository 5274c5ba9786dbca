"""Synthetic sign corpus: sinusoidal joint motion plus matched text fixtures.

Each class is a set of per-part motion primitives (amplitude, frequency,
phase, drift) applied to the joints of its active parts on top of fixed
rest positions.  Train and test clips draw their per-sample phase from
disjoint pools, standing in for held-out signers.  The description
bridge builds a gloss, an expert passage whose sentences name the active
parts, and runs the generation pipeline so every class gets primary,
synonym, refined, and part-tagged texts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .descriptions import (
    DescriptionRecord,
    KnowledgeBase,
    MockBackend,
    SignEntry,
    run_pipeline,
)
from .skeleton import PART_NAMES, SkeletonLayout, SkeletonSequence, default_layout

__all__ = [
    "MotionPrimitive",
    "SyntheticSignSpec",
    "default_sign_specs",
    "rest_positions",
    "generate_sequence",
    "DatasetSplit",
    "generate_dataset",
    "values_array",
    "gloss_for",
    "build_sign_corpus",
    "build_description_set",
]


@dataclass(frozen=True)
class MotionPrimitive:
    """One part's oscillation: circular arc of given size, speed, and drift."""

    amplitude: float
    frequency: float
    phase: float
    offset_x: float
    offset_y: float

    def __post_init__(self):
        if not np.isfinite([self.amplitude, self.frequency, self.phase, self.offset_x, self.offset_y]).all():
            raise ValueError("primitive fields must be finite")
        if self.amplitude < 0 or self.frequency <= 0:
            raise ValueError("amplitude must be >= 0 and frequency > 0")


@dataclass(frozen=True)
class SyntheticSignSpec:
    """A sign class: which parts move and how, plus the observation noise."""

    class_id: int
    primitives: Mapping[str, MotionPrimitive]
    active_parts: tuple[str, ...]
    noise: float

    def __post_init__(self):
        if int(self.class_id) < 0:
            raise ValueError("class_id must be nonnegative")
        if set(self.primitives) != set(PART_NAMES):
            raise ValueError("primitives must cover every part")
        active = tuple(p for p in PART_NAMES if p in set(self.active_parts))
        if not active:
            raise ValueError("at least one part must be active")
        if len(set(self.active_parts)) != len(tuple(self.active_parts)):
            raise ValueError("duplicate active parts")
        if not np.isfinite(self.noise) or self.noise < 0:
            raise ValueError("noise must be a nonnegative float")
        object.__setattr__(self, "class_id", int(self.class_id))
        object.__setattr__(self, "active_parts", active)
        object.__setattr__(self, "primitives", dict(self.primitives))


def default_sign_specs(num_classes: int, seed: int = 0, noise: float = 0.05) -> list[SyntheticSignSpec]:
    """Random-but-reproducible class definitions, pairwise distinct."""
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    specs = []
    for c in range(num_classes):
        rng = np.random.default_rng([int(seed), c, 7919])
        k = int(rng.integers(1, 4))
        active = tuple(sorted(rng.choice(len(PART_NAMES), size=k, replace=False).tolist()))
        prims = {}
        for p, name in enumerate(PART_NAMES):
            prims[name] = MotionPrimitive(
                amplitude=float(rng.uniform(0.25, 0.55)),
                frequency=float(rng.uniform(0.8, 2.4)),
                phase=float(rng.uniform(0.0, 2.0 * np.pi)),
                offset_x=float(rng.uniform(-0.35, 0.35)),
                offset_y=float(rng.uniform(-0.35, 0.35)),
            )
        specs.append(
            SyntheticSignSpec(
                class_id=c,
                primitives=prims,
                active_parts=tuple(PART_NAMES[i] for i in active),
                noise=float(noise),
            )
        )
    _check_distinct(specs)
    return specs


def _check_distinct(specs: Sequence[SyntheticSignSpec]) -> None:
    def signature(spec):
        return (
            spec.active_parts,
            tuple(
                (name, spec.primitives[name].amplitude, spec.primitives[name].frequency,
                 spec.primitives[name].phase, spec.primitives[name].offset_x,
                 spec.primitives[name].offset_y)
                for name in spec.active_parts
            ),
        )

    seen: dict = {}
    for spec in specs:
        sig = signature(spec)
        if sig in seen:
            raise ValueError(f"classes {seen[sig]} and {spec.class_id} share identical motion")
        seen[sig] = spec.class_id


_PART_CENTERS = {
    "body": (0.0, 0.0),
    "left_hand": (-1.2, 0.3),
    "right_hand": (1.2, 0.3),
    "mouth": (0.0, 1.5),
    "face": (0.0, 1.9),
}


def rest_positions(layout: SkeletonLayout) -> np.ndarray:
    """Fixed per-joint 2-D rest pose: joints fan out around their part center."""
    pos = np.zeros((layout.joint_count, 2))
    for name, idx in layout.parts.items():
        cx, cy = _PART_CENTERS[name]
        for k, j in enumerate(idx):
            angle = 2.0 * np.pi * k / len(idx)
            pos[j, 0] = cx + 0.3 * np.cos(angle)
            pos[j, 1] = cy + 0.3 * np.sin(angle)
    return pos


def generate_sequence(
    spec: SyntheticSignSpec,
    layout: SkeletonLayout,
    frames: int,
    phase_offset: float,
    noise_rng: np.random.Generator,
) -> np.ndarray:
    """Raw [3, joints, frames] values for one clip of this class.

    The noise generator is always consumed the same way regardless of the
    spec's primitives, so two specs compared under the same generator
    state differ only where their motion differs.
    """
    if frames < 2:
        raise ValueError("frames must be at least 2")
    rest = rest_positions(layout)
    n = layout.joint_count
    t = np.arange(frames) / frames
    vals = np.zeros((3, n, frames))
    vals[0] = rest[:, 0:1]
    vals[1] = rest[:, 1:2]
    for name in PART_NAMES:
        if name not in spec.active_parts:
            continue
        prim = spec.primitives[name]
        for k, j in enumerate(layout.parts[name]):
            angle = 2.0 * np.pi * prim.frequency * t + prim.phase + phase_offset + 0.35 * k
            vals[0, j] += prim.offset_x + prim.amplitude * np.cos(angle)
            vals[1, j] += prim.offset_y + prim.amplitude * np.sin(angle)
    vals[0:2] += spec.noise * noise_rng.normal(size=(2, n, frames))
    vals[2] = np.clip(1.0 - spec.noise * np.abs(noise_rng.normal(size=(n, frames))), 0.0, 1.0)
    return vals


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[SkeletonSequence, ...]
    test: tuple[SkeletonSequence, ...]

    @property
    def num_classes(self) -> int:
        return len({s.label for s in self.train})


# per-sample phase pools; the gap keeps train and test phases disjoint
_TRAIN_PHASE = (0.0, 0.9 * np.pi)
_TEST_PHASE = (1.1 * np.pi, 2.0 * np.pi)


def generate_dataset(
    specs: Sequence[SyntheticSignSpec],
    samples_per_class: int = 20,
    frames: int = 16,
    seed: int = 0,
    layout: SkeletonLayout | None = None,
    train_fraction: float = 0.8,
) -> DatasetSplit:
    """Per-class clips split train/test with disjoint phase pools.

    Each sample's randomness is keyed by (seed, class, sample index), so
    datasets are reproducible and independent of spec parameter values.
    """
    if not specs:
        raise ValueError("no sign specs")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    if samples_per_class < 2:
        raise ValueError("need at least 2 samples per class")
    layout = layout or default_layout()
    _check_distinct(specs)
    train: list[SkeletonSequence] = []
    test: list[SkeletonSequence] = []
    n_train = round(samples_per_class * train_fraction)
    if n_train == 0 or n_train == samples_per_class:
        raise ValueError("split leaves an empty side")
    for spec in sorted(specs, key=lambda s: s.class_id):
        for s in range(samples_per_class):
            rng = np.random.default_rng([int(seed), spec.class_id, s])
            lo, hi = _TRAIN_PHASE if s < n_train else _TEST_PHASE
            phase = float(rng.uniform(lo, hi))
            vals = generate_sequence(spec, layout, frames, phase, rng)
            seq = SkeletonSequence(values=vals, label=spec.class_id)
            (train if s < n_train else test).append(seq)
    return DatasetSplit(train=tuple(train), test=tuple(test))


def values_array(sequences: Sequence[SkeletonSequence]) -> np.ndarray:
    """Stack clips into a [n, 3, joints, frames] batch array."""
    if not sequences:
        raise ValueError("no sequences to stack")
    return np.stack([s.values for s in sequences], axis=0)


_GLOSSES = (
    "amber", "breeze", "canyon", "dune", "ember", "fjord", "grove", "harbor",
    "iris", "juniper", "keel", "lagoon", "meadow", "nectar", "orchid", "plume",
    "quarry", "ridge", "summit", "thicket", "umber", "vale", "willow", "yonder",
    "zephyr",
)


def gloss_for(class_id: int) -> str:
    """Deterministic single-token gloss; unique for any class id."""
    base = _GLOSSES[class_id % len(_GLOSSES)]
    round_ = class_id // len(_GLOSSES)
    return base if round_ == 0 else f"{base}{round_}"


# one sentence bank per part; every sentence tags exactly its own part
_PART_PHRASES = {
    "body": (
        "Lean the torso forward and back in rhythm.",
        "Roll both shoulders in a steady arc.",
        "Swing the arm outward from the chest.",
        "Tilt the head while the chest turns.",
    ),
    "left_hand": (
        "Raise the left hand and spread the fingers wide.",
        "Curl the left thumb inward across the palm.",
        "Trace a circle with the left index finger.",
    ),
    "right_hand": (
        "Extend the right index finger and tap twice.",
        "Rotate the right palm upward in a small circle.",
        "Clench the right hand into a fist and hold.",
    ),
    "mouth": (
        "Part the lips slightly and hold.",
        "Press the tongue against the teeth.",
        "Round the mouth as if humming.",
    ),
    "face": (
        "Raise both eyebrows quickly.",
        "Puff the cheeks and release.",
        "Squint the eyes in a slow pulse.",
    ),
}


def build_sign_corpus(specs: Sequence[SyntheticSignSpec]) -> tuple[list[SignEntry], KnowledgeBase]:
    """Entries plus an expert KB whose passages describe each class's active parts."""
    entries = []
    passages = []
    for spec in sorted(specs, key=lambda s: s.class_id):
        gloss = gloss_for(spec.class_id)
        entries.append(SignEntry(spec.class_id, gloss))
        rng = np.random.default_rng([spec.class_id, 104729])
        sentences = []
        for part in spec.active_parts:
            phrase = _PART_PHRASES[part][int(rng.integers(0, len(_PART_PHRASES[part])))]
            # anchor every sentence to the gloss so classes sharing a part
            # still get distinguishable per-part texts
            sentences.append(f"{phrase[:-1]}, as in {gloss}.")
        passages.append((gloss, " ".join(sentences)))
    return entries, KnowledgeBase(passages)


def build_description_set(
    specs: Sequence[SyntheticSignSpec], synonym_count: int = 2, seed: int = 0
) -> list[DescriptionRecord]:
    """Run the full description pipeline for the synthetic corpus (mock backend)."""
    entries, kb = build_sign_corpus(specs)
    result = run_pipeline(entries, kb, MockBackend(seed), synonym_count=synonym_count)
    return list(result.records)
