"""End-to-end training: skeleton classifier plus text-alignment objective.

Mini-batch SGD with weight decay on the graph-convolutional encoder.
Each batch pairs the encoded skeletons with the frozen text features of
their own classes (refined description, rotated synonyms, and per-part
clauses), so every pairing is label-closed by construction.  Evaluation
ranks classifier logits only — the text encoder and the per-part heads
are never touched on that path, and both carry call counters to prove
it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .contrastive import BatchPairing, ContrastiveConfig, multipart_loss, total_loss
from .descriptions import DescriptionRecord
from .skeleton import (
    PART_NAMES,
    SkeletonEncoder,
    SkeletonLayout,
    SkeletonSequence,
    bone_stream,
    classify_loss,
    default_layout,
    motion_stream,
)
from .synthetic import (
    build_description_set,
    default_sign_specs,
    generate_dataset,
    values_array,
)
from .text_encoder import TextEncoder

__all__ = [
    "STREAMS",
    "TrainConfig",
    "TrainingDivergedError",
    "lr_at",
    "apply_stream",
    "prepare_split",
    "EpochMetrics",
    "EvalResult",
    "TrainResult",
    "train",
    "evaluate",
    "fuse_scores",
    "predictions_from_scores",
    "accuracy_from_scores",
    "AblationRow",
    "ABLATION_VARIANTS",
    "run_ablation",
    "save_model",
    "load_model",
    "MODEL_FORMAT_VERSION",
    "grad_check_fixture",
]

STREAMS = ("joint", "bone", "joint_motion", "bone_motion")

MODEL_FORMAT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Loss or gradients stopped being finite; carries epoch/batch context."""

    def __init__(self, epoch: int, batch: int, message: str) -> None:
        super().__init__(f"training diverged at epoch {epoch}, batch {batch}: {message}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of a training run; hashable to JSON for reproducibility."""

    num_classes: int = 10
    samples_per_class: int = 20
    frames: int = 16
    noise: float = 0.05
    channels: tuple[int, ...] = (64, 64, 64)
    feature_dim: int = 256
    batch_size: int = 16
    epochs: int = 30
    base_lr: float = 0.06
    warmup_epochs: int = 3
    decay_epochs: tuple[int, ...] = (20, 25)
    lr_decay: float = 0.1
    weight_decay: float = 5e-4
    temperature: float = 0.1
    alpha: float = 0.5
    use_global_texts: bool = True
    use_synonym_texts: bool = True
    use_part_texts: bool = True
    synonym_count: int = 2
    stream: str = "joint"
    seed: int = 0
    text_seed: int = 0
    cache_text_features: bool = False

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 0 < self.warmup_epochs <= self.epochs:
            raise ValueError("warmup_epochs must be in 1..epochs")
        if any(b <= a for a, b in zip(self.decay_epochs, self.decay_epochs[1:])):
            raise ValueError("decay_epochs must be strictly increasing")
        if any(e < 0 for e in self.decay_epochs):
            raise ValueError("decay_epochs must be nonnegative")
        if self.base_lr <= 0 or not (0 < self.lr_decay <= 1):
            raise ValueError("base_lr must be > 0 and lr_decay in (0, 1]")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.stream not in STREAMS:
            raise ValueError(f"stream must be one of {STREAMS}, got {self.stream!r}")
        if self.num_classes < 2 or self.samples_per_class < 2 or self.frames < 2:
            raise ValueError("need at least 2 classes, 2 samples per class, 2 frames")
        if self.synonym_count < 1:
            raise ValueError("synonym_count must be at least 1")
        # the temperature/alpha ranges are enforced by ContrastiveConfig
        ContrastiveConfig(temperature=self.temperature, alpha=self.alpha)

    @property
    def uses_texts(self) -> bool:
        return self.use_global_texts or self.use_synonym_texts or self.use_part_texts

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["channels"] = list(self.channels)
        doc["decay_epochs"] = list(self.decay_epochs)
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: doc[k] for k in doc})

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Linear warmup to the base rate, then a step decay at each decay epoch."""
    if epoch < 0 or epoch >= config.epochs:
        raise ValueError(f"epoch {epoch} outside 0..{config.epochs - 1}")
    if epoch < config.warmup_epochs:
        return config.base_lr * (epoch + 1) / config.warmup_epochs
    passed = sum(1 for d in config.decay_epochs if epoch >= d)
    return config.base_lr * config.lr_decay**passed


def apply_stream(seq: SkeletonSequence, stream: str, layout: SkeletonLayout) -> SkeletonSequence:
    """View a clip as raw joints, bone vectors, or their frame differences."""
    if stream == "joint":
        return seq
    if stream == "bone":
        return bone_stream(seq, layout)
    if stream == "joint_motion":
        return motion_stream(seq)
    if stream == "bone_motion":
        return motion_stream(bone_stream(seq, layout))
    raise ValueError(f"stream must be one of {STREAMS}, got {stream!r}")


def prepare_split(
    sequences: Sequence[SkeletonSequence], stream: str, layout: SkeletonLayout
) -> tuple[np.ndarray, np.ndarray]:
    """Stream-transform clips and stack them into (values, labels) arrays."""
    transformed = [apply_stream(s, stream, layout) for s in sequences]
    labels = np.array([s.label for s in transformed], dtype=np.int64)
    return values_array(transformed), labels


# --------------------------------------------------------------------------
# Text bank: description strings grouped for per-batch lookup
# --------------------------------------------------------------------------


class _TextBank:
    """Per-class description texts; features get encoded per batch."""

    def __init__(self, records: Sequence[DescriptionRecord], config: TrainConfig) -> None:
        refined: dict[int, str] = {}
        synonyms: dict[int, list[str]] = {}
        parts: dict[str, dict[int, list[str]]] = {p: {} for p in PART_NAMES}
        for rec in records:
            if rec.kind == "refined" and rec.class_id not in refined:
                refined[rec.class_id] = rec.text
            elif rec.kind == "synonym":
                synonyms.setdefault(rec.class_id, []).append(rec.text)
            elif rec.kind == "part":
                for part in rec.parts:
                    parts[part].setdefault(rec.class_id, []).append(rec.text)
        classes = range(config.num_classes)
        if config.use_global_texts:
            missing = [c for c in classes if c not in refined]
            if missing:
                raise ValueError(f"classes without a refined description: {missing}")
        if config.use_synonym_texts:
            missing = [c for c in classes if not synonyms.get(c)]
            if missing:
                raise ValueError(f"classes without synonym descriptions: {missing}")
        if config.use_part_texts:
            missing = [c for c in classes if not any(parts[p].get(c) for p in PART_NAMES)]
            if missing:
                raise ValueError(f"classes without part descriptions: {missing}")
        self.refined = refined
        self.synonyms = {c: tuple(v) for c, v in synonyms.items()}
        self.parts = {p: {c: tuple(v) for c, v in by_class.items()} for p, by_class in parts.items()}

    def refined_text(self, class_id: int) -> str:
        return self.refined[class_id]

    def synonym_text(self, class_id: int, rotation: int) -> str:
        pool = self.synonyms[class_id]
        return pool[rotation % len(pool)]

    def part_text(self, part: str, class_id: int, rotation: int) -> str | None:
        pool = self.parts[part].get(class_id)
        if not pool:
            return None
        return pool[rotation % len(pool)]


# --------------------------------------------------------------------------
# Metrics and results
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    lr: float
    cls_loss: float
    con_loss: float
    total_loss: float
    train_top1: float
    test_top1: float
    test_top5: float


@dataclass(frozen=True)
class EvalResult:
    top1: float
    top5: float
    scores: np.ndarray
    predictions: np.ndarray


@dataclass
class TrainResult:
    model: SkeletonEncoder
    config: TrainConfig
    metrics: tuple[EpochMetrics, ...]
    test_scores: np.ndarray
    test_labels: np.ndarray

    @property
    def final(self) -> EpochMetrics:
        return self.metrics[-1]


# --------------------------------------------------------------------------
# Evaluation and fusion
# --------------------------------------------------------------------------


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def predictions_from_scores(scores: np.ndarray) -> np.ndarray:
    """Highest score wins; exact ties go to the lowest class id."""
    order = np.argsort(-scores, axis=1, kind="stable")
    return order[:, 0]


def accuracy_from_scores(scores: np.ndarray, labels: np.ndarray, k: int = 1) -> float:
    """Top-k accuracy under the same stable tie-breaking as predictions."""
    order = np.argsort(-scores, axis=1, kind="stable")
    hits = (order[:, :k] == np.asarray(labels)[:, None]).any(axis=1)
    return float(hits.mean())


def evaluate(
    model: SkeletonEncoder,
    values: np.ndarray,
    labels: np.ndarray,
    batch_size: int = 64,
) -> EvalResult:
    """Rank classifier logits over a stacked split; no tape, no part heads."""
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(values) != len(labels) or len(values) == 0:
        raise ValueError("values and labels must be non-empty and aligned")
    rows = []
    for b0 in range(0, len(values), batch_size):
        encoded = model.encode_batch(values[b0 : b0 + batch_size], with_parts=False)
        rows.append(encoded.logits.data)
    scores = _softmax_rows(np.concatenate(rows, axis=0))
    return EvalResult(
        top1=accuracy_from_scores(scores, labels, k=1),
        top5=accuracy_from_scores(scores, labels, k=min(5, scores.shape[1])),
        scores=scores,
        predictions=predictions_from_scores(scores),
    )


def fuse_scores(score_matrices: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise sum of per-stream score matrices."""
    if not score_matrices:
        raise ValueError("nothing to fuse")
    mats = [np.asarray(m, dtype=np.float64) for m in score_matrices]
    shape = mats[0].shape
    if any(m.shape != shape for m in mats):
        raise ValueError("all score matrices must share one shape")
    return np.sum(mats, axis=0)


# --------------------------------------------------------------------------
# Training loop
# --------------------------------------------------------------------------


def _batch_pairings(
    encoded,
    batch_labels: np.ndarray,
    batch_positions: np.ndarray,
    bank: _TextBank,
    encoder: TextEncoder,
    config: TrainConfig,
):
    """Assemble the label-closed pairings for one mini-batch.

    Texts come from each sample's own class, so every skeleton row has at
    least one matching text and vice versa.  Synonym and part texts
    rotate with the sample's dataset position so the whole pool gets
    visited across epochs.  Part pairings subset the skeleton rows to the
    samples whose class has a text for that part.
    """
    labels = [int(c) for c in batch_labels]
    global_pairing = None
    synonym_pairing = None
    part_pairings: dict[str, BatchPairing] = {}
    if config.use_global_texts:
        feats = encoder.encode_matrix([bank.refined_text(c) for c in labels])
        global_pairing = BatchPairing(encoded.global_feature, feats, labels, labels)
    if config.use_synonym_texts:
        feats = encoder.encode_matrix(
            [bank.synonym_text(c, int(pos)) for c, pos in zip(labels, batch_positions)]
        )
        synonym_pairing = BatchPairing(encoded.global_feature, feats, labels, labels)
    if config.use_part_texts:
        for part in PART_NAMES:
            texts, kept_rows, kept_labels = [], [], []
            for row, (c, pos) in enumerate(zip(labels, batch_positions)):
                text = bank.part_text(part, c, int(pos))
                if text is not None:
                    texts.append(text)
                    kept_rows.append(row)
                    kept_labels.append(c)
            if not texts:
                continue
            skel = encoded.part_features[part]
            if len(kept_rows) < len(labels):
                skel = ad.take(skel, kept_rows, axis=0)
            part_pairings[part] = BatchPairing(
                skel, encoder.encode_matrix(texts), kept_labels, kept_labels
            )
    return global_pairing, synonym_pairing, part_pairings


def train(
    config: TrainConfig,
    dataset=None,
    descriptions: Sequence[DescriptionRecord] | None = None,
    layout: SkeletonLayout | None = None,
    progress: Callable[[EpochMetrics], None] | None = None,
) -> TrainResult:
    """Full training run; deterministic for a fixed config.

    ``dataset`` (a train/test split of clips) and ``descriptions`` default
    to the synthetic corpus derived from the config's own fields.
    """
    layout = layout or default_layout()
    specs = None
    if dataset is None or (descriptions is None and config.uses_texts):
        specs = default_sign_specs(config.num_classes, seed=config.seed, noise=config.noise)
    if dataset is None:
        dataset = generate_dataset(
            specs, config.samples_per_class, config.frames, seed=config.seed, layout=layout
        )
    if descriptions is None and config.uses_texts:
        descriptions = build_description_set(specs, config.synonym_count, seed=config.seed)

    train_values, train_labels = prepare_split(dataset.train, config.stream, layout)
    test_values, test_labels = prepare_split(dataset.test, config.stream, layout)

    model = SkeletonEncoder.create(
        layout,
        channels=config.channels,
        feature_dim=config.feature_dim,
        num_classes=config.num_classes,
        seed=config.seed,
    )
    loss_config = ContrastiveConfig(temperature=config.temperature, alpha=config.alpha)
    bank = None
    text_encoder = None
    if config.uses_texts:
        bank = _TextBank(descriptions, config)
        text_encoder = TextEncoder(dim=config.feature_dim, seed=config.text_seed)
        text_encoder.cache_enabled = config.cache_text_features

    n = len(train_values)
    order_rng = np.random.default_rng([config.seed, 77])
    metrics: list[EpochMetrics] = []
    for epoch in range(config.epochs):
        lr = lr_at(epoch, config)
        perm = order_rng.permutation(n)
        sums = {"cls": 0.0, "con": 0.0, "total": 0.0}
        correct = 0
        for batch_index, b0 in enumerate(range(0, n, config.batch_size)):
            pos = perm[b0 : b0 + config.batch_size]
            batch_labels = train_labels[pos]
            try:
                with Tape() as tape:
                    encoded = model.encode_batch(
                        train_values[pos], with_parts=config.use_part_texts
                    )
                    cls = classify_loss(encoded.logits, batch_labels)
                    if config.uses_texts:
                        pairings = _batch_pairings(
                            encoded, batch_labels, pos, bank, text_encoder, config
                        )
                        con = multipart_loss(*pairings, loss_config)
                        objective = total_loss(cls, con, loss_config)
                        con_value = float(con.data)
                    else:
                        objective = cls
                        con_value = 0.0
                    param_names = list(model.params)
                    grad_list = tape.gradients(
                        objective, [model.params[name] for name in param_names]
                    )
                    grads = dict(zip(param_names, grad_list))
                for name, grad in grads.items():
                    if not np.isfinite(grad).all():
                        raise TrainingDivergedError(
                            epoch, batch_index, f"non-finite gradient for {name}"
                        )
                for name, param in model.params.items():
                    step = grads[name] + config.weight_decay * param.data
                    model.set_param(name, Tensor(param.data - lr * step))
                for name, param in model.params.items():
                    if np.abs(param.data).max() > 1e6:
                        raise TrainingDivergedError(
                            epoch, batch_index, f"parameter {name} magnitude exploded"
                        )
            except ValueError as exc:
                raise TrainingDivergedError(epoch, batch_index, str(exc)) from exc
            b = len(pos)
            sums["cls"] += float(cls.data) * b
            sums["con"] += con_value * b
            sums["total"] += float(objective.data) * b
            correct += int((predictions_from_scores(encoded.logits.data) == batch_labels).sum())
        test_eval = evaluate(model, test_values, test_labels)
        epoch_metrics = EpochMetrics(
            epoch=epoch,
            lr=lr,
            cls_loss=sums["cls"] / n,
            con_loss=sums["con"] / n,
            total_loss=sums["total"] / n,
            train_top1=correct / n,
            test_top1=test_eval.top1,
            test_top5=test_eval.top5,
        )
        metrics.append(epoch_metrics)
        if progress is not None:
            progress(epoch_metrics)
    final_eval = evaluate(model, test_values, test_labels)
    return TrainResult(
        model=model,
        config=config,
        metrics=tuple(metrics),
        test_scores=final_eval.scores,
        test_labels=test_labels,
    )


# --------------------------------------------------------------------------
# Gradient-check fixture
# --------------------------------------------------------------------------


def grad_check_fixture(
    seed: int = 0,
    frames: int = 4,
    channels: tuple[int, ...] = (6,),
    feature_dim: int = 16,
):
    """Compact full-objective closure for finite-difference validation.

    Returns ``(objective, params, names)``: a 4-clip batch over 2 classes
    with every body part active, so the objective covers the classifier,
    the global/synonym alignment terms, and all five part terms.
    ``objective(trial)`` installs the trial parameter list into the model
    and returns the scalar total loss.
    """
    from .synthetic import MotionPrimitive, SyntheticSignSpec, generate_sequence

    layout = default_layout()
    specs = []
    for c in range(2):
        rng = np.random.default_rng([int(seed), c, 424243])
        prims = {
            name: MotionPrimitive(
                amplitude=float(rng.uniform(0.25, 0.55)),
                frequency=float(rng.uniform(0.8, 2.4)),
                phase=float(rng.uniform(0.0, 2.0 * np.pi)),
                offset_x=float(rng.uniform(-0.35, 0.35)),
                offset_y=float(rng.uniform(-0.35, 0.35)),
            )
            for name in PART_NAMES
        }
        specs.append(
            SyntheticSignSpec(c, prims, active_parts=PART_NAMES, noise=0.05)
        )
    clips, labels = [], []
    for c, spec in enumerate(specs):
        for s in range(2):
            rng = np.random.default_rng([int(seed), c, s, 908209])
            phase = float(rng.uniform(0.0, 2.0 * np.pi))
            clips.append(generate_sequence(spec, layout, frames, phase, rng))
            labels.append(c)
    values = np.stack(clips, axis=0)
    labels = np.array(labels, dtype=np.int64)

    config = TrainConfig(
        num_classes=2,
        samples_per_class=2,
        frames=frames,
        channels=channels,
        feature_dim=feature_dim,
        batch_size=len(labels),
        epochs=1,
        warmup_epochs=1,
        decay_epochs=(),
        seed=seed,
    )
    model = SkeletonEncoder.create(
        layout,
        channels=channels,
        feature_dim=feature_dim,
        num_classes=2,
        seed=seed,
    )
    loss_config = ContrastiveConfig(temperature=config.temperature, alpha=config.alpha)
    from .synthetic import build_description_set

    bank = _TextBank(build_description_set(specs, config.synonym_count, seed=seed), config)
    encoder = TextEncoder(dim=feature_dim, seed=config.text_seed)
    label_list = [int(c) for c in labels]
    positions = list(range(len(label_list)))
    # text features are constants; encode them once, outside any tape
    text_global = encoder.encode_matrix([bank.refined_text(c) for c in label_list])
    text_synonym = encoder.encode_matrix(
        [bank.synonym_text(c, p) for c, p in zip(label_list, positions)]
    )
    text_parts = {
        part: encoder.encode_matrix(
            [bank.part_text(part, c, p) for c, p in zip(label_list, positions)]
        )
        for part in PART_NAMES
    }

    names = sorted(model.params)
    params = [model.params[name] for name in names]

    def objective(trial):
        for name, tensor in zip(names, trial):
            model.set_param(name, tensor)
        encoded = model.encode_batch(values, with_parts=True)
        cls = classify_loss(encoded.logits, labels)
        global_pairing = BatchPairing(
            encoded.global_feature, text_global, label_list, label_list
        )
        synonym_pairing = BatchPairing(
            encoded.global_feature, text_synonym, label_list, label_list
        )
        part_pairings = {
            part: BatchPairing(
                encoded.part_features[part], text_parts[part], label_list, label_list
            )
            for part in PART_NAMES
        }
        con = multipart_loss(global_pairing, synonym_pairing, part_pairings, loss_config)
        return total_loss(cls, con, loss_config)

    return objective, params, names


# --------------------------------------------------------------------------
# Ablation
# --------------------------------------------------------------------------

# (row name, use_global_texts, use_synonym_texts, use_part_texts)
ABLATION_VARIANTS = (
    ("baseline", False, False, False),
    ("+synonym", False, True, False),
    ("+prompt", True, False, False),
    ("+multipart", False, False, True),
    ("all", True, True, True),
)


@dataclass(frozen=True)
class AblationRow:
    name: str
    use_global_texts: bool
    use_synonym_texts: bool
    use_part_texts: bool
    cls_loss: float
    con_loss: float
    total_loss: float
    test_top1: float
    test_top5: float


def run_ablation(
    config: TrainConfig,
    dataset=None,
    descriptions: Sequence[DescriptionRecord] | None = None,
    progress: Callable[[str, EpochMetrics], None] | None = None,
) -> list[AblationRow]:
    """Train each text-supervision variant on one shared dataset."""
    specs = None
    if dataset is None or descriptions is None:
        specs = default_sign_specs(config.num_classes, seed=config.seed, noise=config.noise)
    if dataset is None:
        dataset = generate_dataset(
            specs, config.samples_per_class, config.frames, seed=config.seed
        )
    if descriptions is None:
        descriptions = build_description_set(specs, config.synonym_count, seed=config.seed)
    rows = []
    for name, use_global, use_synonym, use_parts in ABLATION_VARIANTS:
        variant = dataclasses.replace(
            config,
            use_global_texts=use_global,
            use_synonym_texts=use_synonym,
            use_part_texts=use_parts,
        )
        hook = (lambda m, _name=name: progress(_name, m)) if progress is not None else None
        result = train(variant, dataset=dataset, descriptions=descriptions, progress=hook)
        final = result.final
        rows.append(
            AblationRow(
                name=name,
                use_global_texts=use_global,
                use_synonym_texts=use_synonym,
                use_part_texts=use_parts,
                cls_loss=final.cls_loss,
                con_loss=final.con_loss,
                total_loss=final.total_loss,
                test_top1=final.test_top1,
                test_top5=final.test_top5,
            )
        )
    return rows


# --------------------------------------------------------------------------
# Model persistence
# --------------------------------------------------------------------------


def _layout_doc(layout: SkeletonLayout) -> dict:
    parts = {}
    for name, idx in layout.parts.items():
        lo, hi = idx[0], idx[-1]
        if tuple(idx) != tuple(range(lo, hi + 1)):
            raise ValueError(f"part {name!r} is not a contiguous joint range")
        parts[name] = [int(lo), int(hi) + 1]
    return {"parts": parts, "edges": [[int(i), int(j)] for i, j in layout.edges]}


def _layout_from_doc(doc: Mapping) -> SkeletonLayout:
    ranges = doc["parts"]
    missing = [name for name in PART_NAMES if name not in ranges]
    if missing:
        raise ValueError(f"saved layout lacks parts: {missing}")
    # rebuild in canonical part order regardless of JSON key order
    parts = {name: tuple(range(*ranges[name])) for name in PART_NAMES}
    edges = tuple((int(i), int(j)) for i, j in doc["edges"])
    return SkeletonLayout(parts=parts, edges=edges)


def save_model(model: SkeletonEncoder, config: TrainConfig, path) -> None:
    """Versioned binary blob: parameters plus JSON meta with a config hash."""
    meta = {
        "format_version": MODEL_FORMAT_VERSION,
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "channels": list(model.channels),
        "feature_dim": model.feature_dim,
        "num_classes": model.num_classes,
        "layout": _layout_doc(model.layout),
    }
    arrays = {f"param/{name}": t.data for name, t in model.params.items()}
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path) -> tuple[SkeletonEncoder, TrainConfig]:
    """Load a saved model; rejects unknown versions and hash mismatches."""
    with np.load(path) as blob:
        if "meta" not in blob:
            raise ValueError("not a saved model: missing meta entry")
        meta = json.loads(bytes(blob["meta"].tobytes()).decode("utf-8"))
        version = meta.get("format_version")
        if version != MODEL_FORMAT_VERSION:
            raise ValueError(
                f"unsupported model format version {version!r} "
                f"(this build reads version {MODEL_FORMAT_VERSION})"
            )
        config = TrainConfig.from_dict(meta["config"])
        if config.config_hash() != meta["config_hash"]:
            raise ValueError("config hash mismatch: model meta was altered")
        params = {
            key[len("param/") :]: Tensor(blob[key])
            for key in blob.files
            if key.startswith("param/")
        }
    layout = _layout_from_doc(meta["layout"])
    model = SkeletonEncoder(
        layout,
        params,
        channels=tuple(meta["channels"]),
        feature_dim=meta["feature_dim"],
        num_classes=meta["num_classes"],
    )
    expected = SkeletonEncoder.create(
        layout,
        channels=model.channels,
        feature_dim=model.feature_dim,
        num_classes=model.num_classes,
    ).params.keys()
    if set(params) != set(expected):
        raise ValueError("saved parameter set does not match the architecture")
    return model, config
