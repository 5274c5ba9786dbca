"""Skeleton/text contrastive alignment for isolated sign recognition at desk scale.

The package trains a part-grouped graph-convolutional encoder over 87-joint
pose sequences against two objectives: a cross-entropy classifier and a
bidirectional multi-positive contrastive alignment to frozen text features of
generated sign descriptions.  Everything runs on a tape-based numpy autodiff
core, so the full gradient can be checked by finite differences, and every
stage (data synthesis, description generation, text encoding, training,
evaluation, reporting) is deterministic under a seed.

Top-level re-exports cover the common workflow; the modules themselves hold
the finer-grained pieces:

- :mod:`signalign.autodiff` — tensors, tapes, gradients, finite differences
- :mod:`signalign.skeleton` — layout, streams, graph encoder, classifier loss
- :mod:`signalign.text_encoder` — deterministic frozen text features
- :mod:`signalign.descriptions` — retrieval-grounded description pipeline
- :mod:`signalign.contrastive` — multi-positive alignment objectives
- :mod:`signalign.synthetic` — synthetic sign corpus and dataset
- :mod:`signalign.training` — config, training loop, evaluation, persistence
- :mod:`signalign.reporting` — CSV emitters and matplotlib figures
- :mod:`signalign.cli` — the ``signalign`` command-line entry point
"""

from signalign.autodiff import Tape, Tensor, finite_diff_errors
from signalign.contrastive import (
    BatchPairing,
    ContrastiveConfig,
    contrastive_loss,
    multipart_loss,
    total_loss,
)
from signalign.descriptions import (
    DescriptionRecord,
    KnowledgeBase,
    MockBackend,
    SignEntry,
    default_knowledge_base,
    run_pipeline,
)
from signalign.reporting import render_training_report
from signalign.skeleton import PART_NAMES, SkeletonEncoder, default_layout
from signalign.synthetic import build_description_set, default_sign_specs, generate_dataset
from signalign.text_encoder import TextEncoder
from signalign.training import (
    STREAMS,
    TrainConfig,
    evaluate,
    fuse_scores,
    load_model,
    run_ablation,
    save_model,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "Tensor",
    "Tape",
    "finite_diff_errors",
    "PART_NAMES",
    "SkeletonEncoder",
    "default_layout",
    "TextEncoder",
    "SignEntry",
    "DescriptionRecord",
    "KnowledgeBase",
    "default_knowledge_base",
    "MockBackend",
    "run_pipeline",
    "ContrastiveConfig",
    "BatchPairing",
    "contrastive_loss",
    "multipart_loss",
    "total_loss",
    "default_sign_specs",
    "generate_dataset",
    "build_description_set",
    "STREAMS",
    "TrainConfig",
    "train",
    "evaluate",
    "fuse_scores",
    "run_ablation",
    "save_model",
    "load_model",
    "render_training_report",
]
