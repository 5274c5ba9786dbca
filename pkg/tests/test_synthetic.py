"""Tests for the synthetic corpus generator and its description bridge."""

import numpy as np
import pytest

import signalign.synthetic as syn
from signalign.descriptions import KINDS, lexicon_parts, run_pipeline, MockBackend
from signalign.skeleton import PART_NAMES, default_layout


def small_specs(num_classes=3, noise=0.05, seed=0):
    return syn.default_sign_specs(num_classes, seed=seed, noise=noise)


# --------------------------------------------------------------------------
# Spec construction and validation
# --------------------------------------------------------------------------


def test_default_specs_count_and_ids():
    specs = small_specs(7)
    assert [s.class_id for s in specs] == list(range(7))
    for s in specs:
        assert set(s.primitives) == set(PART_NAMES)
        assert 1 <= len(s.active_parts) <= 3
        assert s.noise == 0.05


def test_default_specs_deterministic():
    a = small_specs(5, seed=3)
    b = small_specs(5, seed=3)
    assert a == b
    c = small_specs(5, seed=4)
    assert a != c


def test_active_parts_follow_canonical_order():
    for s in small_specs(10):
        order = [PART_NAMES.index(p) for p in s.active_parts]
        assert order == sorted(order)


def test_identical_classes_rejected():
    a, b = small_specs(2)
    clone = syn.SyntheticSignSpec(
        class_id=1, primitives=a.primitives, active_parts=a.active_parts, noise=a.noise
    )
    with pytest.raises(ValueError, match="identical motion"):
        syn._check_distinct([a, clone])


def test_spec_validation_errors():
    prim = syn.MotionPrimitive(0.3, 1.0, 0.0, 0.0, 0.0)
    prims = {name: prim for name in PART_NAMES}
    with pytest.raises(ValueError, match="cover every part"):
        syn.SyntheticSignSpec(0, {"body": prim}, ("body",), 0.0)
    with pytest.raises(ValueError, match="at least one part"):
        syn.SyntheticSignSpec(0, prims, (), 0.0)
    with pytest.raises(ValueError, match="noise"):
        syn.SyntheticSignSpec(0, prims, ("body",), -0.1)
    with pytest.raises(ValueError, match="frequency"):
        syn.MotionPrimitive(0.3, 0.0, 0.0, 0.0, 0.0)


# --------------------------------------------------------------------------
# Sequence generation
# --------------------------------------------------------------------------


def test_rest_positions_distinct_per_joint():
    layout = default_layout()
    pos = syn.rest_positions(layout)
    assert pos.shape == (87, 2)
    # joints of the same part must not collapse onto one point
    for name, idx in layout.parts.items():
        coords = {(round(pos[j, 0], 9), round(pos[j, 1], 9)) for j in idx}
        assert len(coords) == len(idx)


def test_sequence_shape_and_confidence_range():
    layout = default_layout()
    spec = small_specs(2, noise=0.08)[0]
    vals = syn.generate_sequence(spec, layout, 16, 0.0, np.random.default_rng(0))
    assert vals.shape == (3, 87, 16)
    assert np.isfinite(vals).all()
    assert vals[2].min() >= 0.0 and vals[2].max() <= 1.0


def test_noise_free_sequence_is_exact():
    layout = default_layout()
    spec = small_specs(2, noise=0.0)[0]
    vals = syn.generate_sequence(spec, layout, 12, 0.3, np.random.default_rng(0))
    assert np.all(vals[2] == 1.0)
    rest = syn.rest_positions(layout)
    inactive = [p for p in PART_NAMES if p not in spec.active_parts]
    assert inactive, "fixture should have at least one still part"
    for name in inactive:
        for j in layout.parts[name]:
            assert np.all(vals[0, j] == rest[j, 0])
            assert np.all(vals[1, j] == rest[j, 1])
    # active joints actually move
    moving = layout.parts[spec.active_parts[0]]
    assert np.ptp(vals[0, moving[0]]) > 0.01


def test_sequence_min_frames():
    layout = default_layout()
    spec = small_specs(2)[0]
    with pytest.raises(ValueError, match="frames"):
        syn.generate_sequence(spec, layout, 1, 0.0, np.random.default_rng(0))


def test_amplitude_change_touches_only_that_part():
    """Two specs differing only in one part's amplitude give clips that
    differ only on that part's joint rows (and only in x, y)."""
    layout = default_layout()
    base = small_specs(2, noise=0.05)[0]
    if "left_hand" not in base.active_parts:
        prims = dict(base.primitives)
        base = syn.SyntheticSignSpec(
            base.class_id, prims, tuple(base.active_parts) + ("left_hand",), base.noise
        )
    bumped_prims = dict(base.primitives)
    lh = bumped_prims["left_hand"]
    bumped_prims["left_hand"] = syn.MotionPrimitive(
        lh.amplitude + 0.2, lh.frequency, lh.phase, lh.offset_x, lh.offset_y
    )
    bumped = syn.SyntheticSignSpec(base.class_id, bumped_prims, base.active_parts, base.noise)

    split_a = syn.generate_dataset([base], samples_per_class=4, frames=10, seed=5)
    split_b = syn.generate_dataset([bumped], samples_per_class=4, frames=10, seed=5)
    lh_rows = set(layout.parts["left_hand"])
    for sa, sb in zip(split_a.train + split_a.test, split_b.train + split_b.test):
        diff = sa.values != sb.values
        assert np.array_equal(sa.values[2], sb.values[2])  # confidence untouched
        changed_rows = {int(j) for j in np.argwhere(diff.any(axis=(0, 2)))[:, 0]}
        assert changed_rows == lh_rows
        assert diff.any(), "amplitude bump must change the data"


# --------------------------------------------------------------------------
# Dataset assembly
# --------------------------------------------------------------------------


def test_dataset_split_sizes_and_labels():
    specs = small_specs(10)
    split = syn.generate_dataset(specs, samples_per_class=20, frames=8, seed=0)
    assert len(split.train) == 160
    assert len(split.test) == 40
    assert split.num_classes == 10
    train_labels = [s.label for s in split.train]
    test_labels = [s.label for s in split.test]
    for c in range(10):
        assert train_labels.count(c) == 16
        assert test_labels.count(c) == 4


def test_dataset_reruns_bit_identical():
    specs = small_specs(4)
    a = syn.generate_dataset(specs, samples_per_class=6, frames=8, seed=9)
    b = syn.generate_dataset(specs, samples_per_class=6, frames=8, seed=9)
    for sa, sb in zip(a.train + a.test, b.train + b.test):
        assert np.array_equal(sa.values, sb.values)
        assert sa.label == sb.label
    c = syn.generate_dataset(specs, samples_per_class=6, frames=8, seed=10)
    assert any(
        not np.array_equal(sa.values, sc.values) for sa, sc in zip(a.train, c.train)
    )


def test_dataset_validates_inputs():
    specs = small_specs(3)
    with pytest.raises(ValueError, match="train_fraction"):
        syn.generate_dataset(specs, samples_per_class=10, train_fraction=1.0)
    with pytest.raises(ValueError, match="empty side"):
        syn.generate_dataset(specs, samples_per_class=2, train_fraction=0.9)
    with pytest.raises(ValueError, match="no sign specs"):
        syn.generate_dataset([], samples_per_class=10)


def test_values_array_stacks():
    specs = small_specs(2)
    split = syn.generate_dataset(specs, samples_per_class=4, frames=6, seed=0)
    arr = syn.values_array(split.train)
    assert arr.shape == (len(split.train), 3, 87, 6)
    assert np.array_equal(arr[0], split.train[0].values)
    with pytest.raises(ValueError):
        syn.values_array([])


def test_train_test_phases_disjoint():
    """With noise off, a test clip never bit-matches any train clip."""
    specs = [
        syn.SyntheticSignSpec(s.class_id, s.primitives, s.active_parts, 0.0)
        for s in small_specs(2)
    ]
    split = syn.generate_dataset(specs, samples_per_class=10, frames=8, seed=1)
    train_bytes = {s.values.tobytes() for s in split.train}
    for s in split.test:
        assert s.values.tobytes() not in train_bytes


# --------------------------------------------------------------------------
# Glosses, corpus, and description bridge
# --------------------------------------------------------------------------


def test_glosses_unique_and_single_token():
    names = [syn.gloss_for(c) for c in range(60)]
    assert len(set(names)) == 60
    from signalign.text_encoder import fold_tokens

    for name in names:
        assert fold_tokens(name) == [name]


def test_corpus_entries_and_passages():
    specs = small_specs(6)
    entries, kb = syn.build_sign_corpus(specs)
    assert [e.class_id for e in entries] == list(range(6))
    assert len(kb) == 6
    for spec, entry in zip(specs, entries):
        passage = kb.lookup(entry.gloss)
        assert passage is not None
        # every sentence of the passage tags exactly one of the active parts
        sentences = [s.strip() for s in passage.split(".") if s.strip()]
        tagged = [lexicon_parts(s) for s in sentences]
        assert all(len(t) == 1 for t in tagged)
        assert {t[0] for t in tagged} == set(spec.active_parts)


def test_retrieval_hits_own_passage_only():
    from signalign.descriptions import retrieve

    specs = small_specs(8)
    entries, kb = syn.build_sign_corpus(specs)
    for entry in entries:
        hits = retrieve(entry.gloss, kb, k=3)
        assert len(hits) == 1
        assert hits[0][0].key == entry.gloss


def test_description_set_complete_and_tagged():
    specs = small_specs(5)
    records = syn.build_description_set(specs, synonym_count=2, seed=0)
    for spec in specs:
        by_kind = {k: [r for r in records if r.class_id == spec.class_id and r.kind == k] for k in KINDS}
        assert len(by_kind["primary"]) == 1
        assert len(by_kind["synonym"]) == 2
        assert len(by_kind["refined"]) == 1
        assert by_kind["part"], "every class needs part records"
        tag_union = {p for r in by_kind["part"] for p in r.parts}
        assert tag_union == set(spec.active_parts)
        # primary text is the expert passage itself (echoed through retrieval)
        _, kb = syn.build_sign_corpus(specs)
        assert by_kind["primary"][0].text == kb.lookup(syn.gloss_for(spec.class_id))


def test_description_set_deterministic():
    specs = small_specs(4)
    a = syn.build_description_set(specs, seed=2)
    b = syn.build_description_set(specs, seed=2)
    assert a == b


def test_pipeline_emits_no_warnings_for_synthetic_corpus():
    specs = small_specs(6)
    entries, kb = syn.build_sign_corpus(specs)
    result = run_pipeline(entries, kb, MockBackend(0))
    assert result.warnings == ()
