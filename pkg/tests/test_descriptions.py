"""Description pipeline: KB retrieval, backends, refinement, part tagging."""

from __future__ import annotations

import json

import pytest

from signalign import descriptions as dd


# ---------------------------------------------------------------------------
# Records and corpus types
# ---------------------------------------------------------------------------


def test_sign_entry_validation():
    e = dd.SignEntry(3, "  push ")
    assert e.gloss == "push"
    with pytest.raises(ValueError):
        dd.SignEntry(-1, "push")
    with pytest.raises(ValueError):
        dd.SignEntry(0, "   ")


def test_record_kind_and_parts_rules():
    ok = dd.DescriptionRecord(0, "part", "tap the palm", parts=("right_hand",))
    assert ok.parts == ("right_hand",)
    with pytest.raises(ValueError):
        dd.DescriptionRecord(0, "primary", "x", parts=("right_hand",))
    with pytest.raises(ValueError):
        dd.DescriptionRecord(0, "part", "x", parts=())
    with pytest.raises(ValueError):
        dd.DescriptionRecord(0, "poem", "x")
    with pytest.raises(ValueError):
        dd.DescriptionRecord(0, "primary", "   ")
    with pytest.raises(ValueError):
        dd.DescriptionRecord(0, "part", "x", parts=("elbow",))


def test_record_parts_are_canonically_ordered():
    rec = dd.DescriptionRecord(0, "part", "x", parts=("face", "body", "right_hand"))
    assert rec.parts == ("body", "right_hand", "face")


def test_record_id_format():
    rec = dd.DescriptionRecord(4, "synonym", "lift the arm", index=2)
    assert rec.record_id == "4:synonym:2"


# ---------------------------------------------------------------------------
# Knowledge base + retrieval
# ---------------------------------------------------------------------------


def test_kb_lookup_folds_keys():
    kb = dd.KnowledgeBase([("Manual Sign Q", "some text"), ("love", "other")])
    assert kb.lookup("manual sign q") == "some text"
    assert kb.lookup("MANUAL, sign: Q!") == "some text"
    assert kb.lookup("absent") is None


def test_kb_rejects_duplicate_folded_keys():
    with pytest.raises(ValueError):
        dd.KnowledgeBase([("love", "a"), ("LOVE!", "b")])


def test_kb_round_trip(tmp_path):
    kb = dd.default_knowledge_base()
    path = tmp_path / "kb.jsonl"
    kb.save(path)
    back = dd.KnowledgeBase.load(path)
    assert back.passages == kb.passages


def test_kb_load_rejects_malformed(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"key": "love"}\n')
    with pytest.raises(ValueError):
        dd.KnowledgeBase.load(path)


def test_default_kb_has_fixture_passages():
    kb = dd.default_knowledge_base()
    assert len(kb) >= 20
    love = kb.lookup("love")
    assert love is not None and love.startswith("Gently caress the back of the thumb")
    q = kb.lookup("manual sign Q")
    assert q is not None and q.startswith("One hand with the right thumb down")


def test_retrieve_exact_key_scores_highest():
    kb = dd.default_knowledge_base()
    hits = dd.retrieve("push", kb, 3)
    assert hits and hits[0][0].key == "push"
    assert 0.0 < hits[0][1] <= 1.0


def test_retrieve_zero_overlap_is_empty():
    kb = dd.KnowledgeBase([("alpha", "beta gamma"), ("delta", "epsilon zeta")])
    assert dd.retrieve("omicron sigma", kb, 5) == []
    assert dd.retrieve("...", kb, 5) == []


def test_retrieve_matches_brute_force_jaccard():
    kb = dd.KnowledgeBase(
        [
            ("push", "move palm forward"),
            ("pull", "draw fist back"),
            ("wave", "move palm side to side"),
            ("lift", "raise the palm up"),
        ]
    )
    query = "move the palm"
    q = set(dd.fold_tokens(query))
    want = []
    for i, p in enumerate(kb.passages):
        toks = set(dd.fold_tokens(p.key) + dd.fold_tokens(p.text))
        score = len(q & toks) / len(q | toks)
        if score > 0:
            want.append((i, score))
    want.sort(key=lambda t: (-t[1], t[0]))
    got = dd.retrieve(query, kb, 4)
    assert [kb.passages.index(p) for p, _ in got] == [i for i, _ in want]
    for (_, gs), (_, ws) in zip(got, want):
        assert abs(gs - ws) < 1e-12


def test_retrieve_tie_break_by_insertion_order():
    kb = dd.KnowledgeBase([("a", "palm move"), ("b", "palm move extra"), ("c", "palm move")])
    hits = dd.retrieve("palm move", kb, 3)
    assert [p.key for p, _ in hits] == ["a", "c", "b"]


def test_retrieve_k_validation():
    kb = dd.default_knowledge_base()
    with pytest.raises(ValueError):
        dd.retrieve("push", kb, 0)
    assert len(dd.retrieve("push", kb, 1)) == 1


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------


def test_templates_fill_slots():
    text = dd.TEMPLATES["P1"].fill(sign_name="push", passages="p1 p2")
    assert "push" in text and "p1 p2" in text
    assert "{" not in text


def test_template_missing_slot():
    with pytest.raises(ValueError):
        dd.TEMPLATES["P2"].fill(count=2)  # text missing


def test_all_four_templates_exist():
    assert set(dd.TEMPLATES) == {"P1", "P2", "P3", "P4"}
    for tid, tpl in dd.TEMPLATES.items():
        assert tpl.template_id == tid


# ---------------------------------------------------------------------------
# Reference resolution and filtering
# ---------------------------------------------------------------------------


def test_resolve_quoted_sign_reference():
    kb = dd.default_knowledge_base()
    out, warns = dd.resolve_references("Make the sign for 'love'.", kb)
    assert "Gently caress the back of the thumb" in out
    assert "sign for" not in out
    assert warns == ()


def test_resolve_manual_alphabet_reference():
    kb = dd.default_knowledge_base()
    out, warns = dd.resolve_references('One hand forms the manual sign "Q", held at the nose.', kb)
    assert "right thumb down" in out
    assert warns == ()


def test_resolve_unknown_reference_kept_with_warning():
    kb = dd.default_knowledge_base()
    text = "Form the sign for 'zephyr' twice."
    out, warns = dd.resolve_references(text, kb)
    assert out == text
    assert len(warns) == 1 and "zephyr" in warns[0]


def test_resolve_mixed_known_unknown():
    kb = dd.default_knowledge_base()
    out, warns = dd.resolve_references(
        "Make the sign for 'love'. Then form the manual sign 'Z'.", kb
    )
    assert "Gently caress" in out
    assert "manual sign 'Z'" in out
    assert len(warns) == 1


def test_resolve_is_fixpoint_on_resolved_text():
    kb = dd.default_knowledge_base()
    once, _ = dd.resolve_references("Make the sign for 'love'.", kb)
    twice, warns = dd.resolve_references(once, kb)
    assert twice == once
    assert warns == ()


def test_resolve_reference_free_text_unchanged():
    kb = dd.default_knowledge_base()
    text = "Lift both palms and smile."
    out, warns = dd.resolve_references(text, kb)
    assert out == text and warns == ()


def test_strip_non_action_drops_flagged_sentences():
    text = "'One' is homophonous with 'idea'. Extend the index finger upward."
    assert dd.strip_non_action(text) == "Extend the index finger upward."
    text2 = "Tip the head forward. This motion represents agreement."
    assert dd.strip_non_action(text2) == "Tip the head forward."


def test_strip_non_action_keeps_clean_text():
    text = "Raise the left hand. Part the lips."
    assert dd.strip_non_action(text) == text


def test_strip_non_action_can_empty_out():
    assert dd.strip_non_action("'A' is homophonous with 'B'.") == ""


def test_split_clauses_sentences_and_markers():
    text = "(1) Raise the hand, palm out. (2) Circle it twice. Then stop."
    assert dd.split_clauses(text) == [
        "Raise the hand, palm out.",
        "Circle it twice.",
        "Then stop.",
    ]
    assert dd.split_clauses("   ") == []


# ---------------------------------------------------------------------------
# Lexicon tagging
# ---------------------------------------------------------------------------


def test_lexicon_one_hand_defaults_to_right():
    assert dd.lexicon_parts("extend your index finger with one hand") == ("right_hand",)


def test_lexicon_sided_hands():
    assert dd.lexicon_parts("curl the left thumb inward") == ("left_hand",)
    assert dd.lexicon_parts("the right palm turns up") == ("right_hand",)
    assert dd.lexicon_parts("press both palms together") == ("left_hand", "right_hand")
    assert dd.lexicon_parts("the hands fall slowly") == ("left_hand", "right_hand")


def test_lexicon_multi_part_clause():
    assert dd.lexicon_parts("puff the cheeks while the thumb taps twice") == (
        "right_hand",
        "face",
    )


def test_lexicon_mouth_face_body():
    assert dd.lexicon_parts("press the tongue against the teeth") == ("mouth",)
    assert dd.lexicon_parts("raise both eyebrows") == ("face",)
    assert dd.lexicon_parts("lean the torso forward") == ("body",)


def test_lexicon_untagged_clause_is_empty():
    assert dd.lexicon_parts("hold still for a moment") == ()


def test_parse_tagged_lines():
    text = "right_hand: tap twice\nbody,face: lean in and squint"
    got = dd.parse_tagged_lines(text)
    assert got == [(("right_hand",), "tap twice"), (("body", "face"), "lean in and squint")]
    with pytest.raises(dd.PipelineError):
        dd.parse_tagged_lines("no separator line")
    with pytest.raises(dd.PipelineError):
        dd.parse_tagged_lines("elbow: tap twice")


# ---------------------------------------------------------------------------
# Mock backend + stages
# ---------------------------------------------------------------------------


def test_mock_primary_echoes_passages():
    kb = dd.default_knowledge_base()
    rec = dd.generate_primary(dd.SignEntry(0, "push"), kb, dd.MockBackend(0))
    assert rec.kind == "primary"
    assert "Push the palm forward" in rec.text
    assert rec.source == "mock"


def test_mock_primary_fallback_without_hits():
    kb = dd.KnowledgeBase([("alpha", "beta gamma")])
    rec = dd.generate_primary(dd.SignEntry(0, "zulu"), kb, dd.MockBackend(0))
    assert "zulu" in rec.text


def test_mock_synonyms_distinct_and_counted():
    entry = dd.SignEntry(1, "push")
    primary = dd.DescriptionRecord(1, "primary", "The palm pushes forward from the chest.")
    recs = dd.generate_synonyms(entry, primary, dd.MockBackend(0), count=3)
    assert len(recs) == 3
    texts = [r.text for r in recs]
    assert len(set(texts)) == 3
    assert all(t != primary.text for t in texts)
    assert [r.index for r in recs] == [0, 1, 2]
    # the phrase-substitution table rewrites this canonical example
    assert any("arm extends with palm facing outward" in t for t in texts)


def test_mock_synonym_seed_rotates_frames():
    entry = dd.SignEntry(1, "push")
    primary = dd.DescriptionRecord(1, "primary", "Hold the pose.")
    a = [r.text for r in dd.generate_synonyms(entry, primary, dd.MockBackend(0), count=2)]
    b = [r.text for r in dd.generate_synonyms(entry, primary, dd.MockBackend(1), count=2)]
    assert a != b


def test_synonym_identical_variant_rejected():
    class EchoBackend:
        name = "echo"

        def complete(self, template_id, filled_prompt, context):
            return context["base_text"]

    entry = dd.SignEntry(0, "push")
    primary = dd.DescriptionRecord(0, "primary", "Lift the arm.")
    with pytest.raises(dd.PipelineError) as err:
        dd.generate_synonyms(entry, primary, EchoBackend(), count=1)
    assert err.value.stage == "synonym"


def test_refine_fixture_and_warning_propagation():
    kb = dd.default_knowledge_base()
    primary = dd.DescriptionRecord(0, "primary", "Make the sign for 'love'.", source="expert")
    rec, warns = dd.refine(primary, kb, dd.MockBackend(0))
    assert rec.kind == "refined"
    assert "Gently caress the back of the thumb" in rec.text
    assert warns == ()
    primary2 = dd.DescriptionRecord(0, "primary", "Form the sign for 'zephyr'.", source="expert")
    rec2, warns2 = dd.refine(primary2, kb, dd.MockBackend(0))
    assert "zephyr" in rec2.text
    assert len(warns2) == 1


def test_refine_everything_filtered_raises():
    kb = dd.default_knowledge_base()
    primary = dd.DescriptionRecord(0, "primary", "'One' is homophonous with 'idea'.")
    with pytest.raises(dd.PipelineError) as err:
        dd.refine(primary, kb, dd.MockBackend(0))
    assert err.value.stage == "refine"


def test_decompose_requires_refined_record():
    rec = dd.DescriptionRecord(0, "primary", "Lift the arm.")
    with pytest.raises(dd.PipelineError):
        dd.decompose_parts(rec, dd.MockBackend(0))


def test_decompose_tags_clauses():
    ref = dd.DescriptionRecord(
        0,
        "refined",
        "Raise the left hand and spread the fingers. Part the lips slightly.",
    )
    recs = dd.decompose_parts(ref, dd.MockBackend(0))
    assert [r.parts for r in recs] == [("left_hand",), ("mouth",)]
    assert all(r.kind == "part" for r in recs)


def test_decompose_drops_untaggable_clauses():
    ref = dd.DescriptionRecord(0, "refined", "Hold still. Tap the palm twice.")
    recs = dd.decompose_parts(ref, dd.MockBackend(0))
    assert len(recs) == 1
    assert recs[0].text == "Tap the palm twice."


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------


def small_corpus():
    return [dd.SignEntry(0, "push"), dd.SignEntry(1, "rain"), dd.SignEntry(2, "quiet")]


def test_run_pipeline_completeness():
    result = dd.run_pipeline(small_corpus(), dd.default_knowledge_base(), dd.MockBackend(0))
    for entry in small_corpus():
        for kind in dd.KINDS:
            assert result.by_kind(entry.class_id, kind), (entry.class_id, kind)
    for rec in result.records:
        assert (rec.kind == "part") == bool(rec.parts)


def test_run_pipeline_rerun_is_byte_identical(tmp_path):
    kb = dd.default_knowledge_base()
    p1 = tmp_path / "a.jsonl"
    p2 = tmp_path / "b.jsonl"
    dd.run_pipeline(small_corpus(), kb, dd.MockBackend(3), out_path=p1)
    dd.run_pipeline(small_corpus(), kb, dd.MockBackend(3), out_path=p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_run_pipeline_round_trip(tmp_path):
    kb = dd.default_knowledge_base()
    path = tmp_path / "records.jsonl"
    result = dd.run_pipeline(small_corpus(), kb, dd.MockBackend(0), out_path=path)
    back = dd.load_records(path)
    assert [(r.class_id, r.kind, r.text, r.parts, r.index) for r in back] == [
        (r.class_id, r.kind, r.text, r.parts, r.index) for r in result.records
    ]


def test_run_pipeline_duplicate_ids_rejected():
    with pytest.raises(dd.PipelineError):
        dd.run_pipeline(
            [dd.SignEntry(0, "push"), dd.SignEntry(0, "pull")],
            dd.default_knowledge_base(),
            dd.MockBackend(0),
        )


def test_run_pipeline_untaggable_sign_fails_completeness():
    kb = dd.KnowledgeBase([("drift", "Wait calmly. Stay put.")])
    with pytest.raises(dd.PipelineError) as err:
        dd.run_pipeline([dd.SignEntry(0, "drift")], kb, dd.MockBackend(0))
    assert err.value.stage == "complete"


def test_run_pipeline_collects_warnings():
    kb = dd.KnowledgeBase(
        [("ghost", "Make the sign for 'banshee' with a flat hand, then lower the palm.")]
    )
    result = dd.run_pipeline([dd.SignEntry(0, "ghost")], kb, dd.MockBackend(0))
    assert any("banshee" in w for w in result.warnings)


def test_load_records_rejects_malformed(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"class_id": 0, "kind": "primary"}\n')
    with pytest.raises(ValueError):
        dd.load_records(path)


# ---------------------------------------------------------------------------
# HTTP backend (transport injected; no network in tests)
# ---------------------------------------------------------------------------


class FakeResponse:
    def __init__(self, status_code=200, body=None, raise_json=False):
        self.status_code = status_code
        self._body = body
        self._raise_json = raise_json

    def json(self):
        if self._raise_json:
            raise ValueError("not json")
        return self._body


class FakeSession:
    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.requests = []

    def post(self, url, json=None, timeout=None):
        self.requests.append({"url": url, "json": json, "timeout": timeout})
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


def test_http_backend_posts_wire_format():
    session = FakeSession([FakeResponse(body={"text": "Lift the arm."})])
    backend = dd.HttpBackend("http://unit.test/generate", timeout=4.5, session=session)
    out = backend.complete("P1", "prompt body", {})
    assert out == "Lift the arm."
    sent = session.requests[0]
    assert sent["url"] == "http://unit.test/generate"
    assert sent["json"] == {"template_id": "P1", "filled_prompt": "prompt body"}
    assert sent["timeout"] == 4.5


def test_http_backend_retries_then_succeeds():
    session = FakeSession(
        [
            ConnectionError("boom"),
            FakeResponse(status_code=500, body={"text": "x"}),
            FakeResponse(body={"text": "Recovered."}),
        ]
    )
    backend = dd.HttpBackend("http://unit.test", retries=2, session=session)
    assert backend.complete("P2", "p", {}) == "Recovered."
    assert len(session.requests) == 3


def test_http_backend_exhausts_retries():
    session = FakeSession([FakeResponse(raise_json=True), FakeResponse(body={"no_text": 1})])
    backend = dd.HttpBackend("http://unit.test", retries=1, session=session)
    with pytest.raises(dd.BackendError):
        backend.complete("P3", "p", {})


def test_http_backend_rejects_empty_text():
    session = FakeSession([FakeResponse(body={"text": "   "})])
    backend = dd.HttpBackend("http://unit.test", retries=0, session=session)
    with pytest.raises(dd.BackendError):
        backend.complete("P1", "p", {})


def test_http_failure_surfaces_as_stage_error():
    session = FakeSession([ConnectionError("down")])
    backend = dd.HttpBackend("http://unit.test", retries=0, session=session)
    with pytest.raises(dd.PipelineError) as err:
        dd.generate_primary(dd.SignEntry(0, "push"), dd.default_knowledge_base(), backend)
    assert err.value.stage == "primary"


def test_http_backend_requires_url():
    with pytest.raises(ValueError):
        dd.HttpBackend("")
