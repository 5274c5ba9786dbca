"""Four-stage generation of sign-language descriptions.

Stage 1 drafts a primary description for a sign, grounded in passages
retrieved from an expert knowledge base.  Stage 2 rewrites it into
synonymous variants (no retrieval).  Stage 3 refines the primary text:
quoted sign names and manual-alphabet references are replaced by their
expert passages and non-action sentences are filtered out.  Stage 4
splits the refined text into clauses and tags each clause with the body
parts it moves.

Backends share one interface: ``complete(template_id, filled_prompt,
context) -> str``.  The mock backend is fully deterministic and runs the
tagging lexicon locally; the HTTP backend posts the filled prompt to a
text-generation service and is never contacted by the test suite.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import NamedTuple, Protocol, Sequence

from .skeleton import PART_NAMES
from .text_encoder import fold_tokens

__all__ = [
    "KINDS",
    "SignEntry",
    "DescriptionRecord",
    "Passage",
    "KnowledgeBase",
    "default_knowledge_base",
    "retrieve",
    "PromptTemplate",
    "TEMPLATES",
    "PipelineError",
    "BackendError",
    "MockBackend",
    "HttpBackend",
    "resolve_references",
    "strip_non_action",
    "split_clauses",
    "lexicon_parts",
    "parse_tagged_lines",
    "generate_primary",
    "generate_synonyms",
    "refine",
    "decompose_parts",
    "PipelineResult",
    "run_pipeline",
    "save_records",
    "load_records",
    "save_corpus",
    "load_corpus",
    "DEFAULT_FILTER_PHRASES",
    "DEFAULT_LEXICON",
]

KINDS = ("primary", "synonym", "refined", "part")


class PipelineError(RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, message: str) -> None:
        super().__init__(f"{stage}: {message}")
        self.stage = stage


class BackendError(RuntimeError):
    """The text-generation backend could not produce a response."""


@dataclass(frozen=True)
class SignEntry:
    """One sign class: numeric label plus its gloss (the sign's name)."""

    class_id: int
    gloss: str

    def __post_init__(self):
        if int(self.class_id) < 0:
            raise ValueError("class_id must be nonnegative")
        if not str(self.gloss).strip():
            raise ValueError("gloss must be non-empty")
        object.__setattr__(self, "class_id", int(self.class_id))
        object.__setattr__(self, "gloss", str(self.gloss).strip())


def _canonical_parts(parts) -> tuple[str, ...]:
    parts = tuple(parts)
    for p in parts:
        if p not in PART_NAMES:
            raise ValueError(f"unknown part {p!r}")
    if len(set(parts)) != len(parts):
        raise ValueError("duplicate part names")
    return tuple(p for p in PART_NAMES if p in parts)


@dataclass(frozen=True)
class DescriptionRecord:
    """One generated or expert text tied to a sign class.

    ``parts`` is non-empty exactly for kind ``part``; ``index`` orders
    records of the same (class, kind) and feeds ``record_id``.
    """

    class_id: int
    kind: str
    text: str
    parts: tuple[str, ...] = ()
    source: str = "mock"
    index: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not str(self.text).strip():
            raise ValueError("text must be non-empty")
        if int(self.class_id) < 0:
            raise ValueError("class_id must be nonnegative")
        if not str(self.source).strip():
            raise ValueError("source must be non-empty")
        canon = _canonical_parts(self.parts)
        if self.kind == "part" and not canon:
            raise ValueError("part records need at least one part tag")
        if self.kind != "part" and canon:
            raise ValueError(f"{self.kind} records must not carry part tags")
        object.__setattr__(self, "class_id", int(self.class_id))
        object.__setattr__(self, "text", str(self.text).strip())
        object.__setattr__(self, "parts", canon)
        object.__setattr__(self, "index", int(self.index))

    @property
    def record_id(self) -> str:
        return f"{self.class_id}:{self.kind}:{self.index}"


class Passage(NamedTuple):
    key: str
    text: str


def _norm_key(key: str) -> str:
    return " ".join(fold_tokens(key))


class KnowledgeBase:
    """Expert passages keyed by sign name; keys unique after folding."""

    def __init__(self, passages: Sequence[Passage | tuple[str, str]]) -> None:
        self.passages: list[Passage] = []
        self._by_key: dict[str, int] = {}
        self._token_sets: list[frozenset[str]] = []
        for item in passages:
            p = Passage(*item)
            if not p.key.strip() or not p.text.strip():
                raise ValueError("passage key and text must be non-empty")
            norm = _norm_key(p.key)
            if not norm:
                raise ValueError(f"passage key {p.key!r} folds to nothing")
            if norm in self._by_key:
                raise ValueError(f"duplicate passage key after folding: {p.key!r}")
            self._by_key[norm] = len(self.passages)
            self.passages.append(p)
            self._token_sets.append(frozenset(fold_tokens(p.key) + fold_tokens(p.text)))
        if not self.passages:
            raise ValueError("knowledge base must hold at least one passage")

    def __len__(self) -> int:
        return len(self.passages)

    def lookup(self, name: str) -> str | None:
        """Exact folded-key match; None when absent."""
        pos = self._by_key.get(_norm_key(name))
        return None if pos is None else self.passages[pos].text

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for p in self.passages:
                fh.write(json.dumps({"key": p.key, "text": p.text}, ensure_ascii=False, sort_keys=True))
                fh.write("\n")

    @classmethod
    def load(cls, path) -> "KnowledgeBase":
        passages = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    doc = json.loads(line)
                    passages.append(Passage(doc["key"], doc["text"]))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ValueError(f"malformed KB line {lineno}: {exc}") from exc
        return cls(passages)


def retrieve(query: str, kb: KnowledgeBase, k: int) -> list[tuple[Passage, float]]:
    """Top-k passages by Jaccard token overlap with the query.

    Zero-overlap passages are dropped; ties keep KB insertion order.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    q = frozenset(fold_tokens(query))
    if not q:
        return []
    scored = []
    for pos, toks in enumerate(kb._token_sets):
        inter = len(q & toks)
        if inter:
            scored.append((pos, inter / len(q | toks)))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return [(kb.passages[pos], score) for pos, score in scored[:k]]


# --------------------------------------------------------------------------
# Fixture knowledge base
# --------------------------------------------------------------------------

_LOVE_TEXT = (
    "Gently caress the back of the thumb with one hand, "
    'expressing a feeling of "tenderness".'
)
_MANUAL_Q_TEXT = (
    "One hand with the right thumb down, the index and middle fingers together "
    "on top, the thumb, index, and middle fingers pinched together, the "
    "fingertips pointing forward and slightly to the left, the ring and little "
    "fingers bent, the fingertips touching the palm."
)


def default_knowledge_base() -> KnowledgeBase:
    """Built-in expert passages, including the worked reference entries."""
    return KnowledgeBase(
        [
            ("love", _LOVE_TEXT),
            ("manual sign Q", _MANUAL_Q_TEXT),
            ("push", "Push the palm forward with the arm extended at chest height."),
            ("pull", "Draw the fist back toward the chest with the elbow bent."),
            ("teacher", "Tap the temple with the index finger, then move the hand outward with the fingers spread."),
            ("rain", "Lower both hands with the fingers spread, wiggling the fingers as they fall."),
            ("happy", "Brush the palm upward against the chest twice while the cheeks lift."),
            ("quiet", "Press the index finger against the lips, then lower both palms slowly."),
            ("eat", "Bring the pinched fingertips to the lips repeatedly."),
            ("drink", "Tilt a curved hand toward the mouth as if holding a cup."),
            ("see", "Point the index and middle fingers from the eyes outward."),
            ("listen", "Cup the hand behind the ear and lean the head slightly."),
            ("think", "Touch the forehead with the index finger, then circle it outward."),
            ("walk", "Alternate both palms downward in small forward steps."),
            ("run", "Hook the index fingers together and wiggle the thumbs while moving forward."),
            ("stop", "Chop the edge of one hand onto the open palm of the other."),
            ("book", "Press the palms together, then open them like covers."),
            ("house", "Slope both palms into a roof peak, then move them down along the walls."),
            ("morning", "Rest one arm in the crook of the other and raise the far palm like the sun."),
            ("night", "Arch one curved hand over the back of the other wrist."),
            ("friend", "Hook the index fingers together, then reverse the hook."),
            ("water", "Tap the chin with three extended fingers."),
            ("one", "'One' is homophonous with 'idea'. Extend the index finger upward with the palm facing in."),
            ("nod", "This motion represents agreement. Close the fist and bob it at the wrist."),
        ]
    )


# --------------------------------------------------------------------------
# Prompt templates
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PromptTemplate:
    """Named template with {slot} placeholders."""

    template_id: str
    text: str

    def fill(self, **slots) -> str:
        try:
            return self.text.format(**slots)
        except KeyError as exc:
            raise ValueError(f"template {self.template_id} missing slot {exc.args[0]!r}") from exc
        except IndexError as exc:
            raise ValueError(f"template {self.template_id} has positional slots") from exc


TEMPLATES = {
    "P1": PromptTemplate(
        "P1",
        "Reference passages about related signs: {passages}\n"
        "Using only movements, write one concise instruction for performing the "
        "sign named {sign_name}, covering body, hands, mouth, and face as needed.",
    ),
    "P2": PromptTemplate(
        "P2",
        "Rewrite the following sign instruction in {count} different ways, keeping "
        "the meaning unchanged. One rewrite per line.\nInstruction: {text}",
    ),
    "P3": PromptTemplate(
        "P3",
        "Rewrite this sign instruction so that every quoted sign name or "
        "manual-alphabet reference is replaced by its concrete movements, and "
        "drop any sentence that does not describe an action.\nInstruction: {text}",
    ),
    "P4": PromptTemplate(
        "P4",
        "Split this sign instruction into clauses and tag every clause with the "
        "body parts it moves, choosing from body, left_hand, right_hand, mouth, "
        "face. Answer one 'parts: clause' line per clause.\nInstruction: {text}",
    ),
}


# --------------------------------------------------------------------------
# Backends
# --------------------------------------------------------------------------


class Backend(Protocol):
    name: str

    def complete(self, template_id: str, filled_prompt: str, context: dict) -> str: ...


_SYNONYM_TABLE = (
    ("palm pushes forward", "arm extends with palm facing outward"),
    ("push the palm forward", "extend the arm with the palm facing outward"),
    ("raise", "lift"),
    ("rotate", "turn"),
    ("touch", "tap"),
    ("press", "push"),
    ("caress", "stroke"),
)

_SYNONYM_FRAMES = (
    "{}",
    "To perform it: {}",
    "The signer should proceed as follows: {}",
    "In this sign: {}",
    "Execution: {}",
)


def _apply_table(text: str) -> str:
    out = text
    for old, new in _SYNONYM_TABLE:
        pattern = re.compile(re.escape(old), re.IGNORECASE)
        out = pattern.sub(new, out)
    return out


class MockBackend:
    """Deterministic stand-in for a text-generation service.

    Primary answers echo the retrieved passages, synonym answers apply a
    phrase-substitution table plus sentence frames, refine answers pass
    the pipeline's resolved text through, and part answers tag the given
    clauses with the keyword lexicon.  The seed only permutes the order
    the synonym frames are tried in.
    """

    name = "mock"

    def __init__(self, seed: int = 0) -> None:
        self.seed = int(seed)
        # stride through the frame list; coprime with its length so each
        # seed yields a distinct frame permutation
        self._stride = (self.seed % (len(_SYNONYM_FRAMES) - 1)) + 1

    def complete(self, template_id: str, filled_prompt: str, context: dict) -> str:
        if template_id == "P1":
            passages = list(context.get("passages", ()))
            if passages:
                return " ".join(passages)
            gloss = context.get("gloss", "the sign")
            return f"Trace the motion for {gloss} with one hand at chest height."
        if template_id == "P2":
            return "\n".join(self._synonyms(context["base_text"], int(context["count"])))
        if template_id == "P3":
            return context["resolved_text"]
        if template_id == "P4":
            lexicon = context.get("lexicon", DEFAULT_LEXICON)
            lines = []
            for clause in context["clauses"]:
                parts = lexicon_parts(clause, lexicon)
                if parts:
                    lines.append(f"{','.join(parts)}: {clause}")
            return "\n".join(lines)
        raise BackendError(f"unknown template id {template_id!r}")

    def _synonyms(self, base: str, count: int) -> list[str]:
        if count < 1:
            raise BackendError("synonym count must be at least 1")
        out: list[str] = []
        applied = _apply_table(base)
        if applied != base:
            out.append(applied)
        i = 0
        while len(out) < count:
            if i < 3 * len(_SYNONYM_FRAMES):
                cand = _SYNONYM_FRAMES[(i * self._stride) % len(_SYNONYM_FRAMES)].format(applied)
            else:
                cand = f"Variant {len(out) + 1}: {applied}"
            if cand != base and cand not in out:
                out.append(cand)
            i += 1
        return out[:count]


class HttpBackend:
    """POSTs {template_id, filled_prompt} as JSON; expects {"text": ...} back.

    Retries transient failures (connection errors, non-200 statuses,
    malformed bodies) up to ``retries`` extra attempts, then raises
    :class:`BackendError`.  A session object with a ``post`` method can be
    injected for testing; otherwise ``requests`` is used directly.
    """

    name = "http"

    def __init__(self, url: str, timeout: float = 10.0, retries: int = 2, session=None) -> None:
        if not url:
            raise ValueError("url must be non-empty")
        self.url = url
        self.timeout = float(timeout)
        self.retries = int(retries)
        if session is None:
            import requests

            session = requests.Session()
        self._session = session

    def complete(self, template_id: str, filled_prompt: str, context: dict) -> str:
        payload = {"template_id": template_id, "filled_prompt": filled_prompt}
        last_error = "no attempt made"
        for _ in range(self.retries + 1):
            try:
                resp = self._session.post(self.url, json=payload, timeout=self.timeout)
            except Exception as exc:  # connection and timeout errors
                last_error = f"request failed: {exc}"
                continue
            status = getattr(resp, "status_code", None)
            if status != 200:
                last_error = f"status {status}"
                continue
            try:
                body = resp.json()
                text = body["text"]
            except Exception as exc:
                last_error = f"malformed response body: {exc}"
                continue
            if not isinstance(text, str) or not text.strip():
                last_error = "response text empty"
                continue
            return text
        raise BackendError(f"backend gave no usable response after {self.retries + 1} attempts: {last_error}")


def _call(backend, template_id: str, prompt: str, context: dict, stage: str) -> str:
    try:
        text = backend.complete(template_id, prompt, context)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(stage, f"backend failed: {exc}") from exc
    if not isinstance(text, str) or not text.strip():
        raise PipelineError(stage, "backend returned empty text")
    return text.strip()


# --------------------------------------------------------------------------
# Reference resolution and filtering
# --------------------------------------------------------------------------

_QUOTES = "\"'“”‘’"
_REF_RE = re.compile(
    rf"(?:the\s+)?(?:(?P<manual>manual\s+sign)|sign(?:\s+for|\s+of)?)\s*"
    rf"[{_QUOTES}](?P<name>[^{_QUOTES}]+)[{_QUOTES}]",
    re.IGNORECASE,
)

DEFAULT_FILTER_PHRASES = (
    "homophonous",
    "represents agreement",
    "also used to mean",
    "etymology",
)


def resolve_references(text: str, kb: KnowledgeBase) -> tuple[str, tuple[str, ...]]:
    """Replace quoted sign / manual-alphabet references with expert passages.

    References without a KB hit stay verbatim and produce a warning.
    One left-to-right pass; substituted passages are not re-scanned.
    """
    warnings: list[str] = []
    out: list[str] = []
    cursor = 0
    for match in _REF_RE.finditer(text):
        name = match.group("name").strip()
        if match.group("manual"):
            candidates = [f"manual sign {name}", name]
        else:
            candidates = [name, f"sign {name}", f"the sign {name}"]
        passage = None
        for cand in candidates:
            passage = kb.lookup(cand)
            if passage is not None:
                break
        out.append(text[cursor : match.start()])
        if passage is None:
            out.append(match.group(0))
            warnings.append(f"unresolved sign reference: {match.group(0)!r}")
        else:
            out.append(passage.rstrip(". "))
        cursor = match.end()
    out.append(text[cursor:])
    return "".join(out), tuple(warnings)


def _split_sentences(text: str) -> list[str]:
    pieces = re.split(r"(?<=[.!?])\s+", text.strip())
    return [p for p in (piece.strip() for piece in pieces) if p]


def strip_non_action(text: str, filter_phrases: Sequence[str] = DEFAULT_FILTER_PHRASES) -> str:
    """Drop sentences mentioning any filter phrase (case-folded substring)."""
    folded = [p.lower() for p in filter_phrases]
    kept = [s for s in _split_sentences(text) if not any(p in s.lower() for p in folded)]
    return " ".join(kept)


def split_clauses(text: str) -> list[str]:
    """Clauses from sentence boundaries and (1)-style enumeration markers."""
    chunks = re.split(r"\(\d+\)", text)
    clauses: list[str] = []
    for chunk in chunks:
        for sentence in _split_sentences(chunk):
            cleaned = sentence.strip(" ,;")
            if cleaned:
                clauses.append(cleaned)
    return clauses


# --------------------------------------------------------------------------
# Part tagging lexicon
# --------------------------------------------------------------------------

_HAND_WORDS = frozenset(
    "hand hands finger fingers fingertip fingertips thumb thumbs palm palms "
    "fist fists knuckle knuckles wrist wrists index pinky pinched".split()
)
_BOTH_WORDS = frozenset("hands palms fists both wrists".split())

DEFAULT_LEXICON = {
    "mouth": frozenset("lip lips tongue teeth mouth jaw chin".split()),
    "face": frozenset("brow brows eyebrow eyebrows cheek cheeks eye eyes forehead nose temple".split()),
    "body": frozenset("arm arms shoulder shoulders torso chest elbow elbows body head ear".split()),
}


def lexicon_parts(clause: str, lexicon=DEFAULT_LEXICON) -> tuple[str, ...]:
    """Body parts a clause moves, by keyword lookup.

    Hand words resolve a side from left/right/both context; an unsided
    single hand defaults to right_hand (the dominant hand).  Returns part
    names in canonical order; empty when no keyword hits.
    """
    toks = set(fold_tokens(clause))
    parts: set[str] = set()
    for name in ("mouth", "face", "body"):
        if toks & lexicon[name]:
            parts.add(name)
    if toks & _HAND_WORDS:
        left = "left" in toks
        right = "right" in toks
        both = bool(toks & _BOTH_WORDS)
        if both or (left and right):
            parts.update(("left_hand", "right_hand"))
        elif left:
            parts.add("left_hand")
        else:
            parts.add("right_hand")
    return tuple(p for p in PART_NAMES if p in parts)


def parse_tagged_lines(text: str) -> list[tuple[tuple[str, ...], str]]:
    """Parse 'part1,part2: clause' lines into (parts, clause) pairs."""
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        head, sep, clause = line.partition(":")
        if not sep or not clause.strip():
            raise PipelineError("part", f"malformed tagged line {lineno}: {line!r}")
        parts = tuple(p.strip() for p in head.split(",") if p.strip())
        for p in parts:
            if p not in PART_NAMES:
                raise PipelineError("part", f"unknown part {p!r} on line {lineno}")
        if not parts:
            raise PipelineError("part", f"no part tags on line {lineno}")
        out.append((parts, clause.strip()))
    return out


# --------------------------------------------------------------------------
# Pipeline stages
# --------------------------------------------------------------------------


def generate_primary(entry: SignEntry, kb: KnowledgeBase, backend, k: int = 3) -> DescriptionRecord:
    """Stage 1: retrieval-grounded primary description of the sign."""
    hits = retrieve(entry.gloss, kb, k)
    passages = [p.text for p, _ in hits]
    prompt = TEMPLATES["P1"].fill(sign_name=entry.gloss, passages=" ".join(passages) or "(none)")
    text = _call(backend, "P1", prompt, {"gloss": entry.gloss, "passages": passages}, "primary")
    return DescriptionRecord(entry.class_id, "primary", text, source=backend.name)


def generate_synonyms(
    entry: SignEntry, primary: DescriptionRecord, backend, count: int = 2
) -> list[DescriptionRecord]:
    """Stage 2: synonymous rewrites of the primary text; no retrieval."""
    if count < 1:
        raise PipelineError("synonym", "count must be at least 1")
    prompt = TEMPLATES["P2"].fill(count=count, text=primary.text)
    text = _call(backend, "P2", prompt, {"base_text": primary.text, "count": count}, "synonym")
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise PipelineError("synonym", "backend returned no variants")
    records = []
    for i, line in enumerate(lines[:count]):
        if line == primary.text:
            raise PipelineError("synonym", "variant identical to the primary text")
        records.append(DescriptionRecord(entry.class_id, "synonym", line, source=backend.name, index=i))
    return records


def refine(
    primary: DescriptionRecord,
    kb: KnowledgeBase,
    backend,
    filter_phrases: Sequence[str] = DEFAULT_FILTER_PHRASES,
) -> tuple[DescriptionRecord, tuple[str, ...]]:
    """Stage 3: resolve references against the KB and drop non-action sentences.

    Returns the refined record plus warnings for references that had no
    KB hit (those stay verbatim in the text).
    """
    resolved, warnings = resolve_references(primary.text, kb)
    filtered = strip_non_action(resolved, filter_phrases)
    if not filtered.strip():
        raise PipelineError("refine", "every sentence was filtered out")
    prompt = TEMPLATES["P3"].fill(text=primary.text)
    text = _call(backend, "P3", prompt, {"resolved_text": filtered}, "refine")
    return DescriptionRecord(primary.class_id, "refined", text, source=backend.name), warnings


def decompose_parts(refined: DescriptionRecord, backend, lexicon=DEFAULT_LEXICON) -> list[DescriptionRecord]:
    """Stage 4: per-clause part tagging; untaggable clauses are dropped."""
    if refined.kind != "refined":
        raise PipelineError("part", f"expected a refined record, got kind {refined.kind!r}")
    clauses = split_clauses(refined.text)
    if not clauses:
        raise PipelineError("part", "refined text yields no clauses")
    prompt = TEMPLATES["P4"].fill(text=refined.text)
    text = backend.complete("P4", prompt, {"clauses": clauses, "lexicon": lexicon})
    if not text.strip():
        return []
    records = []
    for i, (parts, clause) in enumerate(parse_tagged_lines(text)):
        records.append(
            DescriptionRecord(refined.class_id, "part", clause, parts=parts, source=backend.name, index=i)
        )
    return records


@dataclass(frozen=True)
class PipelineResult:
    records: tuple[DescriptionRecord, ...]
    warnings: tuple[str, ...] = ()

    def by_kind(self, class_id: int, kind: str) -> list[DescriptionRecord]:
        return [r for r in self.records if r.class_id == class_id and r.kind == kind]


def run_pipeline(
    entries: Sequence[SignEntry],
    kb: KnowledgeBase,
    backend,
    synonym_count: int = 2,
    filter_phrases: Sequence[str] = DEFAULT_FILTER_PHRASES,
    lexicon=DEFAULT_LEXICON,
    out_path=None,
) -> PipelineResult:
    """All four stages over a corpus; optionally persisted as JSONL.

    Every sign must end up with at least one record of every kind (a sign
    whose refined text yields no taggable clause is an error).  Output
    order and bytes are deterministic for a fixed corpus, KB, and backend.
    """
    if not entries:
        raise PipelineError("corpus", "no sign entries")
    ids = [e.class_id for e in entries]
    if len(set(ids)) != len(ids):
        raise PipelineError("corpus", "duplicate class ids")
    records: list[DescriptionRecord] = []
    warnings: list[str] = []
    for entry in sorted(entries, key=lambda e: e.class_id):
        primary = generate_primary(entry, kb, backend)
        synonyms = generate_synonyms(entry, primary, backend, synonym_count)
        refined, w = refine(primary, kb, backend, filter_phrases)
        warnings.extend(f"class {entry.class_id}: {msg}" for msg in w)
        parts = decompose_parts(refined, backend, lexicon)
        if not parts:
            raise PipelineError("complete", f"class {entry.class_id} produced no part records")
        records.extend([primary, *synonyms, refined, *parts])
    result = PipelineResult(records=tuple(records), warnings=tuple(warnings))
    if out_path is not None:
        save_records(result.records, out_path)
    return result


def save_records(records: Sequence[DescriptionRecord], path) -> None:
    """JSONL, one record per line; key order fixed so reruns are byte-identical."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "class_id": rec.class_id,
                        "kind": rec.kind,
                        "text": rec.text,
                        "parts": list(rec.parts),
                        "source": rec.source,
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
            )
            fh.write("\n")


def load_records(path) -> list[DescriptionRecord]:
    """Load JSONL records; per-(class, kind) indices follow file order."""
    counters: dict[tuple[int, str], int] = {}
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                key = (int(doc["class_id"]), str(doc["kind"]))
                idx = counters.get(key, 0)
                counters[key] = idx + 1
                records.append(
                    DescriptionRecord(
                        class_id=doc["class_id"],
                        kind=doc["kind"],
                        text=doc["text"],
                        parts=tuple(doc.get("parts", ())),
                        source=doc.get("source", "mock"),
                        index=idx,
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"malformed description line {lineno}: {exc}") from exc
    return records


def save_corpus(entries: Sequence[SignEntry], path) -> None:
    """JSONL sign list, one {class_id, gloss} per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(
                json.dumps(
                    {"class_id": entry.class_id, "gloss": entry.gloss},
                    ensure_ascii=False,
                    sort_keys=True,
                )
            )
            fh.write("\n")


def load_corpus(path) -> list[SignEntry]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                entries.append(SignEntry(doc["class_id"], doc["gloss"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"malformed corpus line {lineno}: {exc}") from exc
    return entries
