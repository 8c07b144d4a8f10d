"""Clinical-knowledge-enhanced prompt engineering.

Pipeline: ask an LLM which subtypes and attributes a cardiac condition has,
keep only terms that resolve (verbatim after normalization, or through a
synonym) in at least one trusted knowledge base, and assemble the survivors
into a structured prompt.  Verification is deterministic and local: the LLM
is behind a minimal ``send(prompt) -> text`` interface with a recorded
fixture client for offline use, and knowledge bases are plain JSON files of
``{"canonical": ..., "synonyms": [...]}`` rows.  Nothing in this module ever
requires network access.
"""

from __future__ import annotations

import json
import os
import re
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Protocol, Sequence, Tuple

from . import zeroshot
from .errors import ConfigurationError, KnowledgeBaseError, ResponseParseError

KB_KINDS = ("web_snomed", "local_scp")

QUERY_TEMPLATE = (
    "Which attributes and subtypes does {condition} have? "
    "If this condition specifically describes symptoms or a subtype, "
    "please refrain from answering; otherwise, generate all possible scenarios."
)

# Response grammar appended to every query: two labeled lines, terms separated
# by semicolons, 'none' for an empty list.
FORMAT_INSTRUCTIONS = (
    "Answer with exactly two lines:\n"
    "subtypes: <term>; <term>; ... (or 'none')\n"
    "attributes: <term>; <term>; ... (or 'none')"
)

PIPELINE_VERSION = 1

_EDGE_PUNCT = re.compile(r"(^\W+)|(\W+$)", re.UNICODE)


def normalize_term(term: str) -> str:
    """Lowercase, collapse internal whitespace, strip punctuation at token
    edges.  Matching stays verbatim otherwise: no fuzzy search, so a term the
    knowledge bases do not contain can never survive verification."""
    tokens = [_EDGE_PUNCT.sub("", t) for t in term.lower().split()]
    return " ".join(t for t in tokens if t)


# ---------------------------------------------------------------------------
# Knowledge bases
# ---------------------------------------------------------------------------


@dataclass
class KnowledgeBase:
    name: str
    kind: str
    terms: set
    synonym_map: Dict[str, str] = field(default_factory=dict)

    def resolve(self, term: str) -> Optional[str]:
        """Canonical form for a term, or None when it is not in this KB."""
        key = normalize_term(term)
        if key in self.terms:
            return key
        return self.synonym_map.get(key)

    def __contains__(self, term: str) -> bool:
        return self.resolve(term) is not None


def load_kb(path: str | Path, kind: str, name: Optional[str] = None) -> KnowledgeBase:
    """Load a JSON knowledge base: a list of ``{canonical, synonyms}`` rows.

    All keys are normalized; a synonym claiming two different canonicals is a
    conflict and rejected.
    """
    path = Path(path)
    if kind not in KB_KINDS:
        raise ConfigurationError(f"kind must be one of {KB_KINDS}, got {kind!r}")
    try:
        rows = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise KnowledgeBaseError(f"{path}: invalid JSON ({exc})")
    if not isinstance(rows, list) or not rows:
        raise KnowledgeBaseError(f"{path}: knowledge base is empty")
    terms = set()
    synonym_map: Dict[str, str] = {}
    conflicts: List[str] = []
    for row in rows:
        canonical = normalize_term(str(row.get("canonical", "")))
        if not canonical:
            raise KnowledgeBaseError(f"{path}: row missing canonical term: {row!r}")
        terms.add(canonical)
        for synonym in row.get("synonyms", []):
            key = normalize_term(str(synonym))
            if not key:
                continue
            existing = synonym_map.get(key)
            if existing is not None and existing != canonical:
                conflicts.append(f"{key!r} -> {existing!r} vs {canonical!r}")
            synonym_map[key] = canonical
    if conflicts:
        raise KnowledgeBaseError(
            f"{path}: conflicting synonyms: " + "; ".join(conflicts),
            conflicts=conflicts,
        )
    return KnowledgeBase(
        name=name or path.stem, kind=kind, terms=terms, synonym_map=synonym_map
    )


# ---------------------------------------------------------------------------
# LLM clients
# ---------------------------------------------------------------------------


class LLMClient(Protocol):
    def send(self, prompt: str) -> str: ...


class FixtureLLMClient:
    """Replays recorded responses keyed by the exact prompt text."""

    def __init__(self, responses: Dict[str, str]):
        self.responses = dict(responses)

    @classmethod
    def from_condition_map(cls, by_condition: Dict[str, str]) -> "FixtureLLMClient":
        """Convenience: key fixtures by condition instead of full prompt."""
        return cls({build_query(c): text for c, text in by_condition.items()})

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureLLMClient":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if "by_condition" in payload:
            return cls.from_condition_map(payload["by_condition"])
        return cls(payload.get("by_prompt", payload))

    def send(self, prompt: str) -> str:
        try:
            return self.responses[prompt]
        except KeyError:
            raise ConfigurationError(
                "no recorded response for this prompt; record a fixture first",
                prompt=prompt[:200],
            )


class HttpLLMClient:
    """Minimal JSON-over-HTTP client for a live endpoint.

    Never exercised by tests; the API key comes from an environment variable
    and is not persisted anywhere.
    """

    def __init__(
        self,
        endpoint: str,
        model: str = "",
        api_key_env: str = "MERL_LLM_API_KEY",
        timeout: float = 60.0,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout

    def send(self, prompt: str) -> str:
        body = json.dumps({"model": self.model, "prompt": prompt}).encode("utf-8")
        request = urllib.request.Request(
            self.endpoint, data=body, headers={"Content-Type": "application/json"}
        )
        key = os.environ.get(self.api_key_env, "")
        if key:
            request.add_header("Authorization", f"Bearer {key}")
        with urllib.request.urlopen(request, timeout=self.timeout) as response:
            payload = json.loads(response.read().decode("utf-8"))
        return payload["text"]


# ---------------------------------------------------------------------------
# Query / verify / assemble
# ---------------------------------------------------------------------------


@dataclass
class CandidateTerms:
    condition: str
    subtypes: List[str]
    attributes: List[str]
    raw_response: str


@dataclass
class VerifiedPrompt:
    condition: str
    kept_subtypes: List[str]
    kept_attributes: List[str]
    discarded: List[Tuple[str, str]]  # (term, reason)
    prompt_text: str = ""
    kb_hits: Dict[str, List[str]] = field(default_factory=dict)  # term -> KB names


def build_query(condition: str) -> str:
    return QUERY_TEMPLATE.format(condition=condition) + "\n\n" + FORMAT_INSTRUCTIONS


def _dedupe(terms: Iterable[str]) -> List[str]:
    seen = set()
    out = []
    for term in terms:
        term = term.strip()
        key = term.lower()
        if term and key not in seen:
            seen.add(key)
            out.append(term)
    return out


def _parse_term_line(line: str) -> List[str]:
    value = line.split(":", 1)[1].strip()
    if not value or value.lower() in ("none", "n/a", "-"):
        return []
    return _dedupe(value.split(";"))


def query_candidates(condition: str, client: LLMClient) -> CandidateTerms:
    """Ask for subtypes/attributes of a condition and parse the reply.

    Replies must follow the documented grammar (two labeled lines); a reply
    that declines ("refrain") yields empty lists.  Anything else is a parse
    error that retains the raw response for inspection.
    """
    if not condition.strip():
        raise ConfigurationError("condition must be non-empty")
    raw = client.send(build_query(condition))
    subtypes: Optional[List[str]] = None
    attributes: Optional[List[str]] = None
    for line in raw.splitlines():
        stripped = line.strip()
        lowered = stripped.lower()
        if lowered.startswith("subtypes:"):
            subtypes = _parse_term_line(stripped)
        elif lowered.startswith("attributes:"):
            attributes = _parse_term_line(stripped)
    if subtypes is None and attributes is None:
        if "refrain" in raw.lower():
            subtypes, attributes = [], []
        else:
            raise ResponseParseError(
                f"response for {condition!r} matches neither the term grammar "
                f"nor a refusal",
                raw_response=raw,
                condition=condition,
            )
    return CandidateTerms(
        condition=condition,
        subtypes=subtypes or [],
        attributes=attributes or [],
        raw_response=raw,
    )


def verify_against_kb(
    candidates: CandidateTerms, kbs: Sequence[KnowledgeBase]
) -> VerifiedPrompt:
    """Keep only candidate terms that resolve in at least one knowledge base.

    Kept terms are mapped to their canonical form.  Discarded terms record
    which knowledge bases were checked, so ablations (dropping a KB from the
    list) are just a shorter ``kbs`` argument.
    """
    if not kbs:
        raise ConfigurationError("at least one knowledge base is required")
    checked = ", ".join(kb.name for kb in kbs)
    kept: Dict[str, List[str]] = {"subtypes": [], "attributes": []}
    discarded: List[Tuple[str, str]] = []
    hits: Dict[str, List[str]] = {}
    for group, terms in (("subtypes", candidates.subtypes), ("attributes", candidates.attributes)):
        for term in terms:
            sources = [kb.name for kb in kbs if kb.resolve(term) is not None]
            if sources:
                canonical = next(
                    kb.resolve(term) for kb in kbs if kb.resolve(term) is not None
                )
                kept[group].append(canonical)
                hits[canonical] = sources
            else:
                discarded.append((term, f"not found in any knowledge base (checked: {checked})"))
    return VerifiedPrompt(
        condition=candidates.condition,
        kept_subtypes=_dedupe(kept["subtypes"]),
        kept_attributes=_dedupe(kept["attributes"]),
        discarded=discarded,
        kb_hits=hits,
    )


def assemble_prompt(verified: VerifiedPrompt, style: str = "ckepe") -> VerifiedPrompt:
    """Fill in the prompt text from the verified terms.

    With no kept terms the structured style degrades to the bare condition
    name.  The template is fixed and versioned (``PIPELINE_VERSION``).
    """
    verified.prompt_text = zeroshot.assemble_prompt_text(
        verified.condition, verified.kept_subtypes, verified.kept_attributes, style
    )
    return verified


def build_verified_prompt(
    condition: str,
    client: LLMClient,
    kbs: Sequence[KnowledgeBase],
    style: str = "ckepe",
) -> VerifiedPrompt:
    candidates = query_candidates(condition, client)
    return assemble_prompt(verify_against_kb(candidates, kbs), style)


def build_prompt_set(
    conditions: Sequence[str],
    client: LLMClient,
    kbs: Sequence[KnowledgeBase],
    style: str = "ckepe",
) -> zeroshot.ClassPromptSet:
    """End-to-end: one verified prompt per condition, in the given order."""
    entries = []
    for condition in conditions:
        verified = build_verified_prompt(condition, client, kbs, style)
        entries.append(
            zeroshot.ClassPrompt(
                class_name=condition,
                prompt_text=verified.prompt_text,
                subtypes=list(verified.kept_subtypes),
                attributes=list(verified.kept_attributes),
                provenance={
                    "kb_hits": [
                        {"term": term, "sources": sources}
                        for term, sources in verified.kb_hits.items()
                    ],
                    "discarded": [list(item) for item in verified.discarded],
                    "pipeline_version": PIPELINE_VERSION,
                },
            )
        )
    prompts = zeroshot.ClassPromptSet(entries=entries, style=style)
    prompts.validate()
    return prompts
