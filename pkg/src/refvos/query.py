"""Referring-expression decomposition into structured fields.

A query like "the cat stood motionlessly by the green plate" becomes:
target entity phrases, surrounding entity phrases, a motion description,
a posture/attribute description and the number of referred objects.
The primary path asks a language-model endpoint for a JSON object; a
rule-based splitter provides a deterministic offline fallback.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .llm import ChatClient, EndpointError, ReasonerConfig


class DecompositionParseError(ValueError):
    """The endpoint response did not contain a usable field object."""


NUMBER_WORDS = {
    "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10,
}

ARTICLES = {"the", "a", "an"}

# Lowercased surface form -> canonical descriptor token.
MOTION_WORDS = {
    "moving": "moving", "moves": "moving", "moved": "moving", "move": "moving",
    "walking": "walking", "walks": "walking", "walked": "walking", "walk": "walking",
    "running": "running", "runs": "running", "ran": "running", "run": "running",
    "riding": "riding", "rides": "riding", "rode": "riding", "ride": "riding",
    "turning": "turning", "turns": "turning", "turned": "turning", "turn": "turning",
    "stationary": "stationary", "stationarily": "stationary",
    "motionless": "motionless", "motionlessly": "motionless",
    "left": "left", "leftward": "left", "leftwards": "left",
    "right": "right", "rightward": "right", "rightwards": "right",
    "up": "up", "upward": "up", "upwards": "up",
    "down": "down", "downward": "down", "downwards": "down",
    "fast": "fast", "quickly": "fast",
    "slow": "slow", "slowly": "slow",
}

POSTURE_WORDS = {
    "standing": "standing", "stands": "standing", "stood": "standing", "stand": "standing",
    "sitting": "sitting", "sits": "sitting", "sat": "sitting", "sit": "sitting",
    "lying": "lying", "lies": "lying", "lay": "lying", "lie": "lying",
}

COLOR_WORDS = {
    "red", "blue", "green", "black", "white", "yellow",
    "orange", "brown", "gray", "grey", "pink", "purple",
}

# Plain linking verbs end the candidate noun phrase without contributing
# to any descriptor.
LINKING_WORDS = {"is", "was", "are", "were", "remains", "remained", "stays", "stayed", "that"}

# Multi-word prepositions first so they win over their prefixes.
LOCATIVE_PREPOSITIONS = (
    ("in", "front", "of"),
    ("next", "to"),
    ("close", "to"),
    ("by",),
    ("near",),
    ("behind",),
    ("beside",),
)


@dataclass(frozen=True)
class StructuredQuery:
    """Five-part decomposition of a referring expression."""

    candidates: tuple[str, ...]
    context: tuple[str, ...]
    motion: str
    posture: str
    count: int
    raw_query: str

    def __post_init__(self) -> None:
        if not self.candidates or not all(c.strip() for c in self.candidates):
            raise ValueError("at least one non-empty candidate entity is required")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if not self.raw_query.strip():
            raise ValueError("raw_query may not be empty")


def build_decomposition_prompt(query: str) -> str:
    """Prompt asking the endpoint for a single JSON object with five fields."""
    if not query.strip():
        raise ValueError("query may not be empty")
    quoted = json.dumps(query)
    return (
        "You split short video object descriptions into structured fields.\n"
        f"Description: {quoted}\n"
        "Reply with one JSON object and nothing else, using exactly these keys:\n"
        '  "candidates": list of noun phrases naming the described target object(s),\n'
        '  "context": list of noun phrases naming other objects mentioned,\n'
        '  "motion": how the target moves, or "" if unstated,\n'
        '  "posture": the target\'s pose or visual attribute, or "" if unstated,\n'
        '  "count": how many target objects are described (integer, at least 1).\n'
    )


def render_decomposition(sq: StructuredQuery) -> str:
    """The response shape the prompt asks for; inverse of the parser."""
    return json.dumps(
        {
            "candidates": list(sq.candidates),
            "context": list(sq.context),
            "motion": sq.motion,
            "posture": sq.posture,
            "count": sq.count,
        },
        sort_keys=True,
    )


def _first_json_object(text: str) -> dict:
    """Extract the first balanced ``{...}`` object, ignoring surrounding prose."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        obj = json.loads(text[start : i + 1])
                    except json.JSONDecodeError:
                        break
                    if isinstance(obj, dict):
                        return obj
                    break
        start = text.find("{", start + 1)
    raise DecompositionParseError("no JSON object found in response")


def _coerce_count(value) -> int:
    if isinstance(value, bool):
        return 1
    if isinstance(value, int):
        return value if value >= 1 else 1
    if isinstance(value, float) and value.is_integer():
        return int(value) if value >= 1 else 1
    if isinstance(value, str):
        word = value.strip().lower()
        if word.isdigit():
            n = int(word)
            return n if n >= 1 else 1
        if word in NUMBER_WORDS:
            return NUMBER_WORDS[word]
    return 1


def _coerce_phrases(value) -> tuple[str, ...]:
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, list):
        return ()
    return tuple(p.strip() for p in value if isinstance(p, str) and p.strip())


def parse_decomposition_response(text: str, raw_query: str = "") -> StructuredQuery:
    """Parse the endpoint's JSON reply; descriptor fields default to empty."""
    obj = _first_json_object(text)
    candidates = _coerce_phrases(obj.get("candidates", obj.get("candidate_entities")))
    if not candidates:
        raise DecompositionParseError("response lists no candidate entities")
    context = _coerce_phrases(obj.get("context", obj.get("context_entities", [])))
    motion = obj.get("motion", obj.get("motion_descriptor", "")) or ""
    posture = obj.get("posture", obj.get("posture_descriptor", "")) or ""
    if not isinstance(motion, str) or not isinstance(posture, str):
        raise DecompositionParseError("motion/posture must be strings")
    count = _coerce_count(obj.get("count", obj.get("cardinality", 1)))
    return StructuredQuery(
        candidates=candidates,
        context=context,
        motion=motion.strip(),
        posture=posture.strip(),
        count=count,
        raw_query=raw_query or " ".join(candidates),
    )


def _tokenize(query: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", query.lower())


def _match_preposition(tokens: list[str], i: int) -> int:
    """Length of the locative preposition starting at ``i``, or 0."""
    for prep in LOCATIVE_PREPOSITIONS:
        if tuple(tokens[i : i + len(prep)]) == prep:
            return len(prep)
    return 0


def _strip_leading(tokens: list[str]) -> tuple[list[str], int]:
    """Drop leading articles/numerals; return remaining tokens and the count found."""
    count = 0
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok in ARTICLES:
            i += 1
            continue
        if count == 0 and tok in NUMBER_WORDS:
            count = NUMBER_WORDS[tok]
            i += 1
            continue
        if count == 0 and tok.isdigit():
            count = max(1, int(tok))
            i += 1
            continue
        break
    return tokens[i:], count


def _is_descriptor(tok: str) -> bool:
    return tok in MOTION_WORDS or tok in POSTURE_WORDS or tok in LINKING_WORDS


def heuristic_decompose(query: str) -> StructuredQuery:
    """Deterministic rule-based decomposition used offline and as fallback.

    The first noun phrase names the target; phrases after locative
    prepositions become context; motion and posture lexicon hits are
    normalised (e.g. "stood motionlessly" -> posture "standing", motion
    "motionless"). A leading numeral or number word sets the count.
    "in front of X" contributes both the motion token "in front" and the
    context phrase X.
    """
    tokens = _tokenize(query)
    stripped, count = _strip_leading(tokens)

    noun_tokens: list[str] = []
    motion_tokens: list[str] = []
    posture_tokens: list[str] = []
    contexts: list[list[str]] = []
    in_context = False
    seen_descriptor = False
    i = 0
    n = len(stripped)
    while i < n:
        if not in_context and stripped[i : i + 2] == ["in", "front"] and (
            i + 2 >= n or stripped[i + 2] != "of"
        ):
            motion_tokens.append("in front")
            seen_descriptor = True
            i += 2
            continue
        plen = _match_preposition(stripped, i)
        if plen:
            if tuple(stripped[i : i + plen]) == ("in", "front", "of") and not in_context:
                motion_tokens.append("in front")
            contexts.append([])
            in_context = True
            i += plen
            continue
        tok = stripped[i]
        i += 1
        if in_context:
            if tok not in ARTICLES:
                contexts[-1].append(tok)
            continue
        if tok in LINKING_WORDS or tok in ARTICLES:
            seen_descriptor = seen_descriptor or tok in LINKING_WORDS
            continue
        if tok in MOTION_WORDS:
            motion_tokens.append(MOTION_WORDS[tok])
            seen_descriptor = True
        elif tok in POSTURE_WORDS:
            posture_tokens.append(POSTURE_WORDS[tok])
            seen_descriptor = True
        elif not seen_descriptor:
            if tok in COLOR_WORDS:
                posture_tokens.append(tok)
            else:
                noun_tokens.append(tok)

    context_phrases = [" ".join(ctx) for ctx in contexts if ctx]
    candidate = " ".join(noun_tokens).strip()
    if not candidate:
        candidate = query.strip()
    return StructuredQuery(
        candidates=(candidate,),
        context=tuple(context_phrases),
        motion=" ".join(motion_tokens),
        posture=" ".join(posture_tokens),
        count=max(1, count),
        raw_query=query,
    )


def decompose(
    query: str, config: ReasonerConfig, client: ChatClient | None = None
) -> tuple[StructuredQuery, dict]:
    """Decompose via the endpoint with retries, else the heuristic splitter.

    Returns the structured query and a small trace record describing which
    path produced it.
    """
    attempts = 0
    if config.usable:
        client = client or ChatClient(config)
        prompt = build_decomposition_prompt(query)
        for attempts in range(1, config.retry_budget + 1):
            try:
                response = client.complete(prompt)
                sq = parse_decomposition_response(response, raw_query=query)
                return sq, {"source": "endpoint", "attempts": attempts}
            except (EndpointError, DecompositionParseError):
                continue
    sq = heuristic_decompose(query)
    return sq, {"source": "heuristic", "attempts": attempts}
