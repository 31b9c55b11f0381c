"""Compile text prompts into motion plans.

Three routes produce a plan: an LLM queried with the fixed command templates
(replayed from transcripts or over HTTP), or a deterministic verb-lexicon
fallback that needs no network. Skeleton plans for body control are parsed from
per-frame node lines.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import requests

from .core import CharacterTrack, Direction, FrameImage, MotionPlan, parse_direction
from .errors import (
    BackendError,
    FrameRangeError,
    NodeSchemaError,
    PlanParseError,
    UsageError,
)

# Vocabulary in the order and spelling the direction command presents it.
DIRECTION_VOCAB = (
    "motionless",
    "left",
    "right",
    "up",
    "down",
    "left down",
    "left up",
    "right down",
    "right up",
)

SKELETON_NODES = (
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_hand",
    "right_hand",
    "pelvis",
    "left_knee",
    "right_knee",
    "left_foot",
    "right_foot",
)

_MOVING_OBJECTS_TEMPLATE = (
    'Given a user prompt, identify the moving objects or parts. Prompt: "{prompt}"'
)

_DIRECTIONS_TEMPLATE = (
    "Given a user prompt, elaborate the movement direction of the main characters "
    "or moving parts for each two frames of {frames} frames. Motions should be "
    "consistent. Directions should be one of followings:[{vocab}]. Answer the "
    'question in a list follow the format:["character name": "direction", '
    '"part name": "direction", ...]. Prompt: "{prompt}"'
)

_SKELETON_TEMPLATE = (
    "The skeleton represents human joints or parts with 10 discrete nodes: "
    "{nodes}. Given a user prompt, infer the movement of each node for each "
    "video frame of {frames} frames. Directions should be one of "
    'followings:[{vocab}]. Answer one line per moving node in the format: '
    '"Frame 2: right hand: right". Prompt: "{prompt}"'
)

_HEADING_TEMPLATE = " And the {name} is heading towards {direction}."


@dataclass(frozen=True)
class HeadingHint:
    """First-frame heading of one character, from a VQA provider or the user."""

    character: str
    heading: Direction

    def __post_init__(self):
        if self.heading is Direction.MOTIONLESS:
            raise UsageError("a heading hint cannot be motionless")


@dataclass(frozen=True)
class SkeletonPlan:
    """Direction per transition for each of the 10 skeleton nodes."""

    nodes: dict[str, tuple[Direction, ...]]
    frame_count: int

    def __post_init__(self):
        if set(self.nodes) != set(SKELETON_NODES):
            raise NodeSchemaError(
                f"skeleton plan must cover exactly the nodes {SKELETON_NODES}"
            )
        for name, dirs in self.nodes.items():
            if len(dirs) != self.frame_count - 1:
                raise NodeSchemaError(
                    f"node {name!r} has {len(dirs)} directions, expected {self.frame_count - 1}"
                )

    @classmethod
    def motionless(cls, frame_count: int) -> "SkeletonPlan":
        return cls(
            nodes={n: (Direction.MOTIONLESS,) * (frame_count - 1) for n in SKELETON_NODES},
            frame_count=frame_count,
        )


def build_prompt(
    kind: str,
    user_prompt: str,
    heading: HeadingHint | None = None,
    frame_count: int = 8,
) -> str:
    """Instantiate one of the fixed LLM command templates.

    kind is one of "moving_objects", "directions" or "skeleton"; the optional
    heading sentence ("And the airplane is heading towards left.") is appended
    to the directions command only.
    """
    if not user_prompt.strip():
        raise UsageError("user prompt must be non-empty")
    vocab = ", ".join(f'"{v}"' for v in DIRECTION_VOCAB)
    if kind == "moving_objects":
        return _MOVING_OBJECTS_TEMPLATE.format(prompt=user_prompt)
    if kind == "directions":
        text = _DIRECTIONS_TEMPLATE.format(prompt=user_prompt, frames=frame_count, vocab=vocab)
        if heading is not None:
            text += _HEADING_TEMPLATE.format(
                name=heading.character, direction=heading.heading.display
            )
        return text
    if kind == "skeleton":
        nodes = ", ".join(n.replace("_", " ") for n in SKELETON_NODES)
        return _SKELETON_TEMPLATE.format(prompt=user_prompt, frames=frame_count, vocab=vocab, nodes=nodes)
    raise UsageError(f"unknown prompt kind {kind!r}")


# --- parsing the list-per-two-frames answer format -------------------------


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


def _parse_group(text: str, start: int) -> tuple[dict[str, str], int]:
    """Parse one ["name": "direction", ...] group starting at text[start] == '['.

    Returns the name->token mapping and the index just past the closing bracket.
    Tokens may be quoted or bare.
    """
    entries: dict[str, str] = {}
    i = start + 1
    n = len(text)

    def skip_ws(j: int) -> int:
        while j < n and text[j] in " \t\r\n":
            j += 1
        return j

    def read_token(j: int) -> tuple[str, int]:
        j = skip_ws(j)
        if j < n and text[j] in "\"'":
            quote = text[j]
            end = text.find(quote, j + 1)
            if end == -1:
                raise PlanParseError("unterminated quoted token", _byte_offset(text, j))
            return text[j + 1 : end], end + 1
        end = j
        while end < n and text[end] not in ":,]":
            end += 1
        token = text[j:end].strip()
        if not token:
            raise PlanParseError("expected a token", _byte_offset(text, j))
        return token, end

    while True:
        i = skip_ws(i)
        if i >= n:
            raise PlanParseError("unterminated group", _byte_offset(text, start))
        if text[i] == "]":
            return entries, i + 1
        name, i = read_token(i)
        i = skip_ws(i)
        if i >= n or text[i] != ":":
            raise PlanParseError(f"expected ':' after {name!r}", _byte_offset(text, i))
        direction, i = read_token(i + 1)
        entries[name] = direction
        i = skip_ws(i)
        if i < n and text[i] == ",":
            i += 1


def parse_motion_plan(llm_text: str, frame_count: int) -> MotionPlan:
    """Parse the answer format: one bracketed list per two-frame group.

    Each group's direction repeats for both of its frames; the per-transition
    lists are then cut (or motionless-padded) to frame_count - 1. Characters
    missing from a group are motionless there, and characters that never move
    fold into the implicit background and are dropped from the plan.
    """
    if frame_count < 2:
        raise UsageError(f"frame_count must be >= 2, got {frame_count}")
    groups: list[dict[str, str]] = []
    i = 0
    while True:
        bracket = llm_text.find("[", i)
        if bracket == -1:
            break
        entries, i = _parse_group(llm_text, bracket)
        groups.append(entries)
    if not groups:
        raise PlanParseError("no direction groups found", 0)

    order: list[str] = []
    for g in groups:
        for name in g:
            if name not in order:
                order.append(name)

    transitions = frame_count - 1
    characters = []
    for name in order:
        expanded: list[Direction] = []
        for g in groups:
            token = g.get(name)
            d = parse_direction(token) if token is not None else Direction.MOTIONLESS
            expanded.extend((d, d))
        if len(expanded) < transitions:
            expanded.extend([Direction.MOTIONLESS] * (transitions - len(expanded)))
        track = CharacterTrack(name=name, phrase=name, directions=tuple(expanded[:transitions]))
        if not track.is_motionless():
            characters.append(track)
    return MotionPlan(tuple(characters), frame_count)


# --- deterministic lexicon fallback ----------------------------------------

# verb phrase -> one direction (constant plan) or two (two-stage plan).
DEFAULT_LEXICON: dict[str, tuple[str, ...]] = {
    "landing": ("down",),
    "taking off": ("up",),
    "takes off": ("up",),
    "falling": ("down",),
    "sinking": ("down",),
    "rising": ("up",),
    "ascending": ("up",),
    "descending": ("down",),
    "floating up": ("up",),
    "jumping over": ("up", "down"),
    "jumping": ("up", "down"),
    "skiing": ("down",),
    "skateboarding": ("down",),
    "moving left": ("left",),
    "moving right": ("right",),
    "moving up": ("up",),
    "moving down": ("down",),
    "drifting left": ("left",),
    "drifting right": ("right",),
    "sliding left": ("left",),
    "sliding right": ("right",),
}

_ARTICLES = {"a", "an", "the", "its", "his", "her", "their", "this", "that", "one", "and", "or"}
_AUXILIARIES = {"is", "are", "was", "were", "be", "been", "being"}


@dataclass(frozen=True)
class FallbackResult:
    plan: MotionPlan
    warning: str | None = None


def load_lexicon(path: str | Path) -> dict[str, tuple[str, ...]]:
    """Read a JSON verb->direction(s) table; values may be a string or a list."""
    doc = json.loads(Path(path).read_text())
    lexicon = {}
    for verb, dirs in doc.items():
        lexicon[verb] = (dirs,) if isinstance(dirs, str) else tuple(dirs)
    return lexicon


def _noun_before(text: str, verb_start: int) -> str:
    words = re.findall(r"[a-z]+", text[:verb_start].lower())
    while words and words[-1] in _AUXILIARIES:
        words.pop()
    phrase: list[str] = []
    for word in reversed(words):
        if word in _ARTICLES:
            break
        phrase.append(word)
    return " ".join(reversed(phrase))


def _stage_directions(stages: Sequence[Direction], transitions: int) -> tuple[Direction, ...]:
    if len(stages) == 1:
        return (stages[0],) * transitions
    first = transitions // 2
    return (stages[0],) * first + (stages[1],) * (transitions - first)


def fallback_plan(
    user_prompt: str,
    frame_count: int,
    lexicon: dict[str, tuple[str, ...]] | None = None,
) -> FallbackResult:
    """Rule-based offline planner: scan the prompt for lexicon verbs and turn the
    noun phrase before each into a moving character. With no match the plan is a
    single motionless character plus a warning, so downstream stages still run.
    """
    if frame_count < 2:
        raise UsageError(f"frame_count must be >= 2, got {frame_count}")
    lexicon = DEFAULT_LEXICON if lexicon is None else lexicon
    if not lexicon:
        raise UsageError("lexicon must be non-empty")
    lowered = user_prompt.lower()
    transitions = frame_count - 1

    characters: list[CharacterTrack] = []
    seen: set[str] = set()
    claimed: set[int] = set()
    for verb in sorted(lexicon, key=len, reverse=True):
        for match in re.finditer(rf"\b{re.escape(verb)}\b", lowered):
            if any(pos in claimed for pos in range(match.start(), match.end())):
                continue
            claimed.update(range(match.start(), match.end()))
            noun = _noun_before(user_prompt, match.start()) or "scene"
            if noun in seen:
                continue
            seen.add(noun)
            stages = tuple(parse_direction(d) for d in lexicon[verb])
            characters.append(
                CharacterTrack(
                    name=noun, phrase=noun, directions=_stage_directions(stages, transitions)
                )
            )

    if characters:
        return FallbackResult(MotionPlan(tuple(characters), frame_count))
    noun = _noun_before(user_prompt, len(user_prompt)) or "scene"
    plan = MotionPlan(
        (
            CharacterTrack(
                name=noun, phrase=noun, directions=(Direction.MOTIONLESS,) * transitions
            ),
        ),
        frame_count,
    )
    return FallbackResult(plan, warning=f"no motion verb found in {user_prompt!r}")


# --- skeleton plan parsing --------------------------------------------------

_SKELETON_LINE_RE = re.compile(
    r"frame\s*(\d+)\s*:\s*([a-z_ \-]+?)\s*:\s*([a-z_ \-]+)", re.IGNORECASE
)


def _match_node(token: str) -> str:
    normalised = re.sub(r"[\s\-]+", "_", token.strip().lower())
    if normalised in SKELETON_NODES:
        return normalised
    raise NodeSchemaError(f"unknown skeleton node {token!r}; known nodes: {SKELETON_NODES}")


def parse_skeleton_plan(llm_text: str, frame_count: int) -> SkeletonPlan:
    """Parse "Frame k: <node>: <direction>" lines (frames are 1-indexed; frame k
    describes the move into frame k). Unmentioned nodes stay motionless."""
    if frame_count < 2:
        raise UsageError(f"frame_count must be >= 2, got {frame_count}")
    directions = {n: [Direction.MOTIONLESS] * (frame_count - 1) for n in SKELETON_NODES}
    for match in _SKELETON_LINE_RE.finditer(llm_text):
        frame = int(match.group(1))
        if not (2 <= frame <= frame_count):
            raise FrameRangeError(
                f"frame {frame} outside 2..{frame_count} in line {match.group(0)!r}"
            )
        node = _match_node(match.group(2))
        directions[node][frame - 2] = parse_direction(match.group(3))
    return SkeletonPlan(
        nodes={n: tuple(ds) for n, ds in directions.items()}, frame_count=frame_count
    )


# --- LLM providers ----------------------------------------------------------


class LLMProvider(Protocol):
    def complete(self, prompt: str) -> str: ...


def prompt_key(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


_TRANSCRIPT_REQUEST = "=== request {key}"
_TRANSCRIPT_RESPONSE = "=== response {key}"
_TRANSCRIPT_END = "=== end {key}"


class ReplayProvider:
    """Replays canned transcripts keyed by a hash of the rendered prompt."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._responses = self._load(self.path.read_text())

    @staticmethod
    def _load(text: str) -> dict[str, str]:
        responses: dict[str, str] = {}
        key = None
        collecting = False
        lines: list[str] = []
        for line in text.splitlines():
            if line.startswith("=== request "):
                key = line.removeprefix("=== request ").strip()
                collecting = False
            elif line.startswith("=== response "):
                collecting = True
                lines = []
            elif line.startswith("=== end "):
                if key is not None:
                    responses[key] = "\n".join(lines)
                key = None
                collecting = False
            elif collecting:
                lines.append(line)
        return responses

    def complete(self, prompt: str) -> str:
        key = prompt_key(prompt)
        if key not in self._responses:
            raise BackendError(f"no recorded transcript for prompt hash {key}")
        return self._responses[key]

    @staticmethod
    def record(path: str | Path, prompt: str, response: str):
        """Append one request/response pair to a transcript file."""
        key = prompt_key(prompt)
        block = "\n".join(
            [
                _TRANSCRIPT_REQUEST.format(key=key),
                prompt,
                _TRANSCRIPT_RESPONSE.format(key=key),
                response,
                _TRANSCRIPT_END.format(key=key),
                "",
            ]
        )
        with open(path, "a") as fh:
            fh.write(block)


class HttpChatProvider:
    """Chat-completion client for a configurable endpoint."""

    def __init__(self, url: str, model: str = "default", timeout: float = 60.0):
        self.url = url
        self.model = model
        self.timeout = timeout

    def complete(self, prompt: str) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        }
        try:
            resp = requests.post(self.url, json=payload, timeout=self.timeout)
            resp.raise_for_status()
            doc = resp.json()
            return doc["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            raise BackendError(f"chat completion failed: {exc}", endpoint=self.url) from exc


# --- heading providers -------------------------------------------------------


class HeadingProvider(Protocol):
    def heading(self, frame: FrameImage, character: str) -> Direction: ...


class StubHeadingProvider:
    """Returns a fixed configured heading; raises for unknown characters when
    configured with a per-character mapping."""

    def __init__(self, headings: Direction | dict[str, Direction]):
        self._headings = headings

    def heading(self, frame: FrameImage, character: str) -> Direction:
        if isinstance(self._headings, Direction):
            return self._headings
        from .errors import CharacterNotFoundError

        if character not in self._headings:
            raise CharacterNotFoundError(f"no heading configured for {character!r}")
        return self._headings[character]


def resolve_heading(
    first_frame: FrameImage, character: str, provider: HeadingProvider
) -> HeadingHint:
    """Ask the configured provider which way the character faces in the frame."""
    direction = provider.heading(first_frame, character)
    return HeadingHint(character=character, heading=direction)


# --- plan orchestration ------------------------------------------------------


def plan_from_prompt(
    user_prompt: str,
    frame_count: int,
    provider: LLMProvider | None = None,
    heading: HeadingHint | None = None,
    lexicon: dict[str, tuple[str, ...]] | None = None,
) -> MotionPlan:
    """Produce a plan via the LLM command pair when a provider is given,
    otherwise via the lexicon fallback."""
    if provider is None:
        return fallback_plan(user_prompt, frame_count, lexicon=lexicon).plan
    # The moving-objects query primes the transcript; characters come from the
    # directions answer.
    provider.complete(build_prompt("moving_objects", user_prompt))
    answer = provider.complete(
        build_prompt("directions", user_prompt, heading=heading, frame_count=frame_count)
    )
    return parse_motion_plan(answer, frame_count)
