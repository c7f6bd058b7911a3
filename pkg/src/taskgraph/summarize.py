"""Turn transcripts into ordered lists of short step phrases via a completion model."""

from __future__ import annotations

import logging
import re
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any

from .errors import EmptySummaryError, InvalidInputError
from .providers import CompletionProvider, Prompt

log = logging.getLogger(__name__)

DEFAULT_TEMPLATE = "Based on this description list down the key steps for {task} using short phrases."
DEFAULT_CHAR_BUDGET = 12_000

_MARKER = re.compile(r"^\s*(?:\d+[.)](?!\d)|[-*•])\s*")


@dataclass(frozen=True)
class Transcript:
    task_name: str
    video_id: str
    text: str

    def __post_init__(self) -> None:
        if not self.task_name or not self.task_name.strip():
            raise InvalidInputError("transcript task_name must be non-empty")
        if not self.text or not self.text.strip():
            raise InvalidInputError(f"transcript {self.video_id!r} has empty text")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Transcript:
        try:
            return cls(task_name=data["task"], video_id=str(data["video_id"]), text=data["text"])
        except KeyError as exc:
            raise InvalidInputError(f"transcript record missing field {exc}") from None

    def to_dict(self) -> dict[str, Any]:
        return {"task": self.task_name, "video_id": self.video_id, "text": self.text}


@dataclass
class SummaryStepSequence:
    video_id: str
    steps: list[str]
    raw_completion: str = ""
    truncated: bool = False

    def __post_init__(self) -> None:
        if any(not s.strip() for s in self.steps):
            raise InvalidInputError(f"summary for {self.video_id!r} contains an empty step")

    def to_dict(self) -> dict[str, Any]:
        return {
            "video_id": self.video_id,
            "steps": list(self.steps),
            "raw_completion": self.raw_completion,
            "truncated": self.truncated,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SummaryStepSequence:
        return cls(
            video_id=str(data["video_id"]),
            steps=list(data["steps"]),
            raw_completion=data.get("raw_completion", ""),
            truncated=bool(data.get("truncated", False)),
        )


def build_prompt(task_name: str, transcript_text: str, template: str = DEFAULT_TEMPLATE) -> Prompt:
    if not task_name or not task_name.strip():
        raise InvalidInputError("task name must be non-empty")
    if not transcript_text or not transcript_text.strip():
        raise InvalidInputError("transcript text must be non-empty")
    return Prompt(f"{transcript_text}\n{template.replace('{task}', task_name)}")


def _strip_markers(line: str) -> tuple[str, bool]:
    marked = False
    while (m := _MARKER.match(line)) is not None:
        line = line[m.end() :]
        marked = True
    return line.strip(), marked


def parse_steps(completion_text: str) -> list[str]:
    """Extract the enumerated or bulleted items of a model completion, in order.

    Lines without a leading ``1.``/``1)``/``-``/``*``/bullet marker are treated
    as chatter and dropped, wherever they appear.
    """
    steps = []
    for line in completion_text.splitlines():
        text, marked = _strip_markers(line)
        if marked and text:
            steps.append(text)
    if not steps:
        raise EmptySummaryError("completion contains no enumerated steps")
    return steps


def clean_transcript(text: str, char_budget: int | None = DEFAULT_CHAR_BUDGET) -> tuple[str, bool]:
    text = " ".join(text.split())
    if char_budget is not None and len(text) > char_budget:
        return text[:char_budget], True
    return text, False


def summarize_transcript(
    t: Transcript,
    completer: CompletionProvider,
    *,
    template: str = DEFAULT_TEMPLATE,
    char_budget: int | None = DEFAULT_CHAR_BUDGET,
) -> SummaryStepSequence:
    text, truncated = clean_transcript(t.text, char_budget)
    if truncated:
        log.info("transcript %s truncated to %d characters", t.video_id, char_budget)
    completion = completer.complete(build_prompt(t.task_name, text, template))
    try:
        steps = parse_steps(completion)
    except EmptySummaryError:
        raise EmptySummaryError(f"transcript {t.video_id!r}: completion contains no enumerated steps") from None
    return SummaryStepSequence(t.video_id, steps, raw_completion=completion, truncated=truncated)


def summarize_all(
    transcripts: Sequence[Transcript],
    completer: CompletionProvider,
    *,
    template: str = DEFAULT_TEMPLATE,
    char_budget: int | None = DEFAULT_CHAR_BUDGET,
    max_parallel: int = 1,
) -> list[SummaryStepSequence]:
    """Summarize every transcript, skipping (with a warning) those yielding no steps.

    Results keep input order regardless of ``max_parallel``.
    """

    def one(t: Transcript) -> SummaryStepSequence | None:
        try:
            return summarize_transcript(t, completer, template=template, char_budget=char_budget)
        except EmptySummaryError as exc:
            log.warning("skipping transcript: %s", exc)
            return None

    if max_parallel > 1 and len(transcripts) > 1:
        with ThreadPoolExecutor(max_workers=max_parallel) as pool:
            results = list(pool.map(one, transcripts))
    else:
        results = [one(t) for t in transcripts]
    return [r for r in results if r is not None]


def split_sentences(text: str) -> list[str]:
    """Naive sentence split used when labeling raw transcript text directly."""
    parts = re.split(r"(?<=[.!?])\s+|\n+", text)
    return [p.strip() for p in parts if p.strip() and re.search(r"\w", p)]


def transcript_as_steps(t: Transcript) -> SummaryStepSequence:
    return SummaryStepSequence(t.video_id, split_sentences(t.text), raw_completion="")


def load_transcripts(records: Iterable[dict[str, Any]]) -> list[Transcript]:
    if not isinstance(records, list):
        raise InvalidInputError("transcripts file must hold a JSON array")
    return [Transcript.from_dict(r) for r in records]
