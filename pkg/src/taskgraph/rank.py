"""Language-model likelihood ranking of key-step sequences and top-k filtering."""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .cluster import KeyStep
from .errors import InvalidInputError
from .label import KeyStepSequence
from .providers import LikelihoodScorer, Prompt
from .summarize import DEFAULT_TEMPLATE


@dataclass(frozen=True)
class RankConfig:
    keep_fraction: float = 0.75
    prompt_template: str = DEFAULT_TEMPLATE

    def __post_init__(self) -> None:
        if not 0.0 < self.keep_fraction <= 1.0:
            raise InvalidInputError(f"keep_fraction must lie in (0, 1], got {self.keep_fraction}")


@dataclass(frozen=True)
class RankedSequence:
    sequence: KeyStepSequence
    score: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.score):
            raise InvalidInputError(f"non-finite score for {self.sequence.video_id!r}")


def _labels(key_steps: Sequence[KeyStep] | Mapping[int, str]) -> Mapping[int, str]:
    if isinstance(key_steps, Mapping):
        return key_steps
    return {k.id: k.label for k in key_steps}


def render_sequence(h: KeyStepSequence, key_steps: Sequence[KeyStep] | Mapping[int, str]) -> str:
    labels = _labels(key_steps)
    lines = []
    for n, step in enumerate(h.step_ids, start=1):
        if step not in labels:
            raise InvalidInputError(f"unknown key step id {step}")
        lines.append(f"{n}. {labels[step]}")
    return "\n".join(lines)


def ranking_prompt(task_name: str, template: str = DEFAULT_TEMPLATE) -> Prompt:
    return Prompt(template.replace("{task}", task_name))


def score_sequence(
    h: KeyStepSequence,
    task_name: str,
    key_steps: Sequence[KeyStep] | Mapping[int, str],
    scorer: LikelihoodScorer,
    config: RankConfig | None = None,
) -> float:
    config = config or RankConfig()
    text = render_sequence(h, key_steps)
    if not text:
        raise InvalidInputError(f"sequence {h.video_id!r} is empty; nothing to score")
    return scorer.score_loglik(ranking_prompt(task_name, config.prompt_template), text)


def kept_count(n: int, keep_fraction: float) -> int:
    # round() guards against products like 0.7 * 10 = 7.000000000000001
    return math.ceil(round(keep_fraction * n, 9))


def topk_filter(ranked: Sequence[RankedSequence], keep_fraction: float) -> list[RankedSequence]:
    if not ranked:
        raise InvalidInputError("nothing to filter")
    if not 0.0 < keep_fraction <= 1.0:
        raise InvalidInputError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    ordered = sorted(ranked, key=lambda r: -r.score)  # stable: ties keep input order
    return ordered[: kept_count(len(ranked), keep_fraction)]


def rank_sequences(
    sequences: Sequence[KeyStepSequence],
    task_name: str,
    key_steps: Sequence[KeyStep] | Mapping[int, str],
    scorer: LikelihoodScorer,
    config: RankConfig | None = None,
    *,
    max_parallel: int = 1,
) -> list[RankedSequence]:
    """Score every sequence; output order matches input order."""
    config = config or RankConfig()

    def one(h: KeyStepSequence) -> RankedSequence:
        return RankedSequence(h, score_sequence(h, task_name, key_steps, scorer, config))

    if max_parallel > 1 and len(sequences) > 1:
        with ThreadPoolExecutor(max_workers=max_parallel) as pool:
            return list(pool.map(one, sequences))
    return [one(h) for h in sequences]
