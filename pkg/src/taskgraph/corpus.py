"""Deterministic synthetic corpus for offline end-to-end runs.

Builds transcripts of a made-up "make moka pot coffee" activity from rollouts
of a known task graph, the completions a summarizer would return for them
(keyed by prompt hash, as the fixture completion provider expects), a small
text corpus for the bigram scorer, and a pipeline config tying them together.
Regenerate with ``python -m taskgraph.corpus <dir>``.
"""

from __future__ import annotations

import random
import sys
from pathlib import Path

from . import jsonio
from .graphinfer import DnfPrecondition, consolidate_graph
from .providers import prompt_hash
from .simulate import rollout
from .summarize import DEFAULT_CHAR_BUDGET, DEFAULT_TEMPLATE, build_prompt, clean_transcript

TASK = "make coffee with a moka pot"
VIDEOS = 60
SEED = 2023

# step id -> (label, surface variants a summarizer might produce)
STEPS: dict[int, tuple[str, list[str]]] = {
    1: ("grind the coffee beans", ["Grind the coffee beans", "grind the coffee beans.", "Grind the coffee beans finely"]),
    2: ("fill the bottom chamber", ["Fill the bottom chamber with water", "Fill the bottom chamber with cold water"]),
    3: ("fill the basket", ["Put the ground coffee in the filter basket", "Put the ground coffee into the filter basket"]),
    4: ("screw on the top", ["Screw the top onto the pot", "Screw the top part onto the pot"]),
    5: ("put the pot on the stove", ["Put the moka pot on the stove", "Place the moka pot on the stove"]),
    6: ("wait for gurgling", ["Wait until the coffee starts gurgling", "Wait until the coffee starts to gurgle"]),
    7: ("pour the coffee", ["Pour the coffee into a cup", "Pour the coffee into your cup"]),
    8: ("warm the cup", ["Warm up the cup with hot water", "Warm the cup with hot water"]),
}

PRECONDITIONS = {
    3: [[1]],
    4: [[2, 3]],
    5: [[4]],
    6: [[5]],
    7: [[6, 8]],
}

NARRATION = [
    "So the next thing is to {s}.",
    "Okay, now {s}.",
    "What I do here is {s}, nothing fancy.",
    "Then you just {s}.",
    "Alright, {s} and we move on.",
]
FILLER = [
    "Hi everyone and welcome back to the channel.",
    "This is my favourite way to start the morning.",
    "Make sure you have everything ready before you begin.",
    "You can find the pot I use linked below.",
    "Thanks for watching and see you next time.",
]
EXTRAS = ["Enjoy your coffee", "Add sugar if you like", "Clean the pot afterwards", "Serve with a biscuit"]
PREAMBLES = ["Sure, here are the key steps:", "Here is a summary of the steps:"]


def truth_graph():
    pre = {p: DnfPrecondition.from_json(PRECONDITIONS.get(p, [])) for p in STEPS}
    return consolidate_graph(pre, {p: label for p, (label, _) in STEPS.items()}, m=len(STEPS))


def _lower_first(text: str) -> str:
    return text[0].lower() + text[1:]


def _completion(rng: random.Random, phrases: list[str]) -> str:
    style = rng.random()
    if style < 0.75:
        lines = [f"{i}. {p}" for i, p in enumerate(phrases, start=1)]
    elif style < 0.9:
        lines = [f"- {p}" for p in phrases]
    else:
        lines = [f"{i}) {p}" for i, p in enumerate(phrases, start=1)]
    if rng.random() < 0.2:
        lines.insert(0, rng.choice(PREAMBLES))
    return "\n" + "\n".join(lines)


def build_corpus(seed: int = SEED, videos: int = VIDEOS) -> dict[str, object]:
    rng = random.Random(seed)
    graph = truth_graph()
    transcripts, completions = [], {}
    extra_budget = {e: 3 for e in EXTRAS}
    for v in range(videos):
        video_id = f"moka-{v:03d}"
        order = rollout(graph, seed * 1000 + v).step_ids
        order = [s for s in order if rng.random() >= 0.08]  # summarizer misses a step now and then
        if len(order) > 3 and rng.random() < 0.15:  # narrator mixes up two steps
            i = rng.randrange(len(order) - 1)
            order[i], order[i + 1] = order[i + 1], order[i]
        phrases = [rng.choice(STEPS[s][1]) for s in order]
        sentences = [rng.choice(FILLER)]
        sentences += [rng.choice(NARRATION).format(s=_lower_first(p).rstrip(".")) for p in phrases]
        sentences.append(rng.choice(FILLER))
        extra = rng.choice(EXTRAS)
        if rng.random() < 0.25 and extra_budget[extra] > 0:
            extra_budget[extra] -= 1
            phrases.append(extra)
            sentences.insert(-1, f"And finally, {_lower_first(extra)}.")
        text = " ".join(sentences)
        transcripts.append({"task": TASK, "video_id": video_id, "text": text})
        # one summarizer call that came back empty; the pipeline must skip it
        completion = "" if v == 17 else _completion(rng, phrases)
        cleaned, _ = clean_transcript(text, DEFAULT_CHAR_BUDGET)
        completions[prompt_hash(build_prompt(TASK, cleaned, DEFAULT_TEMPLATE))] = completion

    lm_docs = []
    for d in range(30):
        order = rollout(graph, seed * 7000 + d).step_ids
        lm_docs.append("\n".join(f"{i}. {rng.choice(STEPS[s][1])}" for i, s in enumerate(order, start=1)))

    config = {
        "provider": {"kind": "fixture", "fixtures_path": "completions.json", "corpus_path": "lm_corpus.txt"},
        "pipeline": {"transcripts": "transcripts.json", "task": TASK},
    }
    return {
        "transcripts.json": transcripts,
        "completions.json": completions,
        "lm_corpus.txt": "\n\n".join(lm_docs) + "\n",
        "truth_graph.json": graph.to_json(),
        "config.json": config,
    }


def write_corpus(directory: Path | str, seed: int = SEED) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, content in build_corpus(seed).items():
        if isinstance(content, str):
            jsonio.write_text(directory / name, content)
        else:
            jsonio.write_json(directory / name, content)


def bundled_corpus_dir() -> Path:
    return Path(__file__).parent / "data" / "synthetic"


if __name__ == "__main__":
    write_corpus(sys.argv[1] if len(sys.argv) > 1 else bundled_corpus_dir())
