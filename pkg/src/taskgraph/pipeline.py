"""End-to-end orchestration: transcripts -> summaries -> key steps -> sequences -> ranking -> graph."""

from __future__ import annotations

import logging
from collections.abc import Iterator, Mapping, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import httpx

from . import jsonio
from .cluster import ClusterConfig, KeyStep, identify_key_steps, key_steps_from_dicts
from .dot import export_dot
from .errors import InvalidInputError, TaskGraphError
from .graphinfer import GraphConfig, TaskGraph, infer_graph
from .label import KeyStepSequence, label_all
from .providers import ProviderConfig, make_providers
from .rank import RankConfig, rank_sequences, topk_filter
from .summarize import (
    DEFAULT_CHAR_BUDGET,
    DEFAULT_TEMPLATE,
    SummaryStepSequence,
    Transcript,
    load_transcripts,
    summarize_all,
    transcript_as_steps,
)

log = logging.getLogger(__name__)

SUMMARIES = "summaries.json"
CLUSTERS = "clusters.json"
SEQUENCES = "sequences.json"
RANKING = "ranking.json"
GRAPH = "graph.json"
DOT = "graph.dot"


class StageError(Exception):
    """Wraps a failure with the name of the pipeline stage it came from."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def stage(name: str) -> Iterator[None]:
    try:
        yield
    except StageError:
        raise
    except TaskGraphError as exc:
        raise StageError(name, exc) from exc


@dataclass
class PipelineConfig:
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    rank: RankConfig = field(default_factory=RankConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    summary_template: str = DEFAULT_TEMPLATE
    char_budget: int | None = DEFAULT_CHAR_BUDGET
    accuracy_mode: str = "exact"
    seed: int = 0
    label_source: str = "summary"
    task: str | None = None
    transcripts: Path | None = None
    out_dir: Path = Path("out")

    def __post_init__(self) -> None:
        if self.label_source not in ("summary", "asr"):
            raise InvalidInputError(f"label_source must be 'summary' or 'asr', got {self.label_source!r}")
        if self.accuracy_mode not in ("exact", "sampled"):
            raise InvalidInputError(f"accuracy_mode must be 'exact' or 'sampled', got {self.accuracy_mode!r}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: Path | None = None) -> PipelineConfig:
        """Build from a document with ``provider``, ``summarize``, ``cluster``,
        ``rank``, ``graph`` and ``pipeline`` sections. Relative paths resolve
        against ``base_dir``."""
        unknown = set(data) - {"provider", "summarize", "cluster", "rank", "graph", "pipeline"}
        if unknown:
            raise InvalidInputError(f"unknown config sections: {sorted(unknown)}")

        def resolve(value: Any) -> Any:
            if value is None or base_dir is None:
                return value
            p = Path(value)
            return p if p.is_absolute() else base_dir / p

        provider = dict(data.get("provider", {}))
        for key in ("cache_dir", "fixtures_path", "corpus_path"):
            if key in provider:
                provider[key] = resolve(provider[key])
        summarize = dict(data.get("summarize", {}))
        pipeline = dict(data.get("pipeline", {}))
        for key in ("transcripts", "out_dir"):
            if key in pipeline:
                pipeline[key] = resolve(pipeline[key])
        try:
            return cls(
                provider=ProviderConfig.from_dict(provider),
                cluster=ClusterConfig(**data.get("cluster", {})),
                rank=RankConfig(**data.get("rank", {})),
                graph=GraphConfig(**data.get("graph", {})),
                summary_template=summarize.pop("template", DEFAULT_TEMPLATE),
                char_budget=summarize.pop("char_budget", DEFAULT_CHAR_BUDGET),
                **_known(cls, pipeline),
            )
        except TypeError as exc:
            raise InvalidInputError(f"bad configuration: {exc}") from exc

    @classmethod
    def load(cls, path: Path | str) -> PipelineConfig:
        path = Path(path)
        return cls.from_dict(jsonio.read_json(path), base_dir=path.parent)


def _known(cls: type, values: Mapping[str, Any]) -> dict[str, Any]:
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise InvalidInputError(f"unknown settings: {sorted(unknown)}")
    out = dict(values)
    for key in ("transcripts", "out_dir"):
        if out.get(key) is not None:
            out[key] = Path(out[key])
    return out


def with_overrides(config: PipelineConfig, overrides: Mapping[str, Any]) -> PipelineConfig:
    """Apply dotted overrides such as ``{"cluster.sim_threshold": 0.8}``; None values are ignored."""
    sections: dict[str, dict[str, Any]] = {}
    top: dict[str, Any] = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if "." in key:
            section, name = key.split(".", 1)
            sections.setdefault(section, {})[name] = value
        else:
            top[key] = value
    updated = {name: replace(getattr(config, name), **vals) for name, vals in sections.items()}
    return replace(config, **updated, **_known(PipelineConfig, top))


def read_transcripts(path: Path | str, task: str | None = None) -> tuple[str, list[Transcript]]:
    transcripts = load_transcripts(jsonio.read_json(path))
    if task is not None:
        transcripts = [t for t in transcripts if t.task_name == task]
    tasks = sorted({t.task_name for t in transcripts})
    if not tasks:
        raise InvalidInputError(f"{path}: no transcripts" + (f" for task {task!r}" if task else ""))
    if len(tasks) > 1:
        raise InvalidInputError(f"{path}: several tasks {tasks}; choose one with --task")
    return tasks[0], transcripts


@dataclass
class RankingRecord:
    video_id: str
    score: float | None
    kept: bool

    def to_dict(self) -> dict[str, Any]:
        return {"video_id": self.video_id, "score": self.score, "kept": self.kept}


class Pipeline:
    def __init__(
        self,
        config: PipelineConfig,
        *,
        transcripts: Sequence[Transcript] = (),
        providers: tuple[Any, Any, Any] | None = None,
        client: httpx.Client | None = None,
    ):
        self.config = config
        if providers is None:
            # fixture scorer falls back to the task's own transcripts as its corpus
            providers = make_providers(config.provider, corpus=[t.text for t in transcripts], client=client)
        self.completer, self.embedder, self.scorer = providers

    def summarize(self, transcripts: Sequence[Transcript]) -> list[SummaryStepSequence]:
        with stage("summarize"):
            return summarize_all(
                transcripts,
                self.completer,
                template=self.config.summary_template,
                char_budget=self.config.char_budget,
                max_parallel=self.config.provider.max_parallel,
            )

    def cluster(self, summaries: Sequence[SummaryStepSequence]) -> list[KeyStep]:
        with stage("cluster"):
            return identify_key_steps(summaries, self.embedder, self.config.cluster)

    def label(
        self,
        summaries: Sequence[SummaryStepSequence],
        key_steps: Sequence[KeyStep],
        transcripts: Sequence[Transcript] = (),
    ) -> list[KeyStepSequence]:
        with stage("label"):
            if self.config.label_source == "asr":
                if not transcripts:
                    raise InvalidInputError("label source 'asr' needs the transcripts")
                sources = [transcript_as_steps(t) for t in transcripts]
            else:
                sources = list(summaries)
            return label_all(sources, key_steps, self.embedder)

    def rank(
        self, sequences: Sequence[KeyStepSequence], key_steps: Sequence[KeyStep], task: str
    ) -> list[RankingRecord]:
        with stage("rank"):
            scorable = [h for h in sequences if len(h)]
            for h in sequences:
                if not len(h):
                    log.warning("sequence %s matched no key step; not ranked", h.video_id)
            if not scorable:
                raise InvalidInputError("no non-empty key step sequences to rank")
            ranked = rank_sequences(
                scorable, task, key_steps, self.scorer, self.config.rank,
                max_parallel=self.config.provider.max_parallel,
            )
            kept = {id(r.sequence) for r in topk_filter(ranked, self.config.rank.keep_fraction)}
            scores = {id(r.sequence): r.score for r in ranked}
            return [RankingRecord(h.video_id, scores.get(id(h)), id(h) in kept) for h in sequences]

    def graph(self, sequences: Sequence[KeyStepSequence], key_steps: Sequence[KeyStep]) -> TaskGraph:
        with stage("graph"):
            return infer_graph(sequences, len(key_steps), self.config.graph, labels=key_steps)

    def run(self, transcripts: Sequence[Transcript], task: str, out_dir: Path | str) -> TaskGraph:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        summaries = self.summarize(transcripts)
        jsonio.write_json(out / SUMMARIES, [s.to_dict() for s in summaries])
        key_steps = self.cluster(summaries)
        jsonio.write_json(out / CLUSTERS, [k.to_dict() for k in key_steps])
        sequences = self.label(summaries, key_steps, transcripts)
        jsonio.write_json(out / SEQUENCES, [h.to_dict() for h in sequences])
        ranking = self.rank(sequences, key_steps, task)
        jsonio.write_json(out / RANKING, [r.to_dict() for r in ranking])
        graph = self.graph(select_kept(sequences, ranking), key_steps)
        write_graph(graph, out / GRAPH, out / DOT, name=task)
        return graph


def select_kept(sequences: Sequence[KeyStepSequence], ranking: Sequence[RankingRecord | Mapping[str, Any]]):
    kept = set()
    for r in ranking:
        rec = r.to_dict() if isinstance(r, RankingRecord) else r
        if rec["kept"]:
            kept.add(rec["video_id"])
    return [h for h in sequences if h.video_id in kept]


def write_graph(graph: TaskGraph, json_path: Path, dot_path: Path | None = None, name: str = "task_graph") -> None:
    jsonio.write_json(json_path, graph.to_json())
    if dot_path is not None:
        jsonio.write_text(dot_path, export_dot(graph, name))


def load_graph(path: Path | str) -> TaskGraph:
    data = jsonio.read_json(path)
    if not isinstance(data, dict):
        raise InvalidInputError(f"{path}: graph file must hold a JSON object")
    return TaskGraph.from_json(data)


def load_summaries(path: Path | str) -> list[SummaryStepSequence]:
    data = jsonio.read_json(path)
    try:
        return [SummaryStepSequence.from_dict(d) for d in data]
    except (KeyError, TypeError) as exc:
        raise InvalidInputError(f"{path}: malformed summaries ({exc})") from exc


def load_sequences(path: Path | str) -> list[KeyStepSequence]:
    data = jsonio.read_json(path)
    try:
        return [KeyStepSequence.from_dict(d) for d in data]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"{path}: malformed key step sequences ({exc})") from exc


def load_key_steps(path: Path | str, embedder: Any) -> list[KeyStep]:
    try:
        return key_steps_from_dicts(jsonio.read_json(path), embedder)
    except (KeyError, TypeError) as exc:
        raise InvalidInputError(f"{path}: malformed clusters ({exc})") from exc
