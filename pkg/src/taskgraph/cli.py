"""Command-line entry point: ``taskgraph <stage> ...``.

Exit codes: 0 success, 2 usage or input error, 3 provider/transport error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any

from . import jsonio, pipeline as pl
from .dot import export_dot
from .errors import ProviderError, TaskGraphError
from .graphinfer import eval_accuracy, infer_graph
from .simulate import RolloutConfig, generate_dataset

EXIT_OK, EXIT_INPUT, EXIT_PROVIDER = 0, 2, 3


def _common(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("configuration")
    g.add_argument("--config", type=Path, help="JSON config file with per-stage sections")
    g.add_argument("--out-dir", type=Path)
    g.add_argument("--task", help="task name to select from the transcripts file")
    g.add_argument("--provider", choices=["remote", "fixture"], dest="provider_kind")
    g.add_argument("--endpoint")
    g.add_argument("--cache-dir", type=Path)
    g.add_argument("--fixtures", type=Path, help="recorded completions (prompt hash -> text)")
    g.add_argument("--corpus", type=Path, help="text corpus for the bigram fixture scorer")
    g.add_argument("--sim-threshold", type=float)
    g.add_argument("--min-clique", type=int)
    g.add_argument("--merge-sim", type=float)
    g.add_argument("--merge-overlap", type=float)
    g.add_argument("--keep-fraction", type=float)
    g.add_argument("--negative-weight", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--label-source", choices=["summary", "asr"])
    g.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taskgraph", description="Task graph generation from transcripts.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full pipeline")
    _common(p)
    p.add_argument("--transcripts", type=Path)

    p = sub.add_parser("summarize", help="transcripts -> summary step sequences")
    _common(p)
    p.add_argument("--transcripts", type=Path)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("cluster", help="summaries -> key steps")
    _common(p)
    p.add_argument("--summaries", type=Path, required=True)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("label", help="summaries + key steps -> key step sequences")
    _common(p)
    p.add_argument("--summaries", type=Path, required=True)
    p.add_argument("--clusters", type=Path, required=True)
    p.add_argument("--transcripts", type=Path, help="needed with --label-source asr")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("rank", help="score key step sequences and mark the kept fraction")
    _common(p)
    p.add_argument("--transcripts", type=Path)
    p.add_argument("--clusters", type=Path, required=True)
    p.add_argument("--sequences", type=Path, required=True)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("graph", help="key step sequences -> task graph")
    _common(p)
    p.add_argument("--sequences", type=Path, required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--clusters", type=Path, help="key steps file (gives m and labels)")
    src.add_argument("--m", type=int, help="number of key steps when no clusters file exists")
    p.add_argument("--ranking", type=Path, help="only use sequences marked kept")
    p.add_argument("--out", type=Path)
    p.add_argument("--dot", type=Path)

    p = sub.add_parser("eval", help="graph prediction accuracy of PRED against TRUTH")
    p.add_argument("pred", type=Path)
    p.add_argument("truth", type=Path)
    p.add_argument("--mode", choices=["exact", "sampled"], default="exact")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("simulate", help="sample key step sequences from a ground-truth graph")
    p.add_argument("graph", type=Path)
    p.add_argument("--count", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--drop-prob", type=float, default=0.0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("export-dot", help="render a graph JSON file as DOT")
    p.add_argument("graph", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--name", default="task_graph")
    return parser


def resolve_config(args: argparse.Namespace) -> pl.PipelineConfig:
    config = pl.PipelineConfig.load(args.config) if args.config else pl.PipelineConfig()
    overrides: dict[str, Any] = {
        "out_dir": args.out_dir,
        "task": args.task,
        "seed": args.seed,
        "label_source": args.label_source,
        "transcripts": getattr(args, "transcripts", None),
        "cluster.sim_threshold": args.sim_threshold,
        "cluster.min_clique_size": args.min_clique,
        "cluster.merge_sim_threshold": args.merge_sim,
        "cluster.merge_overlap_threshold": args.merge_overlap,
        "rank.keep_fraction": args.keep_fraction,
        "graph.negative_weight": args.negative_weight,
        "provider.kind": args.provider_kind,
        "provider.endpoint": args.endpoint,
        "provider.cache_dir": args.cache_dir,
        "provider.fixtures_path": args.fixtures,
        "provider.corpus_path": args.corpus,
    }
    return pl.with_overrides(config, overrides)


def _transcripts(config: pl.PipelineConfig):
    if config.transcripts is None:
        raise TaskGraphError("no transcripts file given (--transcripts or pipeline.transcripts)")
    with pl.stage("load"):
        return pl.read_transcripts(config.transcripts, config.task)


def _out(args: argparse.Namespace, config: pl.PipelineConfig, default: str) -> Path:
    return args.out if getattr(args, "out", None) else config.out_dir / default


def cmd_run(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    task, transcripts = _transcripts(config)
    pipe = pl.Pipeline(config, transcripts=transcripts)
    graph = pipe.run(transcripts, task, config.out_dir)
    print(f"{graph.m} key steps, {len(graph.edges)} edges -> {config.out_dir / pl.GRAPH}")
    return EXIT_OK


def cmd_summarize(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    _, transcripts = _transcripts(config)
    summaries = pl.Pipeline(config, transcripts=transcripts).summarize(transcripts)
    jsonio.write_json(_out(args, config, pl.SUMMARIES), [s.to_dict() for s in summaries])
    return EXIT_OK


def cmd_cluster(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    with pl.stage("cluster"):
        summaries = pl.load_summaries(args.summaries)
    key_steps = pl.Pipeline(config).cluster(summaries)
    jsonio.write_json(_out(args, config, pl.CLUSTERS), [k.to_dict() for k in key_steps])
    return EXIT_OK


def cmd_label(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    transcripts = _transcripts(config)[1] if config.label_source == "asr" else []
    pipe = pl.Pipeline(config, transcripts=transcripts)
    with pl.stage("label"):
        summaries = pl.load_summaries(args.summaries)
        key_steps = pl.load_key_steps(args.clusters, pipe.embedder)
    sequences = pipe.label(summaries, key_steps, transcripts)
    jsonio.write_json(_out(args, config, pl.SEQUENCES), [h.to_dict() for h in sequences])
    return EXIT_OK


def cmd_rank(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    task, transcripts = _transcripts(config)
    pipe = pl.Pipeline(config, transcripts=transcripts)
    with pl.stage("rank"):
        key_steps = pl.load_key_steps(args.clusters, pipe.embedder)
        sequences = pl.load_sequences(args.sequences)
    ranking = pipe.rank(sequences, key_steps, task)
    jsonio.write_json(_out(args, config, pl.RANKING), [r.to_dict() for r in ranking])
    return EXIT_OK


def cmd_graph(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    with pl.stage("graph"):
        sequences = pl.load_sequences(args.sequences)
        if args.ranking:
            sequences = pl.select_kept(sequences, jsonio.read_json(args.ranking))
        if args.clusters:
            pipe = pl.Pipeline(config)
            key_steps = pl.load_key_steps(args.clusters, pipe.embedder)
            graph = pipe.graph(sequences, key_steps)
        else:
            graph = infer_graph(sequences, args.m, config.graph)
    out = _out(args, config, pl.GRAPH)
    pl.write_graph(graph, out, args.dot, name=config.task or "task_graph")
    print(f"{graph.m} key steps, {len(graph.edges)} edges -> {out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    with pl.stage("eval"):
        pred, truth = pl.load_graph(args.pred), pl.load_graph(args.truth)
        accuracy = eval_accuracy(pred, truth, args.mode, args.seed)
    print(f"{accuracy:.4f}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    with pl.stage("simulate"):
        graph = pl.load_graph(args.graph)
        data = generate_dataset(graph, RolloutConfig(args.count, args.seed, args.drop_prob))
    jsonio.write_json(args.out, [h.to_dict() for h in data])
    return EXIT_OK


def cmd_export_dot(args: argparse.Namespace) -> int:
    with pl.stage("export-dot"):
        text = export_dot(pl.load_graph(args.graph), args.name)
    if args.out:
        jsonio.write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "summarize": cmd_summarize,
    "cluster": cmd_cluster,
    "label": cmd_label,
    "rank": cmd_rank,
    "graph": cmd_graph,
    "eval": cmd_eval,
    "simulate": cmd_simulate,
    "export-dot": cmd_export_dot,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except pl.StageError as exc:
        print(f"error [{exc.stage}]: {exc.cause}", file=sys.stderr)
        return EXIT_PROVIDER if isinstance(exc.cause, ProviderError) else EXIT_INPUT
    except TaskGraphError as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_PROVIDER if isinstance(exc, ProviderError) else EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
