"""Graphviz DOT rendering of task graphs."""

from __future__ import annotations

from .graphinfer import TaskGraph


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def export_dot(graph: TaskGraph, name: str = "task_graph") -> str:
    lines = [
        f"digraph {_quote(name)} {{",
        "  rankdir=TB;",
        '  node [fontname="Helvetica"];',
    ]
    for node in graph.nodes:
        if node.kind == "step":
            attrs = f"shape=box, label={_quote(node.label)}"
        else:
            attrs = f"shape=diamond, label={_quote(node.label)}, fontsize=9, width=0.4, height=0.4"
        lines.append(f"  {_quote(node.id)} [{attrs}];")
    for src, dst in graph.edges:
        lines.append(f"  {_quote(src)} -> {_quote(dst)};")
    lines.append("}")
    return "\n".join(lines) + "\n"
