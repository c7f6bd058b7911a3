"""Task graphs from instructional transcripts.

Stages: summarize transcripts into step phrases, cluster phrases into key steps,
label each transcript as a key-step sequence, rank and filter the sequences,
then infer per-step preconditions as an AND/OR graph.
"""

from .graphinfer import TaskGraph, eval_accuracy, infer_graph
from .pipeline import Pipeline, PipelineConfig

__version__ = "0.1.0"

__all__ = ["Pipeline", "PipelineConfig", "TaskGraph", "eval_accuracy", "infer_graph", "__version__"]
