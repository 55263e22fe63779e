"""Segment-level alignment of parallel speech documents."""

from .data import (
    Alignment,
    DataError,
    DocumentPair,
    EmbeddingMatrix,
    FormatError,
    OverlapSegment,
    Segment,
    Span,
)
from .evaluate import duration_stats, order_stats, score_pr
from .mining import global_mine, local_mine, margin_score
from .overlaps import OverlapConfig, assemble_embeddings, build_overlaps
from .postprocess import PostConfig, run_postprocess
from .synth import SynthConfig, generate, oracle_expected_detections
from .vecalign import AlignParams, DocVectors, alignment_cost, full_dp, recursive_align

__version__ = "0.1.0"

__all__ = [
    "AlignParams",
    "Alignment",
    "DataError",
    "DocVectors",
    "DocumentPair",
    "EmbeddingMatrix",
    "FormatError",
    "OverlapConfig",
    "OverlapSegment",
    "PostConfig",
    "Segment",
    "Span",
    "SynthConfig",
    "alignment_cost",
    "assemble_embeddings",
    "build_overlaps",
    "duration_stats",
    "full_dp",
    "generate",
    "global_mine",
    "local_mine",
    "margin_score",
    "oracle_expected_detections",
    "order_stats",
    "recursive_align",
    "run_postprocess",
    "score_pr",
]
