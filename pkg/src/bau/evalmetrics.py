"""Retrieval metrics (mAP, Rank-1) and embedding-space diagnostics.

Single-shot evaluation without camera filtering: gallery items are ranked
by ascending squared distance (ties by ascending gallery index), average
precision is computed per query, and Rank-1 is the fraction of evaluated
queries whose top-ranked gallery item shares their label. Queries with no
gallery match are skipped but counted. Alignment and uniformity
diagnostics are computed on the union of query and gallery embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyGallery, NoRelevant
from .geometry import pairwise_sq_dist
from .losses import alignment_diagnostic, uniformity_diagnostic

REPORT_SCHEMA = "bau.report.v1"
REPORT_COLUMNS = [
    "run_id",
    "seed",
    "p",
    "lambda",
    "k",
    "mu",
    "mAP",
    "rank1",
    "align_diag",
    "uniform_diag",
]


@dataclass
class RetrievalReport:
    mean_ap: float
    rank1: float
    per_query_ap: np.ndarray
    alignment_diag: float
    uniformity_diag: float
    num_queries: int
    num_skipped: int


def average_precision(relevance) -> float:
    """Mean over relevant ranks r of (relevant within top r) / r."""
    rel = np.asarray(relevance, dtype=bool)
    if rel.size == 0 or not rel.any():
        raise NoRelevant("ranking contains no relevant entry")
    hits = np.cumsum(rel)
    ranks = np.flatnonzero(rel) + 1
    return float(np.mean(hits[ranks - 1] / ranks))


def evaluate(
    query_feats: np.ndarray,
    gallery_feats: np.ndarray,
    query_labels: np.ndarray,
    gallery_labels: np.ndarray,
) -> RetrievalReport:
    """Rank the gallery for each query and aggregate AP / Rank-1."""
    query_feats = np.asarray(query_feats, dtype=np.float64)
    gallery_feats = np.asarray(gallery_feats, dtype=np.float64)
    query_labels = np.asarray(query_labels)
    gallery_labels = np.asarray(gallery_labels)
    G = gallery_feats.shape[0]
    if G == 0:
        raise EmptyGallery("gallery is empty")
    D = pairwise_sq_dist(query_feats, gallery_feats)
    gallery_idx = np.arange(G)
    aps = []
    rank1_hits = 0
    skipped = 0
    for q in range(query_feats.shape[0]):
        order = np.lexsort((gallery_idx, D[q]))
        rel = gallery_labels[order] == query_labels[q]
        if not rel.any():
            skipped += 1
            continue
        aps.append(average_precision(rel))
        rank1_hits += int(rel[0])
    per_query = np.asarray(aps)
    evaluated = per_query.size
    union_feats = np.vstack([query_feats, gallery_feats])
    union_labels = np.concatenate([query_labels, gallery_labels])
    return RetrievalReport(
        mean_ap=float(per_query.mean()) if evaluated else 0.0,
        rank1=rank1_hits / evaluated if evaluated else 0.0,
        per_query_ap=per_query,
        alignment_diag=alignment_diagnostic(union_feats, union_labels),
        uniformity_diag=uniformity_diagnostic(union_feats),
        num_queries=int(query_feats.shape[0]),
        num_skipped=skipped,
    )
