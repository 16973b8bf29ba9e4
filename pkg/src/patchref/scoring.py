"""Candidate mask scoring, cluster-based reranking and final selection.

Each candidate mask gets a positive score (cosine of its image embedding
against the text context) and an overlap score (IoU between the mask and
the patch clusters, upsampled to mask resolution).  Masks are first
ranked by positive score alone; the rerank keeps that top-1 and reorders
the rest by overlap.  When the expression contains a spatial relation
and a negative text embedding is available, the final choice among the
top-k subtracts a weighted negative score, pushing down masks that match
the distractor object named after the relation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .evaluation import iou
from .spatialmap import upsample_nearest
from .textfusion import cosine

log = logging.getLogger(__name__)

OVERLAP_UNION_IOU = "union-iou"
OVERLAP_PER_CLUSTER_MAX = "per-cluster-max"
OVERLAP_METRICS = (OVERLAP_UNION_IOU, OVERLAP_PER_CLUSTER_MAX)


@dataclass
class MaskScore:
    mask_id: int
    s_pos: float
    s_neg: float | None
    overlap: float
    final: float


@dataclass
class SelectionResult:
    """Everything the rerank produced for one sample."""

    scores: list[MaskScore]
    sorted_ids: list[int]  # by positive score alone
    clustered_ids: list[int]  # by cluster overlap
    topk_ids: list[int]
    final_id: int
    k_used: int
    sc_applied: bool  # negative score subtracted in the final choice
    sc_fallback: bool  # spatial cue present but no negative embedding
    zero_norm_rows: int  # image embeddings with zero norm


def positive_scores(e_img: np.ndarray, e_context: np.ndarray) -> tuple[list[float], int]:
    """Cosine of each image embedding row against the context feature."""
    e_img = np.asarray(e_img, dtype=np.float64)
    scores = []
    zero_rows = 0
    for row in e_img:
        if float(np.linalg.norm(row)) == 0.0:
            zero_rows += 1
        scores.append(cosine(row, e_context))
    return scores, zero_rows


def cluster_overlaps(
    candidate_masks: np.ndarray,
    labels: np.ndarray,
    metric: str = OVERLAP_UNION_IOU,
) -> list[float]:
    """Overlap of each candidate mask with the patch clusters.

    ``union-iou`` compares against the union of all cluster pixels;
    ``per-cluster-max`` takes the best IoU over individual clusters.
    Labels are upsampled to mask resolution by nearest neighbour first.
    """
    if metric not in OVERLAP_METRICS:
        raise ValidationError(f"unknown overlap metric {metric!r}")
    candidate_masks = np.asarray(candidate_masks)
    if candidate_masks.ndim != 3:
        raise ValidationError(
            f"candidate_masks must be (M, H, W), got shape {candidate_masks.shape}"
        )
    height, width = candidate_masks.shape[1:]
    up = upsample_nearest(labels, height, width)
    k = int(labels.max(initial=0))
    if metric == OVERLAP_UNION_IOU:
        union = up > 0
        return [iou(mask, union) for mask in candidate_masks]
    overlaps = []
    for mask in candidate_masks:
        best = 0.0
        for label in range(1, k + 1):
            best = max(best, iou(mask, up == label))
        overlaps.append(best)
    return overlaps


def select_masks(
    e_img: np.ndarray,
    e_context: np.ndarray,
    e_neg: np.ndarray | None,
    spatial_cue: str | None,
    candidate_masks: np.ndarray,
    labels: np.ndarray,
    cluster_count: int,
    alpha: float,
    requested_k: int | None = None,
    overlap_metric: str = OVERLAP_UNION_IOU,
) -> SelectionResult:
    """Score, rerank and pick one of the candidate masks.

    ``requested_k`` of None sizes the shortlist by the cluster count
    (at least 1).  The shortlist always keeps the best mask by positive
    score in front; the remaining slots follow the overlap ordering.
    """
    if alpha < 0.0:
        raise ValidationError(f"alpha must be >= 0, got {alpha}")
    if requested_k is not None and requested_k < 1:
        raise ValidationError(f"requested_k must be >= 1, got {requested_k}")
    count = int(np.asarray(candidate_masks).shape[0])
    if count < 1:
        raise ValidationError("no candidate masks to score")

    s_pos, zero_rows = positive_scores(e_img, e_context)
    overlaps = cluster_overlaps(candidate_masks, labels, overlap_metric)

    sc_applied = spatial_cue is not None and e_neg is not None
    sc_fallback = spatial_cue is not None and e_neg is None
    if sc_fallback:
        log.warning(
            "spatial cue %r present but no negative embedding; "
            "falling back to the positive score",
            spatial_cue,
        )
    s_neg: list[float | None]
    if e_neg is not None:
        s_neg = [cosine(row, e_neg) for row in np.asarray(e_img, dtype=np.float64)]
    else:
        s_neg = [None] * count

    finals = []
    for i in range(count):
        if sc_applied:
            finals.append(s_pos[i] - alpha * s_neg[i])
        else:
            finals.append(s_pos[i])

    sorted_ids = sorted(range(count), key=lambda i: (-s_pos[i], i))
    clustered_ids = sorted(range(count), key=lambda i: (-overlaps[i], -s_pos[i], i))

    base = requested_k if requested_k is not None else max(1, cluster_count)
    k_used = min(base, count)
    head = sorted_ids[0]
    topk_ids = [head] + [i for i in clustered_ids if i != head][: k_used - 1]

    final_id = min(topk_ids, key=lambda i: (-finals[i], i))

    scores = [
        MaskScore(mask_id=i, s_pos=s_pos[i], s_neg=s_neg[i], overlap=overlaps[i], final=finals[i])
        for i in range(count)
    ]
    return SelectionResult(
        scores=scores,
        sorted_ids=sorted_ids,
        clustered_ids=clustered_ids,
        topk_ids=topk_ids,
        final_id=final_id,
        k_used=k_used,
        sc_applied=sc_applied,
        sc_fallback=sc_fallback,
        zero_norm_rows=zero_rows,
    )
