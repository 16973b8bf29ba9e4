"""Hybrid text features and the shared normalization/projection math.

Text side: a referring expression is encoded twice, once as the full
sentence and once as just its head noun phrase.  The two embeddings are
blended with a convex weight ``gamma`` into a single context feature.

Vision side: raw patch hidden states live in the encoder width ``d_star``
and reach the joint text/image space through the encoder's final
LayerNorm followed by a linear projection.  The same route, applied to
the negated hidden state, yields a feature that points away from the
patch content; it is used to penalize distractor objects named after a
spatial relation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .tensorio import ProjectionParams


@dataclass
class HybridTextFeature:
    """Blended sentence/noun embedding with the weight that produced it."""

    e_context: np.ndarray
    gamma: float


def fuse_text(e_sen: np.ndarray, e_noun: np.ndarray, gamma: float) -> HybridTextFeature:
    """Blend sentence and noun embeddings: gamma * e_sen + (1 - gamma) * e_noun.

    ``gamma`` of 1 returns the sentence embedding exactly, 0 the noun
    embedding exactly.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValidationError(f"gamma must be in [0, 1], got {gamma}")
    e_sen = np.asarray(e_sen, dtype=np.float64)
    e_noun = np.asarray(e_noun, dtype=np.float64)
    if e_sen.shape != e_noun.shape:
        raise ValidationError(
            f"embedding shapes differ: {e_sen.shape} vs {e_noun.shape}"
        )
    if gamma == 1.0:
        ctx = e_sen.copy()
    elif gamma == 0.0:
        ctx = e_noun.copy()
    else:
        ctx = gamma * e_sen + (1.0 - gamma) * e_noun
    return HybridTextFeature(e_context=ctx, gamma=float(gamma))


def layer_norm(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float
) -> np.ndarray:
    """LayerNorm over the last axis with biased variance.

    y = gamma * (x - mean) / sqrt(var + eps) + beta
    """
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)  # biased: divides by d_star
    return gamma * (x - mean) / np.sqrt(var + eps) + beta


def project_hidden(x: np.ndarray, params: ProjectionParams) -> np.ndarray:
    """Map encoder hidden states (..., d_star) into the joint space (..., d)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.d_star:
        raise ValidationError(
            f"hidden width {x.shape[-1]} does not match d_star {params.d_star}"
        )
    y = layer_norm(x, params.ln_gamma, params.ln_beta, params.ln_eps)
    return y @ params.projection


def negation_feature(x: np.ndarray, params: ProjectionParams) -> np.ndarray:
    """Project the negated hidden state: LN(-x) @ projection.

    With a zero LayerNorm bias this is exactly the negative of
    ``project_hidden(x)``, so cosine similarities flip sign.  A nonzero
    bias shifts the result by 2 * beta @ projection but preserves the
    ordering of patches in practice.
    """
    return project_hidden(-np.asarray(x, dtype=np.float64), params)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity, defined as 0.0 when either vector has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    c = float(np.dot(a, b) / (na * nb))
    return min(1.0, max(-1.0, c))
