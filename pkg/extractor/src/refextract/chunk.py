"""Rule-based expression chunking.

Splits a referring expression into the primary noun phrase, the context
tokens to its right, and the negative text that follows a positional
relation.  A dependency parser would do this better; the rule version
exists so extraction stays deterministic and dependency-free, and the
manifest records which chunker produced a fixture (tag ``rule-v1``).

Rules, in order:

1. The first token found in the positional-relation lexicon splits the
   expression.  It becomes the spatial cue.
2. The primary noun phrase is everything left of the cue (the whole
   expression when there is none), with leading and trailing function
   words stripped.
3. Context tokens are the content tokens to the right of the primary
   noun phrase, excluding relation words.
4. Negative text is the content tokens strictly after the cue: the
   nouns the expression positions the target against.  A cue with no
   following content yields no negative text ("the woman on the left").
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

log = logging.getLogger(__name__)

CHUNKER_TAG = "rule-v1"

RELATION_WORDS = frozenset({
    "left", "right", "behind", "front", "above", "below", "under",
    "beneath", "over", "atop", "near", "nearest", "beside", "between",
    "next", "inside", "outside", "top", "bottom",
})

# Determiners, pronouns, prepositions, copulas: never content tokens.
FUNCTION_WORDS = frozenset({
    "a", "an", "the", "this", "that", "these", "those", "his", "her",
    "its", "their", "my", "your", "our", "of", "to", "in", "on", "at",
    "by", "with", "from", "and", "or", "is", "are", "was", "were", "be",
    "being", "been", "there", "it", "who", "which", "whose", "very",
    "most", "more",
})

_TOKEN = re.compile(r"[a-z']+")


@dataclass
class ExpressionChunks:
    """Chunker output for one expression.

    ``n_o`` and ``n_c`` are display strings for the manifest; the token
    lists drive text encoding.  ``negative_tokens`` is empty when no
    cue was found or nothing follows it.
    """

    n_o: str
    n_c: str
    spatial_cue: str | None
    n_o_tokens: list[str]
    n_c_tokens: list[str]
    negative_tokens: list[str]

    @property
    def noun_context_tokens(self) -> list[str]:
        """Input for the noun-level embedding: [N_O | N_C]."""
        return self.n_o_tokens + self.n_c_tokens


def tokenize(expression: str) -> list[str]:
    return _TOKEN.findall(expression.lower())


def _content(tokens: list[str]) -> list[str]:
    return [t for t in tokens if t not in FUNCTION_WORDS and t not in RELATION_WORDS]


def _strip_ends(tokens: list[str]) -> list[str]:
    start, end = 0, len(tokens)
    while start < end and tokens[start] in FUNCTION_WORDS:
        start += 1
    while end > start and tokens[end - 1] in FUNCTION_WORDS:
        end -= 1
    return tokens[start:end]


def chunk_expression(expression: str) -> ExpressionChunks:
    tokens = tokenize(expression)
    cue_idx = next((i for i, t in enumerate(tokens) if t in RELATION_WORDS), None)
    cue = tokens[cue_idx] if cue_idx is not None else None

    left = tokens[:cue_idx] if cue_idx is not None else tokens
    span = _strip_ends(left)
    cue_initial = cue_idx is not None and not span
    if not span:
        # Cue-initial ("left person") or all-function expression: fall
        # back to the whole token list so the noun embedding never goes
        # empty.  The cue is attributive then, not a split point.
        span = _strip_ends([t for t in tokens if t not in RELATION_WORDS])
    n_o_tokens = _content(span) or span

    if not n_o_tokens:
        log.warning("chunker found no content tokens in %r", expression)
        return ExpressionChunks(
            n_o=expression.strip(), n_c="", spatial_cue=cue,
            n_o_tokens=tokens or [expression.strip().lower()],
            n_c_tokens=[], negative_tokens=[],
        )

    if cue_idx is not None and not cue_initial:
        n_c_tokens = _content(tokens[len(left):])
        negative_tokens = _content(tokens[cue_idx + 1:])
    else:
        n_c_tokens = []
        negative_tokens = []

    return ExpressionChunks(
        n_o=" ".join(span),
        n_c=" ".join(n_c_tokens),
        spatial_cue=cue,
        n_o_tokens=n_o_tokens,
        n_c_tokens=n_c_tokens,
        negative_tokens=negative_tokens,
    )
