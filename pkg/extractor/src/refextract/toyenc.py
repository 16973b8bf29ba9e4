"""Deterministic stand-in backbone.

Every weight is derived from the model tag through a hash, so two runs
of the same tag produce bit-identical dumps with no checkpoint on disk.
The structure mirrors what the real adapters expose: per-patch hidden
states that accumulate through residual blocks, a final-LN parameter
set, a linear projection into the joint space, and text/image
embeddings in that space.  Numbers are meaningless; shapes, dtypes,
and determinism are the point.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import BackendError

_FEATURES = 8  # per-cell: mean RGB, std RGB, row, col


def _seed_from(*parts: str) -> int:
    digest = hashlib.blake2b("\x00".join(parts).encode("utf-8"), digest_size=8)
    return int.from_bytes(digest.digest(), "little")


class ToyEncoder:
    """Hash-seeded encoder over ``grid`` x ``grid`` cells of a square frame."""

    def __init__(self, model: str, d_star: int = 32, d: int = 16,
                 grid: int = 7, cell: int = 8):
        if min(d_star, d, grid, cell) < 1:
            raise BackendError("toy encoder dimensions must be >= 1")
        self.model = model
        self.d_star = d_star
        self.d = d
        self.grid = grid
        self.cell = cell
        root = np.random.default_rng(_seed_from("toy", model))
        self._lift = root.standard_normal((_FEATURES, d_star)) / np.sqrt(_FEATURES)
        self.ln_gamma = 1.0 + 0.05 * root.standard_normal(d_star)
        self.ln_beta = 0.02 * root.standard_normal(d_star)
        self.ln_eps = 1e-5
        self.projection = root.standard_normal((d_star, d)) / np.sqrt(d_star)
        self._mixes: dict[int, np.ndarray] = {}

    @property
    def frame_size(self) -> int:
        return self.grid * self.cell

    def _mix(self, layer: int) -> np.ndarray:
        if layer not in self._mixes:
            rng = np.random.default_rng(
                (_seed_from("toy-mix", self.model), layer)
            )
            self._mixes[layer] = (
                rng.standard_normal((self.d_star, self.d_star))
                / np.sqrt(self.d_star)
            )
        return self._mixes[layer]

    def _cell_features(self, frame: np.ndarray) -> np.ndarray:
        p, c = self.grid, self.cell
        if frame.shape != (p * c, p * c, 3):
            raise BackendError(
                f"frame shape {frame.shape} does not match grid {p} cell {c}"
            )
        feats = np.empty((p, p, _FEATURES))
        for i in range(p):
            for j in range(p):
                block = frame[i * c:(i + 1) * c, j * c:(j + 1) * c]
                feats[i, j, :3] = block.mean(axis=(0, 1))
                feats[i, j, 3:6] = block.std(axis=(0, 1))
                feats[i, j, 6] = (i + 0.5) / p
                feats[i, j, 7] = (j + 0.5) / p
        return feats

    def hidden_grid(self, frame: np.ndarray, layer: int) -> np.ndarray:
        """Hidden states entering the final normalization after ``layer``
        residual blocks, shape (grid, grid, d_star).  There is no class
        token in this backbone, so the grid is already CLS-free."""
        if layer < 1:
            raise BackendError(f"layer must be >= 1, got {layer}")
        h = self._cell_features(frame) @ self._lift
        for block in range(1, layer + 1):
            h = h + 0.5 * np.tanh(h @ self._mix(block))
        return h

    def reference_projected(self, hidden: np.ndarray) -> np.ndarray:
        """Extractor-side normalization + projection, kept independent of
        the engine so round-trip tests compare two implementations."""
        mu = hidden.mean(axis=-1, keepdims=True)
        var = ((hidden - mu) ** 2).mean(axis=-1, keepdims=True)
        normed = self.ln_gamma * (hidden - mu) / np.sqrt(var + self.ln_eps)
        return (normed + self.ln_beta) @ self.projection

    def _token_vector(self, token: str) -> np.ndarray:
        rng = np.random.default_rng(_seed_from("toy-token", self.model, token))
        return rng.standard_normal(self.d)

    def text_embed(self, tokens: list[str]) -> np.ndarray:
        if not tokens:
            raise BackendError("cannot embed an empty token list")
        acc = np.zeros(self.d)
        for t in tokens:
            acc += self._token_vector(t)
        acc /= len(tokens)
        return acc / np.linalg.norm(acc)

    def frame_embed(self, frame: np.ndarray, layer: int) -> np.ndarray:
        """Whole-frame embedding: mean projected patch, unit length."""
        projected = self.reference_projected(self.hidden_grid(frame, layer))
        pooled = projected.reshape(-1, self.d).mean(axis=0)
        norm = np.linalg.norm(pooled)
        if norm == 0.0:
            raise BackendError("degenerate frame embedding")
        return pooled / norm
