"""CLIP backbone adapter.

torch and transformers load lazily so the toy path has no heavy
imports.  The capture point follows the engine contract: patch hidden
states are taken from the residual stream entering the final
normalization (``hidden_states[l]`` is the output of block ``l``), the
class token at index 0 is dropped, and the dumped parameters are the
vision tower's post-LN affine plus the visual projection.
"""

from __future__ import annotations

import numpy as np

from .errors import BackendError
from .imageops import resize_rgb

CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


def _torch():
    try:
        import torch
    except ImportError as exc:
        raise BackendError(
            "CLIP backends need the [clip] extra (torch + transformers)"
        ) from exc
    return torch


class ClipEncoder:
    """Wraps an instantiated transformers ``CLIPModel``.

    ``from_pretrained`` pulls published weights; tests inject a tiny
    randomly initialized model instead, which exercises exactly the
    same capture code.
    """

    def __init__(self, model, tokenizer=None):
        torch = _torch()
        self.torch = torch
        self.model = model.eval()
        self.tokenizer = tokenizer
        vision = model.config.vision_config
        self.d_star = vision.hidden_size
        self.d = model.config.projection_dim
        self.image_size = vision.image_size
        self.grid = vision.image_size // vision.patch_size
        self.layers_available = vision.num_hidden_layers

    @classmethod
    def from_pretrained(cls, tag: str) -> "ClipEncoder":
        _torch()
        try:
            from transformers import CLIPModel, CLIPTokenizerFast
        except ImportError as exc:
            raise BackendError(
                "CLIP backends need the [clip] extra (torch + transformers)"
            ) from exc
        try:
            model = CLIPModel.from_pretrained(tag)
            tokenizer = CLIPTokenizerFast.from_pretrained(tag)
        except Exception as exc:  # hub errors span many types
            raise BackendError(f"cannot load CLIP weights {tag!r}: {exc}")
        return cls(model, tokenizer)

    @property
    def frame_size(self) -> int:
        return self.image_size

    def _pixel_values(self, frame: np.ndarray):
        if frame.shape != (self.image_size, self.image_size, 3):
            frame = resize_rgb(frame, self.image_size)
        mean = np.asarray(CLIP_MEAN)
        std = np.asarray(CLIP_STD)
        chw = ((frame - mean) / std).transpose(2, 0, 1)
        return self.torch.from_numpy(chw[None]).float()

    def hidden_grid(self, frame: np.ndarray, layer: int) -> np.ndarray:
        if not 1 <= layer <= self.layers_available:
            raise BackendError(
                f"layer {layer} outside 1..{self.layers_available}"
            )
        with self.torch.no_grad():
            out = self.model.vision_model(
                self._pixel_values(frame), output_hidden_states=True
            )
        tokens = out.hidden_states[layer][0]  # (1 + grid^2, d_star)
        patches = tokens[1:].double().numpy()  # drop CLS
        return patches.reshape(self.grid, self.grid, self.d_star)

    @property
    def ln_gamma(self) -> np.ndarray:
        ln = self.model.vision_model.post_layernorm
        return ln.weight.detach().double().numpy()

    @property
    def ln_beta(self) -> np.ndarray:
        ln = self.model.vision_model.post_layernorm
        return ln.bias.detach().double().numpy()

    @property
    def ln_eps(self) -> float:
        return float(self.model.vision_model.post_layernorm.eps)

    @property
    def projection(self) -> np.ndarray:
        # Linear stores (out, in); the engine multiplies on the right.
        return self.model.visual_projection.weight.detach().double().numpy().T

    def reference_projected(self, hidden: np.ndarray) -> np.ndarray:
        """Torch-side normalization + projection for the round-trip check."""
        torch = self.torch
        with torch.no_grad():
            x = torch.from_numpy(np.ascontiguousarray(hidden))
            ln = self.model.vision_model.post_layernorm
            normed = torch.nn.functional.layer_norm(
                x, (self.d_star,), ln.weight.double(), ln.bias.double(), ln.eps
            )
            return (normed @ torch.from_numpy(self.projection)).numpy()

    def frame_embed(self, frame: np.ndarray, layer: int | None = None) -> np.ndarray:
        # Pooled output is the post-LN class token; projecting it is the
        # published image-feature definition and survives API drift in
        # get_image_features.
        with self.torch.no_grad():
            out = self.model.vision_model(self._pixel_values(frame))
            feats = self.model.visual_projection(out.pooler_output)
        vec = feats[0].double().numpy()
        return vec / np.linalg.norm(vec)

    def text_embed(self, tokens: list[str]) -> np.ndarray:
        if self.tokenizer is None:
            raise BackendError("this CLIP encoder was built without a tokenizer")
        if not tokens:
            raise BackendError("cannot embed an empty token list")
        batch = self.tokenizer(" ".join(tokens), return_tensors="pt")
        with self.torch.no_grad():
            out = self.model.text_model(**batch)
            feats = self.model.text_projection(out.pooler_output)
        vec = feats[0].double().numpy()
        return vec / np.linalg.norm(vec)
