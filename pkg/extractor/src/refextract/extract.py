"""Fixture extraction: images + expressions in, tensor archive out.

The output directory is a complete fixture the evaluation engine can
load: ``manifest.json`` plus one CPT1 file per tensor.  Extraction is a
batch job with no shared mutable state across samples; every file is
written atomically and the manifest goes last, so an interrupted run
never leaves a loadable-looking but incomplete fixture.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chunk import CHUNKER_TAG, chunk_expression, tokenize
from .errors import ExtractorError, SliceError
from .imageops import box_blur, load_mask, load_rgb, resize_rgb
from .masks import MASK_GENERATOR_TAG, propose_masks
from .tensorio import encode_tensor, write_atomic
from .toyenc import ToyEncoder

log = logging.getLogger(__name__)

MANIFEST_VERSION = "cpt-fixture-1"
MASKING_TAG = "crop+blur-blend"


@dataclass
class ExtractionSpec:
    """What to run and how to dump it."""

    model: str
    layers: list[int]
    d_star: int = 32
    d: int = 16
    grid: int = 7
    cell: int = 8
    max_masks: int = 8
    quant_levels: int = 4
    min_area_frac: float = 0.01
    blur_radius: int = 4

    def validate(self) -> None:
        if not self.layers:
            raise ExtractorError("at least one exit layer is required")
        if any(l < 1 for l in self.layers):
            raise ExtractorError(f"layers must be >= 1, got {self.layers}")
        if len(set(self.layers)) != len(self.layers):
            raise ExtractorError(f"duplicate layers in {self.layers}")


@dataclass
class SliceSample:
    sample_id: str
    image: Path
    expression: str
    gt_mask: Path
    spatial_cue: str | None = None  # external annotation override


@dataclass
class ExtractionSummary:
    out_dir: Path
    written: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)


def read_slice(path) -> list[SliceSample]:
    """Parse a dataset slice: a JSON list of sample descriptors with
    image and ground-truth paths resolved relative to the file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SliceError(f"no slice file at {path}")
    except (OSError, json.JSONDecodeError) as exc:
        raise SliceError(f"{path}: cannot parse slice: {exc}")

    base = path.parent
    try:
        rows = raw["samples"]
        out = []
        seen = set()
        for row in rows:
            sid = row["sample_id"]
            if sid in seen:
                raise SliceError(f"{path}: duplicate sample_id {sid!r}")
            seen.add(sid)
            out.append(SliceSample(
                sample_id=sid,
                image=base / row["image"],
                expression=row["expression"],
                gt_mask=base / row["gt_mask"],
                spatial_cue=row.get("spatial_cue"),
            ))
    except (KeyError, TypeError) as exc:
        raise SliceError(f"{path}: malformed slice row: {exc!r}")
    if not out:
        raise SliceError(f"{path}: slice lists no samples")
    return out


def build_encoder(spec: ExtractionSpec):
    if spec.model.startswith("toy"):
        return ToyEncoder(
            spec.model, d_star=spec.d_star, d=spec.d,
            grid=spec.grid, cell=spec.cell,
        )
    from .clipenc import ClipEncoder

    return ClipEncoder.from_pretrained(spec.model)


def _bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return rows[0], rows[-1] + 1, cols[0], cols[-1] + 1


def masked_frame_embedding(encoder, frame, mask, layer, blur_radius):
    """Global-local candidate embedding: the masked crop and the
    blurred-background composite, embedded separately and averaged."""
    m = mask[..., None].astype(np.float64)
    gray = 0.5

    masked = frame * m + gray * (1.0 - m)
    r0, r1, c0, c1 = _bbox(mask)
    crop_frame = resize_rgb(masked[r0:r1, c0:c1], encoder.frame_size)

    blend = frame * m + box_blur(frame, blur_radius) * (1.0 - m)

    e_crop = encoder.frame_embed(crop_frame, layer)
    e_blend = encoder.frame_embed(blend, layer)
    pooled = 0.5 * e_crop + 0.5 * e_blend
    return pooled / np.linalg.norm(pooled)


def extract_sample(encoder, spec: ExtractionSpec, sample: SliceSample,
                   out_dir: Path) -> dict | None:
    """Write one sample's tensors; return its manifest entry, or None
    when the sample produced no candidate masks."""
    size = encoder.frame_size
    frame = resize_rgb(load_rgb(sample.image), size)

    candidates = propose_masks(
        frame, max_masks=spec.max_masks, levels=spec.quant_levels,
        min_area_frac=spec.min_area_frac,
    )
    if candidates.shape[0] == 0:
        log.warning("sample %s: no candidate masks, skipping", sample.sample_id)
        return None

    chunks = chunk_expression(sample.expression)
    cue = sample.spatial_cue if sample.spatial_cue is not None else chunks.spatial_cue

    e_sen = encoder.text_embed(tokenize(sample.expression))
    e_noun = encoder.text_embed(chunks.noun_context_tokens)
    e_neg = None
    if cue and chunks.negative_tokens:
        e_neg = encoder.text_embed(chunks.negative_tokens)

    deepest = max(spec.layers)
    e_img = np.stack([
        masked_frame_embedding(encoder, frame, m, deepest, spec.blur_radius)
        for m in candidates
    ])

    gt = load_mask(sample.gt_mask, size)
    sid = sample.sample_id

    def dump(name: str, arr: np.ndarray, dtype) -> str:
        write_atomic(encode_tensor(arr.astype(dtype)), out_dir / name)
        return name

    entry = {
        "sample_id": sid,
        "expression": sample.expression,
        "n_o": chunks.n_o,
        "n_c": chunks.n_c,
        "spatial_cue": cue,
        "m": int(candidates.shape[0]),
        "e_sen": dump(f"{sid}_sen.cpt", e_sen, np.float32),
        "e_noun": dump(f"{sid}_noun.cpt", e_noun, np.float32),
        "e_neg": (dump(f"{sid}_neg.cpt", e_neg, np.float32)
                  if e_neg is not None else None),
        "patch_embeddings": {
            str(layer): dump(
                f"{sid}_patches_l{layer}.cpt",
                encoder.hidden_grid(frame, layer),
                np.float32,
            )
            for layer in spec.layers
        },
        "candidate_masks": dump(f"{sid}_masks.cpt", candidates, np.uint8),
        "e_img": dump(f"{sid}_eimg.cpt", e_img, np.float32),
        "gt_mask": dump(f"{sid}_gt.cpt", gt, np.uint8),
    }
    return entry


def run_extraction(spec: ExtractionSpec, slice_path, out_dir) -> ExtractionSummary:
    spec.validate()
    samples = read_slice(slice_path)
    encoder = build_encoder(spec)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = ExtractionSummary(out_dir=out_dir)

    entries = []
    for sample in samples:
        entry = extract_sample(encoder, spec, sample, out_dir)
        if entry is None:
            summary.skipped.append(sample.sample_id)
        else:
            entries.append(entry)
            summary.written.append(sample.sample_id)
    if not entries:
        raise ExtractorError("every sample was skipped; nothing to write")

    write_atomic(
        encode_tensor(np.asarray(encoder.ln_gamma, dtype=np.float32)),
        out_dir / "ln_gamma.cpt",
    )
    write_atomic(
        encode_tensor(np.asarray(encoder.ln_beta, dtype=np.float32)),
        out_dir / "ln_beta.cpt",
    )
    write_atomic(
        encode_tensor(np.asarray(encoder.projection, dtype=np.float32)),
        out_dir / "projection.cpt",
    )

    manifest = {
        "version": MANIFEST_VERSION,
        "model": spec.model,
        "d": encoder.d,
        "d_star": encoder.d_star,
        "p": encoder.grid,
        "H": encoder.frame_size,
        "W": encoder.frame_size,
        "layers": list(spec.layers),
        "defaults": {},
        "params": {
            "ln_eps": encoder.ln_eps,
            "ln_gamma": "ln_gamma.cpt",
            "ln_beta": "ln_beta.cpt",
            "projection": "projection.cpt",
        },
        # Provenance block; the engine ignores unknown keys.
        "extraction": {
            "chunker": CHUNKER_TAG,
            "mask_generator": MASK_GENERATOR_TAG,
            "masking": MASKING_TAG,
        },
        "samples": entries,
    }
    write_atomic(
        (json.dumps(manifest, indent=2) + "\n").encode("utf-8"),
        out_dir / "manifest.json",
    )
    return summary
