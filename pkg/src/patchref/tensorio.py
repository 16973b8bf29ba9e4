"""Binary tensor container and fixture loading.

Container format (extension ``.cpt``): magic bytes ``CPT1``, one dtype
byte (0 = float32 little-endian, 1 = uint8, 2 = uint32 little-endian),
one ndim byte, then each dimension as a little-endian uint32, then the
raw row-major payload.  No padding, no compression.  Round-trips are
bitwise exact.

A fixture directory holds one ``manifest.json`` plus the tensor files it
references.  The manifest carries every dimension explicitly so shape
consistency can be checked before any payload is read.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FixtureError, TensorFormatError, ValidationError

MAGIC = b"CPT1"
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = "cpt-fixture-1"

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1"), 2: np.dtype("<u4")}
_CODES = {np.dtype("float32"): 0, np.dtype("uint8"): 1, np.dtype("uint32"): 2}


def write_tensor(t: np.ndarray, path) -> None:
    """Write a float32 / uint8 / uint32 array to ``path``.

    The shape must be non-empty with every dimension >= 1.
    """
    t = np.asarray(t)
    if t.dtype not in _CODES:
        raise ValidationError(
            f"unsupported dtype {t.dtype}; expected float32, uint8 or uint32"
        )
    if t.ndim == 0:
        raise ValidationError("empty shape: tensors must have at least one dimension")
    if t.ndim > 255:
        raise ValidationError(f"too many dimensions ({t.ndim}); limit is 255")
    if min(t.shape) < 1:
        raise ValidationError(f"all dimensions must be >= 1, got shape {t.shape}")
    header = MAGIC + bytes([_CODES[t.dtype], t.ndim])
    header += struct.pack(f"<{t.ndim}I", *t.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(t).tobytes())


def read_tensor(path) -> np.ndarray:
    """Read a tensor written by :func:`write_tensor`.  Exact inverse."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC):
        raise TensorFormatError(f"{path}: truncated header (no magic)")
    if blob[:4] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 6:
        raise TensorFormatError(f"{path}: truncated header (missing dtype/ndim)")
    code, ndim = blob[4], blob[5]
    if code not in _DTYPES:
        raise TensorFormatError(f"{path}: unknown dtype code {code}")
    if ndim == 0:
        raise TensorFormatError(f"{path}: empty shape (ndim = 0)")
    dims_end = 6 + 4 * ndim
    if len(blob) < dims_end:
        raise TensorFormatError(f"{path}: truncated dims (ndim = {ndim})")
    shape = struct.unpack(f"<{ndim}I", blob[6:dims_end])
    if min(shape) < 1:
        raise TensorFormatError(f"{path}: zero dimension in shape {shape}")
    dtype = _DTYPES[code]
    expected = int(np.prod(shape)) * dtype.itemsize
    payload = blob[dims_end:]
    if len(payload) != expected:
        raise TensorFormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected} "
            f"for shape {shape} dtype {dtype}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


@dataclass
class ProjectionParams:
    """Normalization and projection parameters for one visual backbone.

    ``projection`` maps the encoder hidden width ``d_star`` into the
    ``d``-dimensional joint image/text space.  ``exit_layer`` records
    which encoder layer the patch embeddings were taken from and
    ``patch_grid`` the side length of the patch grid.
    """

    d_star: int
    d: int
    ln_gamma: np.ndarray
    ln_beta: np.ndarray
    ln_eps: float
    projection: np.ndarray
    exit_layer: int
    patch_grid: int

    def validate(self) -> None:
        if self.ln_eps <= 0:
            raise ValidationError(f"ln_eps must be > 0, got {self.ln_eps}")
        if self.patch_grid < 1:
            raise ValidationError(f"patch_grid must be >= 1, got {self.patch_grid}")
        if self.ln_gamma.shape != (self.d_star,):
            raise ValidationError(
                f"ln_gamma has shape {self.ln_gamma.shape}, expected ({self.d_star},)"
            )
        if self.ln_beta.shape != (self.d_star,):
            raise ValidationError(
                f"ln_beta has shape {self.ln_beta.shape}, expected ({self.d_star},)"
            )
        if self.projection.shape != (self.d_star, self.d):
            raise ValidationError(
                f"projection has shape {self.projection.shape}, "
                f"expected ({self.d_star}, {self.d})"
            )


@dataclass
class SampleRecord:
    """One referring-expression instance with all tensors loaded."""

    sample_id: str
    expression: str
    n_o: str
    n_c: str
    spatial_cue: str | None
    e_sen: np.ndarray
    e_noun: np.ndarray
    e_neg: np.ndarray | None
    patch_embeddings: np.ndarray  # (p, p, d_star) at exit_layer
    candidate_masks: np.ndarray  # (M, H, W) uint8 in {0, 1}
    e_img: np.ndarray  # (M, d)
    gt_mask: np.ndarray  # (H, W) uint8 in {0, 1}
    exit_layer: int
    cls_layers: np.ndarray | None = None  # optional (L, d_star) per-layer CLS


@dataclass
class SampleEntry:
    """Manifest row for one sample: metadata plus tensor file paths."""

    sample_id: str
    expression: str
    n_o: str
    n_c: str
    spatial_cue: str | None
    m: int
    e_sen: str
    e_noun: str
    e_neg: str | None
    patch_embeddings: dict[int, str]  # exit layer -> path
    candidate_masks: str
    e_img: str
    gt_mask: str
    cls_layers: str | None = None


@dataclass
class FixtureManifest:
    version: str
    model: str
    d: int
    d_star: int
    p: int
    height: int
    width: int
    layers: list[int]
    defaults: dict
    ln_eps: float
    ln_gamma_path: str
    ln_beta_path: str
    projection_path: str
    samples: list[SampleEntry] = field(default_factory=list)


def _parse_manifest(path: Path) -> FixtureManifest:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FixtureError(f"no manifest at {path}")
    except (OSError, json.JSONDecodeError) as exc:
        raise FixtureError(f"{path}: cannot parse manifest: {exc}")

    try:
        version = raw["version"]
        if version != MANIFEST_VERSION:
            raise FixtureError(
                f"{path}: manifest version {version!r} unsupported "
                f"(engine expects {MANIFEST_VERSION!r})"
            )
        params = raw["params"]
        entries = []
        for s in raw["samples"]:
            entries.append(
                SampleEntry(
                    sample_id=s["sample_id"],
                    expression=s["expression"],
                    n_o=s.get("n_o", ""),
                    n_c=s.get("n_c", ""),
                    spatial_cue=s.get("spatial_cue"),
                    m=int(s["m"]),
                    e_sen=s["e_sen"],
                    e_noun=s["e_noun"],
                    e_neg=s.get("e_neg"),
                    patch_embeddings={
                        int(k): v for k, v in s["patch_embeddings"].items()
                    },
                    candidate_masks=s["candidate_masks"],
                    e_img=s["e_img"],
                    gt_mask=s["gt_mask"],
                    cls_layers=s.get("cls_layers"),
                )
            )
        manifest = FixtureManifest(
            version=version,
            model=raw["model"],
            d=int(raw["d"]),
            d_star=int(raw["d_star"]),
            p=int(raw["p"]),
            height=int(raw["H"]),
            width=int(raw["W"]),
            layers=[int(x) for x in raw["layers"]],
            defaults=dict(raw.get("defaults", {})),
            ln_eps=float(params["ln_eps"]),
            ln_gamma_path=params["ln_gamma"],
            ln_beta_path=params["ln_beta"],
            projection_path=params["projection"],
            samples=entries,
        )
    except FixtureError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FixtureError(f"{path}: malformed manifest field: {exc!r}")

    if min(manifest.d, manifest.d_star, manifest.p, manifest.height, manifest.width) < 1:
        raise FixtureError(f"{path}: non-positive dimension in manifest")
    if not manifest.layers:
        raise FixtureError(f"{path}: manifest lists no exit layers")
    seen = set()
    for e in manifest.samples:
        if e.sample_id in seen:
            raise FixtureError(f"{path}: duplicate sample_id {e.sample_id!r}")
        seen.add(e.sample_id)
        if e.m < 1:
            raise FixtureError(f"sample {e.sample_id}: needs at least one candidate mask")
        for layer in e.patch_embeddings:
            if layer not in manifest.layers:
                raise FixtureError(
                    f"sample {e.sample_id}: patch dump for layer {layer} "
                    f"not in manifest layers {manifest.layers}"
                )
    return manifest


class Fixture:
    """Lazy access to a fixture directory.

    The manifest is parsed and file existence checked up front; tensor
    payloads are read and validated per sample on access.  Records are
    immutable after load, so concurrent reads from worker threads are
    safe.
    """

    def __init__(self, root, permissive: bool = False):
        self.root = Path(root)
        self.permissive = permissive
        self.manifest = _parse_manifest(self.root / MANIFEST_NAME)
        self.skipped: list[tuple[str, str]] = []
        self._params_cache: ProjectionParams | None = None
        self._check_files()

    def _check_files(self) -> None:
        for rel in (
            self.manifest.ln_gamma_path,
            self.manifest.ln_beta_path,
            self.manifest.projection_path,
        ):
            if not (self.root / rel).is_file():
                raise FixtureError(f"missing parameter file {rel}")
        bad = []
        for e in self.manifest.samples:
            paths = [e.e_sen, e.e_noun, e.candidate_masks, e.e_img, e.gt_mask]
            paths += list(e.patch_embeddings.values())
            if e.e_neg is not None:
                paths.append(e.e_neg)
            if e.cls_layers is not None:
                paths.append(e.cls_layers)
            for rel in paths:
                if not (self.root / rel).is_file():
                    bad.append((e.sample_id, f"sample {e.sample_id}: missing file {rel}"))
                    break
        if bad and not self.permissive:
            raise FixtureError("; ".join(msg for _, msg in bad))
        self.skipped.extend(bad)

    @property
    def sample_ids(self) -> list[str]:
        dropped = {sid for sid, _ in self.skipped}
        return [e.sample_id for e in self.manifest.samples if e.sample_id not in dropped]

    def entry(self, sample_id: str) -> SampleEntry:
        for e in self.manifest.samples:
            if e.sample_id == sample_id:
                return e
        raise FixtureError(f"unknown sample_id {sample_id!r}")

    def params(self, layer: int | None = None) -> ProjectionParams:
        m = self.manifest
        if self._params_cache is None:
            p = ProjectionParams(
                d_star=m.d_star,
                d=m.d,
                ln_gamma=read_tensor(self.root / m.ln_gamma_path).astype(np.float64),
                ln_beta=read_tensor(self.root / m.ln_beta_path).astype(np.float64),
                ln_eps=m.ln_eps,
                projection=read_tensor(self.root / m.projection_path).astype(np.float64),
                exit_layer=m.layers[0],
                patch_grid=m.p,
            )
            p.validate()
            self._params_cache = p
        p = self._params_cache
        if layer is not None and layer != p.exit_layer:
            p = ProjectionParams(
                d_star=p.d_star,
                d=p.d,
                ln_gamma=p.ln_gamma,
                ln_beta=p.ln_beta,
                ln_eps=p.ln_eps,
                projection=p.projection,
                exit_layer=layer,
                patch_grid=p.patch_grid,
            )
        return p

    def _load(self, rel: str) -> np.ndarray:
        return read_tensor(self.root / rel)

    def sample(self, sample_id: str, layer: int | None = None) -> SampleRecord:
        e = self.entry(sample_id)
        m = self.manifest
        layer = m.layers[0] if layer is None else layer
        if layer not in e.patch_embeddings:
            raise FixtureError(
                f"sample {sample_id}: no patch dump for layer {layer} "
                f"(available: {sorted(e.patch_embeddings)})"
            )
        record = SampleRecord(
            sample_id=e.sample_id,
            expression=e.expression,
            n_o=e.n_o,
            n_c=e.n_c,
            spatial_cue=e.spatial_cue,
            e_sen=self._load(e.e_sen),
            e_noun=self._load(e.e_noun),
            e_neg=None if e.e_neg is None else self._load(e.e_neg),
            patch_embeddings=self._load(e.patch_embeddings[layer]),
            candidate_masks=self._load(e.candidate_masks),
            e_img=self._load(e.e_img),
            gt_mask=self._load(e.gt_mask),
            exit_layer=layer,
            cls_layers=None if e.cls_layers is None else self._load(e.cls_layers),
        )
        self._validate_record(record, e)
        return record

    def _validate_record(self, r: SampleRecord, e: SampleEntry) -> None:
        m = self.manifest
        sid = r.sample_id

        def bad(msg):
            raise FixtureError(f"sample {sid}: {msg}")

        for name, vec in (("e_sen", r.e_sen), ("e_noun", r.e_noun), ("e_neg", r.e_neg)):
            if vec is None:
                continue
            if vec.shape != (m.d,):
                bad(f"{name} has shape {vec.shape}, expected ({m.d},)")
            if not np.all(np.isfinite(vec)):
                bad(f"{name} contains non-finite values")
        if r.patch_embeddings.shape != (m.p, m.p, m.d_star):
            bad(
                f"patch_embeddings has shape {r.patch_embeddings.shape}, "
                f"expected ({m.p}, {m.p}, {m.d_star})"
            )
        if r.candidate_masks.ndim != 3 or r.candidate_masks.shape[0] != e.m:
            bad(
                f"candidate_masks has shape {r.candidate_masks.shape}, "
                f"expected ({e.m}, {m.height}, {m.width})"
            )
        if r.candidate_masks.shape[1:] != (m.height, m.width):
            bad(
                f"candidate_masks are {r.candidate_masks.shape[1:]}, "
                f"expected ({m.height}, {m.width})"
            )
        if r.gt_mask.shape != (m.height, m.width):
            bad(f"gt_mask has shape {r.gt_mask.shape}, expected ({m.height}, {m.width})")
        for name, arr in (("candidate_masks", r.candidate_masks), ("gt_mask", r.gt_mask)):
            if arr.max(initial=0) > 1:
                bad(f"{name} is not a 0/1 bitmap")
        if r.e_img.shape != (e.m, m.d):
            bad(f"e_img has shape {r.e_img.shape}, expected ({e.m}, {m.d})")
        if not np.all(np.isfinite(r.e_img)):
            bad("e_img contains non-finite values")

    def samples(self, layer: int | None = None):
        """Yield validated records; under permissive mode corrupt samples
        are skipped and recorded in ``self.skipped``."""
        for sid in self.sample_ids:
            try:
                yield self.sample(sid, layer)
            except (FixtureError, TensorFormatError) as exc:
                if not self.permissive:
                    raise
                self.skipped.append((sid, str(exc)))


def load_fixture(directory, permissive: bool = False) -> Fixture:
    return Fixture(directory, permissive=permissive)
