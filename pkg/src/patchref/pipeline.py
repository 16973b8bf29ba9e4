"""End-to-end runs over a fixture: per-sample scoring, report assembly,
parameter sweeps.

Per-sample work is a pure function of the sample record and the run
configuration, so samples can be processed by a thread pool in any
order.  The report is always assembled single-threaded in ascending
sample-id order, which keeps the output byte-identical regardless of
worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import product

from .clustering import ClusterMap, cluster_map
from .errors import FixtureError, ValidationError
from .evaluation import intersection_union_counts, iou, mean_iou, overall_iou
from .scoring import OVERLAP_METRICS, OVERLAP_UNION_IOU, SelectionResult, select_masks
from .spatialmap import SpatialMap, similarity_map
from .tensorio import Fixture, SampleRecord
from .textfusion import cosine, fuse_text, project_hidden

# Per-backbone defaults, tuned per encoder depth.  The manifest may
# override these; command-line flags override everything.
MODEL_DEFAULTS = {
    "clip-vit-b-32": {"layer": 10, "delta": 0.5, "alpha": 0.5, "gamma": 0.5},
    "clip-vit-b-16": {"layer": 8, "delta": 0.3, "alpha": 0.7, "gamma": 0.5},
    "dfn-vit-h-14": {"layer": 22, "delta": 0.5, "alpha": 0.5, "gamma": 0.5},
}

FALLBACK_DEFAULTS = {"delta": 0.5, "alpha": 0.5, "gamma": 0.5}

REPORT_FORMAT = "eval-report-v1"


@dataclass
class RunConfig:
    layer: int
    delta: float
    alpha: float
    gamma: float
    topk: int | None = None  # None sizes the shortlist by cluster count
    connectivity: int = 4
    overlap_metric: str = OVERLAP_UNION_IOU
    jobs: int = 1

    def validate(self) -> None:
        if not 0.0 <= self.delta <= 1.0:
            raise ValidationError(f"delta must be in [0, 1], got {self.delta}")
        if self.alpha < 0.0:
            raise ValidationError(f"alpha must be >= 0, got {self.alpha}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValidationError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.topk is not None and self.topk < 1:
            raise ValidationError(f"topk must be >= 1, got {self.topk}")
        if self.connectivity not in (4, 8):
            raise ValidationError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.overlap_metric not in OVERLAP_METRICS:
            raise ValidationError(f"unknown overlap metric {self.overlap_metric!r}")
        if self.jobs < 1:
            raise ValidationError(f"jobs must be >= 1, got {self.jobs}")


def resolve_config(
    fixture: Fixture,
    layer: int | None = None,
    delta: float | None = None,
    alpha: float | None = None,
    gamma: float | None = None,
    topk: int | None = None,
    connectivity: int = 4,
    overlap_metric: str = OVERLAP_UNION_IOU,
    jobs: int = 1,
) -> RunConfig:
    """Fill unset parameters from the manifest defaults, then the model
    table, then the generic fallback (deepest dumped layer, 0.5 for
    everything else)."""
    manifest = fixture.manifest
    model_row = MODEL_DEFAULTS.get(manifest.model, {})

    def pick(name, explicit):
        if explicit is not None:
            return explicit
        if name in manifest.defaults:
            return manifest.defaults[name]
        if name in model_row:
            return model_row[name]
        return FALLBACK_DEFAULTS.get(name)

    layer = pick("layer", layer)
    if layer is None:
        layer = manifest.layers[-1]
    layer = int(layer)
    if layer not in manifest.layers:
        raise FixtureError(
            f"layer {layer} not dumped in this fixture (available: {manifest.layers})"
        )
    config = RunConfig(
        layer=layer,
        delta=float(pick("delta", delta)),
        alpha=float(pick("alpha", alpha)),
        gamma=float(pick("gamma", gamma)),
        topk=topk,
        connectivity=connectivity,
        overlap_metric=overlap_metric,
        jobs=jobs,
    )
    config.validate()
    return config


@dataclass
class SampleResult:
    """Everything the report needs for one sample."""

    sample_id: str
    expression: str
    spatial_cue: str | None
    spatial: SpatialMap
    clusters: ClusterMap
    selection: SelectionResult
    iou_final: float
    counts_final: tuple[int, int]  # intersection/union pixels vs ground truth
    topk_oracle_iou: float  # best achievable within the shortlist
    upper_bound_iou: float  # best achievable over all candidates


def run_sample(record: SampleRecord, params, config: RunConfig) -> SampleResult:
    """Score one sample.  Pure: no shared state, safe across threads."""
    fused = fuse_text(record.e_sen, record.e_noun, config.gamma)
    spatial = similarity_map(record.patch_embeddings, fused.e_context, params)
    clusters = cluster_map(spatial.normalized, config.delta, config.connectivity)
    selection = select_masks(
        e_img=record.e_img,
        e_context=fused.e_context,
        e_neg=record.e_neg,
        spatial_cue=record.spatial_cue,
        candidate_masks=record.candidate_masks,
        labels=clusters.labels,
        cluster_count=clusters.k,
        alpha=config.alpha,
        requested_k=config.topk,
        overlap_metric=config.overlap_metric,
    )
    per_mask_iou = [iou(m, record.gt_mask) for m in record.candidate_masks]
    final = selection.final_id
    return SampleResult(
        sample_id=record.sample_id,
        expression=record.expression,
        spatial_cue=record.spatial_cue,
        spatial=spatial,
        clusters=clusters,
        selection=selection,
        iou_final=per_mask_iou[final],
        counts_final=intersection_union_counts(
            record.candidate_masks[final], record.gt_mask
        ),
        topk_oracle_iou=max(per_mask_iou[i] for i in selection.topk_ids),
        upper_bound_iou=max(per_mask_iou),
    )


@dataclass
class EvalReport:
    model: str
    fixture_version: str
    config: RunConfig
    results: list[SampleResult]
    miou: float
    oiou: float
    topk_oracle_miou: float
    upper_bound_miou: float
    spatial_samples: int
    spatial_miou: float | None
    nonspatial_miou: float | None
    zero_norm_patches: int
    zero_norm_rows: int
    sc_fallbacks: int


def run_fixture(fixture: Fixture, config: RunConfig) -> EvalReport:
    """Run every sample and aggregate.  Results are keyed by sample id
    and assembled in ascending id order, so worker count never changes
    the outcome."""
    config.validate()
    params = fixture.params(config.layer)
    ids = sorted(fixture.sample_ids)
    if not ids:
        raise FixtureError("fixture has no usable samples")

    def work(sid: str) -> SampleResult:
        return run_sample(fixture.sample(sid, config.layer), params, config)

    if config.jobs == 1:
        by_id = {sid: work(sid) for sid in ids}
    else:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            by_id = dict(zip(ids, pool.map(work, ids)))
    results = [by_id[sid] for sid in ids]

    spatial = [r for r in results if r.spatial_cue is not None]
    nonspatial = [r for r in results if r.spatial_cue is None]
    zero_patches = 0
    zero_rows = 0
    fallbacks = 0
    for r in results:
        zero_patches += r.spatial.zero_norm_patches
        zero_rows += r.selection.zero_norm_rows
        fallbacks += int(r.selection.sc_fallback)
    return EvalReport(
        model=fixture.manifest.model,
        fixture_version=fixture.manifest.version,
        config=config,
        results=results,
        miou=mean_iou([r.iou_final for r in results]),
        oiou=overall_iou([r.counts_final for r in results]),
        topk_oracle_miou=mean_iou([r.topk_oracle_iou for r in results]),
        upper_bound_miou=mean_iou([r.upper_bound_iou for r in results]),
        spatial_samples=len(spatial),
        spatial_miou=mean_iou([r.iou_final for r in spatial]) if spatial else None,
        nonspatial_miou=mean_iou([r.iou_final for r in nonspatial]) if nonspatial else None,
        zero_norm_patches=zero_patches,
        zero_norm_rows=zero_rows,
        sc_fallbacks=fallbacks,
    )


def fmt6(x: float) -> str:
    """Six-decimal fixed-point with negative zero folded to zero."""
    v = round(float(x), 6)
    if v == 0.0:
        v = 0.0
    return "%.6f" % v


def format_report(report: EvalReport) -> str:
    """Render a report as stable plain text.

    Kept free of filesystem paths and timestamps so identical runs
    produce identical bytes.
    """
    c = report.config
    lines = [
        f"format: {REPORT_FORMAT}",
        f"model: {report.model}",
        f"fixture: {report.fixture_version}",
        f"layer: {c.layer}",
        f"delta: {fmt6(c.delta)}",
        f"alpha: {fmt6(c.alpha)}",
        f"gamma: {fmt6(c.gamma)}",
        f"topk: {'cluster' if c.topk is None else c.topk}",
        f"connectivity: {c.connectivity}",
        f"overlap-metric: {c.overlap_metric}",
        f"samples: {len(report.results)}",
        "",
    ]
    for r in report.results:
        s = r.selection
        lines += [
            f"sample: {r.sample_id}",
            f"expression: {r.expression}",
            f"spatial-cue: {r.spatial_cue if r.spatial_cue is not None else '-'}",
            f"clusters: {r.clusters.k}",
            f"delta-used: {fmt6(r.clusters.delta_used)}",
            f"zero-norm-patches: {r.spatial.zero_norm_patches}",
            f"sorted: {' '.join(str(i) for i in s.sorted_ids)}",
            f"clustered: {' '.join(str(i) for i in s.clustered_ids)}",
            f"topk: {' '.join(str(i) for i in s.topk_ids)}",
            f"k-used: {s.k_used}",
            f"final: {s.final_id}",
            f"sc-applied: {'yes' if s.sc_applied else 'no'}",
            f"iou: {fmt6(r.iou_final)}",
            f"topk-oracle-iou: {fmt6(r.topk_oracle_iou)}",
            f"upper-bound-iou: {fmt6(r.upper_bound_iou)}",
            "mask-scores:",
        ]
        for m in s.scores:
            neg = "-" if m.s_neg is None else fmt6(m.s_neg)
            lines.append(
                f"  {m.mask_id} s_pos={fmt6(m.s_pos)} s_neg={neg} "
                f"overlap={fmt6(m.overlap)} final={fmt6(m.final)}"
            )
        lines.append("")
    lines += [
        "summary:",
        f"miou: {fmt6(report.miou)}",
        f"oiou: {fmt6(report.oiou)}",
        f"topk-oracle-miou: {fmt6(report.topk_oracle_miou)}",
        f"upper-bound-miou: {fmt6(report.upper_bound_miou)}",
        f"spatial-samples: {report.spatial_samples}",
        f"spatial-miou: {'-' if report.spatial_miou is None else fmt6(report.spatial_miou)}",
        f"nonspatial-miou: {'-' if report.nonspatial_miou is None else fmt6(report.nonspatial_miou)}",
        f"zero-norm-patches: {report.zero_norm_patches}",
        f"zero-norm-rows: {report.zero_norm_rows}",
        f"sc-fallbacks: {report.sc_fallbacks}",
        "",
    ]
    return "\n".join(lines)


SWEEP_HEADER = "layer,delta,alpha,gamma,miou,oiou,topk_oracle_miou,mean_clusters"


def run_sweep(
    fixture: Fixture,
    base: RunConfig,
    layers: list[int],
    deltas: list[float],
    alphas: list[float],
    gammas: list[float],
) -> str:
    """Grid sweep.  Rows follow the product order layer > delta > alpha >
    gamma, one full run per row."""
    if not (layers and deltas and alphas and gammas):
        raise ValidationError("sweep grid has an empty axis")
    for layer in layers:
        if layer not in fixture.manifest.layers:
            raise FixtureError(
                f"layer {layer} not dumped in this fixture "
                f"(available: {fixture.manifest.layers})"
            )
    rows = [SWEEP_HEADER]
    for layer, delta, alpha, gamma in product(layers, deltas, alphas, gammas):
        config = RunConfig(
            layer=layer,
            delta=delta,
            alpha=alpha,
            gamma=gamma,
            topk=base.topk,
            connectivity=base.connectivity,
            overlap_metric=base.overlap_metric,
            jobs=base.jobs,
        )
        config.validate()
        report = run_fixture(fixture, config)
        total_k = 0
        for r in report.results:
            total_k += r.clusters.k
        mean_clusters = total_k / len(report.results)
        rows.append(
            ",".join(
                [
                    str(layer),
                    fmt6(delta),
                    fmt6(alpha),
                    fmt6(gamma),
                    fmt6(report.miou),
                    fmt6(report.oiou),
                    fmt6(report.topk_oracle_miou),
                    fmt6(mean_clusters),
                ]
            )
        )
    return "\n".join(rows) + "\n"


def layer_profile(fixture: Fixture, sample_id: str, gamma: float) -> list[tuple[int, float]]:
    """Cosine of the per-layer summary embedding against the fused text
    feature, one entry per dumped layer.  Needs the optional per-layer
    summary tensor; raises when the sample lacks it."""
    record = fixture.sample(sample_id)
    if record.cls_layers is None:
        raise FixtureError(f"sample {sample_id}: no per-layer summary embeddings")
    manifest = fixture.manifest
    if record.cls_layers.shape != (len(manifest.layers), manifest.d_star):
        raise FixtureError(
            f"sample {sample_id}: per-layer summary tensor has shape "
            f"{record.cls_layers.shape}, expected ({len(manifest.layers)}, {manifest.d_star})"
        )
    fused = fuse_text(record.e_sen, record.e_noun, gamma)
    params = fixture.params()
    out = []
    for i, layer in enumerate(manifest.layers):
        projected = project_hidden(record.cls_layers[i], params)
        out.append((layer, cosine(projected, fused.e_context)))
    return out
