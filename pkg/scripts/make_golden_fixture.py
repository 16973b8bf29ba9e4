#!/usr/bin/env python3
"""Build the end-to-end fixture under tests/golden plus its expected outputs.

Everything the expected files contain is produced by the self-contained
reference implementations in this script (plain loops, no package
imports), then cross-checked against the installed package before being
written.  The package is only invoked as a black box through its CLI
surface; if the two sides ever disagree byte for byte, generation fails
rather than writing anything.

The fixture is constructed, not sampled: hidden states are solved so
that patch similarity maps form designed blobs, and mask embeddings are
placed in an explicit basis so their scores land on chosen values.  All
decision gaps (rank orders, cluster membership at every swept threshold,
winner flips) are asserted with wide margins before anything is written.
"""

from __future__ import annotations

import json
import math
import shutil
import struct
import sys
import tempfile
from pathlib import Path

import numpy as np

MASTER_SEED = 20240817

D = 8
D_STAR = 16
P = 7
SIZE = 56  # H = W; each patch cell covers an 8x8 pixel block
N_MASKS = 4
MODEL = "clip-vit-b-32"
LAYER = 10
DELTA = 0.5
ALPHA = 0.5
GAMMA = 0.5
SWEEP_DELTAS = [i / 10 for i in range(1, 10)]

# ---------------------------------------------------------------------------
# Reference primitives (loops only; the package never touches these).
# ---------------------------------------------------------------------------


def q32(x: float) -> float:
    """Round a double through IEEE float32, like storing and reloading it."""
    return struct.unpack("<f", struct.pack("<f", float(x)))[0]


def q32_list(xs):
    return [q32(x) for x in xs]


def ref_layer_norm(x, gamma, beta, eps):
    n = len(x)
    mean = 0.0
    for v in x:
        mean += v
    mean /= n
    var = 0.0
    for v in x:
        var += (v - mean) ** 2
    var /= n
    scale = math.sqrt(var + eps)
    return [gamma[i] * (x[i] - mean) / scale + beta[i] for i in range(n)]


def ref_matvec(y, w):
    """y (len m) times w (m rows of n columns)."""
    n = len(w[0])
    out = [0.0] * n
    for i, yi in enumerate(y):
        row = w[i]
        for j in range(n):
            out[j] += yi * row[j]
    return out


def ref_dot(a, b):
    total = 0.0
    for x, y in zip(a, b):
        total += x * y
    return total


def ref_norm(a):
    return math.sqrt(ref_dot(a, a))


def ref_cosine(a, b):
    na, nb = ref_norm(a), ref_norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    c = ref_dot(a, b) / (na * nb)
    return min(1.0, max(-1.0, c))


def ref_minmax(grid):
    flat = [v for row in grid for v in row]
    lo, hi = min(flat), max(flat)
    if hi == lo:
        return [[0.0] * len(grid[0]) for _ in grid]
    return [[(v - lo) / (hi - lo) for v in row] for row in grid]


def ref_components(binary):
    """Union-find labelling, numbered by first row-major cell."""
    rows, cols = len(binary), len(binary[0])
    parent = list(range(rows * cols))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra

    for r in range(rows):
        for c in range(cols):
            if not binary[r][c]:
                continue
            if c + 1 < cols and binary[r][c + 1]:
                union(r * cols + c, r * cols + c + 1)
            if r + 1 < rows and binary[r + 1][c]:
                union(r * cols + c, (r + 1) * cols + c)
    labels = [[0] * cols for _ in range(rows)]
    order = {}
    for r in range(rows):
        for c in range(cols):
            if binary[r][c]:
                root = find(r * cols + c)
                if root not in order:
                    order[root] = len(order) + 1
                labels[r][c] = order[root]
    return labels, len(order)


def ref_cluster(normalized, delta):
    delta_used = float(delta)
    binary = [[v > delta_used for v in row] for row in normalized]
    while not any(any(row) for row in binary):
        next_delta = delta_used - 0.05
        if next_delta < 0.0:
            break
        delta_used = next_delta
        binary = [[v > delta_used for v in row] for row in normalized]
    labels, k = ref_components(binary)
    return labels, k, delta_used


def ref_upsample_nearest(labels, height, width):
    sh, sw = len(labels), len(labels[0])
    return [
        [labels[(i * sh) // height][(j * sw) // width] for j in range(width)]
        for i in range(height)
    ]


def ref_upsample_bilinear(grid, height, width):
    sh, sw = len(grid), len(grid[0])
    out = []
    for i in range(height):
        y = (i + 0.5) * (sh / height) - 0.5
        y0 = min(max(int(math.floor(y)), 0), sh - 1)
        y1 = min(y0 + 1, sh - 1)
        fy = min(max(y - y0, 0.0), 1.0)
        row = []
        for j in range(width):
            x = (j + 0.5) * (sw / width) - 0.5
            x0 = min(max(int(math.floor(x)), 0), sw - 1)
            x1 = min(x0 + 1, sw - 1)
            fx = min(max(x - x0, 0.0), 1.0)
            top = grid[y0][x0] + (grid[y0][x1] - grid[y0][x0]) * fx
            bottom = grid[y1][x0] + (grid[y1][x1] - grid[y1][x0]) * fx
            row.append(top + (bottom - top) * fy)
        out.append(row)
    return out


def ref_mask_iou(a, b):
    inter = union = 0
    for ra, rb in zip(a, b):
        for va, vb in zip(ra, rb):
            if va and vb:
                inter += 1
            if va or vb:
                union += 1
    if union == 0:
        return 1.0, 0, 0
    return inter / union, inter, union


def ref_fmt6(x):
    v = round(float(x), 6)
    if v == 0.0:
        v = 0.0
    return "%.6f" % v


COLORMAP = ((13, 8, 135), (126, 3, 168), (204, 71, 120), (248, 149, 64), (240, 249, 33))
PALETTE = (
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
)


def ref_colormap(v):
    v = min(1.0, max(0.0, v))
    seg = min(int(v * 4), 3)
    frac = v * 4 - seg
    c0, c1 = COLORMAP[seg], COLORMAP[seg + 1]
    return tuple(int(c0[i] + (c1[i] - c0[i]) * frac + 0.5) for i in range(3))


def ref_ppm(pixels):
    height, width = len(pixels), len(pixels[0])
    body = bytearray()
    for row in pixels:
        for rgb in row:
            body.extend(rgb)
    return b"P6\n%d %d\n255\n" % (width, height) + bytes(body)


def write_cpt(path: Path, values, shape, dtype_code):
    sizes = {0: "f", 1: "B", 2: "I"}
    header = b"CPT1" + bytes([dtype_code, len(shape)])
    header += struct.pack(f"<{len(shape)}I", *shape)
    count = 1
    for dim in shape:
        count *= dim
    assert len(values) == count, (path, len(values), shape)
    path.write_bytes(header + struct.pack(f"<{count}{sizes[dtype_code]}", *values))


# ---------------------------------------------------------------------------
# Construction helpers (free to use numpy; outputs are quantized to f32
# and every downstream check uses the quantized values).
# ---------------------------------------------------------------------------


def unit(v):
    return v / np.linalg.norm(v)


def solve_hidden_direction(target_f, gamma, beta, w):
    """Zero-mean unit vector u whose scaled hidden state 10*u projects
    close to target_f after LayerNorm and the linear map."""
    gamma = np.asarray(gamma)
    beta = np.asarray(beta)
    w = np.asarray(w)
    aw = np.diag(gamma) @ w  # (d_star, d)
    b0 = beta @ w
    u, *_ = np.linalg.lstsq(aw.T, (np.asarray(target_f) - b0) / 4.0, rcond=None)
    u = u - u.mean()
    return u / np.linalg.norm(u)


def hidden_for_level(lam, u_hi, u_lo):
    u = lam * u_hi + (1.0 - lam) * u_lo
    u = u - u.mean()
    return 10.0 * (u / np.linalg.norm(u))


def negative_axis(ctx_hat, neg_hat):
    """Orthonormal second axis spanning the negative direction:
    neg_hat = p * ctx_hat + q * u2."""
    p = float(ctx_hat @ neg_hat)
    q = math.sqrt(max(0.0, 1.0 - p * p))
    u2 = unit(neg_hat - p * ctx_hat)
    return p, q, u2


def mask_row_for_scores(s_pos, s_neg, ctx_hat, neg_axis, spare_hat):
    """Unit vector with chosen cosines against the context (and optionally
    the negative) direction.  All three axes must be orthonormal."""
    if neg_axis is None:
        b = 0.0
        u2 = None
    else:
        p, q, u2 = neg_axis
        b = (s_neg - s_pos * p) / q
    rest = 1.0 - s_pos * s_pos - b * b
    assert rest > 0.0, (s_pos, s_neg, rest)
    row = s_pos * ctx_hat + math.sqrt(rest) * spare_hat
    if u2 is not None:
        row = row + b * u2
    return row


def orthonormal_spare(rng, axes):
    """Unit vector orthogonal to every (orthonormal) axis given."""
    while True:
        v = rng.normal(size=D)
        for a in axes:
            v = v - (v @ a) * a
        if np.linalg.norm(v) > 1e-3:
            return unit(v)


def cell_block(mask, r0, r1, c0, c1):
    """Set the pixel block covering cell rows r0..r1, cols c0..c1."""
    mask[r0 * 8 : (r1 + 1) * 8, c0 * 8 : (c1 + 1) * 8] = 1


def blob(core_rc, core_n, plus_n, corner_n):
    """Level design for one 3x3 blob: centre cell, plus ring, corners.
    Values are normalized-map targets in (0, 1]."""
    r, c = core_rc
    cells = {(r, c): core_n}
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        cells[(r + dr, c + dc)] = plus_n
    for dr, dc in ((-1, -1), (-1, 1), (1, -1), (1, 1)):
        cells[(r + dr, c + dc)] = corner_n
    return cells


# ---------------------------------------------------------------------------
# Sample designs.
# ---------------------------------------------------------------------------

SAMPLES = [
    {
        "sample_id": "s1",
        "expression": "the tall blue crate",
        "n_o": "crate",
        "n_c": "tall blue",
        "spatial_cue": None,
        "with_neg": False,
        # Two blobs; plus rings survive the default threshold, corners only
        # the low ones.  The weaker blob dies out at the top of the sweep.
        "blobs": [blob((1, 1), 1.0, 0.78, 0.43), blob((5, 5), 0.85, 0.76, 0.44)],
        "s_pos": [0.55, 0.62, 0.40, 0.20],
        "s_neg": None,
        # Mask geometry in cell coordinates (r0, r1, c0, c1) unions.
        "masks": [
            [(0, 3, 0, 3)],  # big top-left block, dilutes its overlap
            [(0, 6, 4, 6)],  # right column band, highest positive score
            [(4, 6, 4, 6)],  # exact block over the second blob
            [(3, 4, 0, 1)],  # off to the side, no cluster contact
        ],
        "gt": [(4, 6, 4, 6)],
        "expect": {
            "k": 2,
            "sorted": [1, 0, 2, 3],
            "clustered": [2, 0, 1, 3],
            "topk": [1, 2],
            "final": 1,
        },
    },
    {
        "sample_id": "s2",
        "expression": "the chair to the left of the table",
        "n_o": "chair",
        "n_c": "table",
        "spatial_cue": "left",
        "with_neg": True,
        # The left blob is faint: clear of the default threshold but gone
        # from 0.55 upward.
        "blobs": [blob((1, 5), 1.0, 0.78, 0.43), blob((5, 1), 0.55, 0.52, 0.44)],
        # Mask 1 edges out mask 0 on the positive score but matches the
        # distractor text strongly; the correction flips the winner.
        "s_pos": [0.56, 0.60, 0.35, 0.15],
        "s_neg": [0.05, 0.50, 0.30, 0.10],
        "masks": [
            [(4, 6, 0, 2)],  # left object
            [(0, 2, 4, 6)],  # right distractor
            [(3, 6, 0, 6)],  # bottom half
            [(3, 4, 3, 4)],  # centre, touches nothing
        ],
        "gt": [(4, 6, 0, 2)],
        "expect": {
            "k": 2,
            "sorted": [1, 0, 2, 3],
            "clustered": [1, 0, 2, 3],
            "topk": [1, 0],
            "final": 0,
            "final_without_correction": 1,
        },
    },
    {
        "sample_id": "s3",
        "expression": "sofa",
        "n_o": "sofa",
        "n_c": "",
        "spatial_cue": None,
        "with_neg": False,
        "blobs": [blob((3, 3), 1.0, 0.82, 0.45)],
        "s_pos": [0.58, 0.30, 0.25, 0.45],
        "s_neg": None,
        "masks": [
            [(2, 4, 2, 4)],  # centre block over the blob
            [(0, 1, 0, 1)],
            [(5, 6, 5, 6)],
            [(0, 6, 0, 6)],  # whole frame
        ],
        "gt": [(2, 4, 2, 4)],
        "expect": {
            "k": 1,
            "sorted": [0, 3, 1, 2],
            "clustered": [0, 3, 1, 2],
            "topk": [0],
            "final": 0,
        },
    },
    {
        "sample_id": "s4",
        "expression": "the lamp behind the couch",
        "n_o": "lamp",
        "n_c": "couch",
        "spatial_cue": "behind",
        "with_neg": False,  # cue without a negative embedding: fallback path
        "blobs": [blob((1, 1), 1.0, 0.78, 0.43), blob((5, 5), 0.92, 0.74, 0.42)],
        "s_pos": [0.57, 0.52, 0.33, 0.21],
        "s_neg": None,
        "masks": [
            [(0, 2, 0, 2)],  # first blob
            [(4, 6, 4, 6)],  # second blob (the actual target)
            [(0, 6, 0, 3)],  # wide left band
            [(6, 6, 0, 0)],  # single corner cell
        ],
        "gt": [(4, 6, 4, 6)],
        "expect": {
            "k": 2,
            "sorted": [0, 1, 2, 3],
            "clustered": [0, 1, 2, 3],
            "topk": [0, 1],
            "final": 0,
        },
    },
    {
        "sample_id": "s5",
        "expression": "the tallest of the three plants",
        "n_o": "plant",
        "n_c": "tallest three",
        "spatial_cue": None,
        "with_neg": False,
        "blobs": [
            blob((1, 1), 1.0, 0.78, 0.43),
            blob((1, 5), 0.94, 0.76, 0.44),
            blob((5, 3), 0.87, 0.73, 0.42),
        ],
        "s_pos": [0.50, 0.44, 0.63, 0.28],
        "s_neg": None,
        "masks": [
            [(0, 2, 0, 2)],
            [(0, 2, 4, 6)],
            [(4, 6, 0, 6)],  # bottom band over the third blob
            [(3, 3, 3, 3)],
        ],
        "gt": [(4, 6, 2, 4)],
        "expect": {
            "k": 3,
            "sorted": [2, 0, 1, 3],
            "clustered": [0, 1, 2, 3],
            "topk": [2, 0, 1],
            "final": 2,
        },
    },
]

DELTA_GRID_MARGIN = 0.012


def build_sample(spec, rng, params):
    """Solve tensors for one sample and return runtime values plus files."""
    ln_gamma, ln_beta, eps, w = params

    # Text: pick a context direction, then split it into sentence and noun
    # embeddings that fuse back onto it at gamma 0.5.
    t_hat = unit(rng.normal(size=D))
    d1 = 0.3 * rng.normal(size=D)
    e_sen = q32_list(t_hat + d1)
    e_noun = q32_list(t_hat - d1)
    ctx = [GAMMA * a + (1.0 - GAMMA) * b for a, b in zip(e_sen, e_noun)]
    ctx_hat = unit(np.array(ctx))

    e_neg = None
    neg_hat = None
    if spec["with_neg"]:
        raw = rng.normal(size=D)
        raw = raw - 0.5 * (raw @ ctx_hat) * ctx_hat  # keep it clearly distinct
        e_neg = q32_list(unit(raw))
        neg_hat = unit(np.array(e_neg))

    # Hidden-state directions whose projections land along / away from the
    # context feature, then a calibration curve from blend level to cosine.
    perp = orthonormal_spare(rng, [ctx_hat])
    u_hi = solve_hidden_direction(5.0 * ctx_hat, ln_gamma, ln_beta, w)
    u_lo = solve_hidden_direction(-0.3 * ctx_hat + 1.0 * perp, ln_gamma, ln_beta, w)

    def cosine_at(lam):
        x = q32_list(hidden_for_level(lam, u_hi, u_lo))
        y = ref_layer_norm(x, ln_gamma, ln_beta, eps)
        return ref_cosine(ref_matvec(y, w), ctx)

    # The blend path's alignment can peak before level 1; keep only the
    # rising prefix and put the top of the level scale at the peak.
    full_grid = [i / 400 for i in range(401)]
    full_curve = [cosine_at(g) for g in full_grid]
    peak = max(range(len(full_curve)), key=lambda i: full_curve[i])
    grid = full_grid[: peak + 1]
    curve = full_curve[: peak + 1]
    assert curve[-1] > 0.6 and curve[0] < 0.1, (
        f"{spec['sample_id']}: endpoints {curve[0]:.3f}..{curve[-1]:.3f}"
    )
    assert curve[-1] - curve[0] > 0.5, f"{spec['sample_id']}: curve range too narrow"
    assert all(b > a for a, b in zip(curve, curve[1:])), (
        f"{spec['sample_id']}: level-to-cosine curve is not monotone below its peak"
    )

    c_lo, c_hi = curve[0], curve[-1]

    def level_for_normalized(n_target):
        """Invert the curve so the cell lands at n_target after min-max
        normalization (min is the zero-level background, max the core)."""
        want = c_lo + n_target * (c_hi - c_lo)
        for idx in range(len(grid) - 1):
            if curve[idx] <= want <= curve[idx + 1]:
                span = curve[idx + 1] - curve[idx]
                frac = 0.0 if span == 0.0 else (want - curve[idx]) / span
                return grid[idx] + frac * (grid[idx + 1] - grid[idx])
        raise AssertionError(f"target {n_target} outside the curve")

    # Cell levels: designed blobs over a jittered near-zero background,
    # with one cell pinned at exactly zero so the map minimum is c_lo.
    levels = [[None] * P for _ in range(P)]
    for b in spec["blobs"]:
        for (r, c), n_target in b.items():
            assert levels[r][c] is None, f"{spec['sample_id']}: blobs overlap at {(r, c)}"
            levels[r][c] = level_for_normalized(n_target)
    background = [(r, c) for r in range(P) for c in range(P) if levels[r][c] is None]
    for r, c in background:
        levels[r][c] = float(rng.uniform(0.0, 0.015))
    anchor = background[0]
    levels[anchor[0]][anchor[1]] = 0.0

    patches = []
    for r in range(P):
        for c in range(P):
            patches.extend(q32_list(hidden_for_level(levels[r][c], u_hi, u_lo)))

    # Reference similarity map for this sample.
    raw_map = []
    idx = 0
    for r in range(P):
        row = []
        for c in range(P):
            x = patches[idx : idx + D_STAR]
            idx += D_STAR
            y = ref_layer_norm(x, ln_gamma, ln_beta, eps)
            row.append(ref_cosine(ref_matvec(y, w), ctx))
        raw_map.append(row)
    normalized = ref_minmax(raw_map)

    # Every swept threshold must sit well clear of every cell value, so
    # package/reference float differences can never flip a membership.
    for row in normalized:
        for v in row:
            for delta in SWEEP_DELTAS:
                assert abs(v - delta) > DELTA_GRID_MARGIN, (
                    f"{spec['sample_id']}: cell value {v:.4f} too close to {delta}"
                )

    # Cluster structure: designed blob cells above the default threshold,
    # and a count that never grows as the threshold rises.
    labels, k, delta_used = ref_cluster(normalized, DELTA)
    assert delta_used == DELTA
    assert k == spec["expect"]["k"], f"{spec['sample_id']}: k {k}"
    designed = set()
    for b in spec["blobs"]:
        designed |= {rc for rc, n in b.items() if n > DELTA}
    got = {(r, c) for r in range(P) for c in range(P) if labels[r][c] > 0}
    assert got == designed, f"{spec['sample_id']}: foreground mismatch"
    counts = []
    for delta in SWEEP_DELTAS:
        _, k_d, _ = ref_cluster(normalized, delta)
        counts.append(k_d)
    assert all(a >= b for a, b in zip(counts, counts[1:])), (
        f"{spec['sample_id']}: cluster count grows along the sweep: {counts}"
    )

    # Candidate masks and mask embeddings with designed score gaps.
    masks = []
    for blocks in spec["masks"]:
        m = np.zeros((SIZE, SIZE), dtype=np.uint8)
        for r0, r1, c0, c1 in blocks:
            cell_block(m, r0, r1, c0, c1)
        masks.append(m)
    gt = np.zeros((SIZE, SIZE), dtype=np.uint8)
    for r0, r1, c0, c1 in spec["gt"]:
        cell_block(gt, r0, r1, c0, c1)

    neg_axis = None if neg_hat is None else negative_axis(ctx_hat, neg_hat)
    axes = [ctx_hat] if neg_axis is None else [ctx_hat, neg_axis[2]]
    spare = orthonormal_spare(rng, axes)
    e_img = []
    for i in range(N_MASKS):
        s_neg = spec["s_neg"][i] if spec["s_neg"] else 0.0
        row = mask_row_for_scores(spec["s_pos"][i], s_neg, ctx_hat, neg_axis, spare)
        e_img.append(q32_list(row))

    for i in range(N_MASKS):
        achieved = ref_cosine(e_img[i], ctx)
        assert abs(achieved - spec["s_pos"][i]) < 1e-3, (
            f"{spec['sample_id']}: mask {i} positive score off target"
        )
        if spec["s_neg"]:
            achieved_neg = ref_cosine(e_img[i], e_neg)
            assert abs(achieved_neg - spec["s_neg"][i]) < 1e-3

    return {
        "spec": spec,
        "e_sen": e_sen,
        "e_noun": e_noun,
        "e_neg": e_neg,
        "ctx": ctx,
        "patches": patches,
        "raw_map": raw_map,
        "normalized": normalized,
        "masks": masks,
        "gt": gt,
        "e_img": e_img,
    }


# ---------------------------------------------------------------------------
# Reference pipeline over the built samples.
# ---------------------------------------------------------------------------


def ref_run_sample(sample, delta):
    spec = sample["spec"]
    labels, k, delta_used = ref_cluster(sample["normalized"], delta)
    up = ref_upsample_nearest(labels, SIZE, SIZE)
    union_px = [[1 if v > 0 else 0 for v in row] for row in up]

    masks = [m.tolist() for m in sample["masks"]]
    gt = sample["gt"].tolist()

    s_pos = [ref_cosine(row, sample["ctx"]) for row in sample["e_img"]]
    if sample["e_neg"] is not None:
        s_neg = [ref_cosine(row, sample["e_neg"]) for row in sample["e_img"]]
    else:
        s_neg = [None] * N_MASKS
    overlaps = [ref_mask_iou(m, union_px)[0] for m in masks]

    sc_applied = spec["spatial_cue"] is not None and sample["e_neg"] is not None
    sc_fallback = spec["spatial_cue"] is not None and sample["e_neg"] is None
    finals = [
        s_pos[i] - ALPHA * s_neg[i] if sc_applied else s_pos[i]
        for i in range(N_MASKS)
    ]

    sorted_ids = sorted(range(N_MASKS), key=lambda i: (-s_pos[i], i))
    clustered_ids = sorted(range(N_MASKS), key=lambda i: (-overlaps[i], -s_pos[i], i))
    k_used = min(max(1, k), N_MASKS)
    head = sorted_ids[0]
    topk = [head] + [i for i in clustered_ids if i != head][: k_used - 1]
    final = min(topk, key=lambda i: (-finals[i], i))

    per_mask_iou = []
    per_mask_counts = []
    for m in masks:
        value, inter, union = ref_mask_iou(m, gt)
        per_mask_iou.append(value)
        per_mask_counts.append((inter, union))

    return {
        "sample_id": spec["sample_id"],
        "expression": spec["expression"],
        "spatial_cue": spec["spatial_cue"],
        "k": k,
        "delta_used": delta_used,
        "labels": labels,
        "s_pos": s_pos,
        "s_neg": s_neg,
        "overlaps": overlaps,
        "finals": finals,
        "sorted": sorted_ids,
        "clustered": clustered_ids,
        "topk": topk,
        "k_used": k_used,
        "final": final,
        "sc_applied": sc_applied,
        "sc_fallback": sc_fallback,
        "iou": per_mask_iou[final],
        "counts": per_mask_counts[final],
        "topk_oracle": max(per_mask_iou[i] for i in topk),
        "upper_bound": max(per_mask_iou),
    }


def ref_aggregate(rows):
    def mean(values):
        total = 0.0
        for v in values:
            total += v
        return total / len(values)

    inter = union = 0
    for r in rows:
        inter += r["counts"][0]
        union += r["counts"][1]
    spatial = [r for r in rows if r["spatial_cue"] is not None]
    nonspatial = [r for r in rows if r["spatial_cue"] is None]
    return {
        "miou": mean([r["iou"] for r in rows]),
        "oiou": 1.0 if union == 0 else inter / union,
        "topk_oracle_miou": mean([r["topk_oracle"] for r in rows]),
        "upper_bound_miou": mean([r["upper_bound"] for r in rows]),
        "spatial_samples": len(spatial),
        "spatial_miou": mean([r["iou"] for r in spatial]) if spatial else None,
        "nonspatial_miou": mean([r["iou"] for r in nonspatial]) if nonspatial else None,
        "sc_fallbacks": sum(1 for r in rows if r["sc_fallback"]),
    }


def ref_report(rows, agg):
    lines = [
        "format: eval-report-v1",
        f"model: {MODEL}",
        "fixture: cpt-fixture-1",
        f"layer: {LAYER}",
        f"delta: {ref_fmt6(DELTA)}",
        f"alpha: {ref_fmt6(ALPHA)}",
        f"gamma: {ref_fmt6(GAMMA)}",
        "topk: cluster",
        "connectivity: 4",
        "overlap-metric: union-iou",
        f"samples: {len(rows)}",
        "",
    ]
    for r in rows:
        lines += [
            f"sample: {r['sample_id']}",
            f"expression: {r['expression']}",
            f"spatial-cue: {r['spatial_cue'] if r['spatial_cue'] is not None else '-'}",
            f"clusters: {r['k']}",
            f"delta-used: {ref_fmt6(r['delta_used'])}",
            "zero-norm-patches: 0",
            f"sorted: {' '.join(str(i) for i in r['sorted'])}",
            f"clustered: {' '.join(str(i) for i in r['clustered'])}",
            f"topk: {' '.join(str(i) for i in r['topk'])}",
            f"k-used: {r['k_used']}",
            f"final: {r['final']}",
            f"sc-applied: {'yes' if r['sc_applied'] else 'no'}",
            f"iou: {ref_fmt6(r['iou'])}",
            f"topk-oracle-iou: {ref_fmt6(r['topk_oracle'])}",
            f"upper-bound-iou: {ref_fmt6(r['upper_bound'])}",
            "mask-scores:",
        ]
        for i in range(N_MASKS):
            neg = "-" if r["s_neg"][i] is None else ref_fmt6(r["s_neg"][i])
            lines.append(
                f"  {i} s_pos={ref_fmt6(r['s_pos'][i])} s_neg={neg} "
                f"overlap={ref_fmt6(r['overlaps'][i])} final={ref_fmt6(r['finals'][i])}"
            )
        lines.append("")
    lines += [
        "summary:",
        f"miou: {ref_fmt6(agg['miou'])}",
        f"oiou: {ref_fmt6(agg['oiou'])}",
        f"topk-oracle-miou: {ref_fmt6(agg['topk_oracle_miou'])}",
        f"upper-bound-miou: {ref_fmt6(agg['upper_bound_miou'])}",
        f"spatial-samples: {agg['spatial_samples']}",
        f"spatial-miou: {ref_fmt6(agg['spatial_miou']) if agg['spatial_miou'] is not None else '-'}",
        f"nonspatial-miou: {ref_fmt6(agg['nonspatial_miou']) if agg['nonspatial_miou'] is not None else '-'}",
        "zero-norm-patches: 0",
        "zero-norm-rows: 0",
        f"sc-fallbacks: {agg['sc_fallbacks']}",
        "",
    ]
    return "\n".join(lines)


def ref_sweep_csv(samples):
    lines = ["layer,delta,alpha,gamma,miou,oiou,topk_oracle_miou,mean_clusters"]
    mean_by_delta = []
    for delta in SWEEP_DELTAS:
        rows = [ref_run_sample(s, delta) for s in samples]
        agg = ref_aggregate(rows)
        total_k = 0
        for r in rows:
            total_k += r["k"]
        mean_clusters = total_k / len(rows)
        mean_by_delta.append(mean_clusters)
        lines.append(
            ",".join(
                [
                    str(LAYER),
                    ref_fmt6(delta),
                    ref_fmt6(ALPHA),
                    ref_fmt6(GAMMA),
                    ref_fmt6(agg["miou"]),
                    ref_fmt6(agg["oiou"]),
                    ref_fmt6(agg["topk_oracle_miou"]),
                    ref_fmt6(mean_clusters),
                ]
            )
        )
    return "\n".join(lines) + "\n", mean_by_delta


def ref_render_map(raw_map):
    shifted = [[(v + 1.0) / 2.0 for v in row] for row in raw_map]
    up = ref_upsample_bilinear(shifted, SIZE, SIZE)
    return ref_ppm([[ref_colormap(v) for v in row] for row in up])


def ref_render_clusters(labels):
    up = ref_upsample_nearest(labels, SIZE, SIZE)
    pixels = [
        [(0, 0, 0) if v == 0 else PALETTE[(v - 1) % 12] for v in row] for row in up
    ]
    return ref_ppm(pixels)


# ---------------------------------------------------------------------------
# Fixture emission and package cross-check.
# ---------------------------------------------------------------------------


def emit_fixture(root: Path, params, samples):
    ln_gamma, ln_beta, eps, w = params
    root.mkdir(parents=True, exist_ok=True)
    write_cpt(root / "ln_gamma.cpt", ln_gamma, (D_STAR,), 0)
    write_cpt(root / "ln_beta.cpt", ln_beta, (D_STAR,), 0)
    flat_w = [w[i][j] for i in range(D_STAR) for j in range(D)]
    write_cpt(root / "projection.cpt", flat_w, (D_STAR, D), 0)

    entries = []
    for s in samples:
        spec = s["spec"]
        sid = spec["sample_id"]
        write_cpt(root / f"{sid}_sen.cpt", s["e_sen"], (D,), 0)
        write_cpt(root / f"{sid}_noun.cpt", s["e_noun"], (D,), 0)
        write_cpt(root / f"{sid}_patches_l{LAYER}.cpt", s["patches"], (P, P, D_STAR), 0)
        mask_bytes = [int(v) for m in s["masks"] for v in m.reshape(-1)]
        write_cpt(root / f"{sid}_masks.cpt", mask_bytes, (N_MASKS, SIZE, SIZE), 1)
        flat_e = [v for row in s["e_img"] for v in row]
        write_cpt(root / f"{sid}_eimg.cpt", flat_e, (N_MASKS, D), 0)
        write_cpt(root / f"{sid}_gt.cpt", [int(v) for v in s["gt"].reshape(-1)], (SIZE, SIZE), 1)
        entry = {
            "sample_id": sid,
            "expression": spec["expression"],
            "n_o": spec["n_o"],
            "n_c": spec["n_c"],
            "spatial_cue": spec["spatial_cue"],
            "m": N_MASKS,
            "e_sen": f"{sid}_sen.cpt",
            "e_noun": f"{sid}_noun.cpt",
            "e_neg": None,
            "patch_embeddings": {str(LAYER): f"{sid}_patches_l{LAYER}.cpt"},
            "candidate_masks": f"{sid}_masks.cpt",
            "e_img": f"{sid}_eimg.cpt",
            "gt_mask": f"{sid}_gt.cpt",
        }
        if s["e_neg"] is not None:
            write_cpt(root / f"{sid}_neg.cpt", s["e_neg"], (D,), 0)
            entry["e_neg"] = f"{sid}_neg.cpt"
        entries.append(entry)

    manifest = {
        "version": "cpt-fixture-1",
        "model": MODEL,
        "d": D,
        "d_star": D_STAR,
        "p": P,
        "H": SIZE,
        "W": SIZE,
        "layers": [LAYER],
        "defaults": {},
        "params": {
            "ln_eps": eps,
            "ln_gamma": "ln_gamma.cpt",
            "ln_beta": "ln_beta.cpt",
            "projection": "projection.cpt",
        },
        "samples": entries,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")


def cross_check(fixture_dir: Path, expected_report: str, expected_csv: str,
                expected_map: bytes, expected_clusters: bytes):
    """Drive the installed package through its CLI and insist on byte
    equality with the reference outputs."""
    import logging

    from patchref.cli import main as engine_main

    logging.disable(logging.WARNING)  # the s4 fallback warning is expected
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        for jobs in ("1", "8"):
            out = tmp / f"report-{jobs}.txt"
            code = engine_main(
                ["run", "--fixture", str(fixture_dir), "--jobs", jobs, "--out", str(out)]
            )
            assert code == 0
            got = out.read_bytes()
            assert got == expected_report.encode(), (
                f"package report (jobs={jobs}) differs from the reference"
            )
        out = tmp / "sweep.csv"
        code = engine_main(
            [
                "sweep",
                "--fixture",
                str(fixture_dir),
                "--deltas",
                ",".join(str(d) for d in SWEEP_DELTAS),
                "--out",
                str(out),
            ]
        )
        assert code == 0
        assert out.read_bytes() == expected_csv.encode(), "sweep CSV differs"

        img_dir = tmp / "imgs"
        code = engine_main(
            ["render", "--fixture", str(fixture_dir), "--sample", "s1", "--out", str(img_dir)]
        )
        assert code == 0
        assert (img_dir / "s1-map.ppm").read_bytes() == expected_map, "map image differs"
        assert (img_dir / "s1-clusters.ppm").read_bytes() == expected_clusters, (
            "cluster image differs"
        )
    logging.disable(logging.NOTSET)


def main():
    out_root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("tests/golden")
    rng = np.random.default_rng(MASTER_SEED)

    ln_gamma = q32_list(1.0 + 0.05 * rng.normal(size=D_STAR))
    ln_beta = q32_list(0.02 * rng.normal(size=D_STAR))
    eps = 1e-5
    w_arr = rng.normal(size=(D_STAR, D)) / 4.0
    w = [q32_list(row) for row in w_arr]
    params = (ln_gamma, ln_beta, eps, w)

    samples = [build_sample(spec, rng, params) for spec in SAMPLES]

    # Reference outputs at the default configuration.
    rows = [ref_run_sample(s, DELTA) for s in samples]
    for row, spec in zip(rows, SAMPLES):
        expect = spec["expect"]
        assert row["sorted"] == expect["sorted"], (row["sample_id"], row["sorted"])
        assert row["clustered"] == expect["clustered"], (row["sample_id"], row["clustered"])
        assert row["topk"] == expect["topk"], (row["sample_id"], row["topk"])
        assert row["final"] == expect["final"], (row["sample_id"], row["final"])
        gaps = [
            abs(a - b)
            for i, a in enumerate(row["finals"])
            for b in row["finals"][i + 1 :]
        ]
        assert min(gaps) > 1e-3, (row["sample_id"], "final-score gap too small")
        if "final_without_correction" in expect:
            assert row["sorted"][0] == expect["final_without_correction"]
            assert row["final"] != expect["final_without_correction"], (
                "correction did not flip the winner"
            )

    # Shortlists must differ from plain score order somewhere.
    assert any(
        r["topk"] != r["sorted"][: r["k_used"]] for r in rows
    ), "rerank never changed a shortlist"
    assert sum(1 for r in rows if r["k"] >= 2) >= 2

    agg = ref_aggregate(rows)
    report = ref_report(rows, agg)
    csv, mean_by_delta = ref_sweep_csv(samples)
    assert all(a >= b for a, b in zip(mean_by_delta, mean_by_delta[1:])), (
        f"mean cluster count grows along the sweep: {mean_by_delta}"
    )
    map_ppm = ref_render_map(samples[0]["raw_map"])
    labels, _, _ = ref_cluster(samples[0]["normalized"], DELTA)
    clusters_ppm = ref_render_clusters(labels)

    if out_root.exists():
        shutil.rmtree(out_root)
    fixture_dir = out_root / "fixture"
    emit_fixture(fixture_dir, params, samples)

    cross_check(fixture_dir, report, csv, map_ppm, clusters_ppm)

    (out_root / "expected_report.txt").write_bytes(report.encode())
    (out_root / "expected_sweep.csv").write_bytes(csv.encode())
    (out_root / "expected_s1-map.ppm").write_bytes(map_ppm)
    (out_root / "expected_s1-clusters.ppm").write_bytes(clusters_ppm)
    meta = {
        "seed": MASTER_SEED,
        "clusters_at_default": {r["sample_id"]: r["k"] for r in rows},
        "finals": {r["sample_id"]: r["final"] for r in rows},
        "correction_flip_sample": "s2",
        "rerank_differs_sample": "s1",
        "fallback_count": agg["sc_fallbacks"],
        "miou": ref_fmt6(agg["miou"]),
        "oiou": ref_fmt6(agg["oiou"]),
        "mean_clusters_by_delta": [ref_fmt6(v) for v in mean_by_delta],
    }
    (out_root / "expected_meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    print(f"golden fixture written to {out_root}")
    print(f"  clusters at default threshold: {[r['k'] for r in rows]}")
    print(f"  miou {meta['miou']}  oiou {meta['oiou']}")
    print(f"  mean clusters along the sweep: {meta['mean_clusters_by_delta']}")


if __name__ == "__main__":
    main()
