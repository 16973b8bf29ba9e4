"""Shared helpers: fixture builders and the acceptance result banner."""

from __future__ import annotations

import json

import numpy as np

from patchref.tensorio import MANIFEST_VERSION, write_tensor

# Filled by tests/test_acceptance.py; printed after the run so each
# criterion shows one PASS/FAIL line even under captured output.
ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{name}: {outcome}")


def build_fixture(
    root,
    *,
    model="toy-model",
    d=4,
    d_star=6,
    p=3,
    height=6,
    width=6,
    layers=(3,),
    defaults=None,
    n_samples=2,
    n_masks=3,
    seed=0,
    spatial=(),
    with_neg=(),
    with_cls=False,
    edit=None,
):
    """Write a valid fixture directory and return its manifest dict.

    ``spatial`` / ``with_neg`` name the sample ids that get a spatial cue
    or a negative embedding.  ``edit`` mutates the manifest dict before it
    is written, for corruption tests.
    """
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)

    write_tensor(np.ones(d_star, dtype=np.float32), root / "ln_gamma.cpt")
    write_tensor(np.zeros(d_star, dtype=np.float32), root / "ln_beta.cpt")
    write_tensor(
        rng.normal(size=(d_star, d)).astype(np.float32), root / "projection.cpt"
    )

    samples = []
    for i in range(n_samples):
        sid = f"s{i + 1}"
        write_tensor(rng.normal(size=d).astype(np.float32), root / f"{sid}_sen.cpt")
        write_tensor(rng.normal(size=d).astype(np.float32), root / f"{sid}_noun.cpt")
        patch_paths = {}
        for layer in layers:
            rel = f"{sid}_patches_l{layer}.cpt"
            write_tensor(
                rng.normal(size=(p, p, d_star)).astype(np.float32), root / rel
            )
            patch_paths[str(layer)] = rel
        masks = np.zeros((n_masks, height, width), dtype=np.uint8)
        for m in range(n_masks):
            r0 = (m * height) // n_masks
            r1 = ((m + 1) * height) // n_masks
            masks[m, r0:r1, :] = 1
        write_tensor(masks, root / f"{sid}_masks.cpt")
        write_tensor(
            rng.normal(size=(n_masks, d)).astype(np.float32), root / f"{sid}_eimg.cpt"
        )
        write_tensor(masks[i % n_masks], root / f"{sid}_gt.cpt")
        entry = {
            "sample_id": sid,
            "expression": f"object number {i + 1}",
            "n_o": "object",
            "n_c": "",
            "spatial_cue": "left" if sid in spatial else None,
            "m": n_masks,
            "e_sen": f"{sid}_sen.cpt",
            "e_noun": f"{sid}_noun.cpt",
            "e_neg": None,
            "patch_embeddings": patch_paths,
            "candidate_masks": f"{sid}_masks.cpt",
            "e_img": f"{sid}_eimg.cpt",
            "gt_mask": f"{sid}_gt.cpt",
        }
        if sid in with_neg:
            write_tensor(
                rng.normal(size=d).astype(np.float32), root / f"{sid}_neg.cpt"
            )
            entry["e_neg"] = f"{sid}_neg.cpt"
        if with_cls:
            write_tensor(
                rng.normal(size=(len(layers), d_star)).astype(np.float32),
                root / f"{sid}_cls.cpt",
            )
            entry["cls_layers"] = f"{sid}_cls.cpt"
        samples.append(entry)

    manifest = {
        "version": MANIFEST_VERSION,
        "model": model,
        "d": d,
        "d_star": d_star,
        "p": p,
        "H": height,
        "W": width,
        "layers": list(layers),
        "defaults": dict(defaults) if defaults else {},
        "params": {
            "ln_eps": 1e-5,
            "ln_gamma": "ln_gamma.cpt",
            "ln_beta": "ln_beta.cpt",
            "projection": "projection.cpt",
        },
        "samples": samples,
    }
    if edit is not None:
        edit(manifest)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest
