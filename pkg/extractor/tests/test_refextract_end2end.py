"""Extraction end to end, validated by the engine it feeds.

The engine's fixture loader and evaluation run are the oracle here: a
fixture is correct when the consumer accepts every tensor and produces
a report over it.
"""

import numpy as np
import pytest

from patchref.cli import main as engine_main
from patchref.tensorio import load_fixture
from refextract.cli import main as extract_main
from refextract.errors import ExtractorError, SliceError
from refextract.extract import ExtractionSpec, read_slice, run_extraction

from scenes import paint_mask, standard_scene, write_slice


def toy_spec(**overrides):
    base = dict(model="toy-vit-a", layers=[2, 3], d_star=32, d=16,
                grid=7, cell=8)
    base.update(overrides)
    return ExtractionSpec(**base)


def save_checkerboard(path):
    """Single-pixel checkerboard: every region is too small to propose."""
    from PIL import Image

    checker = (np.indices((56, 56)).sum(axis=0) % 2).astype(np.uint8)
    rgb = np.repeat(np.where(checker == 1, 250, 5)[..., None], 3, axis=2)
    Image.fromarray(rgb.astype(np.uint8), mode="RGB").save(path)


@pytest.fixture
def scene_slice(tmp_path):
    scene = standard_scene(tmp_path)
    paint_mask(tmp_path / "gt1.png", 56, (8, 24, 8, 24))
    paint_mask(tmp_path / "gt2.png", 56, (32, 48, 32, 48))
    return write_slice(tmp_path, [
        {
            "sample_id": "a1",
            "image": scene.name,
            "expression": "the red square left of the blue square",
            "gt_mask": "gt1.png",
        },
        {
            "sample_id": "a2",
            "image": scene.name,
            "expression": "the blue square",
            "gt_mask": "gt2.png",
        },
        {
            "sample_id": "a3",
            "image": scene.name,
            "expression": "the lower box",
            "gt_mask": "gt2.png",
            "spatial_cue": "below",
        },
    ])


class TestSliceParsing:
    def test_resolves_paths_relative_to_the_file(self, scene_slice, tmp_path):
        samples = read_slice(scene_slice)
        assert [s.sample_id for s in samples] == ["a1", "a2", "a3"]
        assert samples[0].image == tmp_path / "scene.png"
        assert samples[2].spatial_cue == "below"

    def test_rejects_duplicates_and_garbage(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        with pytest.raises(SliceError):
            read_slice(bad)
        with pytest.raises(SliceError):
            read_slice(tmp_path / "missing.json")
        dup = write_slice(tmp_path, [
            {"sample_id": "x", "image": "i.png", "expression": "e",
             "gt_mask": "g.png"},
            {"sample_id": "x", "image": "i.png", "expression": "e",
             "gt_mask": "g.png"},
        ])
        with pytest.raises(SliceError):
            read_slice(dup)


class TestExtraction:
    def test_engine_loads_and_validates_the_fixture(self, scene_slice, tmp_path):
        out = tmp_path / "fixture"
        summary = run_extraction(toy_spec(), scene_slice, out)
        assert summary.written == ["a1", "a2", "a3"]
        assert summary.skipped == []

        fixture = load_fixture(out)  # strict validation is the point
        assert fixture.sample_ids == ["a1", "a2", "a3"]
        record = fixture.sample("a1", 3)
        assert record.patch_embeddings.shape == (7, 7, 32)
        assert record.e_img.shape[1] == 16
        assert record.spatial_cue == "left"
        assert record.e_neg is not None  # "blue square" follows the cue
        assert fixture.sample("a2", 3).e_neg is None
        assert fixture.sample("a3", 3).spatial_cue == "below"

    def test_engine_runs_a_report_over_it(self, scene_slice, tmp_path, capsys):
        out = tmp_path / "fixture"
        run_extraction(toy_spec(), scene_slice, out)
        assert engine_main(["run", "--fixture", str(out)]) == 0
        report = capsys.readouterr().out
        assert "sample: a1" in report
        assert "model: toy-vit-a" in report

    def test_extraction_is_reproducible_byte_for_byte(self, scene_slice, tmp_path):
        first = tmp_path / "f1"
        second = tmp_path / "f2"
        run_extraction(toy_spec(), scene_slice, first)
        run_extraction(toy_spec(), scene_slice, second)
        names = sorted(p.name for p in first.iterdir())
        assert names == sorted(p.name for p in second.iterdir())
        for name in names:
            assert (first / name).read_bytes() == (second / name).read_bytes(), name

    def test_no_temp_files_left_behind(self, scene_slice, tmp_path):
        out = tmp_path / "fixture"
        run_extraction(toy_spec(), scene_slice, out)
        assert not [p for p in out.iterdir() if ".tmp" in p.name]

    def test_unproposable_sample_is_skipped_with_a_log(self, tmp_path, caplog):
        save_checkerboard(tmp_path / "noise.png")
        scene = standard_scene(tmp_path)
        paint_mask(tmp_path / "gt.png", 56, (8, 24, 8, 24))
        slice_path = write_slice(tmp_path, [
            {"sample_id": "good", "image": scene.name,
             "expression": "the red square", "gt_mask": "gt.png"},
            {"sample_id": "noisy", "image": "noise.png",
             "expression": "anything", "gt_mask": "gt.png"},
        ])
        out = tmp_path / "fixture"
        summary = run_extraction(
            toy_spec(min_area_frac=0.2), slice_path, out
        )
        assert summary.written == ["good"]
        assert summary.skipped == ["noisy"]
        assert any("no candidate masks" in r.message for r in caplog.records)
        assert load_fixture(out).sample_ids == ["good"]

    def test_every_sample_skipped_is_an_error(self, tmp_path):
        save_checkerboard(tmp_path / "noise.png")
        paint_mask(tmp_path / "gt.png", 56, (8, 24, 8, 24))
        slice_path = write_slice(tmp_path, [
            {"sample_id": "noisy", "image": "noise.png",
             "expression": "anything", "gt_mask": "gt.png"},
        ])
        with pytest.raises(ExtractorError):
            run_extraction(toy_spec(min_area_frac=0.2), slice_path,
                           tmp_path / "fixture")


class TestMaskedEmbeddings:
    def test_candidates_get_distinct_rows(self, scene_slice, tmp_path):
        out = tmp_path / "fixture"
        run_extraction(toy_spec(), scene_slice, out)
        record = load_fixture(out).sample("a1", 3)
        rows = record.e_img
        assert rows.shape[0] == record.candidate_masks.shape[0]
        for i in range(rows.shape[0]):
            assert abs(np.linalg.norm(rows[i].astype(np.float64)) - 1.0) < 1e-5
            for j in range(i + 1, rows.shape[0]):
                assert not np.array_equal(rows[i], rows[j])


class TestCli:
    def test_cli_round_trip(self, scene_slice, tmp_path, capsys):
        out = tmp_path / "fixture"
        code = extract_main([
            "--model", "toy-vit-a", "--layers", "2,3",
            "--images", str(scene_slice), "--out", str(out),
        ])
        assert code == 0
        assert "wrote 3 samples" in capsys.readouterr().out
        assert load_fixture(out).sample_ids == ["a1", "a2", "a3"]

    def test_missing_slice_exits_1(self, tmp_path, capsys):
        code = extract_main([
            "--model", "toy-vit-a", "--layers", "2",
            "--images", str(tmp_path / "nope.json"),
            "--out", str(tmp_path / "out"),
        ])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_bad_layers_exit_2(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            extract_main([
                "--model", "toy-vit-a", "--layers", "2,x",
                "--images", "s.json", "--out", str(tmp_path),
            ])
        assert exc.value.code == 2
