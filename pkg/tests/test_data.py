"""Dataset layer tests: manifests, stratification, splits, augments, synthesis."""

import json
import logging
import math
from dataclasses import replace

import numpy as np
import pytest

from grapedet.data import (
    CountRecord,
    DataError,
    DatasetManifest,
    ImageRecord,
    SynthProfile,
    apply_debar,
    augment_plan,
    channel_enhance,
    format_label_lines,
    gaussian_noise_blur,
    ingest,
    load_image,
    load_manifest,
    parse_label_file,
    read_counts,
    rectangle_discard,
    render_augment,
    rotate,
    save_manifest,
    split,
    stratify,
    synth_vineyard,
    write_counts,
)
from grapedet.geometry import BBox, NormBox, to_pixels

from conftest import CHARDONNAY, MERLOT, make_record, survey_fixture


class TestRecords:
    def test_unknown_condition_token_rejected(self):
        with pytest.raises(DataError, match="riesling"):
            make_record(variety="riesling")
        with pytest.raises(DataError, match="foggy"):
            make_record(weather="foggy")
        with pytest.raises(DataError, match="dusk"):
            make_record(sunlight="dusk")

    def test_maturity_may_be_unset(self):
        rec = make_record(maturity=None)
        assert rec.maturity is None

    def test_non_positive_extent_rejected(self):
        with pytest.raises(DataError):
            make_record(width=0)

    def test_unknown_manifest_key_rejected(self):
        d = make_record().to_dict()
        d["exposure"] = 1.0
        with pytest.raises(DataError, match="exposure"):
            ImageRecord.from_dict(d)

    def test_dict_round_trip(self):
        rec = make_record(canopy_roi=BBox(5, 5, 95, 95), maturity=None)
        assert ImageRecord.from_dict(rec.to_dict()) == rec

    def test_negative_count_rejected(self):
        with pytest.raises(DataError):
            CountRecord("v", -1, 3)


class TestManifestIO:
    def test_save_load_round_trip(self, tmp_path):
        manifest = DatasetManifest(
            records=[make_record(i) for i in range(5)],
            counts=[CountRecord(f"vine_{i:04d}", i + 1, i) for i in range(5)],
        )
        save_manifest(manifest, tmp_path)
        loaded = load_manifest(tmp_path / "manifest.jsonl")
        assert loaded.records == manifest.records
        assert loaded.counts == manifest.counts

    def test_save_is_byte_deterministic(self, tmp_path):
        manifest = DatasetManifest(records=[make_record(i) for i in range(4)])
        save_manifest(manifest, tmp_path / "a")
        save_manifest(manifest, tmp_path / "b")
        assert (tmp_path / "a/manifest.jsonl").read_bytes() == (
            tmp_path / "b/manifest.jsonl"
        ).read_bytes()

    def test_duplicate_image_path_rejected(self, tmp_path):
        manifest = DatasetManifest(records=[make_record(0), make_record(0)])
        with pytest.raises(DataError, match="duplicate"):
            save_manifest(manifest, tmp_path)

    def test_duplicate_raw_source_rejected(self):
        a, b = make_record(0), make_record(1, source_id="src_0000")
        with pytest.raises(DataError, match="source_id"):
            DatasetManifest(records=[a, b]).validate()

    def test_split_consistency_enforced(self):
        a = make_record(0, split="train")
        b = make_record(1, source_id="src_0000", augment='{"op": "rot90", "k": 1}', split="val")
        with pytest.raises(DataError, match="spans splits"):
            DatasetManifest(records=[a, b]).validate()

    def test_label_lines_fixed_decimals(self):
        text = format_label_lines([NormBox(0.5, 0.5, 0.2, 0.1, class_id=0)])
        assert text == "0 0.500000 0.500000 0.200000 0.100000\n"

    def test_label_parse_round_trip(self, tmp_path):
        boxes = [NormBox(0.31, 0.62, 0.11, 0.055), NormBox(0.8, 0.4, 0.09, 0.2)]
        path = tmp_path / "x.txt"
        path.write_text(format_label_lines(boxes))
        parsed = parse_label_file(path)
        for a, b in zip(parsed, boxes):
            assert a.cx == pytest.approx(b.cx, abs=1e-6)
            assert a.w == pytest.approx(b.w, abs=1e-6)

    def test_malformed_label_names_line(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("0 0.5 0.5 0.2 0.2\n0 0.5 oops 0.2 0.2\n")
        with pytest.raises(DataError, match="bad.txt:2"):
            parse_label_file(path)

    def test_wrong_field_count_names_line(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("0 0.5 0.5 0.2\n")
        with pytest.raises(DataError, match=":1"):
            parse_label_file(path)

    def test_out_of_range_label_clips_with_warning(self, tmp_path, caplog):
        path = tmp_path / "edge.txt"
        path.write_text("0 1.200000 0.500000 0.300000 0.300000\n")
        with caplog.at_level(logging.WARNING, logger="grapedet.data"):
            boxes = parse_label_file(path)
        assert boxes[0].cx == 1.0
        assert "clipping" in caplog.text

    def test_counts_round_trip(self, tmp_path):
        counts = [CountRecord("a", 12, 10), CountRecord("b", 7, 7)]
        write_counts(counts, tmp_path / "counts.csv")
        assert read_counts(tmp_path / "counts.csv") == counts
        header = (tmp_path / "counts.csv").read_text().splitlines()[0]
        assert header == "vine_id,field_count,label_count"

    def test_ingest_prefers_label_files(self, tmp_path):
        manifest = DatasetManifest(records=[make_record(0)])
        save_manifest(manifest, tmp_path, write_labels=False)
        labels = tmp_path / "labels"
        labels.mkdir()
        (labels / "img_0000.txt").write_text("0 0.250000 0.250000 0.100000 0.100000\n")
        loaded = ingest(tmp_path / "manifest.jsonl", labels)
        assert loaded.records[0].boxes == [NormBox(0.25, 0.25, 0.1, 0.1)]

    def test_ingest_missing_label_warns_and_zeroes(self, tmp_path, caplog):
        manifest = DatasetManifest(records=[make_record(0)])
        save_manifest(manifest, tmp_path, write_labels=False)
        labels = tmp_path / "labels"
        labels.mkdir()
        with caplog.at_level(logging.WARNING, logger="grapedet.data"):
            loaded = ingest(tmp_path / "manifest.jsonl", labels)
        assert loaded.records[0].boxes == []
        assert "no label file" in caplog.text

    def test_missing_manifest_errors(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_manifest(tmp_path / "nope.jsonl")

    def test_malformed_manifest_line_names_lineno(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        path.write_text(json.dumps(make_record(0).to_dict()) + "\n{oops\n")
        with pytest.raises(DataError, match=":2"):
            load_manifest(path)


class TestStratify:
    def test_survey_marginals_reproduced(self):
        manifest = survey_fixture()
        assert stratify(manifest, "weather", variety="chardonnay") == CHARDONNAY["weather"]
        assert stratify(manifest, "maturity", variety="chardonnay") == CHARDONNAY["maturity"]
        assert stratify(manifest, "sunlight", variety="chardonnay") == CHARDONNAY["sunlight"]
        assert stratify(manifest, "weather", variety="merlot") == MERLOT["weather"]
        assert stratify(manifest, "maturity", variety="merlot") == MERLOT["maturity"]
        assert stratify(manifest, "sunlight", variety="merlot") == MERLOT["sunlight"]
        assert stratify(manifest, "variety") == {"chardonnay": 234, "merlot": 225}

    def test_combined_weather_sums_varieties(self):
        manifest = survey_fixture()
        assert stratify(manifest, "weather") == {"sunny": 322, "cloudy": 137}

    def test_unset_maturity_skipped_not_counted(self):
        manifest = survey_fixture()
        chard = stratify(manifest, "maturity", variety="chardonnay")
        assert sum(chard.values()) == 155  # 79 of 234 records carry no stage

    def test_augmented_records_excluded(self):
        manifest = survey_fixture()
        extra = replace(
            manifest.records[0],
            image_path="images/extra.png",
            augment='{"op": "rot90", "k": 1}',
        )
        noisy = DatasetManifest(records=manifest.records + [extra])
        assert stratify(noisy, "weather") == stratify(manifest, "weather")

    def test_unknown_dimension_rejected(self):
        with pytest.raises(DataError, match="dimension"):
            stratify(survey_fixture(), "phase")


class TestSplit:
    def test_group_counts_floor_arithmetic(self):
        manifest = survey_fixture()  # 459 distinct sources
        out = split(manifest, ratios=(0.8, 0.1, 0.1), seed=0)
        by_split = {}
        for r in out.records:
            by_split.setdefault(r.split, set()).add(r.source_id)
        assert len(by_split["train"]) == 367
        assert len(by_split["val"]) == 45
        assert len(by_split["test"]) == 47

    def test_zero_leakage_with_augmented_siblings(self):
        base = survey_fixture()
        records = list(base.records)
        for r in base.records[:50]:
            records.append(
                replace(
                    r,
                    image_path=r.image_path.replace(".png", "_aug00.png"),
                    augment='{"op": "rot90", "k": 2}',
                )
            )
        manifest = DatasetManifest(records=records)
        for seed in range(5):
            out = split(manifest, seed=seed)
            split_of = {}
            for r in out.records:
                split_of.setdefault(r.source_id, set()).add(r.split)
            assert all(len(s) == 1 for s in split_of.values())

    def test_deterministic_per_seed(self):
        manifest = survey_fixture()
        a = split(manifest, seed=7)
        b = split(manifest, seed=7)
        assert [r.split for r in a.records] == [r.split for r in b.records]

    def test_different_seeds_differ(self):
        manifest = survey_fixture()
        a = split(manifest, seed=0)
        b = split(manifest, seed=1)
        assert [r.split for r in a.records] != [r.split for r in b.records]

    def test_bad_ratios_rejected(self):
        with pytest.raises(DataError, match="sum to 1"):
            split(survey_fixture(), ratios=(0.8, 0.1, 0.2))

    def test_all_records_assigned(self):
        out = split(survey_fixture(), seed=3)
        assert all(r.split in ("train", "val", "test") for r in out.records)


class TestRotate:
    def test_right_angle_corner_maps(self):
        img = np.zeros((40, 60, 3), dtype=np.uint8)
        b = BBox(10, 5, 20, 15)
        _, [b90] = rotate(img, [b], 90)
        assert (b90.x1, b90.y1, b90.x2, b90.y2) == (25, 10, 35, 20)
        _, [b180] = rotate(img, [b], 180)
        assert (b180.x1, b180.y1, b180.x2, b180.y2) == (40, 25, 50, 35)
        _, [b270] = rotate(img, [b], 270)
        assert (b270.x1, b270.y1, b270.x2, b270.y2) == (5, 40, 15, 50)

    def test_right_angle_swaps_canvas(self):
        img = np.zeros((40, 60, 3), dtype=np.uint8)
        out, _ = rotate(img, [], 90)
        assert out.shape == (60, 40, 3)
        out, _ = rotate(img, [], 180)
        assert out.shape == (40, 60, 3)

    def test_quarter_turn_pixels_match_box_map(self):
        img = np.zeros((4, 6, 3), dtype=np.uint8)
        img[0, 0] = 200
        out, [b] = rotate(img, [BBox(0, 0, 1, 1)], 90)
        y, x = np.argwhere(out[..., 0] > 0)[0]
        assert (b.x1, b.y1, b.x2, b.y2) == (3, 0, 4, 1)
        assert (x, y) == (3, 0)

    def test_four_quarter_turns_identity(self):
        rng = np.random.default_rng(11)
        img = rng.integers(0, 255, size=(32, 48, 3), dtype=np.uint8)
        boxes = [BBox(4, 6, 20, 18), BBox(30, 2, 44, 30)]
        out, cur = img, boxes
        for _ in range(4):
            out, cur = rotate(out, cur, 90)
        assert np.array_equal(out, img)
        for a, b in zip(cur, boxes):
            assert (a.x1, a.y1, a.x2, a.y2) == pytest.approx((b.x1, b.y1, b.x2, b.y2))

    def test_small_angle_box_tracks_pixels(self):
        img = np.zeros((200, 300, 3), dtype=np.uint8)
        img[40:60, 220:240] = 255
        for angle in (10.0, -10.0, 15.0):
            out, [b] = rotate(img, [BBox(220, 40, 240, 60)], angle)
            ys, xs = np.nonzero(out[..., 0] > 127)
            assert xs.mean() + 0.5 == pytest.approx(b.center[0], abs=0.75)
            assert ys.mean() + 0.5 == pytest.approx(b.center[1], abs=0.75)

    def test_small_angle_preserves_canvas(self):
        img = np.zeros((50, 80, 3), dtype=np.uint8)
        out, _ = rotate(img, [], 7.5)
        assert out.shape == img.shape

    def test_wrapped_negative_angle(self):
        img = np.zeros((100, 100, 3), dtype=np.uint8)
        img[45:55, 45:55] = 255
        a, boxes_a = rotate(img, [BBox(45, 45, 55, 55)], -10.0)
        b, boxes_b = rotate(img, [BBox(45, 45, 55, 55)], 350.0)
        assert np.array_equal(a, b)
        assert boxes_a[0].center == boxes_b[0].center

    def test_unsupported_angle_rejected(self):
        img = np.zeros((10, 10, 3), dtype=np.uint8)
        with pytest.raises(DataError, match="angle"):
            rotate(img, [], 45.0)

    def test_corner_box_swept_off_canvas_dropped(self):
        img = np.zeros((100, 100, 3), dtype=np.uint8)
        _, boxes = rotate(img, [BBox(95, 0, 100, 5)], -15.0)
        assert boxes == []

    def test_survivors_retain_visible_area(self):
        rng = np.random.default_rng(5)
        img = np.zeros((120, 120, 3), dtype=np.uint8)
        for _ in range(200):
            x1, y1 = rng.uniform(0, 100, size=2)
            w, h = rng.uniform(4, 20, size=2)
            b = BBox(x1, y1, min(x1 + w, 120), min(y1 + h, 120))
            angle = float(rng.uniform(-15, 15))
            _, out = rotate(img, [b], angle)
            for ob in out:
                assert ob.area >= 0.3 * b.area - 1e-9
                assert 0 <= ob.x1 < ob.x2 <= 120
                assert 0 <= ob.y1 < ob.y2 <= 120

    def test_central_boxes_always_survive(self):
        img = np.zeros((100, 100, 3), dtype=np.uint8)
        rng = np.random.default_rng(9)
        for _ in range(100):
            angle = float(rng.uniform(-15, 15))
            _, out = rotate(img, [BBox(40, 40, 60, 60)], angle)
            assert len(out) == 1


class TestPhotometric:
    def test_channel_gain_exact_scaling(self):
        img = np.full((8, 8, 3), 100, dtype=np.uint8)
        out = channel_enhance(img, (1.25, 1.0, 0.5))
        assert out[0, 0].tolist() == [125, 100, 50]
        assert out.dtype == np.uint8

    def test_channel_gain_clips_at_255(self):
        img = np.full((4, 4, 3), 200, dtype=np.uint8)
        out = channel_enhance(img, (1.5, 1.5, 1.5))
        assert out.max() == 255

    def test_channel_gain_bounds_enforced(self):
        img = np.zeros((4, 4, 3), dtype=np.uint8)
        with pytest.raises(DataError, match="gain"):
            channel_enhance(img, (0.4, 1.0, 1.0))
        with pytest.raises(DataError, match="gain"):
            channel_enhance(img, (1.0, 1.6, 1.0))

    def test_noise_blur_zero_sigmas_identity(self):
        rng = np.random.default_rng(2)
        img = rng.integers(0, 255, size=(16, 16, 3), dtype=np.uint8)
        out = gaussian_noise_blur(img, 0.0, 0.0)
        assert np.array_equal(out, img)
        assert out is not img

    def test_blur_preserves_constant_image(self):
        img = np.full((16, 16, 3), 77, dtype=np.uint8)
        out = gaussian_noise_blur(img, 0.0, 1.2)
        assert np.array_equal(out, img)

    def test_noise_deterministic_with_seeded_rng(self):
        img = np.full((16, 16, 3), 128, dtype=np.uint8)
        a = gaussian_noise_blur(img, 5.0, 0.8, rng=np.random.default_rng(42))
        b = gaussian_noise_blur(img, 5.0, 0.8, rng=np.random.default_rng(42))
        assert np.array_equal(a, b)

    def test_negative_sigma_rejected(self):
        img = np.zeros((4, 4, 3), dtype=np.uint8)
        with pytest.raises(DataError):
            gaussian_noise_blur(img, -1.0, 0.0)

    def test_rectangle_discard_exact_extent(self):
        img = np.full((50, 50, 3), 200, dtype=np.uint8)
        out = rectangle_discard(img, [BBox(10, 20, 20, 30)], fill=0)
        changed = np.any(out != img, axis=2)
        assert changed.sum() == 100
        assert changed[20:30, 10:20].all()

    def test_rectangle_discard_clips_to_canvas(self):
        img = np.full((20, 20, 3), 90, dtype=np.uint8)
        out = rectangle_discard(img, [BBox(15, 15, 40, 40)], fill=7)
        assert (out[15:, 15:] == 7).all()
        assert (out[:15, :] == 90).all()


class TestAugmentPlan:
    def test_deterministic_per_seed(self):
        rec = make_record()
        a = augment_plan(rec, n=9, seed=4)
        b = augment_plan(rec, n=9, seed=4)
        assert [r.augment for r in a] == [r.augment for r in b]
        assert [r.image_path for r in a] == [r.image_path for r in b]

    def test_at_most_n_variants(self):
        assert len(augment_plan(make_record(), n=9, seed=1)) <= 9

    def test_variant_records_keep_provenance(self):
        rec = make_record()
        for variant in augment_plan(rec, n=9, seed=2):
            assert variant.source_id == rec.source_id
            assert variant.augment is not None
            assert variant.variety == rec.variety
            assert variant.image_path != rec.image_path

    def test_variant_paths_unique(self):
        paths = [r.image_path for r in augment_plan(make_record(), n=9, seed=6)]
        assert len(paths) == len(set(paths))

    def test_boxes_satisfy_invariants(self):
        for seed in range(10):
            for variant in augment_plan(make_record(), n=9, seed=seed):
                for b in variant.boxes:
                    assert 0.0 <= b.cx <= 1.0 and 0.0 <= b.cy <= 1.0
                    assert 0.0 < b.w <= 1.0 and 0.0 < b.h <= 1.0

    def test_quarter_turn_swaps_record_dims(self):
        rec = make_record(width=120, height=80)
        for variant in augment_plan(rec, n=30, seed=3):
            spec = json.loads(variant.augment)
            if spec["op"] == "rot90" and spec["k"] in (1, 3):
                assert (variant.width, variant.height) == (80, 120)
            else:
                assert (variant.width, variant.height) == (120, 80)

    def test_photometric_ops_keep_boxes(self):
        rec = make_record()
        for variant in augment_plan(rec, n=30, seed=8):
            if json.loads(variant.augment)["op"] in ("channel", "noiseblur", "discard"):
                assert variant.boxes == rec.boxes

    def test_empty_variants_discarded(self):
        # the lone box hugs the corner, so near-limit small rotations sweep it
        # off canvas; frozen seed 0 loses exactly one of nine variants
        rec = make_record(boxes=[NormBox(0.03, 0.03, 0.05, 0.05)], width=200, height=200)
        plan = augment_plan(rec, n=9, seed=0)
        assert len(plan) == 8
        assert all(len(r.boxes) >= 1 for r in plan)
        assert all(json.loads(r.augment)["op"] != "rotate" for r in plan)

    def test_requires_raw_record(self):
        rec = make_record(augment='{"op": "rot90", "k": 1}')
        with pytest.raises(DataError, match="raw"):
            augment_plan(rec)

    def test_render_matches_plan_geometry(self):
        rng = np.random.default_rng(12)
        img = rng.integers(0, 255, size=(80, 120, 3), dtype=np.uint8)
        rec = make_record(width=120, height=80)
        for variant in augment_plan(rec, n=20, seed=5):
            out = render_augment(img, variant)
            assert out.shape == (variant.height, variant.width, 3)
            assert out.dtype == np.uint8


class TestDebar:
    def test_boxes_outside_roi_removed(self):
        rec = make_record(
            boxes=[NormBox(0.5, 0.5, 0.2, 0.2), NormBox(0.05, 0.05, 0.08, 0.08)],
            canopy_roi=BBox(20, 20, 80, 80),
        )
        out = apply_debar(rec)
        assert len(out.boxes) == 1
        assert out.boxes[0].cx == 0.5
        assert out.debarred is True

    def test_center_rule_is_inclusive(self):
        rec = make_record(
            boxes=[NormBox(0.2, 0.2, 0.3, 0.3)],  # center lands exactly on the ROI corner
            canopy_roi=BBox(20, 20, 80, 80),
        )
        assert len(apply_debar(rec).boxes) == 1

    def test_without_roi_warns_and_passes_through(self, caplog):
        rec = make_record()
        with caplog.at_level(logging.WARNING, logger="grapedet.data"):
            out = apply_debar(rec)
        assert out.boxes == rec.boxes
        assert out.debarred is False
        assert "canopy_roi" in caplog.text

    def test_original_record_untouched(self):
        rec = make_record(
            boxes=[NormBox(0.05, 0.05, 0.08, 0.08)], canopy_roi=BBox(20, 20, 80, 80)
        )
        apply_debar(rec)
        assert len(rec.boxes) == 1
        assert rec.debarred is False


class TestSynth:
    def test_single_image_has_boxes(self, tmp_path):
        manifest = synth_vineyard(1, seed=0, out_dir=tmp_path)
        assert len(manifest.records) == 1
        assert len(manifest.records[0].boxes) >= 1
        assert (tmp_path / "images/img_0000.png").exists()
        assert (tmp_path / "labels/img_0000.txt").exists()

    def test_box_invariants_hold(self):
        manifest = synth_vineyard(12, seed=1)
        for rec in manifest.records:
            assert rec.boxes
            for b in rec.boxes:
                assert 0.0 <= b.cx <= 1.0 and 0.0 <= b.cy <= 1.0
                assert 0.0 < b.w <= 1.0 and 0.0 < b.h <= 1.0

    def test_round_robin_conditions(self):
        manifest = synth_vineyard(8, seed=0)
        assert manifest.records[0].variety == "chardonnay"
        assert manifest.records[1].variety == "merlot"
        assert manifest.records[0].weather == "sunny"
        assert manifest.records[2].weather == "cloudy"
        assert manifest.records[0].maturity == "immature"
        assert manifest.records[4].maturity == "mature"
        assert [r.sunlight for r in manifest.records[:3]] == ["morning", "noon", "afternoon"]

    def test_counts_track_labels(self):
        manifest = synth_vineyard(10, seed=2)
        by_vine = {c.vine_id: c for c in manifest.counts}
        for rec in manifest.records:
            c = by_vine[rec.vine_id]
            assert c.label_count == len(rec.boxes)
            assert c.field_count >= c.label_count

    def test_byte_identical_across_runs(self, tmp_path):
        synth_vineyard(4, seed=9, out_dir=tmp_path / "a")
        synth_vineyard(4, seed=9, out_dir=tmp_path / "b")
        for name in ("manifest.jsonl", "counts.csv", "images/img_0002.png", "labels/img_0003.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_different_seeds_differ(self, tmp_path):
        synth_vineyard(2, seed=0, out_dir=tmp_path / "a")
        synth_vineyard(2, seed=1, out_dir=tmp_path / "b")
        assert (tmp_path / "a/manifest.jsonl").read_bytes() != (
            tmp_path / "b/manifest.jsonl"
        ).read_bytes()

    def test_bunches_are_separated(self):
        from grapedet.geometry import iou

        manifest = synth_vineyard(10, seed=3)
        for rec in manifest.records:
            px = [to_pixels(b, rec.width, rec.height) for b in rec.boxes]
            for i in range(len(px)):
                for j in range(i + 1, len(px)):
                    assert iou(px[i], px[j]) < 0.25

    def test_loadable_image_shape(self, tmp_path):
        manifest = synth_vineyard(1, seed=4, out_dir=tmp_path)
        rec = manifest.records[0]
        img = load_image(tmp_path / rec.image_path)
        assert img.shape == (rec.height, rec.width, 3)

    def test_rejects_non_positive_n(self):
        with pytest.raises(DataError):
            synth_vineyard(0)

    def test_custom_profile_size(self):
        manifest = synth_vineyard(1, seed=0, profile=SynthProfile(image_size=192))
        assert manifest.records[0].width == 192
