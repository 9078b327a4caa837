import math

import numpy as np
import pytest

from densegaze.core import (
    Annotation,
    BoundingBox,
    ScaleLevel,
    SceneExtent,
    iou,
    save_scene,
    scale_bucket,
)
from densegaze.synth import InfeasibleSceneError, SceneSpec, generate_scene, scene_stats


def union_coverage_oracle(annotations, extent, d=32.0):
    """Independent union-coverage estimate: cell centers inside any box."""
    gw = math.floor(extent.width / d + 0.5)
    gh = math.floor(extent.height / d + 0.5)
    covered = np.zeros((gh, gw), dtype=bool)
    cx = (np.arange(gw) + 0.5) * d
    cy = (np.arange(gh) + 0.5) * d
    for ann in annotations:
        b = ann.bbox
        xs = (cx >= b.x) & (cx < b.right)
        ys = (cy >= b.y) & (cy < b.bottom)
        covered |= ys[:, None] & xs[None, :]
    return covered.mean()


class TestGenerateScene:
    def test_zero_objects(self):
        annotations, extent = generate_scene(SceneSpec(object_count=0))
        assert annotations == []
        assert extent == SceneSpec().extent

    def test_deterministic_per_seed(self, tmp_path):
        spec = SceneSpec(seed=123)
        a, extent_a = generate_scene(spec)
        b, extent_b = generate_scene(spec)
        assert a == b and extent_a == extent_b
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_scene(p1, a, extent_a)
        save_scene(p2, b, extent_b)
        assert p1.read_bytes() == p2.read_bytes()

    def test_seeds_differ(self):
        a, _ = generate_scene(SceneSpec(seed=1))
        b, _ = generate_scene(SceneSpec(seed=2))
        assert a != b

    def test_default_scene_properties(self, default_scene):
        annotations, extent = default_scene
        assert len(annotations) == 500
        ids = [a.id for a in annotations]
        assert len(set(ids)) == len(ids)
        for ann in annotations:
            b = ann.bbox
            assert b.width > 0 and b.height > 0
            assert b.x >= 0 and b.y >= 0
            assert b.right <= extent.width and b.bottom <= extent.height

    def test_default_coverage_in_band(self, default_scene):
        annotations, extent = default_scene
        fraction = union_coverage_oracle(annotations, extent)
        assert 0.03 <= fraction <= 0.07

    def test_total_box_area_near_target(self, default_scene):
        annotations, extent = default_scene
        total = sum(a.bbox.area for a in annotations)
        assert abs(total / extent.area - 0.05) <= 0.02

    def test_size_span_at_least_100x(self, default_scene):
        annotations, _ = default_scene
        sides = [a.bbox.max_side for a in annotations]
        assert max(sides) / min(sides) >= 100.0

    def test_size_gradient_along_y(self, default_scene):
        # Perspective: boxes low in the scene are bigger on average.
        annotations, extent = default_scene
        top = [a.bbox.max_side for a in annotations if a.bbox.center[1] < extent.height * 0.4]
        bottom = [a.bbox.max_side for a in annotations if a.bbox.center[1] > extent.height * 0.6]
        assert np.mean(bottom) > 2.0 * np.mean(top)

    def test_pairwise_overlap_capped(self, small_scene):
        annotations, _ = small_scene
        boxes = [a.bbox for a in annotations]
        for i, a in enumerate(boxes):
            for b in boxes[i + 1 :]:
                assert iou(a, b) <= 0.35 + 1e-12

    def test_all_scales_populated(self, default_scene):
        annotations, _ = default_scene
        buckets = {scale_bucket(a.bbox) for a in annotations}
        assert buckets == set(ScaleLevel)

    def test_infeasible_spec_raises(self):
        # One max-side giant alone exceeds the area target many times over.
        spec = SceneSpec(
            extent=SceneExtent(4096, 4096),
            object_count=10,
            foreground_fraction_target=0.01,
            size_gradient=(32.0, 3900.0),
        )
        with pytest.raises(InfeasibleSceneError):
            generate_scene(spec)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SceneSpec(size_gradient=(2.0, 100.0))
        with pytest.raises(ValueError):
            SceneSpec(size_gradient=(100.0, 100.0))
        with pytest.raises(ValueError):
            SceneSpec(object_count=-1)
        with pytest.raises(ValueError):
            SceneSpec(cluster_count=0)
        with pytest.raises(ValueError):
            SceneSpec(foreground_fraction_target=0.0)
        with pytest.raises(ValueError):
            SceneSpec(seed=-1)


class TestSceneStats:
    def test_empty_scene(self):
        stats = scene_stats([], SceneExtent(1000, 1000))
        assert all(v == 0 for v in stats.scale_counts.values())
        assert stats.foreground_fraction == 0.0
        assert stats.side_ratio == 0.0

    def test_single_tiny_box(self):
        ann = Annotation(0, BoundingBox(100, 100, 500, 500))
        stats = scene_stats([ann], SceneExtent(10000, 10000))
        assert stats.scale_counts[ScaleLevel.TINY] == 1
        assert sum(stats.scale_counts.values()) == 1
        assert stats.side_ratio == 1.0

    def test_histogram_matches_brute_force(self, default_scene):
        annotations, extent = default_scene
        stats = scene_stats(annotations, extent)
        brute = {s: 0 for s in ScaleLevel}
        for ann in annotations:
            brute[scale_bucket(ann.bbox)] += 1
        assert stats.scale_counts == brute

    def test_coverage_matches_oracle(self, default_scene):
        annotations, extent = default_scene
        stats = scene_stats(annotations, extent)
        oracle = union_coverage_oracle(annotations, extent)
        assert stats.foreground_fraction == pytest.approx(oracle, abs=1e-6)

    def test_default_max_min_ratio(self, default_scene):
        annotations, extent = default_scene
        assert scene_stats(annotations, extent).side_ratio >= 100.0

    def test_json_dict(self, default_scene):
        annotations, extent = default_scene
        payload = scene_stats(annotations, extent).to_json_dict()
        assert set(payload) == {"scale_counts", "foreground_fraction", "side_ratio"}
        assert set(payload["scale_counts"]) == {"tiny", "small", "middle", "large"}
