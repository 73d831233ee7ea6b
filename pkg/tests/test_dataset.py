import numpy as np
import pytest

from sketchforge.dataset import (
    DatasetSpec,
    PoseDistribution,
    UnknownFamily,
    filled_silhouette,
    generate_toy_dataset,
    load_dataset,
    make_shape,
    sample_pose,
    save_dataset,
)
from sketchforge.render import render_hard_silhouette


def test_sample_pose_point_mass():
    dist = PoseDistribution(elevation_range=(30.0, 30.0), azimuth_range=(45.0, 45.0))
    rng = np.random.default_rng(0)
    for _ in range(5):
        p = sample_pose(dist, rng)
        assert p.elevation == 30.0 and p.azimuth == 45.0


def test_sample_pose_uniform_bins():
    dist = PoseDistribution(elevation_range=(0.0, 0.0), azimuth_range=(0.0, 360.0))
    rng = np.random.default_rng(1)
    azims = np.array([sample_pose(dist, rng).azimuth for _ in range(10_000)])
    counts, _ = np.histogram(azims, bins=12, range=(0, 360))
    # binomial: n=10^4, p=1/12 -> mean 833, generous +-150 band
    assert (np.abs(counts - 10_000 / 12) <= 150).all()


def test_sample_pose_reproducible():
    dist = PoseDistribution()
    a = [sample_pose(dist, np.random.default_rng(7)) for _ in range(10)]
    b = [sample_pose(dist, np.random.default_rng(7)) for _ in range(10)]
    assert a == b


def test_sample_pose_azimuth_grid():
    dist = PoseDistribution(azimuth_bins=24)
    rng = np.random.default_rng(2)
    for _ in range(200):
        p = sample_pose(dist, rng)
        assert p.azimuth % 15.0 == 0.0


def test_make_shape_families_and_unknown(rng):
    for fam in ("table", "chair", "lamp"):
        m = make_shape(fam, np.random.default_rng(3))
        assert m.num_faces >= 12
        assert np.linalg.norm(m.vertices, axis=1).max() == pytest.approx(0.6, abs=1e-9)
    with pytest.raises(UnknownFamily):
        make_shape("spaceship", rng)


def test_dataset_deterministic():
    spec = DatasetSpec(count=6, families=("chair", "table", "lamp"))
    a = generate_toy_dataset(spec, seed=11)
    b = generate_toy_dataset(spec, seed=11)
    for sa, sb in zip(a, b):
        assert sa.label == sb.label
        assert sa.gt_pose == sb.gt_pose
        assert (sa.gt_mesh.vertices == sb.gt_mesh.vertices).all()
        assert (sa.sketch.values == sb.sketch.values).all()


def test_dataset_count_and_validity():
    spec = DatasetSpec(count=20, families=("chair", "lamp"))
    samples = generate_toy_dataset(spec, seed=5)
    assert len(samples) == 20
    for s in samples:
        assert s.label in ("chair", "lamp")
        assert s.sketch.stroke_count() >= 1
        assert np.isin(s.sketch.values, (0.0, 1.0)).all()
        assert -20.0 <= s.gt_pose.elevation <= 40.0


def test_sketch_fill_matches_hard_silhouette():
    spec = DatasetSpec(count=12, families=("chair", "table", "lamp"))
    samples = generate_toy_dataset(spec, seed=21)
    intr = spec.intrinsics()
    for s in samples:
        target = render_hard_silhouette(s.gt_mesh, s.gt_pose, intr).values
        filled = filled_silhouette(s)
        agree = (filled == target).mean()
        assert agree >= 0.99, f"sample {s.index} ({s.label}): only {agree:.3f} agreement"


def test_dataset_roundtrip(tmp_path):
    spec = DatasetSpec(count=4, families=("chair",))
    samples = generate_toy_dataset(spec, seed=9)
    save_dataset(samples, spec, tmp_path / "ds")
    back, spec2 = load_dataset(tmp_path / "ds")
    assert spec2 == spec
    assert len(back) == len(samples)
    for sa, sb in zip(samples, back):
        assert sa.label == sb.label
        assert sa.gt_pose == sb.gt_pose
        assert (sa.sketch.values == sb.sketch.values).all()
        assert np.abs(sa.gt_mesh.vertices - sb.gt_mesh.vertices).max() < 1e-6
