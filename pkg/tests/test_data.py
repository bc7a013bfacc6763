import time
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation
from scipy.stats import chisquare

from latentview.data import (DataConfig, Primitive, SyntheticObject, generate_dataset, load_dataset,
                             perturbed_views, render_frame, render_view, save_dataset)
from latentview.geometry import build_setup, enumerate_candidates, look_at_frame

SMALL = DataConfig(n_classes=2, n_train=3, n_test=2, image_size=8)


def sphere(r: float = 0.5) -> SyntheticObject:
    return SyntheticObject(0, 0, [Primitive("ellipsoid", (0, 0, 0), (r, r, r))], [], np.eye(3))


def blob() -> SyntheticObject:
    parts = [Primitive("ellipsoid", (0.1, 0.0, 0.0), (0.6, 0.3, 0.25)),
             Primitive("box", (-0.3, 0.2, 0.2), (0.15, 0.2, 0.1))]
    return SyntheticObject(0, 0, parts, [], np.eye(3))


@given(st.integers(0, 2**31))
def test_sphere_looks_the_same_from_everywhere(seed):
    d = Rotation.random(random_state=seed).apply([0, 0, 1])
    np.testing.assert_allclose(render_view(sphere(), d), render_view(sphere(), [0, 0, 1]), atol=1e-12)


@given(st.integers(0, 2**31))
def test_projection_equivariance(seed):
    R = Rotation.random(random_state=seed).as_matrix()
    d, up = np.array([0.3, -0.5, 0.8]), np.array([0.0, 0.0, 1.0])
    obj = blob()
    moved = obj.rotated(R)
    a = render_view(moved, d, np.cross(np.cross(d, up), d))
    Rd, Rup = R.T @ d, R.T @ np.cross(np.cross(d, up), d)
    b = render_view(obj, Rd, Rup)
    # equal up to rasterization: at most one pixel may flip
    assert (np.abs(a - b) > 1e-6).sum() <= 1


def test_render_rejects_zero_direction():
    with pytest.raises(ValueError):
        render_view(blob(), [0, 0, 0])


def test_rendering_is_deterministic_and_bounded():
    a = render_frame(blob(), look_at_frame(np.array([1.0, 0, 0])))
    b = render_frame(blob(), look_at_frame(np.array([1.0, 0, 0])))
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1 and (a > 0).any()


def test_confusable_pairs_differ_only_at_designated_views():
    cfg = DataConfig(n_classes=2, n_train=1, n_test=0, jitter=0.0, pose="identity", variant="confusable")
    ds = generate_dataset(cfg, 0)
    a, b = ds.train[0].images, ds.train[1].images
    frac = (np.abs(a - b) > 1e-9).mean(axis=(1, 2))
    designated = {0, ds.setup.M_a // 4}
    for v in range(ds.M):
        if v in designated:
            assert frac[v] >= 0.10
        else:
            assert frac[v] < 0.01


def test_zero_jitter_instances_match_up_to_pose():
    ds = generate_dataset(replace(SMALL, jitter=0.0), 5)
    for c in range(2):
        objs = [s.obj for s in ds.train + ds.test if s.y == c]
        assert all(o.parts == objs[0].parts for o in objs)
    # the same rendered views, permuted by each instance's pose
    s0 = [s for s in ds.train if s.y == 0]
    for s in s0[1:]:
        x = np.empty_like(s.images)
        x[s.gt_view_of_image] = s.images
        y = np.empty_like(s0[0].images)
        y[s0[0].gt_view_of_image] = s0[0].images
        np.testing.assert_allclose(x, y, atol=1e-9)


def test_identity_pose_gives_identity_views():
    ds = generate_dataset(replace(SMALL, pose="identity"), 1)
    for s in ds.train + ds.test:
        assert s.gt_view_of_image.tolist() == list(range(12))
        assert np.array_equal(s.gt_pose, np.eye(3))


def test_views_follow_the_pose():
    ds = generate_dataset(SMALL, 2)
    setup = ds.setup
    cands = enumerate_candidates(setup)
    for s in ds.train:
        cand = cands[s.gt_candidate]
        assert np.array_equal(s.gt_view_of_image, cand.perm)
        np.testing.assert_allclose(s.gt_pose, cand.rotation.T)
        # image i of the posed object equals view perm[i] of the canonical object
        canon = replace(s.obj, pose=np.eye(3))
        for i in (0, 5):
            ref = render_frame(canon, setup.frames[s.gt_view_of_image[i]], 8)
            np.testing.assert_allclose(s.images[i], ref, atol=1e-9)


def test_default_generation_is_fast_and_round_trips(tmp_path, default_dataset):
    t0 = time.perf_counter()
    ds = generate_dataset(DataConfig(), 0)
    assert time.perf_counter() - t0 < 10
    assert (len(ds.train), len(ds.test), ds.M) == (80, 40, 12)
    path = tmp_path / "d.lvds"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.config == ds.config and back.seed == ds.seed
    for a, b in zip(ds.train + ds.test, back.train + back.test):
        assert a.images.tobytes() == b.images.tobytes()
        assert a.y == b.y and a.gt_candidate == b.gt_candidate
        assert np.array_equal(a.gt_view_of_image, b.gt_view_of_image)
        assert np.array_equal(a.gt_pose, b.gt_pose)
        assert a.obj.to_dict() == b.obj.to_dict()
    save_dataset(back, tmp_path / "e.lvds")
    assert (tmp_path / "e.lvds").read_bytes() == path.read_bytes()


def test_parallel_generation_is_identical(tmp_path):
    save_dataset(generate_dataset(SMALL, 9, jobs=1), tmp_path / "a")
    save_dataset(generate_dataset(SMALL, 9, jobs=2), tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_container_rejects_foreign_files(tmp_path):
    bad = tmp_path / "x"
    bad.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ValueError, match="container"):
        load_dataset(bad)
    save_dataset(generate_dataset(replace(SMALL, n_train=1, n_test=0), 0), bad)
    raw = bytearray(bad.read_bytes())
    raw[4] = 99
    bad.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="version"):
        load_dataset(bad)


def test_poses_are_uniform_over_candidates():
    ds = generate_dataset(DataConfig(n_classes=1, n_train=600, n_test=0, image_size=4, supersample=1), 0)
    counts = np.bincount([s.gt_candidate for s in ds.train], minlength=12)
    assert chisquare(counts).pvalue > 1e-3


def test_default_classes_are_separable(default_dataset):
    """1-NN on full view stacks, with the distance minimised over rig rotations."""
    ds = default_dataset
    cands = enumerate_candidates(ds.setup)
    train = np.stack([s.images for s in ds.train])
    labels = np.array([s.y for s in ds.train])
    for s in ds.test:
        best = (np.inf, -1)
        for c in cands:
            x = np.empty_like(s.images)
            x[c.perm] = s.images
            d = ((train - x[None]) ** 2).sum(axis=(1, 2, 3))
            k = int(d.argmin())
            best = min(best, (d[k], int(labels[k])))
        assert best[1] == s.y


@pytest.mark.parametrize("bad", [dict(n_classes=0), dict(variant="cubes"), dict(pose="upright"),
                                 dict(variant="confusable", n_classes=3), dict(theta=25.0),
                                 dict(jitter=-0.1), dict(orientation_trial=12)])
def test_invalid_config_rejected(bad):
    with pytest.raises(ValueError):
        generate_dataset(replace(SMALL, **bad), 0)


def test_perturbed_views():
    ds = generate_dataset(SMALL, 0)
    s, cfg = ds.test[0], ds.config
    same = perturbed_views(s, ds.setup, cfg, 1, rotations=[np.eye(3)])
    np.testing.assert_allclose(same[0], s.images, atol=1e-12)
    a = perturbed_views(s, ds.setup, cfg, 3, seed=4)
    b = perturbed_views(s, ds.setup, cfg, 5, seed=4)
    assert all(np.array_equal(x, y) for x, y in zip(a, b[:3]))
    c = perturbed_views(s, ds.setup, cfg, 2, seed=4, mode="full")
    assert len(c) == 2 and c[0].shape == s.images.shape
    with pytest.raises(ValueError):
        perturbed_views(s, ds.setup, cfg, 0)
    with pytest.raises(ValueError):
        perturbed_views(s, ds.setup, cfg, 1, mode="tilt")


def test_dodecahedral_and_elevation_rigs_generate():
    for case in ("II", "III"):
        ds = generate_dataset(DataConfig(n_classes=2, n_train=1, n_test=1, image_size=8, case=case, theta=90,
                                         phi=90), 0)
        assert ds.M == build_setup(case, 90, 90).M
