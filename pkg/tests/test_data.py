import numpy as np
import pytest

from eckconv.data import (SHAPES, ShapeSpec, make_dataset, read_dataset, rotated_copy, sample_shape,
                          torus_normal, torus_point, write_dataset)


def test_sphere_normals_are_radial():
    # centering moves the sampled sphere by its (small) center of mass
    pc = sample_shape(ShapeSpec("sphere", 5000, 0.0, 1))
    np.testing.assert_allclose(np.linalg.norm(pc.coords, axis=1), 1.0, atol=0.05)
    cos = np.sum(pc.normals * pc.coords / np.linalg.norm(pc.coords, axis=1, keepdims=True), axis=1)
    assert np.all(cos > 0.99)


def test_sphere_raw_sampler_exact():
    from eckconv.data import _sphere

    x, n = _sphere(100, np.random.default_rng(0))
    np.testing.assert_allclose(np.linalg.norm(x, axis=1), 1.0, atol=1e-15)
    np.testing.assert_array_equal(x, n)


def test_cube_normals_are_signed_axes():
    pc = sample_shape(ShapeSpec("cube", 300, 0.0, 2))
    assert np.all(np.sort(np.abs(pc.normals), axis=1) == [0, 0, 1])
    # every point lies on the face its normal names
    face = np.argmax(np.abs(pc.normals), axis=1)
    sign = pc.normals[np.arange(300), face]
    vals = pc.coords[np.arange(300), face]
    for f in range(3):
        for sg in (-1, 1):
            sel = (face == f) & (sign == sg)
            np.testing.assert_allclose(vals[sel], vals[sel][0], atol=1e-12)


def test_torus_normal_matches_finite_difference():
    rng = np.random.default_rng(3)
    h = 1e-6
    for phi, theta in rng.uniform(0, 2 * np.pi, (50, 2)):
        du = (torus_point(phi + h, theta) - torus_point(phi - h, theta)) / (2 * h)
        dv = (torus_point(phi, theta + h) - torus_point(phi, theta - h)) / (2 * h)
        n = np.cross(du, dv)
        n /= np.linalg.norm(n)
        want = torus_normal(phi, theta)
        assert np.max(np.abs(n - want)) < 1e-6 or np.max(np.abs(n + want)) < 1e-6
        # outward: points away from the tube center
        center = 0.7 * np.array([np.cos(phi), np.sin(phi), 0.0])
        assert np.dot(want, torus_point(phi, theta) - center) > 0


@pytest.mark.parametrize("kind", SHAPES)
def test_clouds_are_centered_unit_scale(kind):
    pc = sample_shape(ShapeSpec(kind, 128, 0.01, 4))
    np.testing.assert_allclose(pc.coords.mean(0), 0, atol=1e-12)
    assert abs(np.max(np.linalg.norm(pc.coords, axis=1)) - 1) < 1e-12
    np.testing.assert_allclose(np.linalg.norm(pc.normals, axis=1), 1, atol=1e-12)


def test_shape_spec_validation():
    with pytest.raises(ValueError):
        ShapeSpec("cone")
    with pytest.raises(ValueError):
        ShapeSpec("sphere", n_points=7)
    with pytest.raises(ValueError):
        ShapeSpec("sphere", noise_sigma=-1)


def test_empty_dataset():
    train, test = make_dataset(per_class=0, test_per_class=0)
    assert len(train) == 0 and len(test) == 0


def test_dataset_is_deterministic():
    a, at = make_dataset(per_class=3, seed=5, n_points=32)
    b, bt = make_dataset(per_class=3, seed=5, n_points=32)
    for x, y in zip(a.clouds + at.clouds, b.clouds + bt.clouds):
        np.testing.assert_array_equal(x.coords, y.coords)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.labels.tolist() == [0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]
    assert len(at) == 4


def test_rotated_test_set_is_isometric_copy():
    _, test = make_dataset(per_class=2, seed=1, n_points=40)
    rot = rotated_copy(test, 9)
    np.testing.assert_array_equal(rot.labels, test.labels)
    for a, b, T in zip(test.clouds, rot.clouds, rot.transforms):
        da = np.sort(np.linalg.norm(a.coords[:, None] - a.coords[None], axis=-1).ravel())
        db = np.sort(np.linalg.norm(b.coords[:, None] - b.coords[None], axis=-1).ravel())
        assert np.max(np.abs(da - db)) < 1e-12
        np.testing.assert_allclose(T.apply_points(a.coords), b.coords, atol=1e-15)


def test_make_dataset_rotate_flag():
    _, plain = make_dataset(per_class=1, seed=2, n_points=16)
    _, rot = make_dataset(per_class=1, seed=2, n_points=16, rotate_test=True, test_per_class=0)
    assert len(rot.transforms) == len(rot) == 0
    _, rot = make_dataset(per_class=2, seed=2, n_points=16, rotate_test=True)
    assert len(rot.transforms) == len(rot)


def test_write_read_roundtrip(tmp_path):
    train, _ = make_dataset(per_class=2, seed=3, n_points=20)
    write_dataset(train, tmp_path / "d")
    lines = (tmp_path / "d" / "labels.csv").read_text().splitlines()
    assert lines[0] == "file,label" and lines[1] == "cloud_0000.txt,0"
    back = read_dataset(tmp_path / "d", 4)
    np.testing.assert_array_equal(back.labels, train.labels)
    for a, b in zip(train.clouds, back.clouds):
        np.testing.assert_array_equal(a.coords, b.coords)
        np.testing.assert_array_equal(a.normals, b.normals)
