"""Synthetic shapes with analytic normals, and small labeled datasets."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geom import PointCloud, apply_transform, random_se3
from .pointio import save_points

SHAPES = ("sphere", "cube", "torus", "cylinder")

TORUS_MAJOR = 0.7
TORUS_MINOR = 0.3
CYLINDER_RADIUS = 0.5
CYLINDER_HEIGHT = 1.5


@dataclass
class ShapeSpec:
    kind: str
    n_points: int = 256
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SHAPES:
            raise ValueError(f"unknown shape {self.kind!r}")
        if self.n_points < 8:
            raise ValueError("n_points must be >= 8")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass
class LabeledBatch:
    clouds: list
    labels: np.ndarray
    num_classes: int
    transforms: list = field(default_factory=list)

    def __len__(self):
        return len(self.clouds)


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _sphere(n, rng):
    p = _unit(rng.standard_normal((n, 3)))
    return p, p.copy()


def _cube(n, rng):
    face = rng.integers(0, 6, size=n)
    axis, sign = face // 2, np.where(face % 2 == 0, 1.0, -1.0)
    x = rng.uniform(-1, 1, size=(n, 3))
    x[np.arange(n), axis] = sign
    nrm = np.zeros((n, 3))
    nrm[np.arange(n), axis] = sign
    return x, nrm


def torus_point(phi, theta, R=TORUS_MAJOR, r=TORUS_MINOR):
    ring = R + r * np.cos(theta)
    return np.stack([ring * np.cos(phi), ring * np.sin(phi), r * np.sin(theta)], axis=-1)


def torus_normal(phi, theta):
    return np.stack([np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), np.sin(theta)], axis=-1)


def _torus(n, rng, R=TORUS_MAJOR, r=TORUS_MINOR):
    # area element is proportional to (R + r cos theta): rejection sample theta
    theta = np.empty(0)
    while len(theta) < n:
        cand = rng.uniform(0, 2 * np.pi, size=2 * n)
        keep = rng.uniform(0, R + r, size=2 * n) < R + r * np.cos(cand)
        theta = np.concatenate([theta, cand[keep]])
    theta = theta[:n]
    phi = rng.uniform(0, 2 * np.pi, size=n)
    return torus_point(phi, theta, R, r), torus_normal(phi, theta)


def _cylinder(n, rng, radius=CYLINDER_RADIUS, height=CYLINDER_HEIGHT):
    side_area = 2 * np.pi * radius * height
    cap_area = np.pi * radius ** 2
    part = rng.choice(3, size=n, p=np.array([side_area, cap_area, cap_area]) / (side_area + 2 * cap_area))
    x = np.empty((n, 3))
    nrm = np.empty((n, 3))
    phi = rng.uniform(0, 2 * np.pi, size=n)
    side = part == 0
    x[side] = np.stack([radius * np.cos(phi[side]), radius * np.sin(phi[side]),
                        rng.uniform(-height / 2, height / 2, size=side.sum())], axis=-1)
    nrm[side] = np.stack([np.cos(phi[side]), np.sin(phi[side]), np.zeros(side.sum())], axis=-1)
    for label, z in ((1, height / 2), (2, -height / 2)):
        cap = part == label
        rho = radius * np.sqrt(rng.uniform(0, 1, size=cap.sum()))
        x[cap] = np.stack([rho * np.cos(phi[cap]), rho * np.sin(phi[cap]), np.full(cap.sum(), z)], axis=-1)
        nrm[cap] = [0.0, 0.0, np.sign(z)]
    return x, nrm


_SAMPLERS = {"sphere": _sphere, "cube": _cube, "torus": _torus, "cylinder": _cylinder}


def normalize_cloud(x: np.ndarray) -> np.ndarray:
    """Center of mass to the origin, farthest point at distance 1."""
    x = x - x.mean(axis=0)
    return x / np.max(np.linalg.norm(x, axis=1))


def sample_shape(spec: ShapeSpec) -> PointCloud:
    rng = np.random.default_rng(spec.seed)
    x, nrm = _SAMPLERS[spec.kind](spec.n_points, rng)
    if spec.noise_sigma > 0:
        x = x + rng.normal(0.0, spec.noise_sigma, size=x.shape)
    return PointCloud(normalize_cloud(x), nrm)


def make_dataset(classes=SHAPES, per_class: int = 100, seed: int = 0, test_per_class: int | None = None,
                 n_points: int = 256, noise_sigma: float = 0.01,
                 rotate_test: bool = False) -> tuple[LabeledBatch, LabeledBatch]:
    """Deterministic train/test split, ``per_class`` training clouds per class
    and ``test_per_class`` (default ``per_class // 2``) test clouds."""
    classes = tuple(classes)
    test_per_class = per_class // 2 if test_per_class is None else test_per_class
    ss = np.random.SeedSequence(seed)
    train_seeds, test_seeds, rot_seed = ss.spawn(3)

    def build(seq, count):
        seeds = seq.generate_state(len(classes) * max(count, 1))
        clouds, labels = [], []
        for c, kind in enumerate(classes):
            for i in range(count):
                s = int(seeds[c * count + i])
                clouds.append(sample_shape(ShapeSpec(kind, n_points, noise_sigma, s)))
                labels.append(c)
        return LabeledBatch(clouds, np.asarray(labels, dtype=np.intp), len(classes))

    train = build(train_seeds, per_class)
    test = build(test_seeds, test_per_class)
    if rotate_test:
        test = rotated_copy(test, int(rot_seed.generate_state(1)[0]))
    return train, test


def rotated_copy(batch: LabeledBatch, seed: int, translation_bound: float = 0.0) -> LabeledBatch:
    """Each cloud moved by its own random rigid motion; the motions are kept."""
    rng = np.random.default_rng(seed)
    transforms = [random_se3(rng, translation_bound) for _ in batch.clouds]
    clouds = [apply_transform(c, T) for c, T in zip(batch.clouds, transforms)]
    return LabeledBatch(clouds, batch.labels.copy(), batch.num_classes, transforms)


def write_dataset(batch: LabeledBatch, directory) -> Path:
    """One text file per cloud plus ``labels.csv`` (``file,label``)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(len(batch))))
    with open(directory / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "label"])
        for i, (cloud, label) in enumerate(zip(batch.clouds, batch.labels)):
            name = f"cloud_{i:0{width}d}.txt"
            save_points(directory / name, cloud)
            writer.writerow([name, int(label)])
    return directory


def read_dataset(directory, num_classes: int | None = None) -> LabeledBatch:
    from .pointio import load_points

    directory = Path(directory)
    clouds, labels = [], []
    with open(directory / "labels.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            clouds.append(load_points(directory / row["file"]))
            labels.append(int(row["label"]))
    labels = np.asarray(labels, dtype=np.intp)
    k = num_classes if num_classes is not None else (int(labels.max()) + 1 if len(labels) else 0)
    return LabeledBatch(clouds, labels, k)

