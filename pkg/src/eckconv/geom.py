"""Point-cloud geometry: sampling, neighbor queries, normals and rigid motions.

Everything here works on plain ``float64`` numpy arrays. Coordinates are
``(N, 3)``, normals ``(N, 3)`` unit rows, features ``(N, C)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MEAN_BRANCH_THRESHOLD = 1e-5
_SIGN_EPS = 1e-9


@dataclass
class PointCloud:
    """Coordinates with optional unit normals and per-point features."""

    coords: np.ndarray
    normals: np.ndarray | None = None
    features: np.ndarray | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 3)
        n = len(self.coords)
        if n < 1:
            raise ValueError("a point cloud needs at least one point")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("coordinates must be finite")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != n:
                raise ValueError(f"got {len(self.normals)} normals for {n} points")
        if self.features is None:
            self.features = np.ones((n, 1))
        else:
            self.features = np.asarray(self.features, dtype=np.float64)
            if self.features.ndim == 1:
                self.features = self.features[:, None]
            if len(self.features) != n:
                raise ValueError(f"got {len(self.features)} feature rows for {n} points")

    def __len__(self):
        return len(self.coords)

    def subset(self, idx) -> "PointCloud":
        idx = np.asarray(idx, dtype=np.intp)
        normals = None if self.normals is None else self.normals[idx]
        return PointCloud(self.coords[idx], normals, self.features[idx])


@dataclass(frozen=True)
class RigidTransform:
    """``x -> R x + t``; normals only see ``R``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1) > 1e-9:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        R = self.rotation @ other.rotation
        t = self.rotation @ other.translation + self.translation
        return RigidTransform(R, t)

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def apply_points(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.rotation.T + self.translation

    def apply_vectors(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v) @ self.rotation.T


@dataclass
class NeighborList:
    centroid_index: int
    neighbor_indices: list[int]
    actual_count: int


def apply_transform(cloud: PointCloud, T: RigidTransform) -> PointCloud:
    normals = None if cloud.normals is None else T.apply_vectors(cloud.normals)
    return PointCloud(T.apply_points(cloud.coords), normals, cloud.features.copy())


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_se3(rng: np.random.Generator | int | None = None,
               translation_bound: float = 0.0) -> RigidTransform:
    """Haar-uniform rotation (normalized Gaussian quaternion) plus a
    translation uniform in ``[-bound, bound]^3``."""
    if translation_bound < 0:
        raise ValueError("translation_bound must be >= 0")
    rng = np.random.default_rng(rng)
    R = quaternion_to_matrix(rng.standard_normal(4))
    t = rng.uniform(-translation_bound, translation_bound, size=3) if translation_bound > 0 else np.zeros(3)
    return RigidTransform(R, t)


def farthest_point_sampling(coords: np.ndarray | PointCloud, m: int, seed_index: int = 0) -> np.ndarray:
    """Greedy farthest point sampling starting from ``seed_index``.

    Ties in the max-min distance go to the lowest index (``argmax`` returns
    the first maximum).
    """
    x = coords.coords if isinstance(coords, PointCloud) else np.asarray(coords, dtype=np.float64)
    n = len(x)
    if n == 0 or m < 1 or m > n:
        raise ValueError(f"cannot sample m={m} centroids from {n} points")
    if not 0 <= seed_index < n:
        raise ValueError(f"seed_index {seed_index} out of range")
    out = np.empty(m, dtype=np.intp)
    out[0] = seed_index
    mind = np.sum((x - x[seed_index]) ** 2, axis=1)
    for j in range(1, m):
        nxt = int(np.argmax(mind))
        out[j] = nxt
        np.minimum(mind, np.sum((x - x[nxt]) ** 2, axis=1), out=mind)
    return out


def _pairwise_sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # explicit differences; the expanded |a|^2 - 2ab + |b|^2 form loses
    # precision near the ball boundary
    d = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def ball_query_padded(centroids: np.ndarray, coords: np.ndarray, radius: float, k: int):
    """Vectorized ball query.

    Returns ``(idx, counts)`` where ``idx`` is ``(M, k)`` with the first
    ``counts[m]`` entries valid (ascending original index) and the rest ``-1``.
    """
    if radius <= 0 or k < 1:
        raise ValueError("radius must be > 0 and k >= 1")
    c = np.asarray(centroids, dtype=np.float64).reshape(-1, 3)
    x = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    inside = _pairwise_sqdist(c, x) <= radius * radius
    counts = np.minimum(inside.sum(axis=1), k)
    # stable sort keeps ascending index among in-ball points
    order = np.argsort(~inside, axis=1, kind="stable")[:, :k]
    idx = np.where(np.arange(order.shape[1])[None, :] < counts[:, None], order, -1)
    if idx.shape[1] < k:
        idx = np.pad(idx, ((0, 0), (0, k - idx.shape[1])), constant_values=-1)
    return idx.astype(np.intp), counts.astype(np.intp)


def ball_query(centroids, cloud, radius: float, k: int) -> list[NeighborList]:
    c = centroids.coords if isinstance(centroids, PointCloud) else centroids
    x = cloud.coords if isinstance(cloud, PointCloud) else cloud
    idx, counts = ball_query_padded(c, x, radius, k)
    return [NeighborList(m, idx[m, :counts[m]].tolist(), int(counts[m])) for m in range(len(idx))]


def knn(queries, cloud, k: int) -> np.ndarray:
    """``(Q, k)`` indices of the nearest points, nearest first, ties by index."""
    q = queries.coords if isinstance(queries, PointCloud) else np.asarray(queries, dtype=np.float64)
    x = cloud.coords if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    q = q.reshape(-1, 3)
    x = x.reshape(-1, 3)
    if k < 1 or k > len(x):
        raise ValueError(f"k={k} invalid for a cloud of {len(x)} points")
    d = _pairwise_sqdist(q, x)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def _canonical_sign(v: np.ndarray, reference: np.ndarray | None = None) -> np.ndarray:
    if reference is not None and np.linalg.norm(reference) >= _SIGN_EPS:
        return -v if np.dot(v, reference) < 0 else v
    nz = np.flatnonzero(np.abs(v) > _SIGN_EPS)
    if len(nz) and v[nz[0]] < 0:
        return -v
    return v


def pca_least_eigenvector(vectors, reference=None, rtol: float = 1e-9) -> np.ndarray:
    """Unit eigenvector of the covariance with the smallest eigenvalue.

    Sign: non-negative dot with ``reference`` when that is given and not
    tiny, otherwise the first clearly nonzero component is made positive.
    A degenerate smallest eigenvalue is resolved by projecting the standard
    axes into the eigenspace and keeping the lexicographically smallest
    canonical candidate.
    """
    v = np.asarray(vectors, dtype=np.float64).reshape(-1, 3)
    if len(v) < 2:
        raise ValueError("need at least two vectors")
    centered = v - v.mean(axis=0)
    cov = centered.T @ centered / len(v)
    w, U = np.linalg.eigh(cov)
    scale = max(abs(w[-1]), 1e-300)
    degenerate = np.flatnonzero(w - w[0] <= rtol * scale)
    if len(degenerate) == 1:
        return _canonical_sign(U[:, 0], reference)
    basis = U[:, degenerate]
    candidates = []
    for axis in np.eye(3):
        p = basis @ (basis.T @ axis)
        norm = np.linalg.norm(p)
        if norm > 1e-6:
            candidates.append(_canonical_sign(p / norm))
    best = min(candidates, key=lambda c: tuple(np.round(c, 12)))
    return _canonical_sign(best, reference)


def augment_cosets(coords, K: int) -> np.ndarray:
    """Lift bare coordinates to unit vectors from their K-neighborhoods.

    The mean neighbor offset is normalized when its norm exceeds ``1e-5``;
    otherwise the least principal axis of the offsets is used. The point
    itself is part of its own K-NN set (zero offset).
    """
    x = coords.coords if isinstance(coords, PointCloud) else np.asarray(coords, dtype=np.float64)
    x = x.reshape(-1, 3)
    n = len(x)
    if n < K or K < 1:
        raise ValueError(f"need N >= K, got N={n}, K={K}")
    nbr = knn(x, x, K)
    offsets = x[nbr] - x[:, None, :]
    mean = offsets.mean(axis=1)
    norms = np.linalg.norm(mean, axis=1)
    out = np.empty_like(x)
    big = norms > MEAN_BRANCH_THRESHOLD
    out[big] = mean[big] / norms[big, None]
    center = x.mean(axis=0)
    for i in np.flatnonzero(~big):
        local = x[nbr[i]].mean(axis=0)
        out[i] = pca_least_eigenvector(offsets[i], reference=center - local)
    return out


def estimate_branches(coords, K: int) -> np.ndarray:
    """Boolean mask: ``True`` where :func:`augment_cosets` takes the mean branch."""
    x = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    nbr = knn(x, x, K)
    mean = (x[nbr] - x[:, None, :]).mean(axis=1)
    return np.linalg.norm(mean, axis=1) > MEAN_BRANCH_THRESHOLD
