"""Rigid-motion invariant neighbor encoding and its Gaussian embedding."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

DEFAULT_D = 64
DEFAULT_SIGMA = 0.05
_RADIUS_SLACK = 1e-9


class DoubleCosetParams(NamedTuple):
    beta: float
    rbar: float
    zbar: float


def encode_pairs(centroid_x, centroid_n, neighbor_x, neighbor_n, radius: float,
                 check: bool = True) -> np.ndarray:
    """Batched encoding; inputs broadcast over leading axes, output ``(..., 3)``
    holding ``(beta, rbar, zbar)``.

    ``beta`` is the angle between the two normals, ``zbar`` the offset along
    the centroid normal and ``rbar`` its distance from that axis, both in
    units of ``radius``. Computed via ``atan2`` and a cross-product norm,
    which agree with ``arccos`` / ``sqrt(1 - c^2)`` for unit normals but stay
    accurate near parallel vectors.
    """
    if radius <= 0:
        raise ValueError("radius must be > 0")
    x = np.asarray(centroid_x, dtype=np.float64)
    n = np.asarray(centroid_n, dtype=np.float64)
    xi = np.asarray(neighbor_x, dtype=np.float64)
    ni = np.asarray(neighbor_n, dtype=np.float64)
    delta = xi - x
    if check:
        dist = np.linalg.norm(delta, axis=-1)
        if np.any(dist > radius * (1 + _RADIUS_SLACK) + _RADIUS_SLACK):
            raise ValueError("neighbor lies outside the query radius")
    n, ni = np.broadcast_arrays(n, ni)
    cos_b = np.einsum("...k,...k->...", n, ni)
    sin_b = np.linalg.norm(np.cross(n, ni), axis=-1)
    beta = np.arctan2(sin_b, cos_b)
    n_b = np.broadcast_to(n, delta.shape)
    zbar = np.einsum("...k,...k->...", n_b, delta) / radius
    rbar = np.linalg.norm(np.cross(n_b, delta), axis=-1) / radius
    return np.stack([beta, rbar, zbar], axis=-1)


def encode_double_coset(centroid, neighbor, radius: float) -> DoubleCosetParams:
    """Encode one neighbor ``(x_i, n_i)`` relative to ``centroid = (x, n)``."""
    (x, n), (xi, ni) = centroid, neighbor
    b, r, z = encode_pairs(x, n, xi, ni, radius)
    return DoubleCosetParams(float(b), float(r), float(z))


def normalize_params(params) -> np.ndarray:
    """Map ``(beta, rbar, zbar)`` into the unit cube."""
    p = np.asarray(params, dtype=np.float64)
    return np.stack([p[..., 0] / np.pi, p[..., 1], (p[..., 2] + 1.0) / 2.0], axis=-1)


def gaussian_embedding(params, d: int = DEFAULT_D, sigma: float = DEFAULT_SIGMA,
                       normalized: bool = False) -> np.ndarray:
    """Concatenated per-coordinate Gaussian bumps, shape ``(..., 3 * d)``.

    Centers are ``0, 1/d, ..., (d-1)/d``; blocks are ordered beta, r, z.
    Pass ``normalized=True`` when ``params`` already lie in ``[0, 1]``.
    """
    if d < 1 or sigma <= 0:
        raise ValueError("need d >= 1 and sigma > 0")
    u = np.asarray(params, dtype=np.float64) if normalized else normalize_params(params)
    centers = np.arange(d) / d
    diff = u[..., :, None] - centers
    emb = np.exp(-diff * diff / (2.0 * sigma * sigma))
    return emb.reshape(*u.shape[:-1], u.shape[-1] * d)


def encode_raw_offsets(centroid_x, neighbor_x, radius: float) -> np.ndarray:
    """Non-invariant control: the offset in world axes, scaled to ``[0, 1]^3``.

    Fed to :func:`gaussian_embedding` with ``normalized=True`` it produces an
    input of the same width as the invariant encoding.
    """
    delta = (np.asarray(neighbor_x) - np.asarray(centroid_x)) / radius
    return (np.clip(delta, -1.0, 1.0) + 1.0) / 2.0
