"""Whitespace-separated point text files: ``x y z`` or ``x y z nx ny nz``."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .geom import PointCloud


def load_points(path) -> PointCloud:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        rows.append((lineno, s.split()))
    if not rows:
        raise ValueError(f"{path}: no points")
    widths = {len(r) for _, r in rows}
    if len(widths) > 1:
        raise ValueError(f"{path}: mixed column counts {sorted(widths)}")
    width = widths.pop()
    if width not in (3, 6):
        raise ValueError(f"{path}: expected 3 or 6 columns, got {width}")
    try:
        data = np.array([[float(v) for v in r] for _, r in rows])
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    normals = data[:, 3:6] if width == 6 else None
    return PointCloud(data[:, :3], normals)


def save_points(path, cloud: PointCloud) -> None:
    data = cloud.coords if cloud.normals is None else np.hstack([cloud.coords, cloud.normals])
    np.savetxt(path, data, fmt="%.17g")
