"""360-degree range scan against line-segment obstacles."""

from __future__ import annotations

import numpy as np

LIDAR_BEAMS = 240
LIDAR_RANGE = 50.0


def lidar_scan(origin, heading: float, segments: np.ndarray) -> np.ndarray:
    """Normalized ranges for beams at heading + 2*pi*k/240, k = 0..239.

    segments is an (M, 4) array of x1,y1,x2,y2 obstacle edges. Each beam
    reports min(first hit distance, 50 m) / 50 m, so an empty world reads
    all ones. Intersections are exact ray-segment solutions.
    """
    p = np.asarray(origin, dtype=np.float64)
    angles = heading + 2.0 * np.pi * np.arange(LIDAR_BEAMS) / LIDAR_BEAMS
    d = np.stack([np.cos(angles), np.sin(angles)], axis=1)  # (K,2)
    segs = np.asarray(segments, dtype=np.float64).reshape(-1, 4)
    if segs.shape[0] == 0:
        return np.ones(LIDAR_BEAMS)
    a = segs[:, :2]
    e = segs[:, 2:] - a                       # (M,2)
    ap = a - p[None, :]                       # (M,2)
    denom = d[:, 0:1] * e[None, :, 1] - d[:, 1:2] * e[None, :, 0]   # (K,M)
    t_num = ap[:, 0] * e[:, 1] - ap[:, 1] * e[:, 0]                 # (M,)
    u_num = ap[None, :, 0] * d[:, 1:2] - ap[None, :, 1] * d[:, 0:1]  # (K,M)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = t_num[None, :] / denom
        u = u_num / denom
    valid = (np.abs(denom) > 1e-12) & (t >= 0.0) & (u >= 0.0) & (u <= 1.0)
    t = np.where(valid, t, np.inf)
    hit = t.min(axis=1)
    return np.minimum(hit, LIDAR_RANGE) / LIDAR_RANGE
