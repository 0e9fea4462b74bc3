"""Planar geometry: arc-length routes, drivable corridors, oriented boxes."""

from __future__ import annotations

import numpy as np

from ..errors import UsageError


def resample_polyline(points: np.ndarray, spacing: float) -> np.ndarray:
    """Redistribute vertices at roughly uniform arc-length spacing."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise UsageError(f"polyline needs at least 2 points of 2 coords, got {pts.shape}")
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    s = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = s[-1]
    if total <= 0:
        raise UsageError("polyline has zero length")
    n = max(2, int(round(total / spacing)) + 1)
    targets = np.linspace(0.0, total, n)
    out = np.empty((n, 2))
    out[:, 0] = np.interp(targets, s, pts[:, 0])
    out[:, 1] = np.interp(targets, s, pts[:, 1])
    return out


def arc_points(center, radius: float, a0: float, a1: float,
               step_deg: float = 2.0) -> np.ndarray:
    """Circle arc from angle a0 to a1 (radians, signed direction)."""
    n = max(2, int(abs(a1 - a0) / np.radians(step_deg)) + 1)
    ang = np.linspace(a0, a1, n)
    c = np.asarray(center, dtype=np.float64)
    return c + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


class Route:
    """Polyline with arc-length parameterization.

    Vertices are resampled to ~0.5 m spacing; headings are per-segment and
    curvature is the heading rate between consecutive segments.
    """

    def __init__(self, points, spacing: float = 0.5):
        self.pts = resample_polyline(points, spacing)
        seg = np.diff(self.pts, axis=0)
        self.seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self.s = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.length = float(self.s[-1])
        self.seg_dir = seg / self.seg_len[:, None]
        self.seg_heading = np.arctan2(seg[:, 1], seg[:, 0])
        dh = np.diff(self.seg_heading)
        dh = (dh + np.pi) % (2 * np.pi) - np.pi
        ds = 0.5 * (self.seg_len[:-1] + self.seg_len[1:])
        # curvature at interior vertices, padded with the edge values
        kappa_v = dh / ds
        self.kappa = np.concatenate([[kappa_v[0]], kappa_v, [kappa_v[-1]]]) \
            if kappa_v.size else np.zeros(2)

    def _locate(self, s: float) -> tuple[int, float]:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.s, s, side="right")) - 1
        i = min(max(i, 0), len(self.seg_len) - 1)
        return i, (s - self.s[i]) / self.seg_len[i]

    def point_at(self, s: float) -> np.ndarray:
        i, u = self._locate(s)
        return self.pts[i] + u * (self.pts[i + 1] - self.pts[i])

    def heading_at(self, s: float) -> float:
        i, _ = self._locate(s)
        return float(self.seg_heading[i])

    def pose_at(self, s: float) -> tuple[float, float, float]:
        i, u = self._locate(s)
        p = self.pts[i] + u * (self.pts[i + 1] - self.pts[i])
        return float(p[0]), float(p[1]), float(self.seg_heading[i])

    def curvature_at(self, s: float) -> float:
        i, u = self._locate(s)
        return float(self.kappa[i] if u < 0.5 else self.kappa[i + 1])

    def project(self, p, s_hint: float | None = None,
                window: float = 30.0) -> tuple[float, float]:
        """Arc length and signed lateral offset (left of travel positive) of
        the closest route point. With s_hint, only segments within
        [s_hint - window, s_hint + window] are searched, which keeps the
        projection from snapping across nearby route sections."""
        p = np.asarray(p, dtype=np.float64)
        if s_hint is None:
            lo, hi = 0, len(self.seg_len)
        else:
            lo = int(np.searchsorted(self.s, s_hint - window)) - 1
            hi = int(np.searchsorted(self.s, s_hint + window)) + 1
            lo, hi = max(lo, 0), min(hi, len(self.seg_len))
            if hi <= lo:
                lo, hi = 0, len(self.seg_len)
        a = self.pts[lo:hi]
        d = self.pts[lo + 1:hi + 1] - a
        ap = p[None, :] - a
        u = np.clip((ap * d).sum(axis=1) / (self.seg_len[lo:hi] ** 2), 0.0, 1.0)
        closest = a + u[:, None] * d
        dist2 = ((p[None, :] - closest) ** 2).sum(axis=1)
        k = int(np.argmin(dist2))
        s = self.s[lo + k] + u[k] * self.seg_len[lo + k]
        t = self.seg_dir[lo + k]
        off = p - closest[k]
        lateral = t[0] * off[1] - t[1] * off[0]
        return float(s), float(lateral)


class Corridor:
    """Drivable strip: centerline polyline plus half-width."""

    def __init__(self, points, halfwidth: float, spacing: float = 1.0):
        self.pts = resample_polyline(points, spacing)
        self.halfwidth = float(halfwidth)
        self._a = self.pts[:-1]
        d = self.pts[1:] - self._a
        self._d = d
        self._len2 = (d ** 2).sum(axis=1)

    def distance(self, p) -> float:
        p = np.asarray(p, dtype=np.float64)
        ap = p[None, :] - self._a
        u = np.clip((ap * self._d).sum(axis=1) / self._len2, 0.0, 1.0)
        closest = self._a + u[:, None] * self._d
        return float(np.sqrt(((p[None, :] - closest) ** 2).sum(axis=1).min()))

    def contains(self, p) -> bool:
        return self.distance(p) <= self.halfwidth


# -- oriented boxes --------------------------------------------------------------


def obb_corners(cx: float, cy: float, heading: float,
                length: float, width: float) -> np.ndarray:
    """Corners of an oriented rectangle, counterclockwise."""
    c, s = np.cos(heading), np.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def obb_overlap(corners_a: np.ndarray, corners_b: np.ndarray) -> bool:
    """Separating-axis test for two convex quads given as (4,2) corners."""
    for quad in (corners_a, corners_b):
        edges = np.roll(quad, -1, axis=0) - quad
        axes = np.stack([-edges[:, 1], edges[:, 0]], axis=1)
        for ax in axes[:2]:  # a rectangle has two unique edge directions
            pa = corners_a @ ax
            pb = corners_b @ ax
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def obb_edges(corners: np.ndarray) -> np.ndarray:
    """(4,4) array of x1,y1,x2,y2 segments tracing the rectangle."""
    nxt = np.roll(corners, -1, axis=0)
    return np.concatenate([corners, nxt], axis=1)


def segment_intersects_obb(seg: np.ndarray, corners: np.ndarray) -> bool:
    """Whether the segment (x1,y1,x2,y2) touches the rectangle."""
    p, q = seg[:2], seg[2:]
    # endpoint inside?
    edges = np.roll(corners, -1, axis=0) - corners
    for pt in (p, q):
        rel = pt[None, :] - corners
        cross = edges[:, 0] * rel[:, 1] - edges[:, 1] * rel[:, 0]
        if (cross >= 0).all() or (cross <= 0).all():
            return True
    # edge crossing?
    d1 = q - p
    for i in range(4):
        a, b = corners[i], corners[(i + 1) % 4]
        d2 = b - a
        denom = d1[0] * d2[1] - d1[1] * d2[0]
        if denom == 0:
            continue
        ap = a - p
        t = (ap[0] * d2[1] - ap[1] * d2[0]) / denom
        u = (ap[0] * d1[1] - ap[1] * d1[0]) / denom
        if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
            return True
    return False
