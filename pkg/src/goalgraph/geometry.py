"""2D rigid-motion helpers and polyline / polygon geometry."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

TWO_PI = 2.0 * math.pi


def normalize_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return math.pi - (math.pi - a) % TWO_PI


@dataclass(frozen=True)
class Pose2:
    """A 2D pose: position in meters, heading in radians, wrapped to (-pi, pi]."""

    x: float
    y: float
    heading: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.heading)):
            raise InvalidInputError(f"non-finite pose ({self.x}, {self.y}, {self.heading})")
        object.__setattr__(self, "heading", normalize_angle(self.heading))

    def transform(self, dx: float, dy: float, dtheta: float) -> "Pose2":
        """Apply a rigid map (rotate by dtheta about origin, then translate)."""
        c, s = math.cos(dtheta), math.sin(dtheta)
        return Pose2(
            c * self.x - s * self.y + dx,
            s * self.x + c * self.y + dy,
            self.heading + dtheta,
        )


def rotate_xy(xy: np.ndarray, theta: float) -> np.ndarray:
    """Rotate points (..., 2) by theta about the origin."""
    c, s = math.cos(theta), math.sin(theta)
    out = np.empty_like(xy, dtype=float)
    out[..., 0] = c * xy[..., 0] - s * xy[..., 1]
    out[..., 1] = s * xy[..., 0] + c * xy[..., 1]
    return out


def polyline_lengths(pts: np.ndarray) -> np.ndarray:
    """Per-segment lengths of a polyline (N, 2) -> (N-1,)."""
    return np.hypot(*(pts[1:] - pts[:-1]).T)


def polyline_arclength(pts: np.ndarray) -> float:
    return float(polyline_lengths(np.asarray(pts, dtype=float)).sum())


def point_at_arclength(pts: np.ndarray, s: float) -> tuple[float, float, float]:
    """Interpolate (x, y, tangent heading) at arc length s along a polyline."""
    pts = np.asarray(pts, dtype=float)
    seg = polyline_lengths(pts)
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    s = min(max(s, 0.0), cum[-1])
    # tolerant segment pick: when s sits on a vertex (up to float noise from
    # rigid transforms), always take the segment after it
    i = int(np.searchsorted(cum, s + 1e-9 * max(cum[-1], 1.0), side="right") - 1)
    i = min(i, len(seg) - 1)
    t = 0.0 if seg[i] < 1e-12 else (s - cum[i]) / seg[i]
    p = pts[i] + t * (pts[i + 1] - pts[i])
    d = pts[i + 1] - pts[i]
    heading = math.atan2(d[1], d[0]) if seg[i] > 1e-12 else 0.0
    return float(p[0]), float(p[1]), heading


def point_to_polyline_distance(xy, pts: np.ndarray) -> float:
    """Minimum distance from a point to a polyline (N, 2)."""
    pts = np.asarray(pts, dtype=float)
    p = np.asarray(xy, dtype=float)
    a, b = pts[:-1], pts[1:]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    denom = np.where(denom < 1e-18, 1.0, denom)
    t = np.minimum(np.maximum(np.einsum("ij,ij->i", p - a, ab) / denom, 0.0), 1.0)
    d = a + t[:, None] * ab - p
    return float(math.sqrt(np.einsum("ij,ij->i", d, d).min()))


def points_in_polygon(xy: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd (ray casting) point-in-polygon test, vectorized over points.

    xy: (M, 2) query points; poly: (N, 2) closed implicitly.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    poly = np.asarray(poly, dtype=float)
    x, y = xy[:, 0][:, None], xy[:, 1][:, None]
    x1, y1 = poly[:, 0][None, :], poly[:, 1][None, :]
    x2, y2 = np.roll(poly[:, 0], -1)[None, :], np.roll(poly[:, 1], -1)[None, :]
    crosses = (y1 > y) != (y2 > y)
    dy = np.where(y2 - y1 == 0.0, 1.0, y2 - y1)
    xint = x1 + (y - y1) * (x2 - x1) / dy
    hits = crosses & (x < xint)
    return (hits.sum(axis=1) % 2).astype(bool)


def points_near_polygon_boundary(xy: np.ndarray, poly: np.ndarray, eps: float) -> np.ndarray:
    """True where a point is within eps of any polygon edge."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    poly = np.asarray(poly, dtype=float)
    a = poly
    b = np.roll(poly, -1, axis=0)
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    denom = np.where(denom < 1e-18, 1.0, denom)
    diff = xy[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("mnj,nj->mn", diff, ab) / denom[None, :], 0.0, 1.0)
    proj = a[None, :, :] + t[..., None] * ab[None, :, :]
    d = np.hypot(*(np.transpose(xy[:, None, :] - proj, (2, 0, 1))))
    return (d <= eps).any(axis=1)
