"""Z-buffered triangle rasterization and ray casting against triangle soups."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import PinholeCamera

NEAR = 1e-3
_EDGE_EPS = 1e-9


@dataclass
class Raster:
    """Per-pixel nearest hit: camera depth (``inf`` if empty), triangle index
    (``-1`` if empty) and perspective-correct barycentric weights."""

    depth: np.ndarray
    triangle: np.ndarray
    bary: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return self.triangle >= 0

    def interpolate(self, values: np.ndarray) -> np.ndarray:
        """Interpolate per-triangle-corner ``values`` (T, 3, k) over covered pixels."""
        out = np.zeros(self.depth.shape + values.shape[2:])
        m = self.mask
        tri = self.triangle[m]
        out[m] = np.einsum("nc,nc...->n...", self.bary[m], values[tri])
        return out


def rasterize(camera: PinholeCamera, triangles: np.ndarray) -> Raster:
    """Rasterize world-space triangles ``(T, 3, 3)``.

    Pixels are sampled at their centers. The nearest camera depth wins; equal
    depths keep the lower triangle index. Triangles with any vertex closer
    than ``NEAR`` to the camera plane are skipped.
    """
    h, w = camera.height, camera.width
    depth = np.full((h, w), np.inf)
    tri_id = np.full((h, w), -1, dtype=np.intp)
    bary = np.zeros((h, w, 3))
    tris = np.asarray(triangles, float)
    if len(tris) == 0:
        return Raster(depth, tri_id, bary)
    cam = camera.to_camera(tris.reshape(-1, 3)).reshape(-1, 3, 3)
    u, v, z = camera.project(cam)
    for t in range(len(tris)):
        zt = z[t]
        if np.any(zt <= NEAR):
            continue
        ut, vt = u[t], v[t]
        area = (ut[1] - ut[0]) * (vt[2] - vt[0]) - (ut[2] - ut[0]) * (vt[1] - vt[0])
        if area == 0:
            continue
        j0 = max(int(np.floor(ut.min() - 0.5)), 0)
        j1 = min(int(np.ceil(ut.max() - 0.5)), w - 1)
        i0 = max(int(np.floor(vt.min() - 0.5)), 0)
        i1 = min(int(np.ceil(vt.max() - 0.5)), h - 1)
        if j1 < j0 or i1 < i0:
            continue
        px = np.arange(j0, j1 + 1) + 0.5
        py = np.arange(i0, i1 + 1) + 0.5
        gx, gy = np.meshgrid(px, py)
        # screen-space barycentrics
        l0 = ((ut[1] - gx) * (vt[2] - gy) - (ut[2] - gx) * (vt[1] - gy)) / area
        l1 = ((ut[2] - gx) * (vt[0] - gy) - (ut[0] - gx) * (vt[2] - gy)) / area
        l2 = 1.0 - l0 - l1
        inside = (l0 >= -_EDGE_EPS) & (l1 >= -_EDGE_EPS) & (l2 >= -_EDGE_EPS)
        if not np.any(inside):
            continue
        q0, q1, q2 = l0 / zt[0], l1 / zt[1], l2 / zt[2]
        inv_z = q0 + q1 + q2
        zpix = 1.0 / inv_z
        sub_depth = depth[i0:i1 + 1, j0:j1 + 1]
        win = inside & (zpix < sub_depth)
        if not np.any(win):
            continue
        sub_depth[win] = zpix[win]
        tri_id[i0:i1 + 1, j0:j1 + 1][win] = t
        b = np.stack([q0, q1, q2], axis=-1) * zpix[..., None]
        bary[i0:i1 + 1, j0:j1 + 1][win] = b[win]
    return Raster(depth, tri_id, bary)


@dataclass
class RayHits:
    t: np.ndarray          # ray parameter, inf if no hit
    triangle: np.ndarray   # -1 if no hit
    bary: np.ndarray       # (..., 3)

    @property
    def mask(self) -> np.ndarray:
        return self.triangle >= 0


def cast_rays(origins: np.ndarray, directions: np.ndarray, triangles: np.ndarray) -> RayHits:
    """Nearest ray/triangle intersection (Moller-Trumbore), ties to lower index."""
    shape = origins.shape[:-1]
    o = origins.reshape(-1, 3)
    d = directions.reshape(-1, 3)
    best = np.full(len(o), np.inf)
    tri_id = np.full(len(o), -1, dtype=np.intp)
    bary = np.zeros((len(o), 3))
    for k, (a, b, c) in enumerate(np.asarray(triangles, float)):
        e1 = b - a
        e2 = c - a
        p = np.cross(d, e2)
        det = p @ e1
        ok = np.abs(det) > 1e-15
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = o - a
        bu = (s * p).sum(axis=1) * inv
        q = np.cross(s, e1)
        bv = (d * q).sum(axis=1) * inv
        t = (q @ e2) * inv
        hit = (ok & (bu >= -_EDGE_EPS) & (bv >= -_EDGE_EPS) & (bu + bv <= 1 + _EDGE_EPS)
               & (t > 1e-9) & (t < best))
        if not np.any(hit):
            continue
        best[hit] = t[hit]
        tri_id[hit] = k
        bary[hit] = np.stack([1 - bu[hit] - bv[hit], bu[hit], bv[hit]], axis=1)
    return RayHits(best.reshape(shape), tri_id.reshape(shape), bary.reshape(shape + (3,)))
