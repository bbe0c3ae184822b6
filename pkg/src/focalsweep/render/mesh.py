"""Triangle meshes, grayscale textures and the mesh primitives used by fixtures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .camera import rigid, transform_points


@dataclass(frozen=True)
class Texture:
    """Grayscale image in [0, 1] addressed by ``(u, v)`` in [0, 1]^2; v grows downward."""

    image: np.ndarray
    spec: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        img = np.asarray(self.image, dtype=float)
        if img.ndim != 2:
            raise ValueError("textures are single-channel")
        if img.size and (img.min() < 0 or img.max() > 1):
            raise ValueError("texture values must lie in [0, 1]")
        object.__setattr__(self, "image", img)

    def sample(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Bilinear lookup with clamped addressing."""
        h, w = self.image.shape
        return bilinear(self.image, np.asarray(u) * w - 0.5, np.asarray(v) * h - 0.5, clamp=True)


def bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray, clamp: bool = False) -> np.ndarray:
    """Sample ``img`` at continuous array coordinates (column ``x``, row ``y``).

    Integer coordinates hit pixel centers. Outside the image the result is
    zero unless ``clamp`` is set.
    """
    h, w = img.shape
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if clamp:
        x = np.clip(x, 0, w - 1)
        y = np.clip(y, 0, h - 1)
    valid = (x > -1) & (x < w) & (y > -1) & (y < h) & np.isfinite(x) & np.isfinite(y)
    xs = np.where(valid, x, 0.0)
    ys = np.where(valid, y, 0.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    fx = xs - x0
    fy = ys - y0
    out = np.zeros(x.shape, dtype=float)
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            xi = x0 + dx
            yi = y0 + dy
            ok = valid & (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            val = img[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            out += np.where(ok, wx * wy * val, 0.0)
    return out


def make_texture(spec) -> Texture:
    """Texture from a spec: a number, a path, or a dict with a ``type`` key.

    Supported types are ``constant``, ``checker`` and ``blocks`` (seeded
    random gray blocks).
    """
    if spec is None:
        return Texture(np.ones((1, 1)), {"type": "constant", "value": 1.0})
    if isinstance(spec, (int, float)):
        return Texture(np.full((1, 1), float(spec)), {"type": "constant", "value": float(spec)})
    if isinstance(spec, (str, Path)):
        from ..imageio import read_gray
        return Texture(read_gray(spec), {"type": "path", "path": str(spec)})
    kind = spec.get("type", "constant")
    if kind == "constant":
        return Texture(np.full((1, 1), float(spec.get("value", 1.0))), dict(spec))
    if kind == "checker":
        n = int(spec.get("squares", 8))
        px = int(spec.get("pixels_per_square", 16))
        lo, hi = float(spec.get("low", 0.0)), float(spec.get("high", 1.0))
        idx = np.arange(n * px) // px
        board = (idx[:, None] + idx[None, :]) % 2
        return Texture(np.where(board == 0, hi, lo), dict(spec))
    if kind == "blocks":
        n = int(spec.get("blocks", 16))
        px = int(spec.get("pixels_per_block", 8))
        lo, hi = float(spec.get("low", 0.2)), float(spec.get("high", 1.0))
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        vals = lo + (hi - lo) * rng.random((n, n))
        return Texture(np.kron(vals, np.ones((px, px))), dict(spec))
    if kind == "path":
        return make_texture(spec["path"])
    raise ValueError(f"unknown texture type {kind!r}")


@dataclass(frozen=True)
class Mesh:
    """Triangles in a local frame placed in the world by ``pose`` (local -> world)."""

    vertices: np.ndarray
    faces: np.ndarray
    uv: np.ndarray | None = None
    pose: np.ndarray = field(default_factory=lambda: np.eye(4))
    spec: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.intp).reshape(-1, 3)
        if len(f) == 0:
            raise ValueError("mesh has no faces")
        if f.min() < 0 or f.max() >= len(v):
            raise ValueError("face index out of range")
        a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
        area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
        if np.any(area <= 1e-14):
            raise ValueError(f"degenerate triangle(s): {np.flatnonzero(area <= 1e-14).tolist()}")
        uv = None if self.uv is None else np.asarray(self.uv, dtype=float).reshape(-1, 2)
        if uv is not None and len(uv) != len(v):
            raise ValueError("uv must have one row per vertex")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "uv", uv)
        object.__setattr__(self, "pose", np.asarray(self.pose, dtype=float))

    def world_vertices(self) -> np.ndarray:
        return transform_points(self.pose, self.vertices)

    def world_triangles(self) -> np.ndarray:
        return self.world_vertices()[self.faces]

    def face_uv(self) -> np.ndarray:
        if self.uv is None:
            return np.zeros((len(self.faces), 3, 2))
        return self.uv[self.faces]

    def with_pose(self, pose: np.ndarray) -> "Mesh":
        return replace(self, pose=np.asarray(pose, float))

    def transformed(self, m: np.ndarray) -> "Mesh":
        return replace(self, pose=m @ self.pose)


def quad(width: float, height: float, center=(0.0, 0.0, 0.0), rotation=None) -> Mesh:
    """Rectangle in the local xy-plane (normal along -z, facing a viewer at -z)."""
    w, h = 0.5 * width, 0.5 * height
    v = np.array([[-w, -h, 0], [w, -h, 0], [w, h, 0], [-w, h, 0]], float)
    uv = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    f = np.array([[0, 1, 2], [0, 2, 3]])
    return Mesh(v, f, uv, rigid(rotation, center),
                spec={"primitive": "quad", "width": width, "height": height})


def box(size, center=(0.0, 0.0, 0.0), rotation=None) -> Mesh:
    """Axis-aligned cuboid; uv is a planar xy projection over the box extent."""
    sx, sy, sz = (0.5 * float(s) for s in size)
    v = np.array([[x, y, z] for z in (-sz, sz) for y in (-sy, sy) for x in (-sx, sx)], float)
    f = np.array([
        [0, 1, 3], [0, 3, 2],   # front (-z)
        [4, 6, 7], [4, 7, 5],   # back
        [0, 2, 6], [0, 6, 4],   # left
        [1, 5, 7], [1, 7, 3],   # right
        [0, 4, 5], [0, 5, 1],   # top (-y)
        [2, 3, 7], [2, 7, 6],   # bottom
    ])
    uv = np.stack([(v[:, 0] + sx) / (2 * sx), (v[:, 1] + sy) / (2 * sy)], axis=1)
    return Mesh(v, f, uv, rigid(rotation, center), spec={"primitive": "box", "size": list(size)})


def _ellipse_fan(cx, cy, rx, ry, segments=24, phase=0.0):
    t = phase + np.arange(segments) * (2 * math.pi / segments)
    ring = np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)
    verts = np.vstack([[cx, cy], ring])
    faces = np.array([[0, 1 + k, 1 + (k + 1) % segments] for k in range(segments)])
    return verts, faces


def _card(parts, size: float, center, rotation, name: str) -> Mesh:
    """Flat silhouette made of overlapping ellipse fans, uv mapped over its bounds."""
    verts, faces = [], []
    for p in parts:
        v, f = _ellipse_fan(*p)
        faces.append(f + sum(len(x) for x in verts))
        verts.append(v)
    v2 = np.vstack(verts)
    lo, hi = v2.min(axis=0), v2.max(axis=0)
    scale = size / (hi - lo).max()
    mid = 0.5 * (lo + hi)
    xy = (v2 - mid) * scale
    v3 = np.column_stack([xy, np.zeros(len(xy))])
    ext = (hi - lo).max() * scale
    uv = (xy + 0.5 * ext) / ext
    return Mesh(v3, np.vstack(faces), uv, rigid(rotation, center),
                spec={"primitive": name, "size": size})


def bunny_card(size: float, center=(0.0, 0.0, 0.0), rotation=None) -> Mesh:
    """Rabbit silhouette (body, head, two ears) in the local xy-plane; y is down."""
    parts = [
        (0.0, 0.35, 0.55, 0.38),      # body
        (0.42, -0.05, 0.26, 0.22),    # head
        (0.35, -0.48, 0.07, 0.26),    # ear
        (0.52, -0.45, 0.07, 0.24),    # ear
        (-0.55, 0.25, 0.1, 0.1),      # tail
    ]
    return _card(parts, size, center, rotation, "bunny")


def teapot_card(size: float, center=(0.0, 0.0, 0.0), rotation=None) -> Mesh:
    """Teapot silhouette (body, lid, spout, handle) in the local xy-plane."""
    parts = [
        (0.0, 0.1, 0.55, 0.4),        # body
        (0.0, -0.35, 0.22, 0.1),      # lid
        (0.0, -0.47, 0.06, 0.05),     # knob
        (0.72, -0.05, 0.26, 0.07, 24, -0.6),   # spout
        (-0.65, 0.08, 0.16, 0.24),    # handle
    ]
    return _card(parts, size, center, rotation, "teapot")


def load_obj(path: str | Path) -> Mesh:
    """Minimal Wavefront OBJ reader (v, vt, f; polygons fan-triangulated)."""
    verts, tex, faces, face_uv = [], [], [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vt":
                tex.append([float(x) for x in parts[1:3]])
            elif parts[0] == "f":
                idx = [p.split("/") for p in parts[1:]]
                vi = [int(p[0]) - 1 for p in idx]
                ti = [int(p[1]) - 1 if len(p) > 1 and p[1] else None for p in idx]
                for k in range(1, len(vi) - 1):
                    faces.append([vi[0], vi[k], vi[k + 1]])
                    face_uv.append([ti[0], ti[k], ti[k + 1]])
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    uv = None
    if tex and all(t is not None for fu in face_uv for t in fu):
        tex = np.asarray(tex)
        uv = np.zeros((len(verts), 2))
        for f, fu in zip(faces, face_uv):
            uv[f] = tex[fu]
        uv[:, 1] = 1.0 - uv[:, 1]
    return Mesh(np.asarray(verts), np.asarray(faces), uv, spec={"obj": str(path)})
