"""Pinhole cameras and rigid transforms.

Camera frame: x right, y down, z forward. Pixel ``(i, j)`` has its center at
``u = j + 0.5, v = i + 0.5``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.transform import Rotation


def rigid(rotation=None, translation=None) -> np.ndarray:
    """4x4 homogeneous transform from a 3x3 rotation and a translation."""
    m = np.eye(4)
    if rotation is not None:
        m[:3, :3] = rotation
    if translation is not None:
        m[:3, 3] = translation
    return m


def pose_from_quaternion(translation, quaternion_xyzw) -> np.ndarray:
    return rigid(Rotation.from_quat(quaternion_xyzw).as_matrix(), translation)


def transform_points(m: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    return pts @ m[:3, :3].T + m[:3, 3]


def look_at_rotation(position, target, down=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-to-camera rotation for a camera at ``position`` facing ``target``."""
    fwd = np.asarray(target, float) - np.asarray(position, float)
    fwd /= np.linalg.norm(fwd)
    right = np.cross(np.asarray(down, float), fwd)
    n = np.linalg.norm(right)
    if n < 1e-12:
        raise ValueError("down vector is parallel to the viewing direction")
    right /= n
    dn = np.cross(fwd, right)
    return np.stack([right, dn, fwd])


@dataclass(frozen=True)
class PinholeCamera:
    rotation: np.ndarray  # world -> camera
    translation: np.ndarray
    vertical_fov: float
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))
        if not 0 < self.vertical_fov < math.pi:
            raise ValueError(f"vertical fov must lie in (0, pi), got {self.vertical_fov}")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")

    @classmethod
    def look_at(cls, position, target, vertical_fov, width, height, down=(0.0, 1.0, 0.0)):
        r = look_at_rotation(position, target, down)
        return cls(r, -r @ np.asarray(position, float), vertical_fov, width, height)

    @classmethod
    def at(cls, position, rotation, vertical_fov, width, height):
        r = np.asarray(rotation, float)
        return cls(r, -r @ np.asarray(position, float), vertical_fov, width, height)

    @property
    def aspect(self) -> float:
        return self.width / self.height

    @property
    def focal(self) -> float:
        """Focal length in pixels (square pixels)."""
        return 0.5 * self.height / math.tan(0.5 * self.vertical_fov)

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * self.width, 0.5 * self.height

    @property
    def position(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[2].copy()

    @property
    def world_to_camera(self) -> np.ndarray:
        return rigid(self.rotation, self.translation)

    def to_camera(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, float) @ self.rotation.T + self.translation

    def to_world(self, pts_cam: np.ndarray) -> np.ndarray:
        return (np.asarray(pts_cam, float) - self.translation) @ self.rotation

    def project(self, pts_cam: np.ndarray):
        """Pixel coordinates ``(u, v)`` and depth ``z`` of camera-frame points."""
        p = np.asarray(pts_cam, float)
        z = p[..., 2]
        f = self.focal
        cx, cy = self.center
        with np.errstate(divide="ignore", invalid="ignore"):
            u = f * p[..., 0] / z + cx
            v = f * p[..., 1] / z + cy
        return u, v, z

    def pixel_tangents(self, supersample: int = 1):
        """Tangent-space coordinates ``(x/z, y/z)`` of every pixel center."""
        f = self.focal
        cx, cy = self.center
        s = supersample
        j = (np.arange(self.width * s) + 0.5) / s
        i = (np.arange(self.height * s) + 0.5) / s
        tx = (j - cx) / f
        ty = (i - cy) / f
        return np.meshgrid(tx, ty)

    def with_vertical_fov(self, fov: float) -> "PinholeCamera":
        return replace(self, vertical_fov=fov)

    def with_size(self, width: int, height: int) -> "PinholeCamera":
        return replace(self, width=int(width), height=int(height))

    def transformed(self, m: np.ndarray) -> "PinholeCamera":
        """The same camera after moving the whole world by rigid transform ``m``."""
        r = self.rotation @ m[:3, :3].T
        t = self.translation - r @ m[:3, 3]
        return replace(self, rotation=r, translation=t)

    def to_dict(self) -> dict:
        return {
            "position": self.position.tolist(),
            "rotation": self.rotation.tolist(),
            "vertical_fov_deg": math.degrees(self.vertical_fov),
            # exact values; the readable ones above are used when these are absent
            "translation": self.translation.tolist(),
            "vertical_fov_rad": self.vertical_fov,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PinholeCamera":
        fov = d["vertical_fov_rad"] if "vertical_fov_rad" in d else math.radians(d["vertical_fov_deg"])
        if "rotation" in d and "translation" in d:
            return cls(np.asarray(d["rotation"], float), d["translation"], fov, int(d["width"]), int(d["height"]))
        if "rotation" in d:
            rot = np.asarray(d["rotation"], float)
        elif "quaternion" in d:
            # quaternion gives the camera-to-world orientation
            rot = Rotation.from_quat(d["quaternion"]).as_matrix().T
        else:
            rot = look_at_rotation(d["position"], d["look_at"], d.get("down", (0, 1, 0)))
        return cls.at(d["position"], rot, fov, int(d["width"]), int(d["height"]))
