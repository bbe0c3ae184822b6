"""Scene description: projection surfaces, virtual target objects, the observer
rig (two lenses with eyes behind them) and the projector."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .camera import PinholeCamera, look_at_rotation, rigid
from .mesh import Mesh, Texture, box, bunny_card, load_obj, make_texture, quad, teapot_card

LEFT = "left"
RIGHT = "right"


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Surface:
    id: str
    mesh: Mesh
    albedo: Texture = field(default_factory=lambda: make_texture(None))
    illuminate: bool = True


@dataclass(frozen=True)
class TargetObject:
    id: str
    mesh: Mesh
    texture: Texture = field(default_factory=lambda: make_texture(None))


@dataclass(frozen=True)
class Observer:
    """Glasses rig: two lens centers ``eye_separation`` apart, eyes ``etl_eye_offset`` behind.

    ``rotation`` is world-to-rig (x right, y down, z along the lens axes).
    """

    center: np.ndarray
    rotation: np.ndarray
    eye_separation: float = 0.064
    etl_eye_offset: float = 0.02
    vertical_fov: float = math.radians(41.0)
    width: int = 800
    height: int = 600

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, float))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, float))
        if self.eye_separation < 0:
            raise SceneError("eye separation must be non-negative")
        if self.etl_eye_offset < 0:
            raise SceneError("lens-to-eye offset must be non-negative")

    def lens_center(self, eye: str) -> np.ndarray:
        sign = {LEFT: -1.0, RIGHT: 1.0}[eye]
        return self.center + sign * 0.5 * self.eye_separation * self.rotation[0]

    def eye_camera(self, eye: str) -> PinholeCamera:
        """Pinhole at the eye's pupil, optical axis along the lens axis."""
        pos = self.lens_center(eye) - self.etl_eye_offset * self.rotation[2]
        return PinholeCamera.at(pos, self.rotation, self.vertical_fov, self.width, self.height)


@dataclass(frozen=True)
class Scene:
    surfaces: tuple[Surface, ...]
    objects: tuple[TargetObject, ...]
    observer: Observer
    projector: PinholeCamera
    name: str = "scene"
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def d_e(self) -> float:
        return self.observer.etl_eye_offset

    def eye_camera(self, eye: str) -> PinholeCamera:
        return self.observer.eye_camera(eye)

    def surface_triangles(self) -> tuple[np.ndarray, np.ndarray]:
        """World triangles of all surfaces and the owning surface index per triangle."""
        tris, owner = [], []
        for k, s in enumerate(self.surfaces):
            t = s.mesh.world_triangles()
            tris.append(t)
            owner.append(np.full(len(t), k))
        return np.concatenate(tris), np.concatenate(owner)

    def object_triangles(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.objects:
            return np.zeros((0, 3, 3)), np.zeros(0, dtype=np.intp)
        tris, owner = [], []
        for k, o in enumerate(self.objects):
            t = o.mesh.world_triangles()
            tris.append(t)
            owner.append(np.full(len(t), k))
        return np.concatenate(tris), np.concatenate(owner)

    def surface_index(self, surface_id: str) -> int:
        for k, s in enumerate(self.surfaces):
            if s.id == surface_id:
                return k
        raise SceneError(f"no surface named {surface_id!r}")

    def with_surface_pose(self, surface_id: str, pose: np.ndarray) -> "Scene":
        k = self.surface_index(surface_id)
        surfs = list(self.surfaces)
        surfs[k] = replace(surfs[k], mesh=surfs[k].mesh.with_pose(pose))
        return replace(self, surfaces=tuple(surfs))

    def with_observer(self, **changes) -> "Scene":
        return replace(self, observer=replace(self.observer, **changes))

    def transformed(self, m: np.ndarray) -> "Scene":
        """Move every element of the scene by the rigid transform ``m``."""
        obs = self.observer
        obs = replace(obs, center=m[:3, :3] @ obs.center + m[:3, 3],
                      rotation=obs.rotation @ m[:3, :3].T)
        return replace(
            self,
            surfaces=tuple(replace(s, mesh=s.mesh.transformed(m)) for s in self.surfaces),
            objects=tuple(replace(o, mesh=o.mesh.transformed(m)) for o in self.objects),
            observer=obs,
            projector=self.projector.transformed(m),
        )

    def validate(self) -> None:
        if not self.surfaces:
            raise SceneError("scene has no projection surfaces")
        ids = [s.id for s in self.surfaces] + [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise SceneError(f"duplicate ids in {ids}")


# ---------------------------------------------------------------------------
# JSON serialization

def _pose_to_dict(m: np.ndarray) -> dict:
    return {"translation": m[:3, 3].tolist(), "rotation": m[:3, :3].tolist()}


def _pose_from_dict(d: dict | None) -> np.ndarray:
    if d is None:
        return np.eye(4)
    if "rotation" in d:
        rot = np.asarray(d["rotation"], float)
    elif "quaternion" in d:
        rot = Rotation.from_quat(d["quaternion"]).as_matrix()
    else:
        rot = None
    return rigid(rot, d.get("translation", (0, 0, 0)))


def mesh_to_dict(mesh: Mesh) -> dict:
    spec = dict(mesh.spec)
    if "primitive" in spec or "obj" in spec:
        spec["pose"] = _pose_to_dict(mesh.pose)
        return spec
    d = {"vertices": mesh.vertices.tolist(), "faces": mesh.faces.tolist(),
         "pose": _pose_to_dict(mesh.pose)}
    if mesh.uv is not None:
        d["uv"] = mesh.uv.tolist()
    return d


def mesh_from_dict(d: dict, base: Path | None = None) -> Mesh:
    pose = _pose_from_dict(d.get("pose"))
    if "primitive" in d:
        kind = d["primitive"]
        if kind == "quad":
            m = quad(d["width"], d["height"])
        elif kind == "box":
            m = box(d["size"])
        elif kind == "bunny":
            m = bunny_card(d["size"])
        elif kind == "teapot":
            m = teapot_card(d["size"])
        else:
            raise SceneError(f"unknown primitive {kind!r}")
    elif "obj" in d:
        path = Path(d["obj"])
        if base is not None and not path.is_absolute():
            path = base / path
        m = load_obj(path)
    else:
        m = Mesh(d["vertices"], d["faces"], d.get("uv"))
    return m.with_pose(pose)


def _texture_to_spec(t: Texture):
    return t.spec if t.spec else {"type": "constant", "value": float(t.image.mean())}


def scene_to_dict(scene: Scene) -> dict:
    obs = scene.observer
    return {
        "name": scene.name,
        "observer": {
            "center": obs.center.tolist(),
            "rotation": obs.rotation.tolist(),
            "eye_separation": obs.eye_separation,
            "etl_eye_offset": obs.etl_eye_offset,
            "vertical_fov_deg": math.degrees(obs.vertical_fov),
            "vertical_fov_rad": obs.vertical_fov,
            "width": obs.width,
            "height": obs.height,
        },
        "projector": scene.projector.to_dict(),
        "surfaces": [{"id": s.id, "mesh": mesh_to_dict(s.mesh), "albedo": _texture_to_spec(s.albedo),
                      "illuminate": s.illuminate} for s in scene.surfaces],
        "objects": [{"id": o.id, "mesh": mesh_to_dict(o.mesh), "texture": _texture_to_spec(o.texture)}
                    for o in scene.objects],
        "meta": scene.meta,
    }


def scene_from_dict(d: dict, base: Path | None = None) -> Scene:
    try:
        o = d["observer"]
        if "rotation" in o:
            rot = np.asarray(o["rotation"], float)
        else:
            rot = look_at_rotation(o["center"], o["look_at"], o.get("down", (0, 1, 0)))
        observer = Observer(
            center=o["center"], rotation=rot,
            eye_separation=float(o.get("eye_separation", 0.064)),
            etl_eye_offset=float(o.get("etl_eye_offset", 0.02)),
            vertical_fov=float(o["vertical_fov_rad"]) if "vertical_fov_rad" in o
            else math.radians(float(o.get("vertical_fov_deg", 41.0))),
            width=int(o.get("width", 800)), height=int(o.get("height", 600)),
        )
        projector = PinholeCamera.from_dict(d["projector"])

        def tex(spec):
            if isinstance(spec, str) and base is not None and not Path(spec).is_absolute():
                spec = str(base / spec)
            if isinstance(spec, dict) and spec.get("type") == "path" and base is not None:
                spec = dict(spec, path=str(base / spec["path"]))
            return make_texture(spec)

        surfaces = tuple(Surface(s["id"], mesh_from_dict(s["mesh"], base), tex(s.get("albedo")),
                                 bool(s.get("illuminate", True))) for s in d["surfaces"])
        objects = tuple(TargetObject(x["id"], mesh_from_dict(x["mesh"], base), tex(x.get("texture")))
                        for x in d.get("objects", []))
    except KeyError as exc:
        raise SceneError(f"missing scene field {exc}") from None
    scene = Scene(surfaces, objects, observer, projector, d.get("name", "scene"), d.get("meta", {}))
    scene.validate()
    return scene


def load_scene(path: str | Path) -> Scene:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}:{exc.lineno}: {exc.msg}") from None
    return scene_from_dict(d, base=path.parent)


def save_scene(scene: Scene, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(scene_to_dict(scene), indent=2))
    return path
