"""Built-in demo scenes.

All fixtures share one observer rig at the origin looking down +z (lens
plane at z = 0, so world z equals the distance from the lenses) and a
projector behind the viewer. Each fixture carries the sampled powers it is
meant to be shown with.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .optics import PowerSamples
from .render.camera import PinholeCamera, rigid
from .render.mesh import Mesh, box, bunny_card, make_texture, quad, teapot_card
from .render.scene import Observer, Scene, Surface, TargetObject
from .render.timeline import PoseTimeline, linear_track

D_E = 0.02
DEFAULT_SIZE = (800, 600)
PROJECTOR_SIZE = (1024, 768)


@dataclass
class Fixture:
    name: str
    scene: Scene
    samples: PowerSamples
    timeline: PoseTimeline | None = None
    info: dict = field(default_factory=dict)


def _observer(size) -> Observer:
    w, h = size
    return Observer(center=np.zeros(3), rotation=np.eye(3), etl_eye_offset=D_E, width=w, height=h)


def _projector(target=(0.0, -0.012, 0.5), fov_deg: float = 26.0, size=PROJECTOR_SIZE) -> PinholeCamera:
    return PinholeCamera.look_at((0.0, -0.1, -0.6), target, math.radians(fov_deg), *size)


def _checker(squares: int, pixels_per_square: int = 4) -> dict:
    return {"type": "checker", "squares": squares, "pixels_per_square": pixels_per_square,
            "low": 0.1, "high": 0.9}


def _samples(lo: float, hi: float, step: float = 0.5) -> PowerSamples:
    n = int(round((hi - lo) / step))
    return PowerSamples(tuple(lo + step * k for k in range(n + 1)))


def _at_eye_angle(tan_x: float, tan_y: float, depth: float):
    """Point at lens distance ``depth`` seen from the rig center at the given tangents."""
    r = depth + D_E
    return (tan_x * r, tan_y * r, depth)


def sec43_bunnies(size=DEFAULT_SIZE, seed: int = 0, projector_size=PROJECTOR_SIZE) -> Fixture:
    """Screen at 0.5 m; bunnies at 1/3, 1/2 and 1 m (-1, 0, +1 D); physical cards at the same depths."""
    depths = (1.0 / 3.0, 0.5, 1.0)
    names = ("near", "mid", "far")
    ang = 0.16            # angular size (tangent units) of every bunny and card
    squares = 24
    tex = make_texture(_checker(squares))
    screen = Surface("screen", quad(0.6, 0.26, center=(0.0, -0.08, 0.5)),
                     make_texture(1.0), illuminate=False)
    surfaces = [screen]
    objects = []
    for k, (d, n) in enumerate(zip(depths, names)):
        tx = (-0.28, 0.0, 0.28)[k]
        objects.append(TargetObject(f"bunny_{n}", bunny_card(ang * (d + D_E), _at_eye_angle(tx, -0.12, d)), tex))
        surfaces.append(Surface(f"card_{n}", quad(0.8 * ang * (d + D_E), 0.8 * ang * (d + D_E),
                                                  _at_eye_angle(tx, 0.24, d)), tex))
    scene = Scene(tuple(surfaces), tuple(objects), _observer(size), _projector(size=projector_size),
                  "sec43-bunnies", {"seed": seed})
    return Fixture("sec43-bunnies", scene, _samples(-1.0, 2.0), info={
        "bunny_ids": [o.id for o in objects],
        "card_ids": [f"card_{n}" for n in names],
        "depths_m": list(depths),
        "bunny_powers_D": [-1.0, 0.0, 1.0],
    })


def sec44_step(size=DEFAULT_SIZE, seed: int = 0, projector_size=PROJECTOR_SIZE,
               squares: int = 110) -> Fixture:
    """Step surface (planes at 0.45 m and 0.8 m) with a teapot shown at 0.45 m."""
    near = Surface("near_plane", quad(0.3, 0.4, center=(-0.15, 0.0, 0.45)), make_texture(1.0), False)
    far = Surface("far_plane", quad(0.6, 0.6, center=(0.15, 0.0, 0.8)), make_texture(1.0), False)
    teapot = TargetObject("teapot", teapot_card(0.2, (0.0, 0.0, 0.45)), make_texture(_checker(squares, 2)))
    scene = Scene((near, far), (teapot,), _observer(size),
                  _projector((0.0, 0.0, 0.6), 30.0, projector_size), "sec44-step", {"seed": seed})
    return Fixture("sec44-step", scene, PowerSamples((-1.0, -0.5, 0.0, 0.5)), info={
        "plane_ids": ["near_plane", "far_plane"], "plane_depths_m": [0.45, 0.8], "object_depth_m": 0.45,
    })


def _slanted_plane(x0: float, z0: float, x1: float, z1: float, tan_half_height: float) -> Mesh:
    y0 = tan_half_height * (z0 + D_E)
    y1 = tan_half_height * (z1 + D_E)
    v = np.array([[x0, -y0, z0], [x1, -y1, z1], [x1, y1, z1], [x0, y0, z0]])
    uv = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    return Mesh(v, [[0, 1, 2], [0, 2, 3]], uv)


def sec42_slanted(size=DEFAULT_SIZE, seed: int = 0, projector_size=PROJECTOR_SIZE,
                  texture=None) -> Fixture:
    """Slanted checkered plane spanning 1/3 m to 5/3 m, shown on a screen at 0.5 m."""
    screen = Surface("screen", quad(1.0, 0.4, center=(0.0, 0.0, 0.5)), make_texture(1.0), False)
    plane = _slanted_plane(0.06, 1.0 / 3.0, 0.6, 5.0 / 3.0, 0.15)
    tex = make_texture(texture if texture is not None else _checker(16))
    scene = Scene((screen,), (TargetObject("slanted", plane, tex),), _observer(size),
                  _projector((0.0, 0.0, 0.5), 30.0, projector_size), "sec42-slanted", {"seed": seed})
    return Fixture("sec42-slanted", scene, _samples(-1.0, 1.5), info={"screen_depth_m": 0.5})


def fig5_corner(size=DEFAULT_SIZE, seed: int = 0, projector_size=PROJECTOR_SIZE) -> Fixture:
    """Two cuboids in front of and behind a concave corner screen."""
    a = math.atan2(0.2, 0.4)
    left = Surface("corner_left", quad(math.hypot(0.4, 0.2), 0.4, center=(-0.2, 0.0, 0.6),
                                       rotation=_rot_y(a)), make_texture(1.0))
    right = Surface("corner_right", quad(math.hypot(0.4, 0.2), 0.4, center=(0.2, 0.0, 0.6),
                                         rotation=_rot_y(-a)), make_texture(1.0))
    rng = np.random.default_rng(seed)
    cubes = (
        TargetObject("cube_near", box((0.07, 0.07, 0.07), (-0.07, 0.02, 0.4), _rot_y(0.5)),
                     make_texture({"type": "blocks", "blocks": 8, "pixels_per_block": 8,
                                   "seed": int(rng.integers(1 << 31))})),
        TargetObject("cube_far", box((0.12, 0.12, 0.12), (0.12, -0.03, 0.85), _rot_y(-0.4)),
                     make_texture({"type": "blocks", "blocks": 8, "pixels_per_block": 8,
                                   "seed": int(rng.integers(1 << 31))})),
    )
    scene = Scene((left, right), cubes, _observer(size),
                  _projector((0.0, 0.0, 0.6), 36.0, projector_size), "fig5-corner", {"seed": seed})
    return Fixture("fig5-corner", scene, _samples(-1.0, 2.0))


def sec45_moving(size=DEFAULT_SIZE, seed: int = 0, projector_size=PROJECTOR_SIZE,
                 poses: int = 20, duration: float = 2.0) -> Fixture:
    """Fronto-parallel plane moving from 0.3 m to 0.5 m behind a bunny fixed at 0.45 m."""
    plane = Surface("plane", quad(0.4, 0.3, center=(0.0, 0.0, 0.3)), make_texture(1.0), False)
    bunny = TargetObject("bunny", bunny_card(0.094, (0.0, 0.0, 0.45)), make_texture(_checker(24)))
    scene = Scene((plane,), (bunny,), _observer(size),
                  _projector((0.0, 0.0, 0.4), 30.0, projector_size), "sec45-moving", {"seed": seed})
    timeline = linear_track("plane", rigid(None, (0.0, 0.0, 0.3)), rigid(None, (0.0, 0.0, 0.5)),
                            poses, duration)
    return Fixture("sec45-moving", scene, _samples(-0.5, 1.5), timeline,
                   info={"object_depth_m": 0.45, "plane_range_m": [0.3, 0.5]})


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


FIXTURES = {
    "fig5-corner": fig5_corner,
    "sec42-slanted": sec42_slanted,
    "sec43-bunnies": sec43_bunnies,
    "sec44-step": sec44_step,
    "sec45-moving": sec45_moving,
}


def load_fixture(name: str, size=DEFAULT_SIZE, seed: int = 0, **kw) -> Fixture:
    try:
        builder = FIXTURES[name]
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None
    return builder(size=size, seed=seed, **kw)
