"""Two-pass projection-mapping pipeline with depth filtering and lens-breathing
compensation.

Pass one renders the target object and the surfaces from each eye. The
object image is split into one slice per sampled lens power using the
dioptric distance between object and surface. Pass two projects every slice
onto the surfaces from the eye (through a virtual projector whose field of
view is widened or narrowed to cancel lens breathing) and captures the
textured surfaces from the real projector.

Depth maps hold distances along the lens axis measured from the lens plane,
which sits ``d_e`` in front of the eye camera's pinhole.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .. import optics
from ..optics import PowerSamples
from .camera import PinholeCamera
from .raster import rasterize
from .scene import LEFT, RIGHT, Scene

logger = logging.getLogger(__name__)

DEFAULT_BIN_WIDTH = 0.05
EYES = (LEFT, RIGHT)


@dataclass
class ObserverView:
    color: np.ndarray            # object radiance, 0 where empty
    object_depth: np.ndarray     # lens-plane distance, nan where empty
    surface_depth: np.ndarray    # lens-plane distance, nan where empty
    object_id: np.ndarray        # index into scene.objects, -1 where empty
    surface_id: np.ndarray       # index into scene.surfaces, -1 where empty
    camera: PinholeCamera
    d_e: float
    diagnostics: list = field(default_factory=list)

    @property
    def object_mask(self) -> np.ndarray:
        return self.object_id >= 0


def render_observer_view(scene: Scene, eye: str | PinholeCamera) -> ObserverView:
    """Rasterize the target objects (radiance + depth) and the surfaces (depth) from an eye."""
    cam = scene.eye_camera(eye) if isinstance(eye, str) else eye
    d_e = scene.d_e
    h, w = cam.height, cam.width
    diagnostics = []

    color = np.zeros((h, w))
    obj_depth = np.full((h, w), np.nan)
    obj_id = np.full((h, w), -1, dtype=np.intp)
    tris, owner = scene.object_triangles()
    if len(tris):
        r = rasterize(cam, tris)
        m = r.mask
        obj_depth[m] = r.depth[m] - d_e
        obj_id[m] = owner[r.triangle[m]]
        face_uv = np.concatenate([o.mesh.face_uv() for o in scene.objects])
        uv = r.interpolate(face_uv)
        for k, o in enumerate(scene.objects):
            sel = obj_id == k
            if np.any(sel):
                color[sel] = o.texture.sample(uv[sel, 0], uv[sel, 1])
    if not np.any(obj_id >= 0):
        diagnostics.append("target object lies entirely outside the view frustum")
        logger.warning("target object lies entirely outside the view frustum")

    stris, sowner = scene.surface_triangles()
    rs = rasterize(cam, stris)
    surf_depth = np.where(rs.mask, rs.depth - d_e, np.nan)
    surf_id = np.where(rs.mask, sowner[np.maximum(rs.triangle, 0)], -1)
    bad = np.isfinite(obj_depth) & (obj_depth <= 0) | np.isfinite(surf_depth) & (surf_depth <= 0)
    if np.any(bad):
        raise ValueError("geometry between the eye and the lens plane")
    return ObserverView(color, obj_depth, surf_depth, obj_id, surf_id, cam, d_e, diagnostics)


@dataclass
class SliceSet:
    slices: np.ndarray           # (N', H, W) observer-space radiance
    power_map: np.ndarray        # required power per object pixel, nan elsewhere
    uncovered: np.ndarray        # object pixels with no surface behind them
    dropped: int


def required_power_map(d_obj: np.ndarray, d_surf: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return 1.0 / d_surf - 1.0 / d_obj


def slice_and_filter(color: np.ndarray, d_obj: np.ndarray, d_surf: np.ndarray,
                     samples: PowerSamples) -> SliceSet:
    """Split the object image into depth-filtered slices, one per sampled power.

    Summing the slices pixelwise reproduces ``color`` exactly on every covered
    object pixel.
    """
    if not (color.shape == d_obj.shape == d_surf.shape):
        raise ValueError("color and depth maps must share a shape")
    obj = np.isfinite(d_obj)
    covered = obj & np.isfinite(d_surf)
    uncovered = obj & ~covered
    dropped = int(np.count_nonzero(uncovered & (color > 0)))
    if np.any(uncovered):
        logger.warning("%d object pixels have no surface behind them; their radiance is dropped",
                       int(np.count_nonzero(uncovered)))
    v = np.where(covered, required_power_map(d_obj, d_surf), np.nan)
    n = len(samples)
    out = np.zeros((n,) + color.shape)
    r = color[covered]
    idx, r_lo, r_hi = optics.depth_filter_arrays(r, v[covered], samples.array)
    rows, cols = np.nonzero(covered)
    out[idx, rows, cols] = r_lo
    if n > 1:
        out[idx + 1, rows, cols] += r_hi
    return SliceSet(out, v, uncovered, dropped)


@dataclass
class DepthBinFactor:
    bin_index: int
    d_p: float          # representative surface distance of the cluster
    d_v: float          # virtual image distance at the slice power
    scale: float        # resize factor on the surface
    fov_factor: float   # multiplier on the virtual projector field of view


@dataclass
class CompensatedSlice:
    """One observer-space slice ready for projective texturing from the eye."""

    power: float
    image: np.ndarray
    camera: PinholeCamera
    surface_depth: np.ndarray
    d_e: float
    bin_width: float
    factors: dict[int, DepthBinFactor]
    default_factor: DepthBinFactor

    @property
    def fov_factor(self) -> float:
        return self.dominant().fov_factor

    def dominant(self) -> DepthBinFactor:
        if not self.factors:
            return self.default_factor
        weights = {}
        b = _bins(self.surface_depth, self.bin_width)
        for k in self.factors:
            weights[k] = float(self.image[b == k].sum())
        return self.factors[max(weights, key=lambda k: (weights[k], -k))]

    def factor_for(self, bins: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-element (scale, fov multiplier) for an array of bin indices."""
        scale = np.full(bins.shape, self.default_factor.scale)
        fov = np.full(bins.shape, self.default_factor.fov_factor)
        for k, f in self.factors.items():
            sel = bins == k
            scale[sel] = f.scale
            fov[sel] = f.fov_factor
        return scale, fov


def _bins(depth: np.ndarray, width: float) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return np.where(np.isfinite(depth), np.floor(depth / width), -1).astype(np.int64)


def _factor(camera: PinholeCamera, d_p: float, v: float, d_e: float, k: int) -> DepthBinFactor:
    try:
        d_v = optics.virtual_distance(d_p, v)
    except optics.RealImageError:
        # no content can be shown there; use the far limit
        d_v = optics.OPTICAL_INFINITY
    s = optics.breathing_scale(d_p, d_v, d_e)
    half = 0.5 * camera.vertical_fov
    h = (d_e + d_p) * math.tan(half)
    return DepthBinFactor(k, d_p, d_v, s, optics.fov_scale(h, s, d_e, d_p))


def compensate_and_project(slices: np.ndarray, view: ObserverView, samples: PowerSamples,
                           bin_width: float = DEFAULT_BIN_WIDTH,
                           enabled: bool = True) -> list[CompensatedSlice]:
    """Attach per-depth-cluster breathing factors to each observer-space slice.

    Slice pixels are clustered by surface distance into bins of
    ``bin_width``; each cluster gets the factor for its mean surface distance
    and the slice's sampled power. Disabled compensation uses factor 1.
    """
    out = []
    bins = _bins(view.surface_depth, bin_width)
    identity = DepthBinFactor(-1, math.nan, math.nan, 1.0, 1.0)
    for n, v in enumerate(samples.powers):
        img = slices[n]
        factors: dict[int, DepthBinFactor] = {}
        if enabled:
            for k in np.unique(bins[bins >= 0]):
                sel = bins == k
                content = sel & (img > 0)
                if not np.any(content):
                    continue
                d_p = float(np.mean(view.surface_depth[content]))
                factors[int(k)] = _factor(view.camera, d_p, v, view.d_e, int(k))
        if enabled:
            valid = np.isfinite(view.surface_depth)
            d_mid = float(np.median(view.surface_depth[valid])) if np.any(valid) else 1.0
            default = _factor(view.camera, d_mid, v, view.d_e, -1)
        else:
            default = identity
        out.append(CompensatedSlice(v, img, view.camera, view.surface_depth, view.d_e,
                                    bin_width, factors, default))
    return out


@dataclass
class ProjectorGeometry:
    """Surface points seen by each projector pixel, cached across slices."""

    camera: PinholeCamera
    mask: np.ndarray
    world: np.ndarray     # (H, W, 3)
    surface_id: np.ndarray
    depth: np.ndarray     # projector camera depth, inf where empty


def projector_geometry(scene: Scene, projector: PinholeCamera | None = None) -> ProjectorGeometry:
    cam = projector or scene.projector
    tris, owner = scene.surface_triangles()
    r = rasterize(cam, tris)
    tx, ty = cam.pixel_tangents()
    z = np.where(r.mask, r.depth, 0.0)
    pts_cam = np.stack([tx * z, ty * z, z], axis=-1)
    world = cam.to_world(pts_cam.reshape(-1, 3)).reshape(pts_cam.shape)
    sid = np.where(r.mask, owner[np.maximum(r.triangle, 0)], -1)
    return ProjectorGeometry(cam, r.mask, world, sid, r.depth)


def _visible_from_eye(d_p: np.ndarray, u: np.ndarray, v: np.ndarray, surface_depth: np.ndarray) -> np.ndarray:
    h, w = surface_depth.shape
    j = np.floor(u).astype(np.int64)
    i = np.floor(v).astype(np.int64)
    inside = (j >= 0) & (j < w) & (i >= 0) & (i < h)
    ref = np.full(d_p.shape, np.nan)
    ref[inside] = surface_depth[i[inside], j[inside]]
    tol = 0.005 + 0.01 * d_p
    with np.errstate(invalid="ignore"):
        return inside & (np.abs(ref - d_p) <= tol)


def render_projector_view(slices: list[CompensatedSlice], geometry: ProjectorGeometry) -> np.ndarray:
    """Projector images ``(N', H, W)`` that paint each slice onto the surfaces.

    Every surface point seen by the projector is projected into the eye's
    virtual projector (field of view multiplied by the point's depth-cluster
    factor) and the slice is sampled bilinearly there. Points hidden from the
    eye receive no light.
    """
    from .mesh import bilinear

    pc = geometry.camera
    out = np.zeros((len(slices), pc.height, pc.width))
    if not slices:
        return out
    m = geometry.mask
    pts = geometry.world[m]
    eye = slices[0].camera
    cam_pts = eye.to_camera(pts)
    u, v, z = eye.project(cam_pts)
    d_e = slices[0].d_e
    d_p = z - d_e
    visible = (z > 0) & _visible_from_eye(d_p, u, v, slices[0].surface_depth)
    bins = np.where(np.isfinite(d_p), np.floor(d_p / slices[0].bin_width), -1).astype(np.int64)
    f = eye.focal
    cx, cy = eye.center
    tan_half = math.tan(0.5 * eye.vertical_fov)
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = cam_pts[:, 0] / z
        ty = cam_pts[:, 1] / z
    for n, s in enumerate(slices):
        _, fov = s.factor_for(bins)
        # virtual projector with the modified field of view
        f_virtual = 0.5 * eye.height / np.tan(fov * math.atan(tan_half))
        src_u = tx * f_virtual + cx
        src_v = ty * f_virtual + cy
        vals = bilinear(s.image, src_u - 0.5, src_v - 0.5)
        img = np.zeros(m.shape)
        img[m] = np.where(visible, vals, 0.0)
        out[n] = img
    return out


def illumination_image(scene: Scene, geometry: ProjectorGeometry) -> np.ndarray:
    """Uniform white on every surface flagged for illumination, black elsewhere."""
    lit = np.array([s.illuminate for s in scene.surfaces])
    img = np.zeros(geometry.mask.shape)
    sel = geometry.mask
    img[sel] = lit[geometry.surface_id[sel]].astype(float)
    return img


@dataclass
class Slice:
    power: float
    image: np.ndarray          # projector-space radiance
    fov_factor: float
    observer_image: np.ndarray  # pre-compensation observer-space slice


@dataclass
class SliceStack:
    """Per-eye slices in sample order (ascending power)."""

    eye: str
    slices: list[Slice]
    view: ObserverView
    compensated: list[CompensatedSlice]
    slice_set: SliceSet

    @property
    def powers(self) -> tuple[float, ...]:
        return tuple(s.power for s in self.slices)

    def display_order(self) -> list[int]:
        """Indices in the order the lens reaches them (rising for left, falling for right)."""
        idx = list(range(len(self.slices)))
        return idx if self.eye == LEFT else idx[::-1]

    def images(self) -> np.ndarray:
        return np.stack([s.image for s in self.slices])


@dataclass
class FrameSet:
    left: SliceStack
    right: SliceStack
    illumination: np.ndarray
    samples: PowerSamples
    geometry: ProjectorGeometry
    compensation: bool = True

    def stack(self, eye: str) -> SliceStack:
        return self.left if eye == LEFT else self.right


def render_eye_stack(scene: Scene, eye: str, samples: PowerSamples, geometry: ProjectorGeometry,
                     compensation: bool = True, bin_width: float = DEFAULT_BIN_WIDTH) -> SliceStack:
    view = render_observer_view(scene, eye)
    ss = slice_and_filter(view.color, view.object_depth, view.surface_depth, samples)
    comp = compensate_and_project(ss.slices, view, samples, bin_width, enabled=compensation)
    proj = render_projector_view(comp, geometry)
    slices = [Slice(v, proj[n], comp[n].fov_factor, ss.slices[n])
              for n, v in enumerate(samples.powers)]
    return SliceStack(eye, slices, view, comp, ss)


def render_frame_set(scene: Scene, samples: PowerSamples, compensation: bool = True,
                     bin_width: float = DEFAULT_BIN_WIDTH) -> FrameSet:
    """Run the full pipeline for both eyes and render the illumination image."""
    scene.validate()
    geom = projector_geometry(scene)
    left = render_eye_stack(scene, LEFT, samples, geom, compensation, bin_width)
    right = render_eye_stack(scene, RIGHT, samples, geom, compensation, bin_width)
    return FrameSet(left, right, illumination_image(scene, geom), samples, geom, compensation)


def virtual_points(view: ObserverView, slice_set: SliceSet, powers) -> tuple[np.ndarray, np.ndarray]:
    """World positions where the slices place each object pixel, with radiance weights.

    The radiance-weighted mean of the slice powers gives the effective power
    per pixel; the virtual image distance follows from the surface distance
    and is laid out along the pixel's eye ray.
    """
    powers = np.asarray(powers, float)
    total = slice_set.slices.sum(axis=0)
    sel = total > 0
    v_eff = np.tensordot(powers, slice_set.slices[:, sel], axes=1) / total[sel]
    d_p = view.surface_depth[sel]
    with np.errstate(divide="ignore"):
        d_v = 1.0 / (1.0 / d_p - v_eff)
    tx, ty = view.camera.pixel_tangents()
    z = d_v + view.d_e
    cam_pts = np.stack([tx[sel] * z, ty[sel] * z, z], axis=-1)
    return view.camera.to_world(cam_pts), total[sel]


def virtual_centroid(view: ObserverView, slice_set: SliceSet, powers) -> np.ndarray:
    pts, w = virtual_points(view, slice_set, powers)
    if len(w) == 0:
        return np.full(3, np.nan)
    return (pts * w[:, None]).sum(axis=0) / w.sum()
