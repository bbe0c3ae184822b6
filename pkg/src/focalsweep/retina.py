"""Retinal-view oracle.

Replays a timing chart and its projector frames through the swept lens and
a thin-lens eye with a finite pupil. For each visible frame the surface
luminance is looked at through the lens at the instantaneous power (sampled
several times across the frame), every point is placed at its virtual image
depth and the result is blurred by the disc the pupil projects at the
chosen accommodation.

The eye looks through the lens with its pupil ``d_e`` behind the lens
plane. Under the paraxial thin-lens model a surface point at eye tangent
``T`` and lens distance ``d_p`` is seen at tangent ``T / s`` with
``s = 1 - v d_e d_p / (d_e + d_p)``, which is the lens-breathing factor.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_erosion
from scipy.signal import fftconvolve

from . import sync
from .etl import PowerWaveform
from .imageio import write_gray
from .render.camera import PinholeCamera
from .render.mesh import bilinear
from .render.pipeline import (FrameSet, ProjectorGeometry, compensate_and_project,
                              render_projector_view, slice_and_filter)
from .render.raster import cast_rays
from .render.scene import LEFT, RIGHT, Scene
from .sync import ILLUMINATION, PROJECTOR, DeviceDelays, TimingChart

logger = logging.getLogger(__name__)

VERGENCE_BIN = 0.002      # diopters
BLUR_STEP = 0.05          # pixels
DEFAULT_SUBSAMPLES = 8


class UnvalidatedChartError(ValueError):
    """The chart failed validation and the caller did not opt out of the check."""


@dataclass(frozen=True)
class EyeModel:
    pupil_diameter: float = 0.004    # meters

    def __post_init__(self):
        if self.pupil_diameter < 0:
            raise ValueError("pupil diameter must be non-negative")


def blur_diameter(d_v: float, accommodation: float, pupil: float, d_e: float) -> float:
    """Angular blur-disc diameter (radians) of a virtual image ``d_v`` from the lens.

    The eye is ``d_e`` behind the lens and focused at ``accommodation``
    (measured from the eye).
    """
    return pupil * abs(1.0 / (d_v + d_e) - 1.0 / accommodation)


def breathing(power, d_p, d_e: float):
    """Tangent-space scale of the view through the lens (1 at zero power)."""
    return 1.0 - power * d_e * d_p / (d_e + d_p)


def eye_vergence(power, d_p, d_e: float):
    """Vergence (diopters) at the eye of light from a surface at ``d_p`` through power ``power``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        w = 1.0 / d_p - power
        return w / (1.0 + d_e * w)


def disc_kernel(diameter: float, supersample: int = 8) -> np.ndarray:
    """Normalized pixel-coverage kernel of a disc with the given diameter in pixels."""
    r = 0.5 * diameter
    half = int(math.ceil(r + 0.5))
    n = 2 * half + 1
    s = supersample
    offs = (np.arange(n * s) + 0.5) / s - n / 2
    x, y = np.meshgrid(offs, offs)
    inside = (x * x + y * y) <= r * r
    k = inside.reshape(n, s, n, s).sum(axis=(1, 3)).astype(float)
    if k.sum() == 0:
        k[half, half] = 1.0
    return k / k.sum()


# ---------------------------------------------------------------------------
# surface lookup from the eye

@dataclass
class SurfaceLookup:
    """What an eye ray at tangents ``(tx, ty)`` hits, unaffected by the lens."""

    depth: np.ndarray        # lens-plane distance, nan where empty
    surface_id: np.ndarray
    proj_x: np.ndarray       # projector array coordinates
    proj_y: np.ndarray
    lit: np.ndarray          # visible from the projector
    albedo: np.ndarray

    def luminance(self, projector_image: np.ndarray, with_albedo: bool = True) -> np.ndarray:
        vals = bilinear(projector_image, self.proj_x, self.proj_y)
        out = np.where(self.lit, vals, 0.0)
        return out * self.albedo if with_albedo else out


def surface_lookup(scene: Scene, geometry: ProjectorGeometry, eye_cam: PinholeCamera,
                   tx: np.ndarray, ty: np.ndarray) -> SurfaceLookup:
    tris, owner = scene.surface_triangles()
    d_cam = np.stack([tx, ty, np.ones_like(tx)], axis=-1)
    dirs = d_cam @ eye_cam.rotation
    origins = np.broadcast_to(eye_cam.position, dirs.shape)
    hits = cast_rays(origins, dirs, tris)
    m = hits.mask
    depth = np.where(m, hits.t - scene.d_e, np.nan)   # t is the camera z for a unit-z direction
    sid = np.where(m, owner[np.maximum(hits.triangle, 0)], -1)
    pts = origins + dirs * np.where(m, hits.t, 0.0)[..., None]

    albedo = np.zeros(tx.shape)
    face_uv = np.concatenate([s.mesh.face_uv() for s in scene.surfaces])
    uv = np.einsum("...c,...ck->...k", hits.bary, face_uv[np.maximum(hits.triangle, 0)])
    for k, s in enumerate(scene.surfaces):
        sel = sid == k
        if np.any(sel):
            albedo[sel] = s.albedo.sample(uv[sel, 0], uv[sel, 1])

    pc = geometry.camera
    u, v, z = pc.project(pc.to_camera(pts))
    j = np.floor(u).astype(np.int64)
    i = np.floor(v).astype(np.int64)
    inside = m & (z > 0) & (j >= 0) & (j < pc.width) & (i >= 0) & (i < pc.height)
    ref = np.full(tx.shape, np.inf)
    ref[inside] = geometry.depth[i[inside], j[inside]]
    lit = inside & (np.abs(ref - z) <= 0.005 + 0.01 * np.abs(z))
    return SurfaceLookup(depth, sid, u - 0.5, v - 0.5, lit, albedo)


def _warp(lum: np.ndarray, depth: np.ndarray, cam: PinholeCamera, power: float, d_e: float):
    """Image seen through the lens at ``power`` and the vergence of every retinal pixel."""
    h, w = lum.shape
    f = cam.focal
    cx, cy = cam.center
    tx, ty = cam.pixel_tangents()

    def depth_at(sx, sy):
        j = np.clip(np.floor(sx * f + cx).astype(np.int64), 0, w - 1)
        i = np.clip(np.floor(sy * f + cy).astype(np.int64), 0, h - 1)
        return depth[i, j]

    d = depth
    for _ in range(3):
        s = breathing(power, np.nan_to_num(d, nan=1.0), d_e)
        sx, sy = s * tx, s * ty
        d = depth_at(sx, sy)
    img = bilinear(lum, sx * f + cx - 0.5, sy * f + cy - 0.5)
    img = np.where(np.isfinite(d), img, 0.0)
    return img, eye_vergence(power, d, d_e)


# ---------------------------------------------------------------------------
# event replay

@dataclass
class EventEnergy:
    kind: str
    eye: str | None
    slice_index: int | None
    energy: float


@dataclass
class RetinalImages:
    eye: str
    camera: PinholeCamera
    accommodations: tuple[float, ...]
    images: dict[float, np.ndarray]
    events: list[EventEnergy]
    pupil: float
    lookup: SurfaceLookup
    total_energy: float

    def image(self, accommodation: float) -> np.ndarray:
        return self.images[accommodation]

    def crosstalk(self) -> float:
        return crosstalk_fraction(self.events, self.eye)

    def calibration(self) -> dict:
        cam = self.camera
        return {
            "eye": self.eye,
            "width": cam.width,
            "height": cam.height,
            "vertical_fov_deg": math.degrees(cam.vertical_fov),
            "focal_px": cam.focal,
            "principal_point_px": list(cam.center),
            "radians_per_pixel_at_center": 1.0 / cam.focal,
            "pupil_diameter_m": self.pupil,
        }

    def save(self, out_dir: str | Path, stem: str | None = None) -> list[Path]:
        """8-bit PNG per accommodation (normalized to the common maximum) plus a JSON sidecar."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = stem or f"retina_{self.eye}"
        peak = max((float(im.max()) for im in self.images.values()), default=0.0)
        paths = []
        for k, a in enumerate(self.accommodations):
            p = out_dir / f"{stem}_acc{int(round(a * 1000)):04d}mm.png"
            img = self.images[a] / peak if peak > 0 else self.images[a]
            paths.append(write_gray(p, img))
        side = out_dir / f"{stem}.json"
        side.write_text(json.dumps(dict(self.calibration(), accommodations_m=list(self.accommodations),
                                        normalization=peak, images=[p.name for p in paths]), indent=2))
        return paths + [side]


def crosstalk_fraction(events: list[EventEnergy], eye: str) -> float:
    """Share of slice-frame energy on the retina of ``eye`` that belongs to the other eye."""
    own = sum(e.energy for e in events if e.kind == PROJECTOR and e.eye == eye)
    other = sum(e.energy for e in events if e.kind == PROJECTOR and e.eye != eye)
    total = own + other
    return other / total if total > 0 else 0.0


def _frame_times(effect: float, frame: float, n: int) -> np.ndarray:
    return effect + frame * ((np.arange(n) + 0.5) / n - 0.5)


def _blur_key(diam: np.ndarray) -> np.ndarray:
    """Quantized blur diameter: fixed steps below 2.5 px, 2% steps above."""
    small = np.round(diam / BLUR_STEP) * BLUR_STEP
    big = 2.5 * np.power(1.02, np.round(np.log(np.maximum(diam, 2.5) / 2.5) / math.log(1.02)))
    return np.where(diam < 2.5, small, big)


def view_through_etl(frames: FrameSet, scene: Scene, chart: TimingChart, waveform: PowerWaveform,
                     eye: str, accommodations, eye_model: EyeModel = EyeModel(),
                     delays: DeviceDelays | None = None, subsamples: int = DEFAULT_SUBSAMPLES,
                     lens_power_override: float | None = None, shutter_override: str | None = None,
                     bypass_validation: bool = False) -> RetinalImages:
    """Integrate one sweep period on the retina of ``eye`` for each accommodation distance.

    Parameters
    ----------
    accommodations : sequence of float
        focus distances measured from the eye, in meters
    delays : DeviceDelays, optional
        true device delays; frames land at ``command_time + projector_delay``
    lens_power_override : float, optional
        hold the lens at a fixed power (the fixed-power baseline)
    shutter_override : {"open"}, optional
        ignore the shutters (both eyes see every frame); needs ``bypass_validation``

    Raises
    ------
    UnvalidatedChartError
        the chart fails ``validate_chart`` and ``bypass_validation`` is not set

    """
    if eye not in (LEFT, RIGHT):
        raise ValueError(f"eye must be left or right, got {eye!r}")
    truth = delays or chart.delays
    if not bypass_validation:
        report = sync.validate_chart(chart, waveform, truth)
        if not report["pass"]:
            failed = [k for k, v in report.items() if isinstance(v, dict) and not v["pass"]]
            raise UnvalidatedChartError(f"chart failed validation: {failed}")
    if shutter_override not in (None, "open"):
        raise ValueError("shutter_override must be None or 'open'")
    if shutter_override is not None and not bypass_validation:
        raise ValueError("shutter_override requires bypass_validation")

    cam = scene.eye_camera(eye)
    d_e = scene.d_e
    tx, ty = cam.pixel_tangents()
    look = surface_lookup(scene, frames.geometry, cam, tx, ty)
    h, w = cam.height, cam.width

    idx_parts, key_parts, val_parts = [], [], []
    events: list[EventEnergy] = []
    for e in chart.events:
        if e.kind == PROJECTOR:
            proj = frames.stack(e.eye).slices[e.slice_index].image
        elif e.kind == ILLUMINATION:
            proj = frames.illumination
        else:
            continue
        eff = e.command_time + truth.projector_delay
        ts = _frame_times(eff, chart.frame_time, subsamples)
        if shutter_override == "open":
            trans = np.ones(subsamples)
        else:
            trans = sync.shutter_transmittance(chart, eye, ts, truth)
        if not np.any(trans > 0):
            events.append(EventEnergy(e.kind, e.eye, e.slice_index, 0.0))
            continue
        lum = look.luminance(proj)
        energy = 0.0
        for t, tr in zip(ts, trans):
            if tr <= 0:
                continue
            p = lens_power_override if lens_power_override is not None else waveform.power_at_time(t)
            img, verg = _warp(lum, look.depth, cam, float(p), d_e)
            img = img * (tr * chart.frame_time / subsamples)
            nz = np.flatnonzero(img > 0)
            if len(nz) == 0:
                continue
            vals = img.ravel()[nz]
            energy += float(vals.sum())
            idx_parts.append(nz)
            key_parts.append(np.round(verg.ravel()[nz] / VERGENCE_BIN).astype(np.int64))
            val_parts.append(vals)
        events.append(EventEnergy(e.kind, e.eye, e.slice_index, energy))

    idx = np.concatenate(idx_parts) if idx_parts else np.zeros(0, np.int64)
    keys = np.concatenate(key_parts) if key_parts else np.zeros(0, np.int64)
    vals = np.concatenate(val_parts) if val_parts else np.zeros(0)
    accs = tuple(float(a) for a in accommodations)
    focal = cam.focal
    images = {}
    for a in accs:
        images[a] = _blur_accumulate(idx, keys, vals, (h, w), 1.0 / a, eye_model.pupil_diameter, focal)
    return RetinalImages(eye, cam, accs, images, events, eye_model.pupil_diameter, look,
                         float(vals.sum()))


def _blur_accumulate(idx, keys, vals, shape, acc_vergence, pupil, focal) -> np.ndarray:
    h, w = shape
    out = np.zeros(shape)
    if len(idx) == 0:
        return out
    uniq, inv = np.unique(keys, return_inverse=True)
    diam = _blur_key(pupil * np.abs(uniq * VERGENCE_BIN - acc_vergence) * focal)
    groups, ginv = np.unique(diam, return_inverse=True)
    gid = ginv[inv]
    order = np.argsort(gid, kind="stable")
    bounds = np.searchsorted(gid[order], np.arange(len(groups) + 1))
    for g, d in enumerate(groups):
        sel = order[bounds[g]:bounds[g + 1]]
        flat = idx[sel]
        rows, cols = np.divmod(flat, w)
        r0, r1, c0, c1 = rows.min(), rows.max() + 1, cols.min(), cols.max() + 1
        crop = np.bincount((rows - r0) * (c1 - c0) + (cols - c0), weights=vals[sel],
                           minlength=(r1 - r0) * (c1 - c0)).reshape(r1 - r0, c1 - c0)
        if d <= 0:
            out[r0:r1, c0:c1] += crop
            continue
        k = disc_kernel(float(d))
        half = k.shape[0] // 2
        full = np.clip(fftconvolve(crop, k, mode="full"), 0.0, None)
        # paste with clipping to the image bounds
        R0, C0 = r0 - half, c0 - half
        a0, b0 = max(R0, 0), max(C0, 0)
        a1, b1 = min(R0 + full.shape[0], h), min(C0 + full.shape[1], w)
        out[a0:a1, b0:b1] += full[a0 - R0:a1 - R0, b0 - C0:b1 - C0]
    return out


# ---------------------------------------------------------------------------
# metrics

def sharpness(image: np.ndarray, mask: np.ndarray, erode: int = 3) -> float:
    """Mean gradient magnitude inside ``mask`` (eroded by ``erode`` pixels)."""
    m = binary_erosion(mask, iterations=erode) if erode > 0 else mask
    if not np.any(m):
        return float("nan")
    gy, gx = np.gradient(image)
    return float(np.hypot(gx, gy)[m].mean())


def object_mask(frames: FrameSet, eye: str, object_index: int) -> np.ndarray:
    return frames.stack(eye).view.object_id == object_index


def surface_mask(result: RetinalImages, surface_index: int) -> np.ndarray:
    return result.lookup.surface_id == surface_index


@dataclass
class BoundaryEntry:
    eye: str
    lower_index: int
    inner_index: int
    outer_index: int
    inner_power: float
    outer_power: float
    theta_inner: float      # radians, far edge of the inner part
    theta_outer: float      # radians, near edge of the outer part
    mismatch: float         # radians; positive = overlap, negative = gap
    mismatch_px: float

    @property
    def predicted_overlap(self) -> bool:
        return self.inner_power > self.outer_power

    def to_dict(self) -> dict:
        return dict(self.__dict__, predicted_overlap=self.predicted_overlap)


def _crossing(t: np.ndarray, y: np.ndarray, lo: float, hi: float) -> float | None:
    """Position of the 0.5 crossing of ``y`` between ``lo`` and ``hi`` (linear interpolation)."""
    s = np.sign(y - 0.5)
    cand = np.flatnonzero((s[:-1] != s[1:]) & (s[:-1] != 0) | (s[:-1] == 0))
    best = None
    mid = 0.5 * (lo + hi)
    for k in cand:
        if s[k] == 0:
            x = t[k]
        else:
            x = t[k] + (0.5 - y[k]) * (t[k + 1] - t[k]) / (y[k + 1] - y[k])
        if min(lo, hi) <= x <= max(lo, hi) and (best is None or abs(x - mid) < abs(best - mid)):
            best = x
    return best


def boundary_continuity(frames: FrameSet, scene: Scene, eye: str, row_tan: float = 0.0,
                        supersample: int = 8) -> list[BoundaryEntry]:
    """Signed angular mismatch between adjacent slices along one retinal row.

    Every slice is re-rendered with unit radiance and looked at through the
    lens at its own sampled power with a pinhole eye. The boundary between
    slices n and n+1 is where each reaches half weight; the mismatch is the
    inner part's far edge minus the outer part's near edge (as absolute
    visual angles), so overlaps are positive and gaps negative.
    """
    stack = frames.stack(eye)
    view = stack.view
    samples = frames.samples
    if len(samples) < 2:
        return []
    unit = np.where(view.object_mask, 1.0, 0.0)
    ss = slice_and_filter(unit, view.object_depth, view.surface_depth, samples)
    bin_width = stack.compensated[0].bin_width if stack.compensated else 0.05
    comp = compensate_and_project(ss.slices, view, samples, bin_width, enabled=frames.compensation)
    proj = render_projector_view(comp, frames.geometry)

    cam = view.camera
    n_px = cam.width * supersample
    t = ((np.arange(n_px) + 0.5) / supersample - cam.center[0]) / cam.focal
    ty0 = np.full_like(t, row_tan)
    base = surface_lookup(scene, frames.geometry, cam, t, ty0)
    rows = []
    for n, v in enumerate(samples.powers):
        d = base.depth
        for _ in range(3):
            s = breathing(v, np.nan_to_num(d, nan=1.0), scene.d_e)
            look = surface_lookup(scene, frames.geometry, cam, s * t, s * ty0)
            d = look.depth
        rows.append(look.luminance(proj[n], with_albedo=False))
    rows = np.array(rows)

    out = []
    for n in range(len(samples) - 1):
        a, b = rows[n], rows[n + 1]
        if a.sum() == 0 or b.sum() == 0:
            continue
        ca = float((a * t).sum() / a.sum())
        cb = float((b * t).sum() / b.sum())
        xa = _crossing(t, a, ca, cb)
        xb = _crossing(t, b, ca, cb)
        if xa is None or xb is None:
            continue
        inner, outer = (n, n + 1) if abs(ca) < abs(cb) else (n + 1, n)
        th = {n: math.atan(xa), n + 1: math.atan(xb)}
        mis = abs(th[inner]) - abs(th[outer])
        out.append(BoundaryEntry(eye, n, inner, outer, samples.powers[inner], samples.powers[outer],
                                 th[inner], th[outer], mis, mis * cam.focal))
    return out


@dataclass
class FocusReport:
    entries: list[dict] = field(default_factory=list)
    boundaries: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, **entry) -> None:
        self.entries.append(entry)

    def to_dict(self) -> dict:
        return {"entries": self.entries, "boundaries": self.boundaries, "meta": self.meta}

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, default=_jsonable)
        if path is not None:
            Path(path).write_text(text)
        return text


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def best_focus(accommodations, values, level: float = 0.5) -> float:
    """Accommodation at the center of the sharpness peak.

    The peak is bracketed where the curve (taken over vergence ``1/a``)
    crosses ``floor + level * (max - floor)``; the midpoint of the bracket in
    diopters is returned as a distance. Blur grows with the absolute
    dioptric error, so the curve is symmetric about the true focus and the
    midpoint is insensitive to a flat top. ``floor`` is the higher of the
    two minima on either side of the peak, so a grid that extends further
    on one side does not push the bracket against the other end.
    """
    a = np.asarray(accommodations, float)
    s = np.asarray(values, float)
    order = np.argsort(1.0 / a)
    x = 1.0 / a[order]
    y = s[order]
    k = int(np.argmax(y))
    floor = max(y[:k + 1].min(), y[k:].min())
    thr = floor + level * (y.max() - floor)
    lo = k
    while lo > 0 and y[lo - 1] >= thr:
        lo -= 1
    hi = k
    while hi < len(y) - 1 and y[hi + 1] >= thr:
        hi += 1
    xl = x[lo] if lo == 0 else x[lo - 1] + (thr - y[lo - 1]) * (x[lo] - x[lo - 1]) / (y[lo] - y[lo - 1])
    xh = x[hi] if hi == len(y) - 1 else x[hi] + (y[hi] - thr) * (x[hi + 1] - x[hi]) / (y[hi] - y[hi + 1])
    return 1.0 / (0.5 * (xl + xh))
