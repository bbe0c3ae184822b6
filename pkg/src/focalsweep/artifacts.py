"""On-disk artifacts: rendered frame sets, timing charts and lens waveforms.

Float data goes into ``.npz`` archives (lossless); 8-bit PNGs are written
next to them for inspection only. Loading a frame set back re-derives the
cheap geometric products (eye views, projector geometry) from the scene.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .etl import PowerWaveform, load_measured_waveform
from .imageio import write_gray
from .optics import PowerSamples
from .render.pipeline import (FrameSet, Slice, SliceStack, compensate_and_project, projector_geometry,
                              render_observer_view, slice_and_filter)
from .render.scene import LEFT, RIGHT, Scene
from .sync import TimingChart

MANIFEST = "manifest.json"
FRAMES = "frames.npz"
CHART_JSON = "chart.json"
CHART_CSV = "chart.csv"
WAVEFORM_CSV = "waveform.csv"

UNITS = {
    "power": "diopters",
    "distance": "meters",
    "time": "seconds",
    "radiance": "relative, [0, 1]",
}


def sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_frames(frames: FrameSet, out_dir: str | Path, extra: dict | None = None) -> dict:
    """Write slice images (npz + PNG) and the manifest binding them to powers and eyes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arrays = {"illumination": frames.illumination}
    entries = []
    for stack in (frames.left, frames.right):
        for n, s in enumerate(stack.slices):
            key = f"{stack.eye}_{n:02d}"
            arrays[key] = s.image
            png = out / f"slice_{key}.png"
            write_gray(png, s.image)
            entries.append({"eye": stack.eye, "index": n, "power_D": s.power,
                            "fov_factor": s.fov_factor, "display_rank": stack.display_order().index(n),
                            "array": key, "png": png.name})
    write_gray(out / "illumination.png", frames.illumination)
    np.savez_compressed(out / FRAMES, **arrays)
    manifest = {
        "units": UNITS,
        "samples_D": list(frames.samples.powers),
        "compensation": frames.compensation,
        "slices": entries,
        "illumination": {"array": "illumination", "png": "illumination.png"},
        "arrays": FRAMES,
        "diagnostics": {eye: frames.stack(eye).view.diagnostics for eye in (LEFT, RIGHT)},
    }
    if extra:
        manifest.update(extra)
    manifest["sha256"] = {FRAMES: sha256(out / FRAMES)}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2))
    return manifest


def load_frames(out_dir: str | Path, scene: Scene, bin_width: float = 0.05) -> FrameSet:
    """Frame set whose projector images come from disk; views are re-rendered from ``scene``."""
    out = Path(out_dir)
    manifest = json.loads((out / MANIFEST).read_text())
    samples = PowerSamples(tuple(manifest["samples_D"]))
    comp = bool(manifest["compensation"])
    with np.load(out / FRAMES) as z:
        arrays = {k: z[k] for k in z.files}
    geom = projector_geometry(scene)
    stacks = {}
    for eye in (LEFT, RIGHT):
        view = render_observer_view(scene, eye)
        ss = slice_and_filter(view.color, view.object_depth, view.surface_depth, samples)
        cs = compensate_and_project(ss.slices, view, samples, bin_width, enabled=comp)
        slices = []
        for e in sorted((e for e in manifest["slices"] if e["eye"] == eye), key=lambda e: e["index"]):
            n = e["index"]
            slices.append(Slice(e["power_D"], arrays[e["array"]], e["fov_factor"], ss.slices[n]))
        stacks[eye] = SliceStack(eye, slices, view, cs, ss)
    return FrameSet(stacks[LEFT], stacks[RIGHT], arrays["illumination"], samples, geom, comp)


def save_chart(chart: TimingChart, waveform: PowerWaveform, out_dir: str | Path,
               diagnostics: dict | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / CHART_CSV).write_text(chart.to_csv())
    (out / CHART_JSON).write_text(chart.to_json(diagnostics))
    waveform.to_csv(out / WAVEFORM_CSV)


def load_chart(out_dir: str | Path, frequency: float) -> tuple[TimingChart, PowerWaveform]:
    out = Path(out_dir)
    chart = TimingChart.from_dict(json.loads((out / CHART_JSON).read_text()))
    return chart, load_measured_waveform(out / WAVEFORM_CSV, frequency)


def has_render(out_dir: str | Path) -> bool:
    return (Path(out_dir) / MANIFEST).exists() and (Path(out_dir) / FRAMES).exists()


def has_schedule(out_dir: str | Path) -> bool:
    return (Path(out_dir) / CHART_JSON).exists() and (Path(out_dir) / WAVEFORM_CSV).exists()
