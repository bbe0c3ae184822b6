"""Run configuration: one JSON file plus command-line overrides.

Schema (all keys optional)::

    {
      "scene": "sec43-bunnies" | "path/to/scene.json",
      "timeline": "path/to/poses.csv",
      "eye_size": [800, 600],
      "projector_size": [1024, 768],
      "seed": 0,
      "frequency_hz": 60.0,
      "sweep": {"d_p": 0.5, "d_vn": 0.16667, "d_vf": null},
      "samples": {"powers": [-1.0, 0.0, 1.0]} | {"count": 7},
      "waveform": {"type": "simulated", "dc_gain": 200.0, "cutoff_hz": 200.0,
                   "order": 2, "resolution": 1024}
                | {"type": "measured", "path": "waveform.csv"},
      "delays_ms": {"projector": 0.15, "shutter_close": 0.1, "shutter_open": 3.0},
      "projector_fps": 2000,
      "eye": {"pupil_diameter_m": 0.004, "subsamples": 8},
      "accommodation_m": [0.353, 0.52, 1.02],
      "compensation": true,
      "fixed_power": null,
      "bin_width_m": 0.05,
      "out": "out"
    }

``d_vf: null`` means optical infinity. Distances are meters, powers
diopters, times seconds unless the key says otherwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import etl, optics
from .etl import LTIResponse, PowerWaveform
from .fixtures import FIXTURES, Fixture, load_fixture
from .optics import PowerSamples
from .render.scene import load_scene
from .render.timeline import load_timeline
from .retina import EyeModel
from .sync import DeviceDelays, ProjectorSpec


class ConfigError(ValueError):
    """Invalid or missing configuration (a usage error)."""


@dataclass
class RunConfig:
    scene: str = "sec43-bunnies"
    timeline: str | None = None
    eye_size: tuple[int, int] | None = None
    projector_size: tuple[int, int] | None = None
    seed: int = 0
    frequency_hz: float = 60.0
    sweep: dict = field(default_factory=lambda: {"d_p": 0.5, "d_vn": 1.0 / 6.0, "d_vf": None})
    samples: dict | None = None
    waveform: dict = field(default_factory=lambda: {"type": "simulated", "dc_gain": 200.0,
                                                    "cutoff_hz": 200.0, "order": 2,
                                                    "resolution": 1024})
    delays_ms: dict = field(default_factory=lambda: {"projector": 0.15, "shutter_close": 0.1,
                                                     "shutter_open": 3.0})
    projector_fps: float = 2000.0
    eye: dict = field(default_factory=lambda: {"pupil_diameter_m": 0.004, "subsamples": 8})
    accommodation_m: list[float] | None = None
    compensation: bool = True
    fixed_power: float | None = None
    bin_width_m: float = 0.05
    out: str = "out"
    base_dir: str = "."

    # -- derived objects --------------------------------------------------

    def validate(self) -> None:
        if not self.frequency_hz > 0:
            raise ConfigError("frequency_hz must be positive")
        if self.bin_width_m <= 0:
            raise ConfigError("bin_width_m must be positive")
        if self.scene not in FIXTURES and not self._path(self.scene).exists():
            raise ConfigError(f"scene {self.scene!r} is neither a built-in fixture nor an existing file")
        if self.timeline and not self._path(self.timeline).exists():
            raise ConfigError(f"timeline file {self.timeline} not found")
        if self.waveform.get("type") == "measured" and not self._path(self.waveform.get("path", "")).exists():
            raise ConfigError(f"measured waveform {self.waveform.get('path')!r} not found")
        if self.waveform.get("type") not in ("simulated", "measured"):
            raise ConfigError(f"unknown waveform type {self.waveform.get('type')!r}")

    def _path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else Path(self.base_dir) / q

    @property
    def delays(self) -> DeviceDelays:
        d = self.delays_ms
        return DeviceDelays(d.get("projector", 0.15) * 1e-3, d.get("shutter_close", 0.1) * 1e-3,
                            d.get("shutter_open", 3.0) * 1e-3)

    @property
    def projector_spec(self) -> ProjectorSpec:
        return ProjectorSpec(fps=self.projector_fps)

    @property
    def eye_model(self) -> EyeModel:
        return EyeModel(float(self.eye.get("pupil_diameter_m", 0.004)))

    @property
    def subsamples(self) -> int:
        return int(self.eye.get("subsamples", 8))

    def sweep_range(self) -> optics.SweepRange:
        s = self.sweep
        d_vf = s.get("d_vf")
        return optics.sweep_range(float(s.get("d_p", 0.5)), float(s.get("d_vn", 1.0 / 6.0)),
                                  math.inf if d_vf is None else float(d_vf))

    def fixture(self) -> Fixture:
        """The scene (built-in or loaded) with its default samples and timeline."""
        kw = {"seed": self.seed}
        if self.eye_size:
            kw["size"] = tuple(self.eye_size)
        if self.scene in FIXTURES:
            if self.projector_size:
                kw["projector_size"] = tuple(self.projector_size)
            fx = load_fixture(self.scene, **kw)
        else:
            scene = load_scene(self._path(self.scene))
            if self.eye_size:
                scene = scene.with_observer(width=int(self.eye_size[0]), height=int(self.eye_size[1]))
            fx = Fixture(scene.name, scene, self._default_samples())
        if self.timeline:
            fx.timeline = load_timeline(self._path(self.timeline))
        if self.samples is not None:
            fx.samples = self.power_samples()
        return fx

    def _default_samples(self) -> PowerSamples:
        return optics.sample_powers(self.sweep_range(), 7)

    def power_samples(self) -> PowerSamples:
        if self.samples is None:
            return self.fixture().samples
        if "powers" in self.samples:
            return PowerSamples(tuple(float(p) for p in self.samples["powers"]))
        if "count" in self.samples:
            return optics.sample_powers(self.sweep_range(), int(self.samples["count"]))
        raise ConfigError("samples needs 'powers' or 'count'")

    def lti(self) -> LTIResponse:
        w = self.waveform
        return LTIResponse(float(w.get("dc_gain", 200.0)), float(w.get("cutoff_hz", 200.0)),
                           int(w.get("order", 2)))

    def measured_waveform(self) -> PowerWaveform | None:
        if self.waveform.get("type") != "measured":
            return None
        return etl.load_measured_waveform(self._path(self.waveform["path"]), self.frequency_hz)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config (if given) and apply ``overrides`` (flags win)."""
    data: dict = {}
    base = "."
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        text = path.read_text()
        if not text.strip():
            raise ConfigError(f"config file {path} is empty")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from None
        if not isinstance(data, dict) or not data:
            raise ConfigError(f"config file {path} is empty or not a JSON object")
        base = str(path.parent)
    known = set(RunConfig.__dataclass_fields__) - {"base_dir"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    cfg = RunConfig(**data, base_dir=base)
    cfg.validate()
    return cfg
