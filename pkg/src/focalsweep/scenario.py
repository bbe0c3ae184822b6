"""Glue between the pipeline stages: lens waveform, timing chart, frames and retina."""

from __future__ import annotations

from dataclasses import dataclass

from . import etl, sync
from .etl import LTIResponse, PowerWaveform
from .optics import PowerSamples
from .render.pipeline import FrameSet, render_frame_set
from .render.scene import Scene
from .retina import EyeModel, RetinalImages, view_through_etl
from .sync import DeviceDelays, ProjectorSpec, TimingChart

DEFAULT_LTI = LTIResponse(dc_gain=200.0, cutoff=200.0, order=2)
WAVEFORM_RESOLUTION = 1024


@dataclass
class Plan:
    samples: PowerSamples
    waveform: PowerWaveform
    chart: TimingChart
    delays: DeviceDelays
    fixed_power: float | None = None


def sweep_waveform(samples: PowerSamples, delays: DeviceDelays = DeviceDelays(), f: float = 60.0,
                   lti: LTIResponse = DEFAULT_LTI, spec: ProjectorSpec = ProjectorSpec(),
                   resolution: int = WAVEFORM_RESOLUTION) -> PowerWaveform:
    """Simulated lens response to the drive calibrated for ``samples``."""
    target = sync.required_waveform_range(samples, delays, f, spec)
    drive = etl.calibrate_drive(target, lti, f)
    return etl.simulate_response(drive, lti, resolution)


def make_plan(samples: PowerSamples, delays: DeviceDelays = DeviceDelays(), f: float = 60.0,
              lti: LTIResponse = DEFAULT_LTI, spec: ProjectorSpec = ProjectorSpec(),
              waveform: PowerWaveform | None = None, fixed_power: float | None = None) -> Plan:
    """Waveform plus timing chart. With ``fixed_power`` one slice per eye is scheduled at that power
    and the lens is held there during replay."""
    if fixed_power is not None:
        samples = PowerSamples((float(fixed_power),))
    wf = waveform if waveform is not None else sweep_waveform(samples, delays, f, lti, spec)
    chart = sync.build_chart(wf, samples, delays, f, spec)
    return Plan(samples, wf, chart, delays, fixed_power)


def render_for_plan(scene: Scene, plan: Plan, compensation: bool = True) -> FrameSet:
    return render_frame_set(scene, plan.samples, compensation=compensation and plan.fixed_power is None)


def simulate(frames: FrameSet, scene: Scene, plan: Plan, eye: str, accommodations,
             eye_model: EyeModel = EyeModel(), **kw) -> RetinalImages:
    return view_through_etl(frames, scene, plan.chart, plan.waveform, eye, accommodations, eye_model,
                            lens_power_override=plan.fixed_power, **kw)
