"""Timing chart for the projector, LC shutters and swept lenses.

Time zero is the drive phase zero. The left eye sees the rising half of the
power waveform and the right eye the falling half. Each projector frame is
centered on its ``effect_time``; shutter transitions are centered on the
waveform extrema, where the power changes slowest.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .etl import DOWN, UP, PowerWaveform
from .optics import PowerSamples, SweepRange

LEFT = "left"
RIGHT = "right"
EYES = (LEFT, RIGHT)
SEGMENT_OF_EYE = {LEFT: UP, RIGHT: DOWN}

PROJECTOR = "projector"
SHUTTER = "shutter"
ILLUMINATION = "illumination"

OPEN = "open"
CLOSE = "close"

POWER_TOLERANCE = 0.02
DEFAULT_CFF = 60.0
GUARD_MARGIN = 20e-6


class SchedulingConflictError(ValueError):
    def __init__(self, conflicts: list[str]):
        self.conflicts = conflicts
        super().__init__("scheduling conflict:\n  " + "\n  ".join(conflicts))


@dataclass(frozen=True)
class DeviceDelays:
    """Command-to-effect latencies in seconds."""

    projector_delay: float = 0.15e-3
    shutter_close_delay: float = 0.1e-3
    shutter_open_delay: float = 3.0e-3

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value >= 0:
                raise ValueError(f"{name} must be non-negative, got {value}")


@dataclass(frozen=True)
class ProjectorSpec:
    fps: float = 2000.0
    bit_depth: int = 8
    grayscale: bool = True

    def __post_init__(self):
        if not self.fps > 0:
            raise ValueError("fps must be positive")

    @property
    def frame_time(self) -> float:
        return 1.0 / self.fps


def frames_per_period(spec: ProjectorSpec, f: float) -> int:
    """Number of whole projector frames in one sweep period."""
    if not f > 0:
        raise ValueError("sweep frequency must be positive")
    # guard against 2000/2000 landing a hair below an integer
    return int(math.floor(spec.fps / f + 1e-9))


def per_eye_budget(spec: ProjectorSpec, f: float) -> int:
    """Slices each eye may use: half the frames minus one illumination slot."""
    return frames_per_period(spec, f) // 2 - 1


@dataclass(frozen=True)
class Event:
    kind: str
    command_time: float
    effect_time: float
    eye: str | None = None
    slice_index: int | None = None
    target_power: float | None = None
    state: str | None = None

    def as_row(self) -> dict:
        return {
            "kind": self.kind,
            "eye": self.eye or "",
            "slice": "" if self.slice_index is None else self.slice_index,
            "state": self.state or "",
            "command_time_s": repr(float(self.command_time)),
            "effect_time_s": repr(float(self.effect_time)),
            "target_power_D": "" if self.target_power is None else repr(float(self.target_power)),
        }


@dataclass(frozen=True)
class TimingChart:
    period: float
    events: tuple[Event, ...]
    delays: DeviceDelays
    frame_time: float
    samples: tuple[float, ...] = ()
    meta: dict = field(default_factory=dict, compare=False)

    def of_kind(self, kind: str) -> list[Event]:
        return [e for e in self.events if e.kind == kind]

    def projector_events(self, eye: str | None = None) -> list[Event]:
        return [e for e in self.events if e.kind == PROJECTOR and (eye is None or e.eye == eye)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["kind", "eye", "slice", "state", "command_time_s", "effect_time_s", "target_power_D"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for e in self.events:
            w.writerow(e.as_row())
        return buf.getvalue()

    def to_dict(self, diagnostics: dict | None = None) -> dict:
        d = {
            "period_s": self.period,
            "frame_time_s": self.frame_time,
            "delays_s": asdict(self.delays),
            "samples_D": list(self.samples),
            "events": [asdict(e) for e in self.events],
        }
        if diagnostics is not None:
            d["diagnostics"] = diagnostics
        return d

    def to_json(self, diagnostics: dict | None = None) -> str:
        return json.dumps(self.to_dict(diagnostics), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "TimingChart":
        return cls(
            period=d["period_s"],
            events=tuple(Event(**e) for e in d["events"]),
            delays=DeviceDelays(**d["delays_s"]),
            frame_time=d["frame_time_s"],
            samples=tuple(d.get("samples_D", ())),
        )


def _wrap(t: float, period: float) -> float:
    t = math.fmod(t, period)
    if t < 0:
        t += period
    # fmod can return exactly ``period`` after the correction above
    return 0.0 if t >= period else t


def shutter_windows(chart: TimingChart, eye: str) -> list[tuple[float, float, str]]:
    """Transition windows ``(start, end, new_state)`` for one eye, unwrapped."""
    out = []
    for e in chart.events:
        if e.kind == SHUTTER and e.eye == eye:
            start = e.command_time
            end = start + (e.effect_time - e.command_time) % chart.period
            out.append((start, end, e.state))
    return sorted(out)


def shutter_transmittance(chart: TimingChart, eye: str, t, delays: DeviceDelays | None = None) -> np.ndarray:
    """Shutter openness in [0, 1] at times ``t``; transitions ramp linearly.

    When ``delays`` is given, the effect times are recomputed from the
    command times with those delays (the physical truth) rather than taken
    from the chart.
    """
    t = np.mod(np.asarray(t, dtype=float), chart.period)
    trans = []
    for e in chart.events:
        if e.kind != SHUTTER or e.eye != eye:
            continue
        if delays is None:
            dur = (e.effect_time - e.command_time) % chart.period
        else:
            dur = delays.shutter_open_delay if e.state == OPEN else delays.shutter_close_delay
        trans.append((e.command_time, dur, e.state))
    if not trans:
        return np.ones_like(t)
    trans.sort()
    # state at t is decided by the latest transition started before t (cyclically)
    starts = np.array([s for s, _, _ in trans])
    k = np.searchsorted(starts, t, side="right") - 1
    k = np.where(k < 0, len(trans) - 1, k)
    out = np.empty_like(t)
    for i, (s, dur, state) in enumerate(trans):
        sel = k == i
        if not np.any(sel):
            continue
        elapsed = np.mod(t[sel] - s, chart.period)
        frac = np.clip(elapsed / dur, 0.0, 1.0) if dur > 0 else np.ones_like(elapsed)
        out[sel] = frac if state == OPEN else 1.0 - frac
    return out


def required_waveform_range(samples: PowerSamples, delays: DeviceDelays, f: float,
                            spec: ProjectorSpec = ProjectorSpec()) -> SweepRange:
    """Sinusoidal sweep range that keeps every slice clear of shutter transitions.

    Around each extremum one shutter opens (slowest transition) while the
    other closes. The extreme samples must be reached at least half a
    transition plus half a frame (plus a small margin for waveform
    discretization) away from the extremum.
    """
    guard = (0.5 * max(delays.shutter_open_delay, delays.shutter_close_delay)
             + 0.5 * spec.frame_time + GUARD_MARGIN)
    angle = 2.0 * math.pi * f * guard
    if angle >= math.pi / 2:
        raise SchedulingConflictError(
            [f"shutter guard {guard * 1e3:.2f} ms exceeds a quarter period at {f} Hz"])
    lo, hi = samples.powers[0], samples.powers[-1]
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) / math.cos(angle)
    # a small floor keeps single-sample plans sweeping
    half = max(half, 0.25)
    return SweepRange(center - half, center + half)


def segment_at(waveform: PowerWaveform, t: float) -> str:
    """Monotone segment (UP or DOWN) the waveform is on at time ``t``."""
    ph = float(waveform.phase_of_time(t)) % (2.0 * math.pi)
    since_min = (ph - waveform.phase_of_min) % (2.0 * math.pi)
    rise = (waveform.phase_of_max - waveform.phase_of_min) % (2.0 * math.pi)
    return UP if since_min < rise else DOWN


def zero_crossings(waveform: PowerWaveform) -> list[tuple[str, float]]:
    """Phases where the power crosses zero, tagged with the segment they lie on."""
    out = []
    for seg in (UP, DOWN):
        if waveform.v_min <= 0.0 <= waveform.v_max:
            out.append((seg, waveform.phases_for_power(0.0, seg)))
    return out


def build_chart(waveform: PowerWaveform, samples: PowerSamples,
                delays: DeviceDelays = DeviceDelays(), f: float | None = None,
                spec: ProjectorSpec = ProjectorSpec(),
                use_both_crossings: bool = True) -> TimingChart:
    """Schedule one sweep period of projector, shutter and illumination events.

    Raises
    ------
    PowerRangeError
        a sampled power is not reached by the waveform
    SchedulingConflictError
        the frame budget is exceeded or a frame overlaps a shutter transition

    """
    if f is None:
        f = waveform.frequency
    period = 1.0 / f
    frame = spec.frame_time
    budget = per_eye_budget(spec, f)
    if len(samples) > budget:
        raise SchedulingConflictError(
            [f"{len(samples)} slices per eye exceed the budget of {budget} at {spec.fps:g} fps, {f:g} Hz"])

    def to_time(phase: float) -> float:
        return _wrap(phase / (2.0 * math.pi * f), period)

    events: list[Event] = []
    for eye in EYES:
        seg = SEGMENT_OF_EYE[eye]
        for n, v in enumerate(samples.powers):
            effect = to_time(waveform.phases_for_power(v, seg))
            events.append(Event(PROJECTOR, _wrap(effect - delays.projector_delay, period), effect,
                                eye=eye, slice_index=n, target_power=v))

    t_min = to_time(waveform.phase_of_min)
    t_max = to_time(waveform.phase_of_max)
    # left opens at the trough and closes at the peak; right does the reverse
    for eye, t_open, t_close in ((LEFT, t_min, t_max), (RIGHT, t_max, t_min)):
        d_o, d_c = delays.shutter_open_delay, delays.shutter_close_delay
        events.append(Event(SHUTTER, _wrap(t_open - d_o / 2, period), _wrap(t_open + d_o / 2, period),
                            eye=eye, state=OPEN))
        events.append(Event(SHUTTER, _wrap(t_close - d_c / 2, period), _wrap(t_close + d_c / 2, period),
                            eye=eye, state=CLOSE))

    crossings = zero_crossings(waveform)
    if not use_both_crossings:
        crossings = crossings[:1]
    for seg, phase in crossings:
        effect = to_time(phase)
        eye = LEFT if seg == UP else RIGHT
        events.append(Event(ILLUMINATION, _wrap(effect - delays.projector_delay, period), effect,
                            eye=eye, target_power=0.0))

    events.sort(key=lambda e: (e.effect_time, e.kind, e.eye or "", e.slice_index or 0))
    chart = TimingChart(period, tuple(events), delays, frame, tuple(samples.powers),
                        meta={"frequency_hz": f, "fps": spec.fps})
    conflicts = _shutter_conflicts(chart, delays)
    if conflicts:
        raise SchedulingConflictError(conflicts)
    return chart


def _frame_samples(effect: float, frame: float, n: int = 9) -> np.ndarray:
    return effect + frame * (np.linspace(-0.5, 0.5, n))


def _shutter_conflicts(chart: TimingChart, delays: DeviceDelays | None) -> list[str]:
    """Frames shown while their eye is not fully open or the other eye is not shut."""
    out = []
    for e in chart.events:
        if e.kind not in (PROJECTOR, ILLUMINATION):
            continue
        eff = e.effect_time
        if delays is not None:
            eff = e.command_time + delays.projector_delay
        ts = _frame_samples(eff, chart.frame_time)
        own = shutter_transmittance(chart, e.eye, ts, delays)
        other = shutter_transmittance(chart, RIGHT if e.eye == LEFT else LEFT, ts, delays)
        label = f"{e.kind} eye={e.eye} slice={e.slice_index} t={eff * 1e3:.3f} ms"
        if np.any(own < 1.0):
            out.append(f"{label}: {e.eye} shutter not fully open (min {own.min():.2f})")
        if np.any(other > 0.0):
            out.append(f"{label}: opposite shutter not fully closed (max {other.max():.2f})")
    return out


def validate_chart(chart: TimingChart, waveform: PowerWaveform,
                   delays: DeviceDelays | None = None, cff: float = DEFAULT_CFF,
                   tol: float = POWER_TOLERANCE) -> dict:
    """Check a chart against the waveform and (optionally) the true device delays.

    Returns a report ``{check_name: {"pass": bool, ...}}`` plus an overall
    ``"pass"`` flag. Nothing is raised.
    """
    truth = delays if delays is not None else chart.delays
    report: dict = {}

    errors = []
    for e in chart.projector_events():
        eff = e.command_time + truth.projector_delay
        err = waveform.power_at_time(eff) - e.target_power
        errors.append({"eye": e.eye, "slice": e.slice_index, "error_D": float(err)})
    worst = max((abs(x["error_D"]) for x in errors), default=0.0)
    report["trigger_power"] = {"pass": worst <= tol, "max_abs_error_D": worst,
                               "tolerance_D": tol, "triggers": errors}

    conflicts = _shutter_conflicts(chart, truth)
    report["shutter_gating"] = {"pass": not conflicts, "conflicts": conflicts}

    illum = [abs(waveform.power_at_time(e.command_time + truth.projector_delay))
             for e in chart.of_kind(ILLUMINATION)]
    worst_illum = max(illum, default=0.0)
    report["illumination_power"] = {"pass": bool(illum) and worst_illum <= tol,
                                    "max_abs_power_D": worst_illum, "count": len(illum)}

    f = 1.0 / chart.period
    report["flicker_fusion"] = {"pass": f >= cff - 1e-9, "frequency_hz": f, "threshold_hz": cff}

    mismatch = []
    for e in chart.events:
        if e.kind == SHUTTER:
            d = truth.shutter_open_delay if e.state == OPEN else truth.shutter_close_delay
        else:
            d = truth.projector_delay
        expect = _wrap(e.command_time + d, chart.period)
        gap = abs(expect - e.effect_time)
        gap = min(gap, chart.period - gap)
        if gap > 1e-6:
            mismatch.append(f"{e.kind} eye={e.eye} slice={e.slice_index}: "
                            f"effect off by {gap * 1e3:.3f} ms")
    report["delay_consistency"] = {"pass": not mismatch, "mismatches": mismatch}

    frames = sorted((e.command_time + truth.projector_delay) % chart.period
                    for e in chart.events if e.kind in (PROJECTOR, ILLUMINATION))
    overlaps = []
    for a, b in zip(frames, frames[1:] + [frames[0] + chart.period] if frames else []):
        # coincident frames are composited into one (slice at 0 D plus illumination)
        if 1e-9 < b - a < chart.frame_time - 1e-9:
            overlaps.append(f"frames at {a * 1e3:.3f} and {b * 1e3:.3f} ms overlap")
    report["frame_slots"] = {"pass": not overlaps, "overlaps": overlaps}

    report["pass"] = all(v["pass"] for v in report.values() if isinstance(v, dict))
    return report


def relabel_segments(chart: TimingChart) -> TimingChart:
    """Swap the eye labels of every event (used to check left/right symmetry)."""
    swap = {LEFT: RIGHT, RIGHT: LEFT, None: None}
    return replace(chart, events=tuple(replace(e, eye=swap[e.eye]) for e in chart.events))


def mirror_waveform(waveform: PowerWaveform) -> PowerWaveform:
    """Time-reversed waveform: its rising half is the original falling half."""
    ph = np.mod(-waveform.phases, 2 * math.pi)
    order = np.argsort(ph)
    return PowerWaveform(ph[order], waveform.powers[order], waveform.period)


def trigger_power_errors(chart: TimingChart, waveform: PowerWaveform,
                         delays: DeviceDelays | None = None) -> np.ndarray:
    truth = delays or chart.delays
    return np.array([waveform.power_at_time(e.command_time + truth.projector_delay) - e.target_power
                     for e in chart.projector_events()])


def event_counts(chart: TimingChart) -> dict[str, int]:
    out: dict[str, int] = {}
    for e in chart.events:
        out[e.kind] = out.get(e.kind, 0) + 1
    return out


def chart_from_csv(text: str, period: float, delays: DeviceDelays, frame_time: float,
                   samples: Sequence[float] = ()) -> TimingChart:
    rows = list(csv.DictReader(io.StringIO(text)))
    events = []
    for r in rows:
        events.append(Event(
            kind=r["kind"],
            command_time=float(r["command_time_s"]),
            effect_time=float(r["effect_time_s"]),
            eye=r["eye"] or None,
            slice_index=int(r["slice"]) if r["slice"] != "" else None,
            target_power=float(r["target_power_D"]) if r["target_power_D"] != "" else None,
            state=r["state"] or None,
        ))
    return TimingChart(period, tuple(events), delays, frame_time, tuple(samples))
