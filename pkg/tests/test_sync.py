import json
import math
from dataclasses import replace

import numpy as np
import pytest

from focalsweep import etl, sync
from focalsweep.optics import PowerSamples
from focalsweep.scenario import make_plan, sweep_waveform
from focalsweep.sync import (CLOSE, ILLUMINATION, LEFT, OPEN, PROJECTOR, RIGHT, SHUTTER, DeviceDelays,
                             ProjectorSpec, SchedulingConflictError)

SEVEN = PowerSamples((-1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0))
DELAYS = DeviceDelays(0.15e-3, 0.1e-3, 3.0e-3)


@pytest.fixture(scope="module")
def plan():
    return make_plan(SEVEN, DELAYS)


def test_frame_budget():
    assert sync.frames_per_period(ProjectorSpec(2000), 60.0) == 33
    assert sync.frames_per_period(ProjectorSpec(2000), 2000.0) == 1
    # half of 33 frames is 16; one slot per half-period is kept for illumination
    assert sync.per_eye_budget(ProjectorSpec(2000), 60.0) == 15
    with pytest.raises(ValueError):
        sync.frames_per_period(ProjectorSpec(), 0.0)


def test_budget_exceeded():
    wf = sweep_waveform(SEVEN)
    many = PowerSamples(tuple(np.linspace(-1, 2, 20)))
    with pytest.raises(SchedulingConflictError, match="budget"):
        sync.build_chart(wf, many, DELAYS)


def test_phase_lead_on_every_trigger(plan):
    lead = 2 * math.pi * 60 * 1.5e-4
    assert lead == pytest.approx(0.0565, abs=1e-4)
    for e in plan.chart.of_kind(PROJECTOR) + plan.chart.of_kind(ILLUMINATION):
        dt = (e.effect_time - e.command_time) % plan.chart.period
        assert 2 * math.pi * 60 * dt == pytest.approx(lead, abs=1e-9)


def test_zero_delay_means_command_equals_effect():
    d = DeviceDelays(0.0, 0.1e-3, 3.0e-3)
    chart = make_plan(SEVEN, d).chart
    for e in chart.of_kind(PROJECTOR):
        assert e.command_time == e.effect_time


def test_triggers_hit_targets_on_their_segment(plan):
    wf = plan.waveform
    for e in plan.chart.projector_events():
        assert abs(wf.power_at_time(e.effect_time) - e.target_power) <= 1e-9
        assert sync.segment_at(wf, e.effect_time) == sync.SEGMENT_OF_EYE[e.eye]


def test_illumination_on_offset_sinusoid():
    n = 2048
    ph = np.arange(n) * 2 * math.pi / n
    wf = etl.PowerWaveform(ph, 0.5 + 1.5 * np.sin(ph), 1 / 60)
    chart = sync.build_chart(wf, PowerSamples((-0.9, 0.0, 1.9)), DeviceDelays(0.15e-3, 0.1e-3, 1e-3))
    ill = chart.of_kind(ILLUMINATION)
    assert len(ill) == 2
    expect = sorted([math.pi + math.asin(1 / 3), 2 * math.pi - math.asin(1 / 3)])
    got = sorted(wf.phase_of_time(e.effect_time) for e in ill)
    np.testing.assert_allclose(got, expect, atol=1e-5)
    one = sync.build_chart(wf, PowerSamples((-0.9, 0.0, 1.9)), DeviceDelays(0.15e-3, 0.1e-3, 1e-3),
                           use_both_crossings=False)
    assert len(one.of_kind(ILLUMINATION)) == 1


def test_event_count(plan):
    c = sync.event_counts(plan.chart)
    assert c[PROJECTOR] == 2 * len(SEVEN)
    assert c[SHUTTER] == 4
    assert c[ILLUMINATION] == len(sync.zero_crossings(plan.waveform)) == 2


def test_shutters_straddle_extrema(plan):
    wf = plan.waveform
    t_min = wf.time_of_phase(wf.phase_of_min)
    t_max = wf.time_of_phase(wf.phase_of_max)
    period = plan.chart.period
    for e in plan.chart.of_kind(SHUTTER):
        center = (e.command_time + 0.5 * ((e.effect_time - e.command_time) % period)) % period
        at = t_min if (e.eye == LEFT) == (e.state == OPEN) else t_max
        assert min(abs(center - at), period - abs(center - at)) < 1e-9


def test_validate_default_plan(plan):
    rep = sync.validate_chart(plan.chart, plan.waveform, DELAYS)
    assert rep["pass"], rep
    assert rep["trigger_power"]["max_abs_error_D"] <= 0.02


def test_validate_detects_stale_delay():
    d0 = DeviceDelays(0.0, 0.1e-3, 3.0e-3)
    p = make_plan(SEVEN, d0)
    rep = sync.validate_chart(p.chart, p.waveform, DELAYS)
    assert not rep["trigger_power"]["pass"]
    assert rep["trigger_power"]["max_abs_error_D"] > 0.02


def test_validate_detects_plus_one_ms(plan):
    bad = replace(DELAYS, projector_delay=DELAYS.projector_delay + 1e-3)
    rep = sync.validate_chart(plan.chart, plan.waveform, bad)
    assert not rep["pass"]
    assert not rep["trigger_power"]["pass"]


def test_flicker_threshold():
    p = make_plan(SEVEN, DELAYS, f=30.0)
    rep = sync.validate_chart(p.chart, p.waveform, DELAYS)
    assert not rep["flicker_fusion"]["pass"] and not rep["pass"]
    rep = sync.validate_chart(p.chart, p.waveform, DELAYS, cff=25.0)
    assert rep["flicker_fusion"]["pass"]


def test_slow_shutter_conflict():
    with pytest.raises(SchedulingConflictError):
        make_plan(SEVEN, DeviceDelays(0.15e-3, 0.1e-3, 10e-3))


def test_skewed_waveform_too_narrow_conflicts():
    wf = etl.skewed_waveform(-1.2, 2.2, skew=0.4)
    with pytest.raises(SchedulingConflictError) as exc:
        sync.build_chart(wf, SEVEN, DELAYS)
    assert exc.value.conflicts


def test_skewed_waveform_with_room_validates():
    wf = etl.skewed_waveform(-1.7, 2.7, skew=0.2)
    chart = sync.build_chart(wf, SEVEN, DELAYS)
    assert sync.validate_chart(chart, wf, DELAYS)["pass"]


def test_sample_outside_waveform():
    wf = sweep_waveform(SEVEN)
    with pytest.raises(etl.PowerRangeError):
        sync.build_chart(wf, PowerSamples((-1.0, 3.5)), DELAYS)


def test_deterministic():
    a = make_plan(SEVEN, DELAYS).chart
    b = make_plan(SEVEN, DELAYS).chart
    assert a == b and a.to_csv() == b.to_csv()


def test_relabel_swaps_eyes(plan):
    sw = sync.relabel_segments(plan.chart)
    key = lambda evs: sorted((e.slice_index, e.command_time, e.effect_time) for e in evs)
    assert key(sw.projector_events(LEFT)) == key(plan.chart.projector_events(RIGHT))
    assert key(sw.projector_events(RIGHT)) == key(plan.chart.projector_events(LEFT))
    assert sync.relabel_segments(sw) == plan.chart


def test_mirrored_waveform_swaps_trigger_times(plan):
    wf = plan.waveform
    m = sync.mirror_waveform(wf)
    chart = sync.build_chart(m, SEVEN, DeviceDelays(0.0, 0.1e-3, 3.0e-3))
    base = sync.build_chart(wf, SEVEN, DeviceDelays(0.0, 0.1e-3, 3.0e-3))
    period = base.period
    for eye, other in ((LEFT, RIGHT), (RIGHT, LEFT)):
        got = {e.slice_index: e.effect_time for e in chart.projector_events(eye)}
        for e in base.projector_events(other):
            t = (-e.effect_time) % period
            assert min(abs(got[e.slice_index] - t), period - abs(got[e.slice_index] - t)) < 1e-9


def test_shutter_transmittance_states(plan):
    chart = plan.chart
    for e in chart.projector_events():
        ts = e.effect_time + chart.frame_time * np.linspace(-0.5, 0.5, 9)
        assert np.all(sync.shutter_transmittance(chart, e.eye, ts) == 1.0)
        other = RIGHT if e.eye == LEFT else LEFT
        assert np.all(sync.shutter_transmittance(chart, other, ts) == 0.0)
    closes = [e for e in chart.of_kind(SHUTTER) if e.state == CLOSE]
    mid = closes[0].command_time + 0.5 * DELAYS.shutter_close_delay
    assert sync.shutter_transmittance(chart, closes[0].eye, [mid])[0] == pytest.approx(0.5)


def test_csv_and_json_round_trip(plan):
    chart = plan.chart
    back = sync.chart_from_csv(chart.to_csv(), chart.period, chart.delays, chart.frame_time, chart.samples)
    assert back == chart
    assert sync.TimingChart.from_dict(json.loads(chart.to_json({"pass": True}))) == chart
    header = chart.to_csv().splitlines()[0].split(",")
    for col in ("kind", "eye", "slice", "command_time_s", "effect_time_s", "target_power_D"):
        assert col in header
