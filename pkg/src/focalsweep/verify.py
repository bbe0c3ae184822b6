"""Fast invariant suite behind ``focalsweep verify``.

Each check returns ``(name, passed, detail)``. Fault injection deliberately
breaks one stage so that the corresponding check must fail:

``delay``         the true projector delay is 1 ms longer than scheduled
``segments``      eye labels of the chart are swapped
``compensation``  slices are projected without breathing compensation
``filter``        one pixel of one slice is nudged by a few ulps
``shutter``       both shutters are held open during replay
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from . import optics, retina, sync
from .fixtures import load_fixture
from .render.pipeline import render_frame_set, render_observer_view, slice_and_filter
from .render.scene import LEFT
from .scenario import make_plan

INJECTIONS = ("delay", "segments", "compensation", "filter", "shutter")
SMALL = (160, 120)
SMALL_PROJECTOR = (256, 192)


def _check(name, ok, detail=""):
    return name, bool(ok), detail


def check_optics(rng: np.random.Generator) -> list:
    r = optics.sweep_range(0.5, 1.0 / 6.0, math.inf)
    rows = [_check("sweep_range", abs(r.v_low + 1.0) <= 0.005 and abs(r.v_high - 2.0) <= 0.005,
                   f"({r.v_low:+.4f}, {r.v_high:+.4f}) D")]
    got = [round(optics.required_power(0.5, d), 3) for d in (1 / 3, 0.5, 1.0)]
    rows.append(_check("placement", got == [-1.0, 0.0, 1.0], str(got)))

    powers = np.sort(rng.uniform(-3, 3, 6))
    v = rng.uniform(-4, 4, 20000)
    brute = np.array([min(range(6), key=lambda i: (abs(powers[i] - x), i)) for x in v[:2000]])
    rows.append(_check("assign_slice_bruteforce",
                       np.array_equal(optics.assign_slices(v[:2000], powers), brute), "2000 cases"))

    d_p = rng.uniform(0.2, 3.0, 10000)
    d_v = rng.uniform(0.1, 5.0, 10000)
    back = np.array([optics.virtual_distance(a, optics.required_power(a, b)) for a, b in zip(d_p, d_v)])
    rel = float(np.max(np.abs(back - d_v) / d_v))
    rows.append(_check("thin_lens_round_trip", rel <= 1e-12, f"max rel {rel:.1e}"))
    return rows


def check_waveform(rng: np.random.Generator) -> list:
    plan = make_plan(optics.PowerSamples((-1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0)))
    wf = plan.waveform
    worst = 0.0
    for x in rng.uniform(wf.v_min + 1e-6, wf.v_max - 1e-6, 1000):
        for seg in ("up", "down"):
            worst = max(worst, abs(wf.power_at(wf.phases_for_power(x, seg)) - x))
    ph = rng.uniform(0, 2 * math.pi, 1000)
    periodic = np.array_equal(wf.power_at(ph), wf.power_at(ph + 2 * math.pi)) or \
        float(np.max(np.abs(wf.power_at(ph) - wf.power_at(ph + 2 * math.pi)))) <= 1e-12
    return [_check("waveform_round_trip", worst <= 1e-4, f"max {worst:.1e} D"),
            _check("waveform_periodic", periodic)]


def check_schedule(inject: set[str]) -> list:
    plan = make_plan(optics.PowerSamples((-1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0)))
    chart = plan.chart
    truth = plan.delays
    if "delay" in inject:
        truth = replace(truth, projector_delay=truth.projector_delay + 1e-3)
    if "segments" in inject:
        chart = sync.relabel_segments(chart)
    rep = sync.validate_chart(chart, plan.waveform, truth)
    failed = [k for k, v in rep.items() if isinstance(v, dict) and not v["pass"]]
    perturbed = sync.validate_chart(plan.chart, plan.waveform,
                                    replace(plan.delays, projector_delay=plan.delays.projector_delay + 1e-3))
    counts = sync.event_counts(chart)
    wrong = [e for e in chart.projector_events()
             if sync.segment_at(plan.waveform, e.effect_time) != sync.SEGMENT_OF_EYE[e.eye]]
    return [
        _check("schedule_valid", rep["pass"], "failed: " + ", ".join(failed) if failed else "all checks"),
        _check("schedule_detects_delay", not perturbed["pass"]),
        _check("segment_assignment", not wrong, f"{len(wrong)} triggers on the other eye's segment"),
        _check("event_count", counts.get(sync.PROJECTOR) == 2 * len(plan.samples)
               and counts.get(sync.SHUTTER) == 4, str(counts)),
    ]


def check_render(inject: set[str], seed: int) -> list:
    rows = []
    rng = np.random.default_rng(seed)
    worst = 0
    for name in ("sec43-bunnies", "sec44-step", "fig5-corner"):
        fx = load_fixture(name, size=SMALL, projector_size=SMALL_PROJECTOR, seed=seed)
        view = render_observer_view(fx.scene, LEFT)
        ss = slice_and_filter(view.color, view.object_depth, view.surface_depth, fx.samples)
        slices = ss.slices.copy()
        if "filter" in inject:
            lit = np.argwhere(slices.sum(axis=0) > 0)
            y, x = lit[rng.integers(len(lit))]
            n = int(np.argmax(slices[:, y, x]))
            slices[n, y, x] = np.nextafter(slices[n, y, x], np.inf)
        covered = ~ss.uncovered
        bad = int(np.count_nonzero(slices.sum(axis=0)[covered] != view.color[covered]))
        worst = max(worst, bad)
    rows.append(_check("radiance_conservation", worst == 0, f"{worst} mismatched pixels"))

    fx = load_fixture("sec43-bunnies", size=SMALL, projector_size=SMALL_PROJECTOR)
    m = np.eye(4)
    m[:3, :3] = [[0, 0, 1], [0, 1, 0], [-1, 0, 0]]
    a = render_frame_set(fx.scene, fx.samples)
    b = render_frame_set(fx.scene.transformed(m), fx.samples)
    same = np.array_equal(a.left.images(), b.left.images()) and np.array_equal(a.illumination, b.illumination)
    rows.append(_check("pose_equivariance", same, "90 degree turn about y"))
    return rows


def check_breathing(inject: set[str]) -> list:
    # full eye resolution: uncompensated mismatches only exceed a pixel here
    fx = load_fixture("sec42-slanted")
    comp = render_frame_set(fx.scene, fx.samples, compensation="compensation" not in inject)
    b = retina.boundary_continuity(comp, fx.scene, LEFT)
    worst = max((abs(e.mismatch_px) for e in b), default=math.inf)
    off = render_frame_set(fx.scene, fx.samples, compensation=False)
    ub = retina.boundary_continuity(off, fx.scene, LEFT)
    signs = sum((e.mismatch > 0) == e.predicted_overlap for e in ub)
    return [_check("breathing_compensated", worst < 1.0, f"max |mismatch| {worst:.3f} px over {len(b)}"),
            _check("breathing_sign", len(ub) > 0 and signs == len(ub), f"{signs}/{len(ub)} signs")]


def check_retina(inject: set[str]) -> list:
    fx = load_fixture("sec43-bunnies", size=SMALL, projector_size=SMALL_PROJECTOR)
    plan = make_plan(fx.samples)
    frames = render_frame_set(fx.scene, fx.samples)
    res = retina.view_through_etl(frames, fx.scene, plan.chart, plan.waveform, LEFT, [0.52],
                                  delays=plan.delays, subsamples=2,
                                  shutter_override="open" if "shutter" in inject else None,
                                  bypass_validation=True)
    x = res.crosstalk()
    img = res.image(0.52)
    energy_ok = math.isclose(float(img.sum()), res.total_energy, rel_tol=1e-9)
    return [_check("crosstalk_zero", x == 0.0, f"{x:.4f}"),
            _check("energy_accounting", energy_ok, f"{img.sum():.6g} vs {res.total_energy:.6g}")]


def run_checks(seed: int = 0, inject=()) -> list[tuple[str, bool, str]]:
    inject = set(inject)
    unknown = inject - set(INJECTIONS)
    if unknown:
        raise KeyError(f"unknown injection mode(s) {sorted(unknown)}; choose from {INJECTIONS}")
    rng = np.random.default_rng(seed)
    return (check_optics(rng) + check_waveform(rng) + check_schedule(inject)
            + check_render(inject, seed) + check_breathing(inject) + check_retina(inject))
