"""Command-line front end: ``plan | render | schedule | simulate | verify``.

Exit codes: 0 success, 1 validation failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import artifacts, optics, retina, sync
from .config import ConfigError, RunConfig, load_config
from .etl import InfeasibleDriveError, PowerRangeError, WaveformFormatError
from .render.pipeline import render_frame_set, render_observer_view, slice_and_filter, virtual_centroid
from .render.scene import LEFT, RIGHT, SceneError
from .render.timeline import TimelineError
from .scenario import Plan, make_plan

log = logging.getLogger("focalsweep")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ValidationFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers

def _samples_for(cfg: RunConfig) -> optics.PowerSamples:
    if cfg.fixed_power is not None:
        return optics.PowerSamples((float(cfg.fixed_power),))
    return cfg.power_samples()


def _scene(cfg: RunConfig):
    fx = cfg.fixture()
    scene = fx.scene
    if fx.timeline is not None and len(fx.timeline.times):
        scene = fx.timeline.apply(scene, float(fx.timeline.times[0]))
    return fx, scene


def _plan(cfg: RunConfig, samples: optics.PowerSamples) -> Plan:
    return make_plan(samples, cfg.delays, cfg.frequency_hz, cfg.lti(), cfg.projector_spec,
                     waveform=cfg.measured_waveform(),
                     fixed_power=cfg.fixed_power)


def _default_accommodations(cfg: RunConfig, fx, samples: optics.PowerSamples) -> list[float]:
    """Eye distances of the sampled depths and of the midpoints between them."""
    d_p = fx.info.get("screen_depth_m", float(cfg.sweep.get("d_p", 0.5)))
    p = list(samples.powers)
    powers = sorted(set(p + [0.5 * (a + b) for a, b in zip(p, p[1:])]))
    out = []
    for v in powers:
        try:
            d_v = optics.virtual_distance(d_p, v)
        except optics.DomainError:
            continue
        if math.isfinite(d_v):
            out.append(d_v + fx.scene.d_e)
    return sorted(out)


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, default=retina._jsonable))


# ---------------------------------------------------------------------------
# commands

def cmd_plan(cfg: RunConfig) -> int:
    rng = cfg.sweep_range()
    samples = _samples_for(cfg)
    spec = cfg.projector_spec
    n = sync.frames_per_period(spec, cfg.frequency_hz)
    budget = sync.per_eye_budget(spec, cfg.frequency_hz)
    report = {
        "sweep_range_D": [rng.v_low, rng.v_high],
        "samples_D": list(samples.powers),
        "max_interval_D": samples.max_interval,
        "meets_guideline": samples.meets_guideline,
        "frames_per_period": n,
        "per_eye_budget": budget,
        "feasible": len(samples) <= budget,
    }
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "plan.json", report)
    print(f"sweep range      [{rng.v_low:+.3f}, {rng.v_high:+.3f}] D")
    print(f"samples          {', '.join(f'{p:+.3f}' for p in samples.powers)} D")
    print(f"frames/period    {n}   per-eye budget {budget}")
    print(f"0.6 D guideline  {'met' if samples.meets_guideline else 'NOT met'} "
          f"(max interval {samples.max_interval:.3f} D)")
    if not report["feasible"]:
        print(f"infeasible: {len(samples)} slices per eye exceed the budget of {budget}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _render(cfg: RunConfig, out: Path):
    fx, scene = _scene(cfg)
    samples = _samples_for(cfg)
    comp = cfg.compensation and cfg.fixed_power is None
    frames = render_frame_set(scene, samples, compensation=comp, bin_width=cfg.bin_width_m)
    artifacts.save_frames(frames, out, extra={"scene": scene.name, "config": cfg.to_dict()})
    return fx, scene, frames


def cmd_render(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    _, scene, frames = _render(cfg, out)
    for eye in (LEFT, RIGHT):
        st = frames.stack(eye)
        print(f"{eye:5s} " + "  ".join(f"{s.power:+.2f}D x{s.fov_factor:.4f}" for s in st.slices))
        for d in st.view.diagnostics:
            print(f"  diagnostic: {d}")
    print(f"wrote {out / artifacts.MANIFEST}")
    return EXIT_OK


def _schedule(cfg: RunConfig, out: Path) -> tuple[Plan, dict]:
    samples = _samples_for(cfg)
    plan = _plan(cfg, samples)
    report = sync.validate_chart(plan.chart, plan.waveform, cfg.delays)
    w = cfg.waveform
    report["waveform_source"] = (f"measured: {w['path']}" if w.get("type") == "measured" else
                                 f"simulated LTI (synthetic defaults): {cfg.lti()}")
    artifacts.save_chart(plan.chart, plan.waveform, out, report)
    return plan, report


def cmd_schedule(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    try:
        plan, report = _schedule(cfg, out)
    except sync.SchedulingConflictError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_FAIL
    except (PowerRangeError, InfeasibleDriveError) as exc:
        print(f"scheduling failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    for name, res in report.items():
        if isinstance(res, dict):
            print(f"{name:20s} {'PASS' if res['pass'] else 'FAIL'}")
    print(f"wrote {out / artifacts.CHART_CSV}")
    return EXIT_OK if report["pass"] else EXIT_FAIL


def _same_config(stored: dict | None, cfg: RunConfig) -> bool:
    if stored is None:
        return False
    now = json.loads(json.dumps(cfg.to_dict()))
    return {k: v for k, v in stored.items() if k != "out"} == {k: v for k, v in now.items() if k != "out"}


def _load_or_build(cfg: RunConfig, out: Path):
    """Render and schedule outputs from ``out`` when they match the config, else produce them."""
    fx, scene = _scene(cfg)
    samples = _samples_for(cfg)
    comp = cfg.compensation and cfg.fixed_power is None
    frames = None
    if artifacts.has_render(out):
        m = json.loads((out / artifacts.MANIFEST).read_text())
        if m.get("samples_D") == list(samples.powers) and m.get("compensation") == comp \
                and _same_config(m.get("config"), cfg):
            frames = artifacts.load_frames(out, scene, cfg.bin_width_m)
    if frames is None:
        _, scene, frames = _render(cfg, out)
    plan = None
    if artifacts.has_schedule(out):
        chart, wf = artifacts.load_chart(out, cfg.frequency_hz)
        if list(chart.samples) == list(samples.powers) and chart.delays == cfg.delays:
            plan = Plan(samples, wf, chart, cfg.delays, cfg.fixed_power)
    if plan is None:
        plan, _ = _schedule(cfg, out)
    return fx, scene, frames, plan


def cmd_simulate(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    fx, scene, frames, plan = _load_or_build(cfg, out)
    accs = cfg.accommodation_m or _default_accommodations(cfg, fx, frames.samples)
    report = retina.FocusReport(meta={
        "scene": scene.name, "accommodations_m": accs, "pupil_diameter_m": cfg.eye_model.pupil_diameter,
        "compensation": frames.compensation, "fixed_power_D": cfg.fixed_power,
        "samples_D": list(frames.samples.powers),
    })
    arrays = {}
    for eye in (LEFT, RIGHT):
        try:
            res = retina.view_through_etl(frames, scene, plan.chart, plan.waveform, eye, accs,
                                          cfg.eye_model, cfg.delays, cfg.subsamples,
                                          lens_power_override=plan.fixed_power)
        except retina.UnvalidatedChartError as exc:
            print(str(exc), file=sys.stderr)
            return EXIT_FAIL
        res.save(out, f"retina_{eye}")
        objects = [(k, o.id, retina.object_mask(frames, eye, k)) for k, o in enumerate(scene.objects)]
        surfaces = [(k, s.id, retina.surface_mask(res, k)) for k, s in enumerate(scene.surfaces)
                    if s.illuminate]
        curves: dict[str, list[float]] = {}
        for a in accs:
            img = res.image(a)
            arrays[f"{eye}_{int(round(a * 1e6)):07d}um"] = img
            row = {"eye": eye, "accommodation_m": a}
            for kind, items in (("object", objects), ("surface", surfaces)):
                for k, name, m in items:
                    s = retina.sharpness(img, m)
                    row[f"{kind}:{name}"] = s
                    curves.setdefault(f"{kind}:{name}", []).append(s)
            named = {k: v for k, v in row.items() if k.startswith("object:") and np.isfinite(v)}
            row["sharpest_object"] = max(named, key=named.get)[7:] if named else None
            report.add(**row)
        if len(accs) >= 3:
            report.meta.setdefault("best_focus_m", {})[eye] = {
                k: retina.best_focus(accs, v) for k, v in curves.items() if np.all(np.isfinite(v))}
        report.meta.setdefault("crosstalk", {})[eye] = res.crosstalk()
        report.meta.setdefault("retinal_energy", {})[eye] = res.total_energy
        report.boundaries.extend(b.to_dict() for b in retina.boundary_continuity(frames, scene, eye))
    if fx.timeline is not None:
        report.meta["timeline"] = _timeline_positions(fx, frames.samples)
    np.savez_compressed(out / "retina.npz", **arrays)
    report.to_json(out / "focus_report.json")
    for r in report.entries:
        print(f"{r['eye']:5s} acc {r['accommodation_m']:.3f} m  sharpest object: {r['sharpest_object']}")
    return EXIT_OK


def _timeline_positions(fx, samples) -> list[dict]:
    rows = []
    for t in fx.timeline.times:
        sc = fx.timeline.apply(fx.scene, float(t))
        view = render_observer_view(sc, LEFT)
        ss = slice_and_filter(view.color, view.object_depth, view.surface_depth, samples)
        c = virtual_centroid(view, ss, samples.powers)
        rows.append({"time_s": float(t), "virtual_centroid_m": c.tolist()})
    return rows


# ---------------------------------------------------------------------------
# verify

def cmd_verify(cfg: RunConfig, inject: list[str]) -> int:
    from .verify import run_checks

    rows = run_checks(seed=cfg.seed, inject=inject)
    width = max(len(r[0]) for r in rows)
    for name, ok, detail in rows:
        print(f"{name:{width}s}  {'PASS' if ok else 'FAIL'}  {detail}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "verify.json", [{"check": n, "pass": ok, "detail": d} for n, ok, d in rows])
    return EXIT_OK if all(ok for _, ok, _ in rows) else EXIT_FAIL


# ---------------------------------------------------------------------------

def _accommodations(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of distances: {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("accommodation distances must be positive")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="focalsweep", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=["plan", "render", "schedule", "simulate", "verify"])
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--scene", help="built-in fixture name or scene JSON path")
    p.add_argument("--no-compensation", action="store_true", help="disable lens-breathing compensation")
    p.add_argument("--fixed-power", type=float, metavar="D", help="hold the lens at one power (baseline)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="seed for stochastic fixtures and fault injection")
    p.add_argument("--accommodation", type=_accommodations, metavar="M[,M...]",
                   help="accommodation distances from the eye, meters")
    p.add_argument("--inject", action="append", default=[], metavar="MODE",
                   help="verify only: inject a fault (delay, segments, compensation, filter, shutter)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"scene": args.scene, "out": args.out, "seed": args.seed,
                 "fixed_power": args.fixed_power, "accommodation_m": args.accommodation}
    if args.no_compensation:
        overrides["compensation"] = False
    try:
        cfg = load_config(args.config, overrides)
        if args.inject and args.command != "verify":
            raise ConfigError("--inject is only valid with verify")
        if args.command == "plan":
            return cmd_plan(cfg)
        if args.command == "render":
            return cmd_render(cfg)
        if args.command == "schedule":
            return cmd_schedule(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        return cmd_verify(cfg, args.inject)
    except (ConfigError, SceneError, TimelineError, WaveformFormatError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except optics.DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
