import logging
import math

import numpy as np
import pytest

from focalsweep import optics, retina
from focalsweep.fixtures import load_fixture
from focalsweep.optics import PowerSamples
from focalsweep.render.camera import PinholeCamera, rigid
from focalsweep.render.mesh import make_texture, quad
from focalsweep.render.pipeline import (compensate_and_project, render_frame_set, render_observer_view,
                                        slice_and_filter, virtual_centroid)
from focalsweep.render.raster import rasterize
from focalsweep.render.scene import (LEFT, RIGHT, Observer, Scene, SceneError, Surface, TargetObject,
                                     load_scene, save_scene)
from focalsweep.render.timeline import TimelineError, linear_track, load_timeline

SMALL = dict(size=(160, 120), projector_size=(256, 192))
SEVEN = PowerSamples((-1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0))


def flat_scene(screen=0.5, obj=None, width=64, height=48, separation=0.064, texture=0.6,
               projector_size=(128, 96)):
    observer = Observer(np.zeros(3), np.eye(3), eye_separation=separation, width=width, height=height)
    projector = PinholeCamera.look_at((0, -0.05, -0.3), (0, 0, screen), math.radians(30), *projector_size)
    surfaces = (Surface("screen", quad(2.0, 2.0, (0, 0, screen))),)
    objects = ()
    if obj is not None:
        objects = (TargetObject("card", quad(0.15, 0.15, (0, 0, obj)), make_texture(texture)),)
    return Scene(surfaces, objects, observer, projector, "flat")


# -- camera and rasterizer ---------------------------------------------------------

def test_camera_round_trip():
    cam = PinholeCamera.look_at((0.1, -0.2, -0.5), (0, 0, 1), math.radians(40), 80, 60)
    pts = np.random.default_rng(0).uniform(-1, 1, (50, 3)) + [0, 0, 3]
    np.testing.assert_allclose(cam.to_world(cam.to_camera(pts)), pts, atol=1e-12)
    u, v, z = cam.project(cam.to_camera(cam.position + 2.0 * cam.forward))
    assert (u, v) == pytest.approx(cam.center)


def test_rasterizer_nearest_wins():
    cam = PinholeCamera.at((0, 0, 0), np.eye(3), math.radians(40), 32, 24)
    far = quad(1, 1, (0, 0, 2.0)).world_triangles()
    near = quad(0.1, 0.1, (0, 0, 1.0)).world_triangles()
    r = rasterize(cam, np.concatenate([far, near]))
    assert r.depth[12, 16] == pytest.approx(1.0)
    assert r.triangle[12, 16] in (2, 3)
    r2 = rasterize(cam, np.concatenate([near, far]))
    np.testing.assert_array_equal(r.depth, r2.depth)


def test_flat_screen_depth_constant():
    view = render_observer_view(flat_scene(), LEFT)
    assert np.all(np.isfinite(view.surface_depth))
    np.testing.assert_allclose(view.surface_depth, 0.5, atol=1e-12)


def test_step_fixture_depths():
    view = render_observer_view(load_fixture("sec44-step", **SMALL).scene, LEFT)
    d = view.surface_depth[np.isfinite(view.surface_depth)]
    near = np.abs(d - 0.45) < 1e-6
    far = np.abs(d - 0.8) < 1e-6
    assert near.sum() > 100 and far.sum() > 100
    assert near.sum() + far.sum() == d.size


def test_corner_fixture_objects():
    fx = load_fixture("fig5-corner", **SMALL)
    view = render_observer_view(fx.scene, LEFT)
    medians = [np.median(view.object_depth[view.object_id == k]) for k in range(len(fx.scene.objects))]
    assert len(medians) == 2 and abs(medians[0] - medians[1]) > 0.05


def test_object_outside_frustum(caplog):
    with caplog.at_level(logging.WARNING):
        view = render_observer_view(flat_scene(obj=-1.0), LEFT)
    assert not view.object_mask.any() and view.diagnostics
    assert np.all(view.color == 0)


# -- slicing -----------------------------------------------------------------------

def test_object_on_surface_is_single_slice():
    view = render_observer_view(flat_scene(obj=0.5), LEFT)
    ss = slice_and_filter(view.color, view.object_depth, view.surface_depth, SEVEN)
    sums = ss.slices.sum(axis=(1, 2))
    assert sums[2] > 0 and np.count_nonzero(sums) == 1


def test_slanted_plane_fills_six_slices():
    fx = load_fixture("sec42-slanted", **SMALL)
    assert fx.samples.powers == (-1.0, -0.5, 0.0, 0.5, 1.0, 1.5)
    view = render_observer_view(fx.scene, LEFT)
    ss = slice_and_filter(view.color, view.object_depth, view.surface_depth, fx.samples)
    assert np.all(ss.slices.sum(axis=(1, 2)) > 0)
    v = ss.power_map[view.object_mask]
    assert v.min() >= -1.0 - 1e-6 and v.max() <= 1.5 + 1e-6


@pytest.mark.parametrize("name", ["sec43-bunnies", "sec44-step", "fig5-corner", "sec42-slanted"])
def test_conservation_exact(name):
    fx = load_fixture(name, **SMALL)
    for eye in (LEFT, RIGHT):
        view = render_observer_view(fx.scene, eye)
        ss = slice_and_filter(view.color, view.object_depth, view.surface_depth, fx.samples)
        covered = view.object_mask & ~ss.uncovered
        assert np.array_equal(ss.slices.sum(axis=0)[covered], view.color[covered])
        assert np.all(ss.slices[:, ~covered] == 0)


def test_slice_power_within_interval():
    fx = load_fixture("sec42-slanted", **SMALL)
    view = render_observer_view(fx.scene, LEFT)
    ss = slice_and_filter(view.color, view.object_depth, view.surface_depth, fx.samples)
    for n, p in enumerate(fx.samples.powers):
        sel = ss.slices[n] > 0
        assert np.all(np.abs(ss.power_map[sel] - p) <= 0.5 + 1e-9)


def test_uncovered_pixels_flagged(caplog):
    scene = flat_scene(obj=0.4)
    scene = Scene((Surface("tiny", quad(0.02, 0.02, (0, 0, 0.5))),), scene.objects, scene.observer,
                  scene.projector)
    view = render_observer_view(scene, LEFT)
    with caplog.at_level(logging.WARNING):
        ss = slice_and_filter(view.color, view.object_depth, view.surface_depth, SEVEN)
    assert ss.uncovered.any() and ss.dropped > 0
    assert any("no surface" in r.message for r in caplog.records)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        slice_and_filter(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2)), SEVEN)


# -- compensation and projection ------------------------------------------------------

@pytest.fixture(scope="module")
def bunnies():
    fx = load_fixture("sec43-bunnies", **SMALL)
    return fx, render_frame_set(fx.scene, fx.samples)


def test_fov_factors(bunnies):
    fx, frames = bunnies
    st = frames.left
    zero = st.powers.index(0.0)
    assert st.slices[zero].fov_factor == 1.0
    assert st.slices[0].fov_factor > 1.0
    assert st.slices[-1].fov_factor < 1.0
    expect = optics.fov_scale(1e-6, optics.breathing_scale(0.5, 1 / 3, 0.02), 0.02, 0.5)
    assert st.slices[0].fov_factor == pytest.approx(expect, rel=2e-3)


def test_compensation_disabled_is_identity(bunnies):
    fx, frames = bunnies
    view = frames.left.view
    comp = compensate_and_project(frames.left.slice_set.slices, view, fx.samples, enabled=False)
    assert all(c.fov_factor == 1.0 for c in comp)


def test_bunnies_isolated(bunnies):
    fx, frames = bunnies
    for eye in (LEFT, RIGHT):
        st = frames.stack(eye)
        obs = st.slice_set.slices
        for k, p in zip(range(3), (-1.0, 0.0, 1.0)):
            n = fx.samples.powers.index(p)
            mask = st.view.object_id == k
            assert obs[n][mask].sum() == pytest.approx(st.view.color[mask].sum())
        assert st.slices[fx.samples.powers.index(0.5)].image.max() == 0


def test_display_order(bunnies):
    _, frames = bunnies
    assert frames.left.display_order() == list(range(7))
    assert frames.right.display_order() == list(range(6, -1, -1))


def test_forward_round_trip():
    # power 0 content on a flat screen: the eye must see the slice again
    scene = flat_scene(obj=0.5, width=320, height=240, projector_size=(1024, 768),
                       texture={"type": "blocks", "blocks": 6, "pixels_per_block": 8})
    frames = render_frame_set(scene, SEVEN)
    st = frames.left
    n = SEVEN.powers.index(0.0)
    cam = st.view.camera
    tx, ty = cam.pixel_tangents()
    look = retina.surface_lookup(scene, frames.geometry, cam, tx.ravel(), ty.ravel())
    back = look.luminance(st.slices[n].image, with_albedo=False).reshape(tx.shape)
    target = st.slice_set.slices[n]
    sel = target > 0
    interior = sel & np.roll(sel, 1, 0) & np.roll(sel, -1, 0) & np.roll(sel, 1, 1) & np.roll(sel, -1, 1)
    mae = np.abs(back[interior] - target[interior]).mean() * 255
    assert mae < 2.0


def test_zero_disparity_stacks_identical():
    fx = load_fixture("sec43-bunnies", **SMALL)
    scene = fx.scene.with_observer(eye_separation=0.0)
    frames = render_frame_set(scene, fx.samples)
    assert np.array_equal(frames.left.images(), frames.right.images())


def test_illumination_only_on_lit_surfaces(bunnies):
    fx, frames = bunnies
    g = frames.geometry
    lit = np.array([s.illuminate for s in fx.scene.surfaces])
    on = g.surface_id >= 0
    assert np.all(frames.illumination[on & lit[np.maximum(g.surface_id, 0)]] == 1.0)
    assert np.all(frames.illumination[~on] == 0.0)


def test_pose_equivariance():
    fx = load_fixture("sec43-bunnies", **SMALL)
    m = rigid([[0, 0, 1], [0, 1, 0], [-1, 0, 0]])
    a = render_frame_set(fx.scene, fx.samples)
    b = render_frame_set(fx.scene.transformed(m), fx.samples)
    for eye in (LEFT, RIGHT):
        assert np.array_equal(a.stack(eye).images(), b.stack(eye).images())
    assert np.array_equal(a.illumination, b.illumination)


def test_deterministic_render(bunnies):
    fx, frames = bunnies
    again = render_frame_set(fx.scene, fx.samples)
    assert np.array_equal(frames.left.images(), again.left.images())


def test_projector_view_empty_without_content():
    scene = flat_scene()
    frames = render_frame_set(scene, SEVEN)
    assert frames.left.images().max() == 0
    assert frames.illumination.max() == 1.0


# -- moving surface ----------------------------------------------------------------------

def test_virtual_position_constant_over_timeline():
    fx = load_fixture("sec45-moving", **SMALL)
    tl = fx.timeline
    assert len(tl.times) == 20
    cents, slices = [], set()
    for t in tl.times:
        sc = tl.apply(fx.scene, float(t))
        view = render_observer_view(sc, LEFT)
        ss = slice_and_filter(view.color, view.object_depth, view.surface_depth, fx.samples)
        cents.append(virtual_centroid(view, ss, fx.samples.powers))
        slices.add(int(np.argmax(ss.slices.sum(axis=(1, 2)))))
    cents = np.array(cents)
    assert np.max(cents.max(0) - cents.min(0)) < 1e-3
    assert len(slices) > 1


# -- serialization ------------------------------------------------------------------------

def test_scene_json_round_trip(tmp_path):
    fx = load_fixture("sec43-bunnies", **SMALL)
    p = save_scene(fx.scene, tmp_path / "s.json")
    back = load_scene(p)
    a = render_frame_set(fx.scene, fx.samples)
    b = render_frame_set(back, fx.samples)
    assert np.array_equal(a.left.images(), b.left.images())
    assert save_scene(back, tmp_path / "t.json").read_text() == p.read_text()


def test_scene_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "name": "x",\n  oops\n}')
    with pytest.raises(SceneError, match=":3:"):
        load_scene(p)
    p.write_text('{"name": "x"}')
    with pytest.raises(SceneError, match="missing"):
        load_scene(p)


def test_timeline_csv_round_trip(tmp_path):
    tl = linear_track("plane", rigid(None, (0, 0, 0.3)), rigid(None, (0, 0, 0.5)), 5, 1.0)
    back = load_timeline(tl.to_csv(tmp_path / "t.csv"))
    np.testing.assert_array_equal(back.times, tl.times)
    np.testing.assert_allclose(back.tracks["plane"].pose_at(0.5), tl.tracks["plane"].pose_at(0.5), atol=1e-15)
    assert tl.tracks["plane"].pose_at(0.5)[2, 3] == pytest.approx(0.4)
    assert tl.tracks["plane"].pose_at(-1.0)[2, 3] == 0.3
    assert tl.tracks["plane"].pose_at(9.0)[2, 3] == 0.5


def test_timeline_slerp_midpoint():
    a = rigid(None, (0, 0, 0))
    b = rigid([[0, 0, 1], [0, 1, 0], [-1, 0, 0]], (0, 0, 0))
    mid = linear_track("s", a, b, 2, 1.0).tracks["s"].pose_at(0.5)
    c = math.cos(math.pi / 4)
    np.testing.assert_allclose(mid[:3, :3], [[c, 0, c], [0, 1, 0], [-c, 0, c]], atol=1e-12)


def test_timeline_errors(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("time_s,surface_id,tx,ty,tz\n0,a,0,0,0\n")
    with pytest.raises(TimelineError, match="missing columns"):
        load_timeline(p)
    hdr = "time_s,surface_id,tx,ty,tz,qx,qy,qz,qw\n"
    p.write_text(hdr + "0,a,0,0,0,0,0,0,1\n1,a,0,0,x,0,0,0,1\n")
    with pytest.raises(TimelineError, match="row 3"):
        load_timeline(p)
    p.write_text(hdr + "0,a,0,0,0,0,0,0,1\n0,a,0,0,1,0,0,0,1\n")
    with pytest.raises(TimelineError, match="duplicate"):
        load_timeline(p)
