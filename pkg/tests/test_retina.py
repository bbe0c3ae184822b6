import math
from dataclasses import replace

import numpy as np
import pytest

from focalsweep import retina
from focalsweep.fixtures import load_fixture
from focalsweep.optics import PowerSamples
from focalsweep.render.pipeline import render_frame_set
from focalsweep.retina import EyeModel, UnvalidatedChartError
from focalsweep.scenario import make_plan
from focalsweep.sync import LEFT

SMALL = (200, 150)
SMALL_PROJECTOR = (256, 192)


@pytest.fixture(scope="module")
def bunnies():
    fx = load_fixture("sec43-bunnies", size=SMALL, projector_size=SMALL_PROJECTOR)
    plan = make_plan(fx.samples)
    frames = render_frame_set(fx.scene, fx.samples)
    return fx, plan, frames


def run(fx, plan, frames, accs, **kw):
    kw.setdefault("subsamples", 2)
    kw.setdefault("delays", plan.delays)
    return retina.view_through_etl(frames, fx.scene, plan.chart, plan.waveform, LEFT, accs, **kw)


def test_blur_diameter_values():
    assert retina.blur_diameter(0.48, 0.5, 0.004, 0.02) == pytest.approx(0.0, abs=1e-15)
    assert retina.blur_diameter(0.98, 0.5, 0.004, 0.02) == pytest.approx(0.004)
    near = retina.blur_diameter(0.48, 1 / 3, 0.004, 0.02)
    far = retina.blur_diameter(0.48, 1.0, 0.004, 0.02)
    assert near == pytest.approx(far)


def test_disc_kernel():
    for d in (0.0, 0.3, 1.0, 4.7, 12.0):
        k = retina.disc_kernel(d)
        assert k.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(k, k[::-1, ::-1])
    assert retina.disc_kernel(0.0).max() == 1.0


def test_eye_model_rejects_negative_pupil():
    with pytest.raises(ValueError):
        EyeModel(-0.001)


def test_crosstalk_and_energy(bunnies):
    res = run(*bunnies, [0.52])
    assert res.crosstalk() == 0.0
    assert float(res.image(0.52).sum()) == pytest.approx(res.total_energy, rel=1e-9)


def test_open_shutters_leak(bunnies):
    res = run(*bunnies, [0.52], shutter_override="open", bypass_validation=True)
    assert 0.3 < res.crosstalk() < 0.7


def test_pinhole_eye_ignores_accommodation(bunnies):
    res = run(*bunnies, [0.3, 0.52, 2.0], eye_model=EyeModel(0.0))
    np.testing.assert_allclose(res.image(0.3), res.image(2.0), rtol=0, atol=1e-15)
    np.testing.assert_allclose(res.image(0.52), res.image(2.0), rtol=0, atol=1e-15)


def test_refuses_unvalidated_chart(bunnies):
    fx, plan, frames = bunnies
    wrong = replace(plan.delays, projector_delay=plan.delays.projector_delay + 1e-3)
    with pytest.raises(UnvalidatedChartError):
        run(fx, plan, frames, [0.52], delays=wrong)
    with pytest.raises(ValueError):
        run(fx, plan, frames, [0.52], shutter_override="open")


def test_best_focus_estimator():
    a = 1.0 / np.linspace(0.5, 4.0, 36)
    target = 1.7
    vals = 1.0 / (1.0 + 4.0 * np.abs(1.0 / a - target))
    assert 1.0 / retina.best_focus(a, vals) == pytest.approx(target, abs=0.05)
    flat = np.where(np.abs(1.0 / a - target) < 0.3, 1.0, 0.2)
    assert 1.0 / retina.best_focus(a, flat) == pytest.approx(target, abs=0.06)


def test_best_focus_with_one_sided_grid():
    # grid reaches 3.5 D past the peak on one side and only 0.8 D on the other
    a = 1.0 / np.linspace(0.1, 4.5, 45)
    target = 0.9
    vals = 1.0 / (1.0 + np.abs(1.0 / a - target))
    assert 1.0 / retina.best_focus(a, vals) == pytest.approx(target, abs=0.05)


def test_sharpness_on_mask():
    img = np.zeros((20, 20))
    img[:, 10:] = 1.0
    m = np.ones_like(img, bool)
    assert retina.sharpness(img, m, erode=0) > 0
    assert math.isnan(retina.sharpness(img, np.zeros_like(m)))


@pytest.fixture(scope="module")
def step():
    # coarse checker so the texture is resolved at this size
    fx = load_fixture("sec44-step", size=SMALL, projector_size=SMALL_PROJECTOR, squares=24)
    plan = make_plan(fx.samples)
    frames = render_frame_set(fx.scene, fx.samples)
    return fx, plan, frames


def test_sharpness_degrades_away_from_focus(step):
    fx, plan, frames = step
    d_e = fx.scene.d_e
    true_d = float(np.median(frames.stack(LEFT).view.object_depth[frames.stack(LEFT).view.object_id == 0]))
    a0 = true_d + d_e
    accs = [1.0 / (1.0 / a0 + dv) for dv in (0.0, 1.0, 2.0, 3.0) if 1.0 / a0 + dv > 0]
    res = run(fx, plan, frames, accs)
    # blur at this size is about 0.8 px per diopter, so steps are a full diopter
    mask = retina.object_mask(frames, LEFT, 0)
    s = [retina.sharpness(res.image(a), mask) for a in accs]
    assert all(x > y for x, y in zip(s, s[1:])), s


def test_single_slice_has_no_boundaries():
    fx = load_fixture("sec43-bunnies", size=SMALL, projector_size=SMALL_PROJECTOR)
    frames = render_frame_set(fx.scene, PowerSamples((0.5,)))
    assert retina.boundary_continuity(frames, fx.scene, LEFT) == []


def test_save_writes_pngs(bunnies, tmp_path):
    res = run(*bunnies, [0.52, 1.0])
    paths = res.save(tmp_path)
    assert len(paths) == 3 and all(p.exists() for p in paths)
