import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from focalsweep import etl
from focalsweep.etl import (DOWN, UP, DriveWaveform, InfeasibleDriveError, LTIResponse, PowerRangeError,
                            PowerWaveform, WaveformFormatError)
from focalsweep.optics import SweepRange

TWO_PI = 2 * math.pi


def sine_waveform(n=1024, amp=1.0, offset=0.0, f=60.0):
    ph = np.arange(n) * TWO_PI / n
    return PowerWaveform(ph, offset + amp * np.sin(ph), 1.0 / f)


# -- LTI response ----------------------------------------------------------------

def test_identity_filter_scales_by_gain():
    drive = DriveWaveform(0.01, 0.02)
    out = etl.simulate_response(drive, LTIResponse(150.0, math.inf), 256)
    ph = out.phases
    np.testing.assert_allclose(out.powers, 150.0 * drive.sample(ph), atol=1e-12)


def test_first_order_at_corner():
    out = etl.simulate_response(DriveWaveform(0.0, 1.0, 60.0), LTIResponse(1.0, 60.0, 1), 4096)
    assert out.v_max == pytest.approx(1 / math.sqrt(2), abs=1e-6)
    assert out.phase_of_max == pytest.approx(math.pi / 2 + math.pi / 4, abs=TWO_PI / 4096)
    assert LTIResponse(1.0, 60.0, 1).phase_lag(60.0) == pytest.approx(math.pi / 4)


def test_reference_drive_calibration():
    drive = DriveWaveform(2.5e-3, 28e-3, 60.0)
    lti = etl.fit_lti_to_calibration(drive, SweepRange(-1.0, 2.0))
    out = etl.simulate_response(drive, lti, 2048)
    assert out.v_min == pytest.approx(-1.0, abs=1e-3)
    assert out.v_max == pytest.approx(2.0, abs=1e-3)


@settings(max_examples=25, deadline=None)
@given(st.floats(-1, 1), st.floats(0.1, 1), st.floats(-1, 1), st.floats(0.1, 1), st.floats(0.1, 3), st.floats(0, 3))
def test_superposition(o1, a1, o2, a2, ca, cb):
    lti = LTIResponse(200.0, 200.0, 2)
    out = lambda d: etl.simulate_response(d, lti, 64).powers
    combo = DriveWaveform(ca * o1 + cb * o2, ca * a1 + cb * a2)
    expect = ca * out(DriveWaveform(o1, a1)) + cb * out(DriveWaveform(o2, a2))
    np.testing.assert_allclose(out(combo), expect, atol=1e-9)


def test_simulate_rejects_low_resolution():
    with pytest.raises(ValueError):
        etl.simulate_response(DriveWaveform(0, 1), LTIResponse(1.0), 8)


# -- calibration -------------------------------------------------------------------

def test_calibrate_identity_filter():
    d = etl.calibrate_drive(SweepRange(-1.0, 2.0), LTIResponse(1.0, math.inf))
    assert d.offset == pytest.approx(0.5)
    assert d.amplitude == pytest.approx(1.5, rel=1e-6)


@pytest.mark.parametrize("lti", [LTIResponse(200.0), LTIResponse(50.0, 90.0, 1), LTIResponse(300.0, 70.0, 2)])
def test_calibrate_closed_loop(lti):
    target = SweepRange(-1.2, 2.3)
    out = etl.simulate_response(etl.calibrate_drive(target, lti), lti, 1024)
    assert abs(out.v_min - target.v_low) <= 0.01
    assert abs(out.v_max - target.v_high) <= 0.01


def test_calibrate_infeasible():
    with pytest.raises(InfeasibleDriveError):
        etl.calibrate_drive(SweepRange(-11.0, 11.0), LTIResponse(200.0))


# -- lookup ------------------------------------------------------------------------

def test_power_at_samples_and_midpoints():
    w = sine_waveform(64)
    np.testing.assert_array_equal(w.power_at(w.phases), w.powers)
    mid = 0.5 * (w.phases[3] + w.phases[4])
    assert w.power_at(mid) == pytest.approx(0.5 * (w.powers[3] + w.powers[4]), abs=1e-15)


def test_power_at_dense_sinusoid():
    w = sine_waveform(4096)
    ph = np.random.default_rng(0).uniform(0, TWO_PI, 1000)
    assert np.max(np.abs(w.power_at(ph) - np.sin(ph))) < 1e-4


def test_power_at_periodic():
    w = etl.skewed_waveform(-1.0, 2.0)
    ph = np.random.default_rng(1).uniform(0, TWO_PI, 1000)
    # adding 2*pi rounds the phase itself, so agreement is to rounding level
    np.testing.assert_allclose(w.power_at(ph), w.power_at(ph + TWO_PI), rtol=0, atol=1e-12)


def test_phases_for_power_sine():
    w = sine_waveform(1024)
    assert w.phases_for_power(0.0, UP) == pytest.approx(0.0, abs=1e-12)
    assert w.phases_for_power(0.0, DOWN) == pytest.approx(math.pi, abs=1e-12)
    for seg in (UP, DOWN):
        assert w.phases_for_power(w.v_max, seg) == pytest.approx(w.phase_of_max)
    with pytest.raises(PowerRangeError):
        w.phases_for_power(1.5, UP)


@pytest.mark.parametrize("w", [sine_waveform(1024, 1.5, 0.5), etl.skewed_waveform(-1.0, 2.0, skew=0.4)],
                         ids=["sine", "skewed"])
def test_phases_for_power_round_trip(w):
    rng = np.random.default_rng(3)
    for v in rng.uniform(w.v_min, w.v_max, 100):
        for seg in (UP, DOWN):
            assert w.power_at(w.phases_for_power(v, seg)) == pytest.approx(v, abs=1e-9)


def test_segments_are_monotone():
    w = etl.skewed_waveform(-1.0, 2.0, skew=0.5)
    _, up = w.segment(UP)
    _, down = w.segment(DOWN)
    assert np.all(np.diff(up) >= 0) and np.all(np.diff(down) <= 0)
    rise = (w.phase_of_max - w.phase_of_min) % TWO_PI
    assert not math.isclose(rise, math.pi, abs_tol=0.1)


# -- measured waveforms -----------------------------------------------------------------

def test_load_clean_table_verbatim(tmp_path):
    w = sine_waveform(32, 1.5, 0.5)
    p = tmp_path / "w.csv"
    w.to_csv(p)
    back = etl.load_measured_waveform(p)
    np.testing.assert_array_equal(back.phases, w.phases)
    np.testing.assert_array_equal(back.powers, w.powers)


def test_load_accepts_skewed_records():
    w = etl.skewed_waveform(-1.0, 2.0, skew=0.5, resolution=64)
    back = etl.load_measured_waveform(zip(w.phases, w.powers))
    assert back.v_min == -1.0 and back.v_max == 2.0


def test_load_rejects_two_maxima():
    ph = np.arange(64) * TWO_PI / 64
    with pytest.raises(WaveformFormatError, match="one maximum"):
        etl.load_measured_waveform(zip(ph, np.sin(2 * ph)))


def test_load_rejects_incomplete_cycle():
    ph = np.linspace(0, math.pi, 32, endpoint=False)
    with pytest.raises(WaveformFormatError, match="incomplete"):
        etl.load_measured_waveform(zip(ph, np.sin(ph / 2)))


def test_load_reports_row(tmp_path):
    p = tmp_path / "bad.csv"
    rows = [f"{k * TWO_PI / 20!r},{math.sin(k * TWO_PI / 20)!r}" for k in range(20)]
    rows[5] = "0.3,abc"
    p.write_text("phase_rad,power_D\n" + "\n".join(rows) + "\n")
    with pytest.raises(WaveformFormatError) as exc:
        etl.load_measured_waveform(p)
    assert exc.value.row == 7


def test_load_rejects_duplicates_and_short_tables():
    ph = list(np.arange(20) * TWO_PI / 20)
    ph[3] = ph[2]
    with pytest.raises(WaveformFormatError, match="duplicate"):
        etl.load_measured_waveform(zip(ph, np.sin(np.arange(20) * TWO_PI / 20)))
    with pytest.raises(WaveformFormatError, match="16"):
        etl.load_measured_waveform([(0.0, 0.0), (1.0, 1.0)])
