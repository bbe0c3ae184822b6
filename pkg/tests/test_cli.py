import json
import subprocess
import sys

import numpy as np
import pytest

from focalsweep import cli, retina
from focalsweep.config import ConfigError, load_config
from focalsweep.sync import LEFT
from focalsweep.verify import INJECTIONS, run_checks

SMALL = {"scene": "sec43-bunnies", "eye_size": [160, 120], "projector_size": [256, 192],
         "eye": {"pupil_diameter_m": 0.004, "subsamples": 2}}


def write_config(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


@pytest.fixture(scope="module")
def verify_rows():
    return {name: ok for name, ok, _ in run_checks()}


@pytest.mark.parametrize("text", ["", "{}", "[1, 2]", "{\"scene\": "])
def test_bad_config_files_are_usage_errors(tmp_path, text):
    p = tmp_path / "c.json"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_config(p)
    assert cli.main(["plan", "--config", str(p), "--out", str(tmp_path)]) == 2


def test_unknown_key_and_missing_file(tmp_path):
    assert cli.main(["plan", "--config", write_config(tmp_path, {"colour": 1})]) == 2
    assert cli.main(["plan", "--config", str(tmp_path / "nope.json")]) == 2
    assert cli.main(["plan", "--scene", "no-such-scene", "--out", str(tmp_path)]) == 2


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["explode"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["simulate", "--accommodation", "-1"])
    assert exc.value.code == 2


def test_inject_outside_verify_is_usage_error(tmp_path):
    assert cli.main(["plan", "--inject", "delay", "--out", str(tmp_path)]) == 2
    assert cli.main(["verify", "--inject", "bogus", "--out", str(tmp_path)]) == 2


def test_plan_default(tmp_path, capsys):
    assert cli.main(["plan", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "plan.json").read_text())
    assert rep["sweep_range_D"] == pytest.approx([-1.0, 2.0])
    assert rep["frames_per_period"] == 33 and rep["per_eye_budget"] == 15
    assert "budget 15" in capsys.readouterr().out


def test_plan_infeasible(tmp_path):
    cfg = write_config(tmp_path, {"samples": {"count": 20}, "out": str(tmp_path)})
    assert cli.main(["plan", "--config", cfg]) == 1
    assert not json.loads((tmp_path / "plan.json").read_text())["feasible"]


def test_schedule_ok_and_failures(tmp_path):
    ok = write_config(tmp_path, dict(SMALL, out=str(tmp_path / "ok")))
    assert cli.main(["schedule", "--config", ok]) == 0
    assert (tmp_path / "ok" / "chart.csv").exists()
    slow = write_config(tmp_path, dict(SMALL, delays_ms={"projector": 0.15, "shutter_close": 0.1,
                                                         "shutter_open": 10.0}), "slow.json")
    assert cli.main(["schedule", "--config", slow, "--out", str(tmp_path / "slow")]) == 1
    flicker = write_config(tmp_path, dict(SMALL, frequency_hz=30.0), "flicker.json")
    assert cli.main(["schedule", "--config", flicker, "--out", str(tmp_path / "flicker")]) == 1


def test_verify_clean(verify_rows):
    assert all(verify_rows.values()), verify_rows


@pytest.mark.parametrize("mode, check", [
    ("delay", "schedule_valid"),
    ("segments", "segment_assignment"),
    ("compensation", "breathing_compensated"),
    ("filter", "radiance_conservation"),
    ("shutter", "crosstalk_zero"),
])
def test_verify_injections_flip_their_check(mode, check, verify_rows):
    assert mode in INJECTIONS
    rows = {name: ok for name, ok, _ in run_checks(inject=[mode])}
    assert verify_rows[check] and not rows[check]


def test_verify_cli_writes_matrix(tmp_path):
    assert cli.main(["verify", "--out", str(tmp_path)]) == 0
    rows = json.loads((tmp_path / "verify.json").read_text())
    assert rows and all(r["pass"] for r in rows)
    assert cli.main(["verify", "--inject", "filter", "--out", str(tmp_path)]) == 1


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    cfg = write_config(out, dict(SMALL, out=str(out), accommodation_m=[0.36, 0.52, 1.02]))
    assert cli.main(["render", "--config", cfg]) == 0
    assert cli.main(["simulate", "--config", cfg]) == 0
    return out, cfg


def test_simulate_outputs(simulated):
    out, _ = simulated
    rep = json.loads((out / "focus_report.json").read_text())
    assert len(rep["entries"]) == 6
    assert rep["meta"]["crosstalk"] == {"left": 0.0, "right": 0.0}
    assert (out / "retina_left_acc0520mm.png").exists()
    with np.load(out / "retina.npz") as z:
        assert "left_0520000um" in z.files


def test_simulate_from_disk_matches_in_process(simulated):
    out, cfg_path = simulated
    cfg = load_config(cfg_path)
    fx, scene = cli._scene(cfg)
    frames = cli._render(cfg, out / "fresh")[2]
    plan = cli._plan(cfg, cli._samples_for(cfg))
    res = retina.view_through_etl(frames, scene, plan.chart, plan.waveform, LEFT, cfg.accommodation_m,
                                  cfg.eye_model, cfg.delays, cfg.subsamples)
    with np.load(out / "retina.npz") as z:
        for a in cfg.accommodation_m:
            assert np.array_equal(z[f"left_{int(round(a * 1e6)):07d}um"], res.image(a))


def test_simulate_is_deterministic(simulated, tmp_path):
    out, cfg = simulated
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 0
    with np.load(out / "retina.npz") as a, np.load(tmp_path / "retina.npz") as b:
        assert a.files == b.files
        for k in a.files:
            assert np.array_equal(a[k], b[k])


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "focalsweep", "plan", "--scene", "nope"],
                       capture_output=True, text=True)
    assert r.returncode == 2 and "error" in r.stderr
