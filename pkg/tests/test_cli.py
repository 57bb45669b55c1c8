import json

import numpy as np
import pytest

from npat import __main__ as entry
from npat.cli import main
from npat.config import APP_VERSION, EXIT_CONFIG, EXIT_GEOMETRY, EXIT_OK
from npat.fieldfile import FieldFile

VISIBLE_CONFIG = """
[geometry]
preset = corner
arm_length = 1.0
pad = 2.2
h = 0.05

[time]
T = 1.0

[phantom]
kind = bump
centers = 0.3 0.3
radii = 0.1

[rays]
n_dirs = 16
heatmap_stride = 4
"""


@pytest.fixture
def small_ini(tmp_path, small_config_text):
    path = tmp_path / "small.ini"
    path.write_text(small_config_text)
    return path


def _run(*argv):
    return main([str(a) for a in argv])


def test_forward_then_reconstruct(tmp_path, small_ini):
    out = tmp_path / "run"
    assert _run("forward", "--config", small_ini, "--out", out, "-q") == EXIT_OK
    for name in ("phantom_u0", "phantom_u1", "trace_plus", "trace_minus", "region"):
        assert (out / f"{name}.npf").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "forward"
    assert manifest["n_steps"] == 27
    assert set(manifest["files"]) >= {"trace_plus.npf", "trace_minus.npf"}

    assert _run("reconstruct", "--config", small_ini, "--out", out, "--stride", 1, "-q") == EXIT_OK
    assert (out / "iterate_0002_u0.npf").exists()
    estimate = FieldFile.read(out / "estimate_u0.npf").values
    truth = FieldFile.read(out / "phantom_u0.npf").values
    assert np.abs(estimate - truth).max() < np.abs(truth).max()
    header = (out / "log.csv").read_text().splitlines()[0]
    assert header == "iter,error,update,rate,seconds"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["iterations"] == 3
    assert "log.csv" not in manifest["files"]


def test_reconstruct_is_thread_count_independent(tmp_path, small_ini):
    data = tmp_path / "data"
    assert _run("forward", "--config", small_ini, "--out", data, "-q") == EXIT_OK
    outputs = []
    for threads in (1, 2):
        out = tmp_path / f"t{threads}"
        assert _run("reconstruct", "--config", small_ini, "--out", out, "--data", data,
                    "--threads", threads, "-q") == EXIT_OK
        outputs.append(out)
    for name in ("estimate_u0.npf", "estimate_u1.npf", "manifest.json"):
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes()


def test_reconstruct_rejects_data_from_another_grid(tmp_path, small_ini, small_config_text):
    data = tmp_path / "data"
    assert _run("forward", "--config", small_ini, "--out", data, "-q") == EXIT_OK
    other = tmp_path / "other.ini"
    other.write_text(small_config_text.replace("pad = 1.5", "pad = 1.6"))
    code = _run("reconstruct", "--config", other, "--out", tmp_path / "r", "--data", data, "-q")
    assert code == EXIT_GEOMETRY


def test_manifest_reruns_its_config(tmp_path, small_ini):
    out = tmp_path / "run"
    assert _run("forward", "--config", small_ini, "--out", out, "-q") == EXIT_OK
    again = tmp_path / "again"
    assert _run("forward", "--config", out / "manifest.json", "--out", again, "-q") == EXIT_OK
    assert (out / "trace_plus.npf").read_bytes() == (again / "trace_plus.npf").read_bytes()


def test_manifest_rerun_finds_a_relative_speed_file(tmp_path, small_config_text):
    cfg_dir = tmp_path / "cfg"
    cfg_dir.mkdir()
    FieldFile.field(np.ones((51, 51))).write(cfg_dir / "c.npf")
    ini = cfg_dir / "run.ini"
    ini.write_text(small_config_text + "\n[speed]\nkind = file\npath = c.npf\n")
    out = tmp_path / "out"
    assert _run("forward", "--config", ini, "--out", out, "-q") == EXIT_OK
    assert json.loads((out / "manifest.json").read_text())["config_dir"] == str(cfg_dir.resolve())
    again = tmp_path / "again"
    assert _run("forward", "--config", out / "manifest.json", "--out", again, "-q") == EXIT_OK
    assert (out / "trace_plus.npf").read_bytes() == (again / "trace_plus.npf").read_bytes()


def test_eight_threads_change_no_output_byte(tmp_path, small_ini):
    runs = []
    for threads in (1, 8):
        out = tmp_path / f"t{threads}"
        assert _run("forward", "--config", small_ini, "--out", out, "--threads", threads, "-q") == EXIT_OK
        assert _run("reconstruct", "--config", small_ini, "--out", out, "--threads", threads,
                    "-q") == EXIT_OK
        runs.append(out)
    names = sorted(p.name for p in runs[0].iterdir() if p.name != "log.csv")
    assert names == sorted(p.name for p in runs[1].iterdir() if p.name != "log.csv")
    for name in names:
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes(), name


def test_pat_forward_reflects_the_trace(tmp_path, small_config_text):
    ini = tmp_path / "pat.ini"
    ini.write_text(small_config_text.replace("radii = 0.15", "radii = 0.15\npat = true"))
    out = tmp_path / "pat"
    assert _run("forward", "--config", ini, "--out", out, "-q") == EXIT_OK
    plus = FieldFile.read(out / "trace_plus.npf").to_trace()
    minus = FieldFile.read(out / "trace_minus.npf").to_trace()
    assert np.array_equal(minus.values, -plus.values)
    assert json.loads((out / "manifest.json").read_text())["pat"] is True


def test_pat_needs_source_at_rest(tmp_path, small_config_text):
    ini = tmp_path / "pat.ini"
    ini.write_text(small_config_text.replace("radii = 0.15", "radii = 0.15\npat = true\nvelocity_part = true"))
    assert _run("forward", "--config", ini, "--out", tmp_path / "o", "-q") == EXIT_CONFIG


def test_vc_prints_pass_line(tmp_path, capsys):
    ini = tmp_path / "vis.ini"
    ini.write_text(VISIBLE_CONFIG)
    out = tmp_path / "vc"
    assert _run("vc", "--config", ini, "--out", out, "-q") == EXIT_OK
    assert capsys.readouterr().out.strip() == "pass=true fraction=1.000000"
    assert (out / "vc.csv").read_text().startswith("x,y,dir_index,outcome,hit_time,cos_incidence\n")
    heat = FieldFile.read(out / "heatmap.npf").values
    assert heat.shape == (65, 65)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["vc_pass"] is True and manifest["worst_case"] is None


def test_doi(tmp_path, small_ini, capsys):
    out = tmp_path / "doi"
    assert _run("doi", "--config", small_ini, "--out", out, "-q") == EXIT_OK
    line = capsys.readouterr().out.strip()
    assert line.startswith("doi_nodes=") and line.endswith("region_inside=true")
    times = FieldFile.read(out / "travel_time.npf").values
    assert times[0, 5] == 0.0 and times[10, 10] == pytest.approx(0.5, abs=0.05)


def test_audit(tmp_path, small_config_text, capsys):
    ini = tmp_path / "audit.ini"
    ini.write_text(small_config_text + "\n[audit]\nresolutions = 0.05\n")
    out = tmp_path / "audit"
    assert _run("audit", "--config", ini, "--out", out, "-q") == EXIT_OK
    assert capsys.readouterr().out.startswith("h=0.05 residual=")
    lines = (out / "audit_h0.05.csv").read_text().splitlines()
    assert lines[0] == "step,time,energy,flux,residual"
    assert len(lines) == 1 + 28


def test_pdf_output(tmp_path, small_config_text):
    ini = tmp_path / "pdf.ini"
    ini.write_text(small_config_text + "\n[output]\nformats = field, pgm, pdf\n")
    out = tmp_path / "pdf"
    assert _run("forward", "--config", ini, "--out", out, "-q") == EXIT_OK
    assert (out / "report.pdf").read_bytes().startswith(b"%PDF")
    manifest = json.loads((out / "manifest.json").read_text())
    assert "phantom_u0.pgm" in manifest["files"]
    lo, hi = manifest["pgm_ranges"]["phantom_u0"]
    assert lo == 0.0 and hi == pytest.approx(1.0, abs=0.05)


def test_missing_config_file_exits_1(tmp_path):
    assert _run("forward", "--config", tmp_path / "none.ini") == EXIT_CONFIG


def test_invalid_config_exits_1(tmp_path, small_config_text):
    ini = tmp_path / "bad.ini"
    ini.write_text(small_config_text.replace("T = 0.6", "T = 0.8"))
    assert _run("forward", "--config", ini, "--out", tmp_path / "o", "-q") == EXIT_CONFIG


def test_usage_errors_exit_1():
    with pytest.raises(SystemExit) as exc:
        main(["forward"])
    assert exc.value.code == EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate", "--config", "x.ini"])
    assert exc.value.code == EXIT_CONFIG


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert APP_VERSION in capsys.readouterr().out


def test_module_entry_point_is_main():
    assert entry.main is main
