import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from rsblab import cli, verify
from rsblab.config import equivalent, load_config, parse_config, resolved_text
from rsblab.core import load_realization
from rsblab.errors import ConfigError


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def run_cli(tmp_path, command, text, *extra):
    out = tmp_path / "out"
    code = cli.main([command, "--config", write(tmp_path, text), "--out", str(out), *extra])
    return code, out


# --- config -------------------------------------------------------------------

def test_parse_defaults_and_types():
    cfg = parse_config("[model]\nL = 3\nM = 4\nbeta = 0.5\n[mc-run]\norder = checkerboard\n", "mc-run")
    assert cfg.params.L == 3 and cfg.params.M == 4 and cfg.params.beta == 0.5
    assert cfg.options["order"] == "checkerboard" and cfg.options["thermalization"] is None
    assert cfg.ensemble_count == 10 and cfg.workers == 1


@pytest.mark.parametrize("text,command", [
    ("[model]\nLL = 3\n", "ed-check"),
    ("[model]\nbeta = 0\n", "ed-check"),
    ("[model]\nbeta = abc\n", "ed-check"),
    ("[bogus]\nx = 1\n", "ed-check"),
    ("[model]\nL = 2\n", "mc-run"),
    ("[model]\nM = 2\n[mc-run]\nreplicas = 1\n", "mc-run"),
    ("[model]\nb3 = 0.5\n", "ed-check"),
    ("[scan]\ntarget = nothing\n", "scan"),
    ("[ensemble]\ncount = 0\n", "scan"),
    ("not an ini file", "scan"),
])
def test_invalid_configs_rejected(text, command):
    with pytest.raises(ConfigError):
        parse_config(text, command)


def test_other_command_sections_are_ignored():
    cfg = parse_config("[model]\nM = 2\n[scan]\ntarget = mu3\n[mc-run]\nsweeps = 5000\n", "mc-run")
    assert cfg.options["sweeps"] == 5000


@pytest.mark.parametrize("command", ["ed-check", "trotter-scan", "mc-run", "fkg-check", "bound-check",
                                     "gg-check", "scan"])
def test_resolved_echo_roundtrip(command):
    text = "[model]\nbeta = 0.7\nJ1 = 0.3\nL = 2\nM = 3\n[ensemble]\ncount = 4\nmaster_seed = 99\n"
    cfg = parse_config(text, command, seed=5, workers=2)
    back = parse_config(resolved_text(cfg), command)
    assert equivalent(cfg, back)
    assert back.master_seed == 5 and back.workers == 2


def test_flags_override_file(tmp_path):
    path = write(tmp_path, "[ensemble]\nmaster_seed = 1\n[output]\ndir = a\n[backend]\nworkers = 3\n")
    cfg = load_config(path, "scan", seed=7, out_dir="b", workers=1)
    assert (cfg.master_seed, cfg.out_dir, cfg.workers) == (7, "b", 1)


def test_missing_config_file(tmp_path):
    assert cli.main(["scan", "--config", str(tmp_path / "none.ini")]) == cli.EXIT_CONFIG


# --- commands -------------------------------------------------------------------

def test_gg_check_relabeling_identity(tmp_path):
    code, out = run_cli(tmp_path, "gg-check",
                        "[model]\nL = 2\nM = 2\nb3 = 0.5\n[ensemble]\ncount = 50\n"
                        "[gg-check]\nf = one\nbackend = exact\nL_list = 1, 2\n")
    assert code == 0
    res = rows(out / "results" / "gg.csv")
    assert len(res) == 2 and all(abs(float(r["residual"])) <= 1e-12 for r in res)
    assert (out / "config.resolved").exists()
    assert len(list((out / "disorder").glob("*.json"))) == 100
    report = json.loads((out / "reports" / "gg-check.json").read_text())
    assert report["pass"] is True


def test_gg_check_small_ensemble_is_config_error(tmp_path):
    code, _ = run_cli(tmp_path, "gg-check", "[model]\nM = 2\nb3 = 0.5\n[ensemble]\ncount = 5\n"
                                            "[gg-check]\nbackend = exact\n")
    assert code == cli.EXIT_CONFIG


def test_scan_psi_high_temperature_zero(tmp_path):
    code, out = run_cli(tmp_path, "scan", "[model]\nbeta = 1e-9\n[ensemble]\ncount = 6\n"
                                          "[scan]\ntarget = psi\nL_list = 1, 2, 3\nexpect = zero\n")
    assert code == 0
    res = rows(out / "results" / "scan_psi.csv")
    assert [r["axis"] for r in res] == ["1.0", "2.0", "3.0"]
    assert all(abs(float(r["estimate"])) <= 1e-12 for r in res)
    fit = json.loads((out / "reports" / "scan_psi_fit.json").read_text())
    assert fit["fit"] is None


def test_scan_beta_zero_is_invalid(tmp_path):
    code, _ = run_cli(tmp_path, "scan", "[model]\nbeta = 0\n[scan]\ntarget = psi\n")
    assert code == cli.EXIT_CONFIG


def test_trotter_scan_single_site(tmp_path):
    code, out = run_cli(tmp_path, "trotter-scan", "[model]\nL = 1\n[ensemble]\ncount = 3\n")
    assert code == 0
    res = rows(out / "results" / "trotter.csv")
    assert len(res) == 12
    for r in res:
        if r["halving_ratio"]:
            assert 1.5 <= float(r["halving_ratio"]) <= 4.5
    errs = [float(r["rel_error"]) for r in res[:4]]
    assert errs == sorted(errs, reverse=True)


def test_resource_cap_exit(tmp_path):
    code, _ = run_cli(tmp_path, "ed-check", "[model]\nL = 6\n[backend]\ned_cap = 32\n[ensemble]\ncount = 1\n")
    assert code == cli.EXIT_CAP


def test_ed_check_single_site_passes(tmp_path):
    code, out = run_cli(tmp_path, "ed-check", "[model]\nL = 1\n[ensemble]\ncount = 5\n")
    assert code == 0
    names = {r["check"] for r in rows(out / "results" / "ed_check.csv")}
    assert {"closed_form_logZ", "duhamel_identity", "harris"} <= names


def test_fkg_and_bound_check(tmp_path):
    text = "[model]\nL = 2\nM = 2\nb3 = 0.5\n[ensemble]\ncount = 2\n"
    code, out = run_cli(tmp_path, "fkg-check", text)
    assert code == 0
    code, out = run_cli(tmp_path, "bound-check", text)
    assert code == 0
    report = json.loads((out / "reports" / "bound-check.json").read_text())
    assert {c["check_id"] for c in report["checks"]} == {"four_point_bound", "harris_sandwich"}
    dis = load_realization(out / "disorder" / "r0000.json")
    assert dis.M == 2


def test_mc_run_outputs(tmp_path):
    code, out = run_cli(tmp_path, "mc-run", "[model]\nL = 2\nM = 2\n[ensemble]\ncount = 1\n"
                                            "[mc-run]\nsweeps = 6000\nreplicas = 3\n")
    assert code == 0
    assert (out / "results" / "mc_r0000_rho3_23.csv").exists()
    meta = json.loads((out / "results" / "mc_r0000_meta.json").read_text())
    assert len(meta["replica_seeds"]) == 3
    summary = rows(out / "results" / "mc_summary.csv")
    assert any(r["observable"] == "mu3" and r["exact"] for r in summary)


def test_workers_do_not_change_results(tmp_path):
    text = "[model]\nbeta = 1.0\n[ensemble]\ncount = 6\n[scan]\ntarget = overlap_total\nL_list = 2, 3\n"
    a = tmp_path / "a"
    b = tmp_path / "b"
    a.mkdir()
    b.mkdir()
    assert cli.main(["scan", "--config", write(a, text), "--out", str(a / "o"), "--workers", "1"]) == 0
    assert cli.main(["scan", "--config", write(b, text), "--out", str(b / "o"), "--workers", "2"]) == 0
    for name in ("results/scan_overlap_total.csv", "results/scan_overlap_total.dat"):
        assert (a / "o" / name).read_bytes() == (b / "o" / name).read_bytes()


def test_module_entry_point(tmp_path):
    path = write(tmp_path, "[model]\nL = 1\n[ensemble]\ncount = 1\n")
    proc = subprocess.run([sys.executable, "-m", "rsblab", "trotter-scan", "--config", path,
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "PASS trotter.halving_ratio" in proc.stdout


# --- plot data ---------------------------------------------------------------------

def test_emit_plot_data_format(tmp_path):
    scan = verify.ScanResult("L", [(L, 1.0 / L, 0.01, 50) for L in (2, 3, 4, 5)], target="demo")
    scan.fit_loglog()
    files = cli.emit_plot_data(scan, tmp_path / "demo.dat")
    lines = (tmp_path / "demo.dat").read_text().splitlines()
    data = [ln for ln in lines if not ln.startswith("#")]
    assert len(data) == 4 and lines[0].startswith("#")
    np.testing.assert_allclose(np.loadtxt(tmp_path / "demo.dat"), [[L, 1 / L, 0.01] for L in (2, 3, 4, 5)])
    assert len(files) == 2
    fit_data = np.loadtxt(tmp_path / "demo_loglog.dat")
    np.testing.assert_allclose(fit_data[:, 3], fit_data[:, 1], atol=1e-12)
    before = [f.read_bytes() for f in files]
    cli.emit_plot_data(scan, tmp_path / "demo.dat")
    assert [f.read_bytes() for f in files] == before


def test_emit_plot_data_degenerate_fit(tmp_path, capsys):
    scan = verify.ScanResult("L", [(2, 0.0, 0.1, 5), (3, 0.1, 0.1, 5)])
    scan.fit_loglog()
    files = cli.emit_plot_data(scan, tmp_path / "d.dat")
    assert files == [tmp_path / "d.dat"]
    assert not (tmp_path / "d_loglog.dat").exists()
    assert "warning" in capsys.readouterr().err
    with pytest.raises(ValueError):
        cli.emit_plot_data(verify.ScanResult("L", []), tmp_path / "e.dat")
