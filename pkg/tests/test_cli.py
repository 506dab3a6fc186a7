import csv
import io
import subprocess
import sys

import numpy as np

from volterra_qmle.cli import main


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_kernel_check_csv(capsys):
    code, out, err = run(["kernel-check", "--alpha", "0.8", "--t", "1.0", "--h-min", "0.001", "--quiet"], capsys)
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["h", "l1", "l2", "l1/h^alpha", "l2/h"]
    values = np.array(rows[1:], dtype=float)
    assert values.shape == (6, 5) and values[-1, 0] >= 0.001
    np.testing.assert_allclose(values[:, 3], values[:, 1] / values[:, 0] ** 0.8)


def test_estimate_rejects_alpha(capsys):
    code, out, err = run(["estimate", "--alpha", "1.2"], capsys)
    assert code == 1
    assert "alpha out of (0.5,1)" in err
    assert len(err.strip().splitlines()) == 1


def test_usage_errors_exit_two(capsys):
    assert run(["estimate", "--bogus"], capsys)[0] == 2
    assert run([], capsys)[0] == 2
    assert run(["invert"], capsys)[0] == 2
    assert run(["kernel-check", "--alpha", "abc"], capsys)[0] == 2


def test_malformed_config_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("alpha 0.8\n")
    code, _, err = run(["mc-table", "--config", str(bad)], capsys)
    assert code == 2 and "malformed config" in err
    assert run(["mc-table", "--config", str(tmp_path / "missing.cfg")], capsys)[0] == 2


def test_simulate_invert_estimate_pipeline(tmp_path, capsys):
    path_csv = tmp_path / "path.csv"
    assert run(["simulate", "--epsilon", "0.05", "--seed", "3", "--out", str(path_csv), "--quiet"], capsys)[0] == 0
    rows = list(csv.reader(path_csv.open()))
    assert rows[0] == ["t", "x_1", "z_1"] and len(rows) == 102

    obs_csv = tmp_path / "obs.csv"
    obs_csv.write_text("\n".join(",".join(r[:2]) for r in rows) + "\n")
    before = obs_csv.read_bytes()
    code, out, _ = run(["invert", "--input", str(obs_csv), "--k", "2", "--quiet"], capsys)
    assert code == 0
    z = list(csv.reader(io.StringIO(out)))
    assert z[0] == ["t", "z_1"] and len(z) == 52

    code, out, _ = run(["estimate", "--input", str(obs_csv), "--quiet"], capsys)
    assert code == 0
    head, vals = out.splitlines()
    assert head == "theta_1,theta_2,contrast,n_blocks,converged"
    assert vals.endswith(",100,1")
    assert obs_csv.read_bytes() == before


def test_refuses_to_overwrite_input(tmp_path, capsys):
    obs = tmp_path / "obs.csv"
    obs.write_text("t,x_1\n0,0\n0.1,0.2\n0.2,0.3\n")
    before = obs.read_bytes()
    code, _, err = run(["invert", "--input", str(obs), "--out", str(obs), "--quiet"], capsys)
    assert code == 1 and "refusing" in err
    assert obs.read_bytes() == before


def test_estimate_without_input_is_reproducible(capsys):
    a = run(["estimate", "--seed", "5", "--epsilon", "0.1", "--quiet"], capsys)
    b = run(["estimate", "--seed", "5", "--epsilon", "0.1", "--quiet"], capsys)
    assert a[0] == b[0] == 0 and a[1] == b[1]
    c = run(["estimate", "--seed", "5", "--epsilon", "0.1", "--minimizer", "nelder-mead", "--format", "json", "--quiet"], capsys)
    assert c[0] == 0 and '"method": "nelder-mead"' in c[1]


def test_mc_table_from_config_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "table.cfg"
    cfg.write_text(
        "# small table\nalpha = 0.8\nT = 1\nh = 1/100\nepsilon_list = 1/10, 1/20, 1/100\n"
        "k_list = 20, 10, 5, 2, 1\nn_rep = 50\nmaster_seed = 4\n"
    )
    code, out, err = run(["mc-table", "--config", str(cfg), "--n-rep", "4"], capsys)
    assert code == 0
    assert "'n_rep': 4" in err and "'seed': 4" in err and "N_by_k" in err
    lines = out.strip().splitlines()
    assert len(lines) == 12 and lines[0].count("eps=") == 3

    code, out, _ = run(["mc-table", "--config", str(cfg), "--n-rep", "4", "--format", "csv", "--quiet"], capsys)
    assert code == 0 and len(out.strip().splitlines()) == 16


def test_rate_commands(capsys):
    code, out, err = run(["rate-recon", "--epsilon", "1", "--n-rep", "20", "--h-max", "0.0625", "--h-min", "0.00390625"], capsys)
    assert code == 0 and "fitted slope" in err
    assert len(out.strip().splitlines()) == 6
    code, out, _ = run(
        ["rate-est", "--epsilon-list", "0.1,0.05,0.01", "--k-list", "5,2,1", "--n-rep", "10", "--quiet"], capsys
    )
    assert code == 0 and out.startswith("epsilon,error,fitted_slope")


def test_rate_est_degenerate_exits_one(capsys):
    code, _, err = run(["rate-est", "--epsilon-list", "0.1", "--k-list", "1", "--n-rep", "3", "--quiet"], capsys)
    assert code == 1 and "RegressionError" in err


def test_console_entry_point_runs():
    res = subprocess.run(
        [sys.executable, "-m", "volterra_qmle", "kernel-check", "--alpha", "0.7", "--h-max", "0.125", "--h-min", "0.0625", "--quiet"],
        capture_output=True, text=True, check=False,
    )
    assert res.returncode == 0 and res.stdout.startswith("h,l1,l2")
