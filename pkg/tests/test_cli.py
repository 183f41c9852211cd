import json

import pytest

from sindy_unroll import io
from sindy_unroll.cli import main
from sindy_unroll.core import fingerprint


@pytest.fixture(scope="module")
def cubic_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "cubic.suds"
    assert main(["simulate", "--system", "cubic-oscillator", "--dt", "0.02", "--out", str(path)]) == 0
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_simulate_is_reproducible(tmp_path, capsys, cubic_file):
    code, out, _ = run(capsys, "simulate", "--system", "cubic-oscillator", "--dt", "0.02",
                       "--out", tmp_path / "again.suds")
    assert code == 0
    assert (tmp_path / "again.suds").read_bytes() == cubic_file.read_bytes()
    fp = out.split("fingerprint ")[1].strip()
    assert fp == fingerprint(io.load_dataset(cubic_file))
    echoed = json.loads((tmp_path / "again.suds.config.json").read_text())
    assert echoed["dt"] == 0.02 and echoed["t_end"] == 10.0


def test_simulate_bad_settings(tmp_path, capsys):
    assert run(capsys, "simulate", "--system", "cubic-oscillator", "--dt", "0",
               "--out", tmp_path / "x.suds")[0] == 2
    assert run(capsys, "simulate", "--system", "cubic-oscillator")[0] == 2
    with pytest.raises(SystemExit) as e:
        main(["simulate", "--system", "lorenz", "--out", str(tmp_path / "x")])
    assert e.value.code == 2


def test_simulate_blow_up_exit_code(tmp_path, capsys):
    code, _, err = run(capsys, "simulate", "--system", "fitzhugh-nagumo", "--t-end", "1", "--dt", "0.5",
                       "--initial-state", "1e6", "0", "--out", tmp_path / "x.suds")
    assert code == 3 and "error" in err


def test_discover_prints_equations(tmp_path, capsys, cubic_file):
    code, out, _ = run(capsys, "discover", "--data", cubic_file, "--K", 4, "--out", tmp_path / "m.json")
    assert code == 0
    assert out.startswith("dx/dt = ") and "dy/dt = " in out
    assert "l1 error vs ground truth" in out
    model = io.load_model(tmp_path / "m.json")
    assert model.config.K == 4 and model.config.lam == 0.01


def test_k1_equals_plain_sindy(tmp_path, capsys, cubic_file):
    assert run(capsys, "discover", "--data", cubic_file, "--out", tmp_path / "a.json")[0] == 0
    assert run(capsys, "discover", "--data", cubic_file, "--plain-sindy", "--out", tmp_path / "b.json")[0] == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_discover_divergence_exit_code(tmp_path, capsys, cubic_file):
    code, _, err = run(capsys, "discover", "--data", cubic_file, "--h-stride", 30, "--K", 50)
    assert code == 4 and "diverged" in err


def test_discover_bad_inputs(tmp_path, capsys, cubic_file):
    bad = tmp_path / "bad.suds"
    bad.write_bytes(cubic_file.read_bytes()[:40])
    assert run(capsys, "discover", "--data", bad)[0] == 2
    assert run(capsys, "discover", "--data", tmp_path / "missing.suds")[0] == 2
    assert run(capsys, "discover", "--data", cubic_file, "--h-stride", 0)[0] == 2
    assert run(capsys, "discover", "--data", cubic_file, "--K", 0)[0] == 2
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"data": str(cubic_file), "learning_rate": 0.1}))
    code, _, err = run(capsys, "discover", "--config", cfg)
    assert code == 2 and "learning_rate" in err


def test_config_file_layering(tmp_path, capsys, cubic_file):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"data": str(cubic_file), "K": 3, "method": "rk4"}))
    assert run(capsys, "discover", "--config", cfg, "--K", 2, "--out", tmp_path / "m.json")[0] == 0
    model = io.load_model(tmp_path / "m.json")
    assert (model.config.K, model.config.method) == (2, "rk4")


def test_advection_recovery(tmp_path, capsys):
    data = tmp_path / "adv.suds"
    assert run(capsys, "simulate", "--system", "advection", "--t-end", "0.4", "--out", data)[0] == 0
    code, out, _ = run(capsys, "discover", "--data", data, "--K", 25, "--h-stride", 40)
    assert code == 0
    assert "du/dt = -0.400 u_x" in out


def test_sweep_and_echo_rerun(tmp_path, capsys):
    out = tmp_path / "s.csv"
    argv = ["sweep", "--system", "cubic-oscillator", "--h", "0.04", "0.1", "--K", "1", "4",
            "--out", out, "--out-json", tmp_path / "s.json"]
    code, text, _ = run(capsys, *argv)
    assert code == 0 and text.startswith("4 cells (0 diverged)")
    first_csv, first_json = out.read_bytes(), (tmp_path / "s.json").read_bytes()
    rerun = tmp_path / "r.csv"
    assert run(capsys, "sweep", "--config", tmp_path / "s.csv.config.json", "--out", rerun,
               "--out-json", tmp_path / "r.json")[0] == 0
    assert rerun.read_bytes() == first_csv
    b1, b2 = json.loads(first_json), json.loads((tmp_path / "r.json").read_text())
    assert b1["cells"] == b2["cells"]
    assert out.read_text().splitlines()[0].startswith("system,method,solver,h,K,sigma,seed,status")


def test_sweep_empty_list(tmp_path, capsys):
    code, _, err = run(capsys, "sweep", "--system", "cubic-oscillator", "--h", "--out", tmp_path / "s.csv")
    assert code == 2 and "empty" in err


def test_stability_command(tmp_path, capsys):
    code, out, _ = run(capsys, "stability", "--system", "cubic-oscillator", "--method", "euler",
                       "--h", "0.6", "--K", "1", "50", "--out", tmp_path / "st.csv")
    assert code == 0
    assert "euler h=0.6      K=1    UNSTABLE" in out
    assert "euler h=0.6      K=50   stable" in out
    assert "-0.2159-3.2058i" in out
    assert run(capsys, "stability", "--out", tmp_path / "st.csv")[0] == 2
    assert run(capsys, "stability", "--system", "advection", "--out", tmp_path / "st.csv")[0] == 2


def test_probe_truncation_command(tmp_path, capsys):
    out = tmp_path / "p.csv"
    code, text, _ = run(capsys, "probe-truncation", "--method", "euler", "--out", out)
    assert code == 0
    slope = float(text.split(":")[1])
    assert -1.1 <= slope <= -0.9
    assert len(out.read_text().splitlines()) == 1 + 7
    code, text, _ = run(capsys, "probe-truncation", "--method", "rk4", "--out", out)
    assert code == 0 and 3.5 <= float(text.split(":")[1]) <= 4.5
    assert run(capsys, "probe-truncation", "--K", "4", "--out", out)[0] == 2


def test_fallback_to_gradient_solver(capsys, cubic_file):
    code, out, err = run(capsys, "discover", "--data", cubic_file, "--h-stride", 30, "--K", 50,
                         "--fallback-sgd")
    assert code == 0 and "retrying with the gradient solver" in err
    assert out.startswith("dx/dt = ")


def test_module_entry_point(tmp_path):
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "sindy_unroll", "probe-truncation", "--out",
                          str(tmp_path / "p.csv")], capture_output=True, text=True)
    assert res.returncode == 0 and "slope" in res.stdout
