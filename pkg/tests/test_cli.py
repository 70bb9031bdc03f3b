import json

import pytest

from sasextremes.cli import ENV_OUT, run, svg_line_chart, write_atomic


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "frechet.toml"
    path.write_text(
        "alpha = 1.0\nbetas = [0.4, 0.4]\nladder = [100, 300]\nreps = 100\n"
        "ell_field = 16\nell_limit = 16\ndelta = 0.000244140625\n"
    )
    return path


def test_info_prints_constant(capsys):
    assert run(["info", "--alpha", "1"]) == 0
    out = capsys.readouterr().out
    assert "C_alpha = 0.636619772367581 (= 2/pi)" in out
    assert "Frechet" in out
    assert run(["info", "--alpha", "1.2", "--betas", "0.7,0.8", "--n", "100"]) == 0
    out = capsys.readouterr().out
    assert "non-Frechet" in out and "b_n at n=100" in out


def test_verify_is_deterministic(config, tmp_path):
    out = tmp_path / "out"
    assert run(["verify", "--config", str(config), "--seed", "42", "--out", str(out)]) in (0, 1)
    first = (out / "supmeasure_convergence.json").read_bytes()
    assert run(["verify", "--config", str(config), "--seed", "42", "--out", str(out)]) in (0, 1)
    assert (out / "supmeasure_convergence.json").read_bytes() == first
    doc = json.loads(first)
    assert doc["seed"] == 42 and len(doc["config_hash"]) == 64 and doc["version"]
    assert (out / "supmeasure_convergence_plot.csv").read_text().startswith("# config_hash=")


def test_simulate_field_csv_header(config, tmp_path):
    out = tmp_path / "f"
    assert run(["simulate-field", "--config", str(config), "--seed", "1", "--out", str(out),
                "--format", "csv", "--n", "60"]) == 0
    lines = (out / "field.csv").read_text().splitlines()
    meta = dict(item.split("=", 1) for item in lines[0][2:].split())
    assert meta["n"] == "60;60" and meta["alpha"] == "1" and meta["beta"] == "0.4;0.4"
    assert float(meta["b_n"]) > 0 and meta["ell"] == "16" and meta["seed"] == "1"
    assert lines[1] == "k1,k2,value"
    assert len(lines) > 2


def test_simulate_limit_and_seed_echo(config, tmp_path, capsys):
    out = tmp_path / "l"
    assert run(["simulate-limit", "--config", str(config), "--out", str(out), "--grid", "0.5,0.5,1,1"]) == 0
    doc = json.loads((out / "limit.json").read_text())
    assert doc["W"][1] >= doc["W"][0]
    assert f"(seed {doc['seed']})" in capsys.readouterr().out


def test_intersections_and_marginal_commands(tmp_path):
    out = tmp_path / "i"
    code = run(["intersections", "--betas", "0.7,0.7", "--reps", "100", "--seed", "3", "--out", str(out),
                "--svg", "--format", "csv"])
    assert code in (0, 1)
    assert (out / "intersection_dichotomy.csv").exists()
    assert (out / "intersection_dichotomy_plot.svg").read_text().startswith("<svg")
    assert run(["marginal", "--alpha", "1", "--reps", "2000", "--seed", "3", "--out", str(out)]) in (0, 1)
    assert (out / "marginal_sas.json").exists()


def test_usage_and_config_errors(tmp_path, capsys):
    assert run(["verify", "--bogus"]) == 2
    assert run(["nonsense"]) == 2
    assert run(["info", "--seed", "-4"]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("alpha = \n")
    assert run(["verify", "--config", str(bad)]) == 2
    assert "config error" in capsys.readouterr().err
    assert run(["info", "--alpha", "2.5"]) == 2


def test_env_override_for_out(config, tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_OUT, str(tmp_path / "envout"))
    assert run(["simulate-limit", "--config", str(config), "--seed", "9"]) == 0
    assert (tmp_path / "envout" / "limit.json").exists()


def test_atomic_write_and_svg(tmp_path):
    path = tmp_path / "a" / "b.txt"
    write_atomic(path, "hello")
    assert path.read_text() == "hello"
    assert [p.name for p in path.parent.iterdir()] == ["b.txt"]
    svg = svg_line_chart({"box": [(1e3, 0.1), (1e4, 0.05)]}, "n", "ks")
    assert svg.count("<polyline") == 1
