import json
import subprocess
import sys

import numpy as np
import pytest

from lindblearn.cli import EXIT_CONFIG, EXIT_DATA, main
from lindblearn.forward import G2, LT, read_counts
from lindblearn.model import model_from_text


def run(*argv):
    return main([str(a) for a in argv])


def small_config(path, data_dir, steps=300, chains=2, **extra):
    lines = ["[sampler]", f"steps = {steps}", "thinning = 5", f"chains = {chains}", "",
             "[data]", f"lt_file = {data_dir / 'lt_noisy.tsv'}",
             f"g2_file = {data_dir / 'g2_noisy.tsv'}", "",
             "[analysis]", "mse_samples = 5", ""]
    for k, v in extra.items():
        lines.insert(1, f"{k} = {v}")
    path.write_text("\n".join(lines))
    return path


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--preset", "single", "--omega", 0.5, "--gamma", 1.0,
               "--background", 0.02, "--seed", 3, "--out", out) == 0
    return out


def test_gen_library(tmp_path, capsys):
    assert run("gen-library", "--dim", 2, "--out", tmp_path) == 0
    lines = (tmp_path / "library_d2_C2.jsonl").read_text().splitlines()
    assert len(lines) == 10 and json.loads(lines[0])["label"]
    assert run("gen-library", "--dim", 4, "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "candidates=136" in out
    first = (tmp_path / "library_d4_C2.jsonl").read_bytes()
    assert run("gen-library", "--dim", 4, "--out", tmp_path) == 0
    assert (tmp_path / "library_d4_C2.jsonl").read_bytes() == first


def test_simulate_outputs(sim_dir):
    tau, lt = read_counts(sim_dir / "lt_ideal.tsv")
    assert np.abs(lt - np.exp(-tau)).max() < 1e-6
    assert model_from_text((sim_dir / "model.txt").read_text()).signature == "H[σx] L[σ-]"
    tau, counts = read_counts(sim_dir / "lt_noisy.tsv")
    assert counts.max() > 5000 and np.all(counts == np.round(counts))


def test_simulate_independent_and_model_file(tmp_path):
    assert run("simulate", "--preset", "independent", "--gamma", 1.0, "--gamma-p", 1.0,
               "--out", tmp_path) == 0
    tau, g2 = read_counts(tmp_path / "g2_ideal.tsv")
    assert abs(g2[np.argmin(np.abs(tau))] - 0.5) < 1e-6
    assert run("simulate", "--preset", "symmetric", "--gamma", 1.0, "--gamma-p", 0.2,
               "--gamma-d", 0.3, "--out", tmp_path / "sym") == 0
    assert "σ_" in (tmp_path / "sym" / "model.txt").read_text()
    again = tmp_path / "again"
    assert run("simulate", "--model", tmp_path / "sym" / "model.txt", "--out", again) == 0
    assert (again / "model.txt").read_text() == (tmp_path / "sym" / "model.txt").read_text()


def test_simulate_bad_model(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("dim\t2\nH\tσ+\t1.0\n")
    assert run("simulate", "--model", bad, "--out", tmp_path) == EXIT_DATA
    assert run("simulate", "--model", tmp_path / "missing.txt", "--out", tmp_path) == EXIT_DATA


def test_learn_analyze_mix(tmp_path, sim_dir):
    cfg = small_config(tmp_path / "run.ini", sim_dir)
    out = tmp_path / "out"
    assert run("learn", "--config", cfg, "--out", out) == 0
    recs = sorted((out / "records").glob("chain_*.json"))
    assert len(recs) == 2
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["chains"]) == 2 and summary["library_size"] == 10
    assert run("analyze", "--config", cfg, "--records", out, "--out", out) == 0
    report = (out / "report.txt").read_text()
    assert "class 0" in report and "mse_LT" in report and "mse_G2" in report
    assert (out / "fit_class0_LT.tsv").exists() and (out / "classes.tsv").exists()
    assert run("mix", "--records", out, "--out", out) == 0
    mu = np.loadtxt(out / "mixing.tsv", skiprows=1)[:, 1:]
    assert np.all(np.diag(mu) == 0.5)


def test_fit_rates(tmp_path, sim_dir):
    cfg = small_config(tmp_path / "run.ini", sim_dir, steps=400)
    out = tmp_path / "fit"
    assert run("fit-rates", "--config", cfg, "--model", sim_dir / "model.txt", "--out", out) == 0
    rows = (out / "rate_summary.tsv").read_text().splitlines()
    assert rows[0] == "process\tmean\tsd" and len(rows) == 4


def test_learn_seed_override_and_threads_env(tmp_path, sim_dir, monkeypatch):
    cfg = small_config(tmp_path / "run.ini", sim_dir, steps=100, chains=2)
    monkeypatch.setenv("LL_THREADS", "2")
    assert run("learn", "--config", cfg, "--seed", 5, "--out", tmp_path / "a") == 0
    monkeypatch.delenv("LL_THREADS")
    assert run("learn", "--config", cfg, "--seed", 5, "--out", tmp_path / "b") == 0
    assert (tmp_path / "a" / "summary.json").read_bytes() == (tmp_path / "b" / "summary.json").read_bytes()
    assert "seed = 5" in (tmp_path / "a" / "config.ini").read_text()
    monkeypatch.setenv("LL_THREADS", "lots")
    assert run("learn", "--config", cfg, "--out", tmp_path / "c") == EXIT_CONFIG


def test_error_exit_codes(tmp_path, sim_dir):
    bad_cfg = tmp_path / "bad.ini"
    bad_cfg.write_text("[sampler]\nsteps = -3\n")
    assert run("learn", "--config", bad_cfg, "--out", tmp_path) == EXIT_CONFIG
    assert run("learn", "--config", tmp_path / "none.ini", "--out", tmp_path) == EXIT_CONFIG
    assert run("learn", "--out", tmp_path) == EXIT_CONFIG  # no data files configured
    empty = tmp_path / "empty.tsv"
    empty.write_text("")
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"[data]\nlt_file = {empty}\n")
    assert run("learn", "--config", cfg, "--out", tmp_path) == EXIT_DATA
    broken = tmp_path / "broken.tsv"
    broken.write_text("0.0\t10\n0.025\tten\n")
    cfg.write_text(f"[data]\nlt_file = {broken}\n")
    assert run("learn", "--config", cfg, "--out", tmp_path) == EXIT_DATA
    assert run("analyze", "--records", tmp_path / "nothing", "--out", tmp_path) == EXIT_DATA


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "lindblearn.cli", "gen-library", "--dim", "2",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0 and "unique=10" in res.stdout
    res = subprocess.run([sys.executable, "-m", "lindblearn.cli", "bogus"], capture_output=True)
    assert res.returncode != 0
