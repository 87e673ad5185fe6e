import csv
import json

import numpy as np
import pytest

from dpsqkd import __version__
from dpsqkd.cli import EXIT_ABORT, EXIT_CONFIG, EXIT_GUARD, EXIT_OK, main, to_csv


def load(path):
    with open(path) as fh:
        return json.load(fh)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate_ideal_run(tmp_path):
    out = tmp_path / "report.json"
    code = main(["simulate", "--n", "3", "--mu", "1.0", "--eta", "0.1", "--blocks", "1000000",
                 "--seed", "42", "--attack", "none", "--out", str(out)])
    assert code == EXIT_OK
    art = load(out)
    assert art["report"]["qber_hat"] == 0
    assert art["seed"] == 42 and art["version"] == __version__
    assert art["config"]["n"] == 3 and art["config"]["nu_max"] == 11
    assert art["decision"] == "continue"


def test_simulate_attack_at_low_intensity_aborts(tmp_path):
    code = main(["simulate", "--n", "3", "--mu", "0.01", "--eta", "0.1", "--blocks", "100000",
                 "--attack", "intercept", "--out", str(tmp_path / "r.json")])
    assert code == EXIT_ABORT
    assert load(tmp_path / "r.json")["decision"] == "abort"


@pytest.mark.parametrize("argv", [
    ["simulate", "--mu", "1", "--eta", "0.1"],
    ["simulate", "--n", "3", "--mu", "1", "--eta", "0.1", "--bogus", "1"],
    ["simulate", "--n", "3", "--mu", "1", "--eta", "2"],
    ["simulate", "--n", "3", "--mu", "1", "--eta", "0.1", "--blocks", "0"],
    ["verify-lemmas", "--n-max", "9"],
    ["bounds", "--n", "3", "--e", "0.01"],
    ["fit", "--input", "/nonexistent.csv", "--y", "g"],
    [],
])
def test_config_errors_exit_one(argv, capsys):
    assert main(argv) == EXIT_CONFIG
    assert "error" in capsys.readouterr().err


def test_simulate_artifacts_are_bit_identical(tmp_path, monkeypatch):
    argv = ["simulate", "--n", "4", "--mu", "0.5", "--eta", "0.2", "--blocks", "200000",
            "--seed", "5", "--attack", "intercept", "--tag-nu"]
    main(argv + ["--out", str(tmp_path / "a.json")])
    main(argv + ["--out", str(tmp_path / "b.json")])
    monkeypatch.setenv("DPSQKD_WORKERS", "3")
    main(argv + ["--out", str(tmp_path / "c.json")])
    a = (tmp_path / "a.json").read_bytes()
    assert a == (tmp_path / "b.json").read_bytes() == (tmp_path / "c.json").read_bytes()
    assert "detections_by_nu" in json.loads(a)["report"]


def test_simulate_block_csv_and_key_value_format(tmp_path):
    code = main(["simulate", "--n", "3", "--mu", "1", "--eta", "0.5", "--blocks", "1000",
                 "--format", "csv", "--out", str(tmp_path / "r.csv"),
                 "--blocks-out", str(tmp_path / "blocks.csv")])
    assert code == EXIT_OK
    blocks = rows(tmp_path / "blocks.csv")
    assert list(blocks[0]) == ["block_index", "nu", "timing", "alice_bit", "bob_bit"]
    assert len(blocks) == 1000
    kv = {r["key"]: r["value"] for r in rows(tmp_path / "r.csv")}
    assert kv["config.n"] == "3" and kv["version"] == __version__ and kv["seed"] == "0"


def test_verify_lemmas_table(tmp_path):
    out = tmp_path / "lemmas.json"
    code = main(["verify-lemmas", "--n-max", "6", "--cq-samples", "300", "--out", str(out)])
    assert code == EXIT_OK
    art = load(out)
    table = {(r["n"], r["nu"]): r for r in art["rows"]}
    assert table[(3, 1)]["gram_rank"] == 3 and table[(3, 1)]["threshold"] == 4
    assert table[(4, 3)]["gram_rank"] == 8 and "sharpness" in table[(4, 3)]["verdict"]
    assert all(r["verdict"].startswith("PASS") for r in art["rows"])
    assert art["cq_entropy"]["verdict"] == "PASS" and art["all_pass"]


def test_bounds_csv_and_summary(tmp_path):
    out = tmp_path / "b3.csv"
    assert main(["bounds", "--n", "3", "--hn", "0.25", "--format", "csv", "--out", str(out)]) == EXIT_OK
    table = rows(out)
    assert list(table[0]) == ["eta", "mu_star", "g_upper_cap", "mu_lower", "g_lower", "H_n_used"]
    assert len(table) == 20
    summary = load(str(out) + ".summary.json")
    assert summary["upper_exp"] == pytest.approx(2.0, abs=0.05)
    assert summary["lower_exp"] == pytest.approx(2.0, abs=0.05)
    assert summary["tightness"] == "PASS"
    assert summary["H_n_source"] == "given"
    # 17 significant digits round-trip exactly
    eta = float(table[3]["eta"])
    assert eta == np.logspace(-5, -2, 20)[3]


def test_bounds_without_crossing_is_a_guard_trip(tmp_path):
    assert main(["bounds", "--n", "6", "--out", str(tmp_path / "b.json")]) == EXIT_GUARD
    code = main(["bounds", "--n", "6", "--allow-gaps", "--out", str(tmp_path / "b.json")])
    assert code == EXIT_OK
    assert load(tmp_path / "b.json")["no_crossing_etas"]


def test_bounds_deep_window_six_pulses(tmp_path):
    out = tmp_path / "b.json"
    assert main(["bounds", "--n", "6", "--eta-min", "1e-14", "--eta-max", "1e-11",
                 "--out", str(out)]) == EXIT_OK
    art = load(out)
    assert art["upper_exp"] == pytest.approx(1.25, abs=0.05)
    assert art["lower_exp"] == pytest.approx(1.25, abs=0.05)
    assert art["H_n_source"] == "unit"


def test_estimate_hn_is_deterministic(tmp_path):
    argv = ["estimate-hn", "--n", "3", "--d", "1", "--restarts", "2", "--control-restarts", "1",
            "--max-evals", "3000", "--seed", "7"]
    assert main(argv + ["--out", str(tmp_path / "a.json")]) == EXIT_OK
    assert main(argv + ["--out", str(tmp_path / "b.json")]) == EXIT_OK
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    art = load(tmp_path / "a.json")
    assert {"n", "nu", "d", "estimate", "restarts", "best_params_digest", "control"} <= set(art)
    assert art["estimate"] == pytest.approx(1, abs=1e-6)
    assert art["control"]["d"] == 4


def test_estimate_hn_guard():
    assert main(["estimate-hn", "--n", "6"]) == EXIT_GUARD


def test_fit_command(tmp_path):
    eta = np.logspace(-5, -2, 10)
    src = tmp_path / "pts.csv"
    src.write_text(to_csv(["eta", "g"], list(zip(eta, 3 * eta ** 1.5))))
    out = tmp_path / "fit.json"
    assert main(["fit", "--input", str(src), "--y", "g", "--out", str(out)]) == EXIT_OK
    art = load(out)
    assert art["exponent"] == pytest.approx(1.5, abs=1e-12)
    assert art["config"]["y"] == "g"
    assert main(["fit", "--input", str(src), "--y", "missing"]) == EXIT_CONFIG
