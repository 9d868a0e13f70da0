import csv
import json

import pytest

from mirrorfreq import cli
from mirrorfreq.simcore import preset

GRID = "3,30,80,150,700"


def run(*argv):
    return cli.main(list(argv))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


@pytest.fixture(scope="module")
def oracle_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("oracle")
    assert run("sweep", "--case", "oracle-rl", "--grid", GRID, "--out", str(d)) == 0
    return d


def test_sweep_outputs_and_manifest(oracle_dir):
    doc = read_json(oracle_dir / "sweep_oracle-rl_shunt.json")
    assert doc["schema"] == "mirrorfreq.sweep" and doc["schema_version"] == 1
    assert [p["f_dq"] for p in doc["points"]] == [3, 30, 80, 150, 700]
    man = read_json(oracle_dir / "sweep_oracle-rl_shunt.json.manifest.json")
    assert set(man) >= {"command", "config_path", "output_dir", "timestamp", "tool_version", "config"}
    assert man["command"].startswith("mirrorfreq sweep --case oracle-rl")
    assert man["config"]["name"] == "oracle-rl"
    assert (oracle_dir / "sweep_oracle-rl_shunt.csv.manifest.json").exists()


def test_sweep_csv_is_rfc4180_with_units(oracle_dir):
    with open(oracle_dir / "sweep_oracle-rl_shunt.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "f_dq_Hz" and all(h.endswith(("_Hz", "_pu", "_deg")) or h in ("fold", "ok")
                                            for h in rows[0])
    assert len(rows) == 6 and all(len(r) == len(rows[0]) for r in rows)
    assert len(rows[1][5].replace(".", "").lstrip("0")) <= 13


def test_rerun_is_byte_identical(oracle_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("MIRRORFREQ_THREADS", "3")
    assert run("sweep", "--case", "oracle-rl", "--grid", GRID, "--out", str(tmp_path), "--threads", "1") == 0
    name = "sweep_oracle-rl_shunt.json"
    assert (tmp_path / name).read_bytes() == (oracle_dir / name).read_bytes()


def test_gnc_from_saved_sweep(oracle_dir, tmp_path):
    code = run("gnc", "--sweep", str(oracle_dir / "sweep_oracle-rl_shunt.json"), "--out", str(tmp_path))
    doc = read_json(tmp_path / "gnc_oracle-rl.json")
    assert doc["schema"] == "mirrorfreq.gnc"
    assert doc["verdicts"]["dq"]["stable"] and doc["verdicts"]["pn"]["stable"]
    assert doc["dq_vs_pn_margin_rel_diff"] < 1e-9
    # exit status follows the grid-resolution verdicts
    assert code == (0 if doc["verdicts"]["dq"]["grid_ok"] and doc["verdicts"]["pn"]["grid_ok"]
                    and doc["verdicts"]["original"]["grid_ok"] else 1)
    with open(tmp_path / "gnc_oracle-rl_dq_loci.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert header == ["f_dq_Hz", "lambda1_re", "lambda1_im", "lambda2_re", "lambda2_im"]


def test_gnc_coarse_grid_flags_insufficient(tmp_path, capsys):
    code = run("gnc", "--case", "A1", "--grid", "5,160,300", "--domain", "dq", "--out", str(tmp_path))
    assert code == 1
    assert "grid-insufficient" in capsys.readouterr().out


def test_mfd_check_oracle(oracle_dir, tmp_path):
    code = run("mfd-check", "--sweep", str(oracle_dir / "sweep_oracle-rl_shunt.json"), "--out", str(tmp_path))
    assert code == 0
    doc = read_json(tmp_path / "mfd_oracle-rl.json")
    assert doc["source"]["all_mfd"] and doc["load"]["all_mfd"]


def test_compare_original_oracle(tmp_path):
    code = run("compare-original", "--case", "oracle-rl", "--grid", "30,150", "--out", str(tmp_path))
    assert code == 0
    doc = read_json(tmp_path / "original_oracle-rl.json")
    assert doc["shunt_direct_vs_formula_max"] < 1e-6
    # decoupled subsystems: the injection type does not matter
    assert doc["shunt_vs_series_max"] < 1e-5
    with open(tmp_path / "original_oracle-rl.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert "Z_load_p_series_formula_mag_pu" in header


def test_dump_config_round_trip(tmp_path, capsys):
    assert run("dump-config", "--case", "A2", "--out", str(tmp_path)) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed == preset("A2").to_dict()
    doc = read_json(tmp_path / "config_A2.json")
    assert doc["schema"] == "mirrorfreq.config"
    # the written document is accepted back as --case
    assert run("dump-config", "--case", str(tmp_path / "config_A2.json")) == 0


def test_usage_errors_exit_2(tmp_path, capsys):
    assert run("sweep", "--case", "nope", "--out", str(tmp_path)) == 2
    assert run("sweep", "--case", "A1", "--grid", "a,b", "--out", str(tmp_path)) == 2
    assert run("sweep", "--case", "A1", "--fmin", "2000", "--out", str(tmp_path)) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"load": {"K_pdd": 1}}))
    assert run("dump-config", "--case", str(bad)) == 2
    assert "unknown field" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        run("sweep", "--injection", "both")


def test_step_sim_outputs(tmp_path):
    code = run("step-sim", "--case", "A1", "--schedule", "1.0,1.05", "--hold", "0.5", "--out", str(tmp_path))
    assert code == 0
    doc = read_json(tmp_path / "step_A1.json")
    assert doc["diverged_at_s"] is None and not doc["unstable"]
    assert [s["i_dc_pu"] for s in doc["segments"]] == [1.0, 1.05]


@pytest.mark.slow
@pytest.mark.parametrize("fault,expected", [(None, 0), ("perturbed-az", 1), ("oracle-bias", 1)])
def test_validate_exit_codes(tmp_path, fault, expected):
    argv = ["validate", "--n", "200", "--out", str(tmp_path)]
    if fault:
        argv += ["--fault", fault]
    assert run(*argv) == expected
    doc = read_json(tmp_path / "validate.json")
    assert doc["fault"] == fault
    assert all(c["passed"] for c in doc["checks"]) == (expected == 0)
