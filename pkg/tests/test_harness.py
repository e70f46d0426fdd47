import json

import numpy as np
import pytest

from riesz_she import DegenerateSigmaError
from riesz_she.cli import main as cli_main
from riesz_she.config import ConfigError, load_config, parse_config
from riesz_she.runner import (EXIT_CONFIG, EXIT_DEGENERATE, EXIT_PASS,
                              EXIT_STAT_FAIL, ResultSet, emit_results,
                              run_experiment)
from riesz_she.stats import StatsReport

MINIMAL = """
kind = clt
d = 1
beta = 0.5
T = 0.04
dt = 0.01
R_list = 0.5, 1, 2
n_replicas = 200
seed = 7

[lattice]
n = 32
L = 4.0
"""


def test_parse_minimal_config():
    cfg = parse_config(MINIMAL)
    assert cfg.kind == "clt"
    assert cfg.lattice.h == 0.25
    assert cfg.record_times == [0.04]  # defaults to [T]
    assert cfg.sigma.kind == "linear"  # default sigma
    assert cfg.init.kind == "constant" and cfg.init.value == 1.0


def test_default_dt_snaps_to_divide_T():
    text = MINIMAL.replace("dt = 0.01\n", "").replace("L = 4.0", "L = 5.0") \
                  .replace("T = 0.04", "T = 0.25") \
                  .replace("n = 32", "n = 64")
    # h = 0.15625, h^2/4 = 0.0061..., 0.25/dt is not an integer, so the
    # default is snapped down to the nearest exact divisor of T
    cfg = parse_config(text)
    n_steps = cfg.T / cfg.dt
    assert n_steps == pytest.approx(round(n_steps), abs=1e-12)
    assert cfg.dt <= cfg.lattice.h ** 2 / 4.0 + 1e-15


def test_config_rejects_bad_beta():
    with pytest.raises(ConfigError, match="beta"):
        parse_config(MINIMAL.replace("beta = 0.5", "beta = 1.5"))


def test_config_rejects_margin_violation():
    with pytest.raises(ConfigError, match=r"R_max\+6\*sqrt\(T\)"):
        parse_config(MINIMAL.replace("R_list = 0.5, 1, 2",
                                     "R_list = 0.5, 1, 3"))


def test_config_rejects_off_grid_times():
    with pytest.raises(ConfigError, match="not a multiple"):
        parse_config(MINIMAL.replace("seed = 7",
                                     "seed = 7\nrecord_times = 0.015"))
    with pytest.raises(ConfigError, match="not a multiple"):
        parse_config(MINIMAL.replace("dt = 0.01", "dt = 0.03"))


def test_config_rejects_unknown_kind_and_bad_lines():
    with pytest.raises(ConfigError, match="unknown experiment kind"):
        parse_config(MINIMAL.replace("kind = clt", "kind = wavelet"))
    with pytest.raises(ConfigError, match="key = value"):
        parse_config(MINIMAL + "what is this line\n")


def test_canonical_text_round_trip():
    cfg = parse_config(MINIMAL)
    cfg2 = parse_config(cfg.canonical_text())
    assert cfg2.config_hash() == cfg.config_hash()
    assert cfg2.dt == cfg.dt and cfg2.R_list == cfg.R_list


def test_kind_specific_validation():
    with pytest.raises(ConfigError, match="two record times"):
        parse_config(MINIMAL.replace("kind = clt", "kind = fclt"))
    with pytest.raises(ConfigError, match="base time plus"):
        parse_config(MINIMAL.replace("kind = clt", "kind = tightness"))
    with pytest.raises(ConfigError, match="y_list"):
        parse_config("kind = lemma31\nd = 1\nbeta = 0.5\n"
                     "[lattice]\nn = 4\nL = 1.0\n")


CONSTANTS_CFG = """
kind = constants
d = 1
beta = 0.5

[lattice]
n = 4
L = 1.0
"""


def test_constants_run():
    rs = run_experiment(parse_config(CONSTANTS_CFG))
    assert rs.all_passed and rs.exit_code == EXIT_PASS
    closed = [r for r in rs.constants if r[6] == "closed-form"]
    assert closed[0][4] == pytest.approx(7.54247, abs=1e-5)
    mc = [r for r in rs.constants if r[6] == "monte-carlo"]
    assert abs(mc[0][4] - closed[0][4]) < 5 * mc[0][5]


def test_noise_validate_run():
    # the largest lag (distance L) is excluded: its covariance is small and
    # its sampling error exceeds the 10% band at a few hundred slices
    cfg = parse_config(MINIMAL.replace("kind = clt", "kind = noise-validate")
                       .replace("n_replicas = 200", "n_replicas = 400")
                       .replace("seed = 7", "seed = 7\nlags = 0, 1, 2, 4, 8"))
    rs = run_experiment(cfg)
    assert rs.reports and all(r.metric == "noise_covariance_ratio"
                              for r in rs.reports)
    assert rs.all_passed


def test_degenerate_clt_raises():
    text = MINIMAL + "\n[sigma]\nkind = affine\na = 1\nb = -1\n"
    cfg = parse_config(text)
    with pytest.raises(DegenerateSigmaError, match="sigma"):
        run_experiment(cfg)


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    good = tmp_path / "good.cfg"
    good.write_text(MINIMAL)
    bad = tmp_path / "bad.cfg"
    bad.write_text(MINIMAL.replace("beta = 0.5", "beta = 2.5"))
    degen = tmp_path / "degen.cfg"
    degen.write_text(MINIMAL + "\n[sigma]\nkind = affine\na = 1\nb = -1\n")

    assert cli_main(["clt", "--config", str(bad)]) == EXIT_CONFIG
    assert cli_main(["clt", "--config", str(tmp_path / "absent.cfg")]) \
        == EXIT_CONFIG
    assert cli_main(["clt", "--config", str(degen)]) == EXIT_DEGENERATE

    # statistical failure propagates as exit 1
    def fake_run(cfg, workers=1):
        rs = ResultSet(config=cfg)
        rs.reports = [StatsReport(metric="m", estimate=9.0, target=0.0,
                                  tolerance=1.0, passed=False)]
        return rs
    monkeypatch.setattr("riesz_she.cli.run_experiment", fake_run)
    assert cli_main(["clt", "--config", str(good)]) == EXIT_STAT_FAIL
    out = capsys.readouterr().out
    assert "FAIL" in out and "0/1 metrics passed" in out


def test_cli_seed_override_in_manifest(tmp_path):
    cfgfile = tmp_path / "c.cfg"
    cfgfile.write_text(CONSTANTS_CFG)
    outdir = tmp_path / "out"
    code = cli_main(["constants", "--config", str(cfgfile),
                     "--out", str(outdir), "--seed", "123"])
    assert code == EXIT_PASS
    manifest = json.loads((outdir / "manifest.json").read_text())
    assert manifest["seed"] == 123
    assert "seed = 123" in manifest["config"]
    assert sorted(manifest["files"]) == ["constants.csv", "reports.csv",
                                         "reports.json", "samples.csv"]


@pytest.fixture(scope="module")
def clt_result():
    cfg = parse_config(MINIMAL)
    return cfg, run_experiment(cfg, workers=1)


def test_clt_reports_present(clt_result):
    cfg, rs = clt_result
    metrics = [r.metric for r in rs.reports]
    assert metrics.count("ks_distance") == 3
    assert "sigma_scaling_slope" in metrics
    assert "ks_rate_exponent" in metrics
    assert "ks_monotone_nonincrease" in metrics


def test_samples_csv_shape(clt_result, tmp_path):
    cfg, rs = clt_result
    files = emit_results(rs, tmp_path / "out")
    samples = (tmp_path / "out" / "samples.csv").read_text().splitlines()
    # header + n_R * n_t * n_replicas rows
    assert len(samples) == 1 + 3 * 1 * 200
    assert samples[0] == "replica_id,R,t,G_R"


def test_emit_deterministic_and_reemittable(clt_result, tmp_path):
    cfg, rs = clt_result
    emit_results(rs, tmp_path / "a")
    emit_results(rs, tmp_path / "a")  # overwrite in place
    emit_results(rs, tmp_path / "b")
    for name in ("samples.csv", "reports.csv", "reports.json",
                 "constants.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()
    payload = json.loads((tmp_path / "a" / "reports.json").read_text())
    assert "Kolmogorov" in payload["distance_note"]
    assert payload["config_hash"] == cfg.config_hash()


def test_worker_count_does_not_change_results(tmp_path):
    cfg1 = parse_config(MINIMAL.replace("n_replicas = 200",
                                        "n_replicas = 120"))
    rs1 = run_experiment(cfg1, workers=1)
    cfg2 = parse_config(MINIMAL.replace("n_replicas = 200",
                                        "n_replicas = 120"))
    rs2 = run_experiment(cfg2, workers=2)
    emit_results(rs1, tmp_path / "w1")
    emit_results(rs2, tmp_path / "w2")
    for name in ("samples.csv", "reports.csv", "reports.json"):
        assert (tmp_path / "w1" / name).read_bytes() == \
            (tmp_path / "w2" / name).read_bytes()


def test_empty_resultset_emits_headers(tmp_path):
    cfg = parse_config(CONSTANTS_CFG)
    rs = ResultSet(config=cfg)
    emit_results(rs, tmp_path / "empty")
    assert (tmp_path / "empty" / "samples.csv").read_bytes() \
        == b"replica_id,R,t,G_R\r\n"
    assert (tmp_path / "empty" / "constants.csv").read_text().startswith(
        "name,d,beta,region_kind")
    assert rs.all_passed  # vacuously; exit code 0


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.cfg")
