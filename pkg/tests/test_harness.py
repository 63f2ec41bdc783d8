import json

import numpy as np
import pytest

from rsmimo import cli, harness, powalloc
from rsmimo.harness import (CSV_HEADER, ExperimentConfig, ResultRecord, aggregate_rows,
                            emit_outputs, format_config, parse_config, read_csv_rows,
                            records_to_rows, run_campaign, sweep)
from rsmimo.params import ConfigurationError

SMALL = dict(M=16, K=2, n_setups=2, schemes=("rs_maxmin_sca", "nors_sca", "nors_bisection"))


def test_parse_config_units_and_comments():
    cfg = parse_config("""
# campaign
M = 64
K = 3            # UEs
topology = rectangular
sector_width_deg = 45
schemes = rs_maxsum_grid, nors_maxsum
rho_dl_dbm = 23.0
validate = yes
""")
    assert cfg.M == 64 and cfg.K == 3 and cfg.topology == "rectangular"
    assert cfg.sector_width_deg == 45.0
    assert cfg.schemes == ("rs_maxsum_grid", "nors_maxsum")
    assert cfg.system.rho_dl == pytest.approx(10 ** 2.3)
    assert cfg.validate is True


@pytest.mark.parametrize("text", ["foo = 1", "M = many", "validate = perhaps", "K = 0",
                                  "schemes = rs_magic", "pilot_mode = random", "tau_p = 300"])
def test_parse_config_errors(text):
    with pytest.raises(ConfigurationError):
        parse_config(text)


def test_config_text_round_trip():
    cfg = ExperimentConfig(M=40, schemes=("nors_gp",), master_seed=9, sector_width_deg=45.0)
    assert parse_config(format_config(cfg)) == cfg
    assert parse_config("M = 10", master_seed=4).master_seed == 4


def test_campaign_is_deterministic():
    cfg = ExperimentConfig(n_setups=1, master_seed=3, **{k: v for k, v in SMALL.items() if k != "n_setups"})
    a, b = run_campaign(cfg), run_campaign(cfg)
    for ra, rb in zip(a.records, b.records):
        assert np.array_equal(ra.se_ue, rb.se_ue)
        assert ra.se_c == rb.se_c and ra.rho_c == rb.rho_c


def test_setups_are_individually_replayable():
    cfg = ExperimentConfig(**SMALL, master_seed=1)
    full = run_campaign(cfg)
    one = harness.run_setup(cfg, 1)
    assert [r.sum_se for r in one] == [r.sum_se for r in full.records if r.setup == 1]


def test_workers_keep_setup_order():
    cfg = ExperimentConfig(**dict(SMALL, n_setups=3), master_seed=2)
    a = run_campaign(cfg)
    b = run_campaign(cfg.replace(workers=2))
    assert [(r.setup, r.scheme) for r in a.records] == [(r.setup, r.scheme) for r in b.records]
    assert [r.sum_se for r in a.records] == [r.sum_se for r in b.records]


def test_failure_records_seed(monkeypatch):
    def boom(coeffs, rho_dl, **kw):
        raise FloatingPointError("synthetic")

    monkeypatch.setitem(powalloc.SCHEMES, "nors_sca", boom)
    cfg = ExperimentConfig(**SMALL, master_seed=17)
    with pytest.raises(harness.SetupFailure) as exc:
        run_campaign(cfg)
    assert exc.value.seed == (17, 0)
    assert isinstance(exc.value.cause, FloatingPointError)


def _record(n_ue=1):
    return ResultRecord(0, "nors_sca", "shared_single_pilot", "circular", 8, n_ue,
                        np.full(n_ue, 0.5), 0.0, 0.5 * n_ue, 0.5, 0.0, np.ones(n_ue), 3, 1.5, (0, 0))


def test_single_record_csv_has_two_lines(tmp_path):
    res = harness.CampaignResult(ExperimentConfig(K=1), [_record()], {})
    paths = emit_outputs(res, tmp_path)
    lines = open(paths["csv"]).read().splitlines()
    assert len(lines) == 2
    assert tuple(lines[0].split(",")) == CSV_HEADER


def test_emit_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        emit_outputs(harness.CampaignResult(ExperimentConfig(), [], {}), tmp_path)


def test_csv_and_json_reproduce_aggregates(tmp_path):
    cfg = ExperimentConfig(**SMALL, master_seed=5)
    res = run_campaign(cfg)
    paths = emit_outputs(res, tmp_path)
    rows = read_csv_rows(paths["csv"])
    assert aggregate_rows(rows, cfg.system.rho_dl) == res.aggregates
    payload = json.load(open(paths["json"]))
    assert payload["aggregates"] == res.aggregates
    assert payload["config"] == cfg.to_dict()
    assert payload["version"]


def test_gain_definition():
    rows = records_to_rows([_record(2)])
    rows += [dict(r, scheme="rs_maxmin_sca", min_se=1.0, sum_se=2.0, se_ue=1.0) for r in rows]
    agg = aggregate_rows(rows, 1.0)
    g = agg["gains"]["rs_maxmin_sca|shared_single_pilot|circular|8|2"]
    assert g["gain"] == pytest.approx((1.0 - 0.5) / 1.0)
    assert g["gain_sum_se"] == pytest.approx((2.0 - 1.0) / 2.0)


def test_sweep_row_count(tmp_path):
    cfg = ExperimentConfig(**SMALL, master_seed=0)
    out = sweep(cfg, "M", [8, 12, 16])
    total = sum(len(records_to_rows(r.records)) for r in out.values())
    # M values x schemes x setups x UEs
    assert total == 3 * 3 * 2 * 2
    with pytest.raises(ConfigurationError):
        sweep(cfg, "antennas", [1])


def _write(tmp_path, text):
    p = tmp_path / "c.cfg"
    p.write_text(text)
    return str(p)


def test_cli_run_and_sweep(tmp_path, capsys):
    cfg = _write(tmp_path, "M = 8\nK = 2\nn_setups = 1\nschemes = rs_maxsum_grid, nors_maxsum\n")
    assert cli.main(["run", cfg, "--out", str(tmp_path / "o"), "--seed", "4", "--quiet"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert "rs_maxsum_grid|shared_single_pilot|circular|8|2" in out["gains"]
    assert json.load(open(tmp_path / "o" / "campaign.json"))["config"]["master_seed"] == 4
    assert cli.main(["sweep", cfg, "--param", "M", "--values", "8,12", "--out",
                     str(tmp_path / "s"), "--quiet"]) == 0
    assert (tmp_path / "s" / "M=12" / "campaign.csv").exists()


def test_cli_validate(tmp_path, capsys):
    cfg = _write(tmp_path, "M = 8\nK = 2\nn_setups = 1\nn_mc_samples = 40000\n")
    code = cli.main(["validate", cfg, "--out", str(tmp_path), "--tolerance", "0.05", "--quiet"])
    rep = json.loads(capsys.readouterr().out)
    assert code == 0 and rep["passed"]
    assert cli.main(["validate", cfg, "--out", str(tmp_path), "--tolerance", "1e-9", "--quiet"]) == 3


def test_cli_errors_are_machine_readable(tmp_path, capsys):
    assert cli.main(["run", _write(tmp_path, "bogus = 1\n")]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ConfigurationError"
    assert cli.main(["run", str(tmp_path / "missing.cfg")]) != 0
