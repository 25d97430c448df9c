from __future__ import annotations

import copy
import json

import pytest

from fedism.cli import compare, main, parse_config, parse_config_dict, run_matrix, spec_to_dict
from fedism.errors import ConfigError, SchemaError
from fedism.report import read_manifest, read_table

BASE = {
    "dataset": {"num_classes": 2, "feature_dim": 4, "samples_per_class": 40, "class_separation": 2.5, "seed": 0},
    "partition": {
        "num_clients": 4,
        "corrupted_client_count": 1,
        "corruption": {"kind": "additive_gaussian", "severity": 1.5, "seed": 1},
        "seed": 2,
    },
    "model": {"arch": "mlp1", "hidden_units": 6},
    "federation": {"rounds": 6},
    "strategies": ["fedavg", "fedism_plus_s"],
    "seeds": [0, 1, 2],
}


def doc(**changes):
    d = copy.deepcopy(BASE)
    d.update(changes)
    return d


def write(tmp_path, d, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d), encoding="utf-8")
    return p


# ---------------------------------------------------------------- parsing


def test_preset_name_resolves():
    spec = parse_config_dict(doc(strategies=["fedavg"]))
    cfg = spec.strategies[0].config
    assert (cfg.local_optimizer, cfg.schedule.kind, cfg.schedule.rho_fixed, cfg.agg.kind) == (
        "gd",
        "constant",
        0.0,
        "size",
    )


def test_defaults_filled_in():
    cfg = parse_config_dict(doc(strategies=["fedism_plus_s"])).strategies[0].config
    assert (cfg.schedule.rho_max, cfg.schedule.tau, cfg.agg.q, cfg.beta) == (0.1, 0.5, 2.0, 0.5)


def test_misspelled_key_is_named():
    d = doc()
    d["federation"]["learning_rat"] = 0.1
    with pytest.raises(ConfigError, match=r"federation\.learning_rat: unknown key"):
        parse_config_dict(d)


def test_unknown_preset():
    with pytest.raises(ConfigError, match="unknown strategy preset 'fedfoo'"):
        parse_config_dict(doc(strategies=["fedfoo"]))


def test_missing_required_key():
    d = doc()
    del d["federation"]["rounds"]
    with pytest.raises(ConfigError, match=r"federation\.rounds: required key missing"):
        parse_config_dict(d)


def test_wrong_type_is_named():
    d = doc()
    d["model"]["hidden_units"] = "six"
    with pytest.raises(ConfigError, match=r"model\.hidden_units: expected an integer"):
        parse_config_dict(d)


def test_duplicate_strategy_names():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_dict(doc(strategies=["fedavg", "fedavg"]))


def test_preset_with_overrides_and_explicit_strategy():
    spec = parse_config_dict(
        doc(
            strategy_defaults={"q": 4.0},
            strategies=[
                {"name": "big_rho", "preset": "fedism_plus_l", "rho_max": 0.5},
                {
                    "name": "custom",
                    "local_optimizer": "salt",
                    "schedule": {"kind": "progressive"},
                    "agg": {"kind": "sharpness_q"},
                },
            ],
        )
    )
    a, b = (s.config for s in spec.strategies)
    assert (a.schedule.rho_max, a.agg.q, a.agg.kind) == (0.5, 4.0, "perturbed_loss_q")
    assert (b.schedule.rho_max, b.agg.q, b.beta) == (0.1, 4.0, 0.5)


def test_config_echo_round_trips():
    spec = parse_config_dict(doc(strategies=["fedism_plus_l", {"name": "x", "preset": "fedism", "rho_fixed": 0.3}]))
    echo = json.loads(json.dumps(spec_to_dict(spec)))
    assert parse_config_dict(echo) == spec


def test_parse_config_reports_json_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"dataset": {,}}', encoding="utf-8")
    with pytest.raises(ConfigError, match=r"bad\.json:1:"):
        parse_config(p)


# ---------------------------------------------------------------- run matrix


def test_matrix_writes_runs_and_summary(tmp_path):
    status = run_matrix(parse_config_dict(doc()), output_dir=tmp_path / "out")
    assert status == 0
    dirs = sorted(p.name for p in (tmp_path / "out").iterdir() if p.is_dir())
    assert dirs == [f"{s}__seed{k}" for s in ("fedavg", "fedism_plus_s") for k in range(3)]
    summary = read_table(tmp_path / "out" / "summary.csv")
    assert [r["strategy"] for r in summary] == ["fedavg", "fedism_plus_s"]
    assert all(r["runs"] == "3" for r in summary)
    run_dir = tmp_path / "out" / "fedavg__seed1"
    manifest = read_manifest(run_dir / "manifest.json")
    assert sorted(p.name for p in run_dir.iterdir()) == manifest.files
    assert parse_config_dict(manifest.config) == parse_config_dict(doc())


def test_summary_bytes_reproduce(tmp_path):
    spec = parse_config_dict(doc(seeds=[4]))
    run_matrix(spec, output_dir=tmp_path / "a")
    run_matrix(spec, output_dir=tmp_path / "b")
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()
    for name in ("rounds.csv", "eval.csv", "params.bin"):
        a = (tmp_path / "a" / "fedism_plus_s__seed4" / name).read_bytes()
        assert a == (tmp_path / "b" / "fedism_plus_s__seed4" / name).read_bytes()


def test_workers_flag_does_not_change_bytes(tmp_path):
    cfg = write(tmp_path, doc(seeds=[0], strategies=["fedism_plus_l"]))
    assert main(["run", str(cfg), "--output-dir", str(tmp_path / "w1"), "--workers", "1"]) == 0
    assert main(["run", str(cfg), "--output-dir", str(tmp_path / "w3"), "--workers", "3"]) == 0
    for name in ("rounds.csv", "eval.csv", "params.bin"):
        a = (tmp_path / "w1" / "fedism_plus_l__seed0" / name).read_bytes()
        assert a == (tmp_path / "w3" / "fedism_plus_l__seed0" / name).read_bytes()


def test_seed_override(tmp_path):
    cfg = write(tmp_path, doc(strategies=["fedavg"]))
    assert main(["run", str(cfg), "--output-dir", str(tmp_path / "o"), "--seed-override", "9"]) == 0
    assert sorted(p.name for p in (tmp_path / "o").iterdir()) == ["fedavg__seed9", "summary.csv"]


# ---------------------------------------------------------------- compare


@pytest.fixture(scope="module")
def summaries(tmp_path_factory):
    root = tmp_path_factory.mktemp("cmp")
    run_matrix(parse_config_dict(doc(seeds=[0], strategies=["fedavg"])), output_dir=root / "a")
    run_matrix(parse_config_dict(doc(seeds=[0], strategies=["fedism_plus_s"])), output_dir=root / "b")
    return root / "a" / "summary.csv", root / "b" / "summary.csv"


def test_compare_self_zero_deltas(summaries):
    rows = compare([summaries[0], summaries[0]])
    assert all(v == 0.0 for r in rows for k, v in r.items() if k.startswith("d_"))


def test_compare_deltas_are_differences(summaries):
    a, b = compare(list(summaries))
    for m in ("acc_clean", "auc_corr", "acc_avg"):
        assert b[f"d_{m}"] == b[m] - a[m]
        assert b[m] == float(read_table(summaries[1])[0][f"{m}_mean"])


def test_compare_missing_column(tmp_path, summaries):
    bad = tmp_path / "bad.csv"
    bad.write_text("strategy,acc_clean_mean\nx,0.5\n", encoding="utf-8")
    with pytest.raises(SchemaError, match="auc_clean_mean"):
        compare([summaries[0], bad])


def test_compare_cli_prints_table(summaries, capsys):
    assert main(["compare", str(summaries[0]), str(summaries[1])]) == 0
    out = capsys.readouterr().out
    assert "d_acc_corr" in out and "fedism_plus_s" in out


# ---------------------------------------------------------------- exit codes


def test_exit_code_config_error(tmp_path, capsys):
    d = doc()
    d["model"]["archh"] = "mlp1"
    assert main(["run", str(write(tmp_path, d))]) == 2
    assert "model.archh" in capsys.readouterr().err


def test_exit_code_missing_file(tmp_path):
    assert main(["run", str(tmp_path / "nope.json")]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_code_divergence(tmp_path):
    d = doc(seeds=[0], strategies=["fedavg"])
    d["federation"]["learning_rate"] = 1e308
    d["federation"]["logit_adjustment"] = False
    assert main(["run", str(write(tmp_path, d)), "--output-dir", str(tmp_path / "o")]) == 3
