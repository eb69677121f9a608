import json
import math

import numpy as np
import pytest
import yaml

from helpers import softplus_pair_cert
from rascert import cli, mlp
from rascert.errors import ConfigError

OU_DOC = {
    "model": {"custom": {
        "name": "ou",
        "state": ["x"],
        "drift": ["-x"],
        "diffusion": [["0.1"]],
        "domain": [[-5.0, 5.0]],
    }},
    "spec": {
        "init": [[[0.6, 0.8]]],
        "target": [[[-0.5, 0.5]]],
        "unsafe": [[[-5.0, -4.5]], [[4.5, 5.0]]],
    },
    "train": {"n": 32, "q": 5, "epochs": 10, "hidden": [8], "lr": 0.001},
    "verify": {"m": 200, "k": 2},
    "simulate": {"dt": 0.01, "horizon": 1.0, "n_paths": 50, "starts": 2, "export": 3},
}


@pytest.fixture
def ou_config(tmp_path):
    path = tmp_path / "ou.yaml"
    doc = {**OU_DOC, "out": str(tmp_path / "runs")}
    path.write_text(yaml.safe_dump(doc))
    return path


@pytest.fixture
def ou_checkpoint(tmp_path):
    path = tmp_path / "cert.json"
    mlp.save(softplus_pair_cert(), path)
    return path


def only_run(tmp_path, command):
    runs = [p for p in (tmp_path / "runs").iterdir() if f"-{command}-" in p.name]
    assert len(runs) == 1
    return runs[0]


def test_config_round_trip_is_idempotent(ou_config):
    cfg = cli.load_config(ou_config)
    once = cli.dump_config(cfg)
    twice = cli.dump_config(cli.RunConfig.from_dict(yaml.safe_load(once)))
    assert once == twice


def test_shipped_configs_load():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    for path in sorted(root.glob("*.yaml")):
        cfg = cli.load_config(path)
        cli.build_problem(cfg)


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        cli.RunConfig.from_dict({"train": {"learning_rate": 0.1}})
    with pytest.raises(ConfigError):
        cli.RunConfig.from_dict({"extra": {}})
    with pytest.raises(ConfigError):
        cli.RunConfig.from_dict({"model": {"builtin": "toy-gbm", "custom": {}}})


def test_unknown_builtin_exits_with_error(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump({"model": {"builtin": "lorenz"}}))
    assert cli.main(["verify", "--config", str(path), "--checkpoint", "x.json"]) == 2
    assert "lorenz" in capsys.readouterr().err


def test_missing_config_exits_with_error(tmp_path):
    assert cli.main(["certify", "--config", str(tmp_path / "nope.yaml")]) == 2


def test_verify_with_checkpoint(tmp_path, ou_config, ou_checkpoint, capsys):
    assert cli.main(["verify", "--config", str(ou_config), "--checkpoint", str(ou_checkpoint)]) == 0
    out = capsys.readouterr().out
    assert "verdict yes" in out
    report = json.loads((only_run(tmp_path, "verify") / "report.json").read_text())
    assert report["verdict"] == "yes" and report["eps_hat"] >= 0.9


def test_verify_needs_checkpoint(ou_config):
    assert cli.main(["verify", "--config", str(ou_config)]) == 2


def test_certify_unattainable_target_exits_no(tmp_path, ou_config):
    doc = yaml.safe_load(ou_config.read_text())
    doc["spec"]["eps"] = 0.999999
    ou_config.write_text(yaml.safe_dump(doc))
    assert cli.main(["certify", "--config", str(ou_config), "--seed", "1"]) == 1
    run = only_run(tmp_path, "certify")
    for name in ("config.yaml", "telemetry.jsonl", "reports.jsonl", "checkpoint.json", "report.json"):
        assert (run / name).exists()
    assert "-s1" in run.name
    assert mlp.load(run / "checkpoint.json").in_dim == 1


def test_simulate_writes_estimates_and_paths(tmp_path, ou_config, ou_checkpoint):
    assert cli.main(["simulate", "--config", str(ou_config), "--checkpoint", str(ou_checkpoint)]) == 0
    run = only_run(tmp_path, "simulate")
    rows = json.loads((run / "estimates.json").read_text())
    assert len(rows) == 2 and all(0.0 <= r["p_ra"] <= 1.0 for r in rows)
    assert "certificate_mean" in rows[0]
    lines = (run / "paths.csv").read_text().splitlines()
    assert lines[0] == "path_id,t,x1" and len(lines) == 1 + 3 * 101


def test_heatmap_probability_column(tmp_path, ou_config, ou_checkpoint):
    assert cli.main(["heatmap", "--config", str(ou_config), "--checkpoint", str(ou_checkpoint)]) == 0
    import csv

    rows = list(csv.DictReader(open(only_run(tmp_path, "heatmap") / "heatmap.csv")))
    assert len(rows) == 200
    p = np.array([float(r["probability"]) for r in rows])
    assert np.all((p >= 0) & (p <= 1)) and p.max() > 0.9


def test_mode_flag_switches_to_stay_only(tmp_path, ou_config, ou_checkpoint):
    assert cli.main(["verify", "--config", str(ou_config), "--checkpoint", str(ou_checkpoint),
                     "--mode", "stay"]) == 0
    report = json.loads((only_run(tmp_path, "verify") / "report.json").read_text())
    assert report["mode"] == "stay-only"


def write_telemetry(path, durations, verdict="yes"):
    path.mkdir(parents=True)
    lines = [{"event": "start"}]
    lines += [{"event": "verify", "duration": d, "train_duration": 1.0} for d in durations]
    lines.append({"event": "done", "verdict": verdict})
    (path / "telemetry.jsonl").write_text("".join(json.dumps(r) + "\n" for r in lines))


def test_report_aggregates_runs(tmp_path, capsys):
    write_telemetry(tmp_path / "a", [10.0])
    write_telemetry(tmp_path / "b", [20.0, 20.0, 20.0], verdict="no")
    assert cli.main(["report", str(tmp_path)]) == 0
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["time_mean"] == 15.0 and s["time_std"] == 5.0
    assert s["count_mean"] == 2.0 and s["count_std"] == 1.0
    assert s["n_runs"] == 2 and s["n_yes"] == 1
    assert math.isclose(s["runs"][0]["mean_cycle_time"], 11.0)


def test_report_on_empty_directory(tmp_path):
    assert cli.main(["report", str(tmp_path)]) == 2
    assert cli.main(["report", str(tmp_path / "missing")]) == 2


def test_no_command_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 2
