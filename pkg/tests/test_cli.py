import csv
import io
import json
import socket

import pytest

from ranprof.cli import EXIT_PORT, EXIT_RUN, EXIT_UNKNOWN, EXIT_USAGE, CliError, load_config, main
from ranprof.orchestrator import read_journal

from vectorgen import LISTING, listing_doc


@pytest.fixture
def cli(tmp_path, capsys, monkeypatch):
    for var in ("CONFIG", "SIM_URL", "COLLECTOR_URL", "STORE", "SEED", "WARP", "REPS", "LOCAL", "PACED", "SIM"):
        monkeypatch.delenv("RANPROF_" + var, raising=False)
    store = tmp_path / "store"

    def call(*argv, local=True):
        extra = ["--local", "--no-pace", "--store", str(store)] if local else []
        code = main([*argv, *extra])
        out, err = capsys.readouterr()
        return code, out.split(), err

    call.store = store
    return call


def _write(tmp_path, doc, name="v.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def _window(store, test_id):
    entry = next(e for e in read_journal(store / "runs" / f"{test_id}.jsonl") if e["stage"] == "COLLECT")
    return entry["start_ns"], entry["end_ns"]


def test_run_listing(cli):
    code, ids, _ = cli("run", str(LISTING))
    assert code == 0 and len(ids) == 1
    stages = [e["stage"] for e in read_journal(cli.store / "runs" / f"{ids[0]}.jsonl")]
    assert stages[-1] == "DONE"


def test_run_reps_have_disjoint_windows(cli):
    code, ids, _ = cli("run", str(LISTING), "--reps", "3")
    assert code == 0 and len(set(ids)) == 3
    windows = sorted(_window(cli.store, i) for i in ids)
    assert all(a[1] <= b[0] for a, b in zip(windows, windows[1:]))


def test_bad_json_is_exit_2_with_path(cli, tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{bad")
    code, ids, err = cli("run", str(p))
    assert code == EXIT_USAGE and ids == [] and str(p) in err


def test_schema_error_names_the_field(cli, tmp_path):
    doc = listing_doc()
    doc["traffic_scenario"]["ue_specification"][0]["duration"] = -1
    code, _, err = cli("run", _write(tmp_path, doc))
    assert code == EXIT_USAGE and "duration" in err


def test_missing_file(cli, tmp_path):
    assert cli("run", str(tmp_path / "nope.json"))[0] == EXIT_USAGE


def test_run_failure_still_prints_id(cli, tmp_path):
    doc = listing_doc()
    doc["network_scenario"]["ran"]["ru"]["address"] = "172.16.9.9"
    code, ids, err = cli("run", _write(tmp_path, doc))
    assert code == EXIT_RUN and len(ids) == 1
    assert "FAILED at DEPLOY_RAN" in err


def test_sweep_and_report(cli):
    code, out, err = cli("sweep", str(LISTING), "--values", "10,20,30,40,50,60,70")
    assert code == 0 and len(out) == 1 and out[0].startswith("sweep-")
    assert err.count(" DONE") == 7
    code, _, _ = cli("report", out[0], "--out", str(cli.store / "c.csv"))
    rows = list(csv.DictReader(open(cli.store / "c.csv")))
    assert code == 0 and len(rows) == 7
    assert float(rows[0]["slope_w_per_unit"]) == pytest.approx(0.067, abs=0.013)


def test_report_formats_agree(cli, capsys):
    _, (sweep_id,), _ = cli("sweep", str(LISTING), "--values", "10:70:30", "--reps", "2")
    main(["report", sweep_id, "--local", "--store", str(cli.store)])
    text_csv = capsys.readouterr().out
    main(["report", sweep_id, "--format", "json", "--local", "--store", str(cli.store)])
    data = json.loads(capsys.readouterr().out)
    rows = list(csv.DictReader(io.StringIO(text_csv)))
    assert [float(r["load"]) for r in rows] == [10.0, 40.0, 70.0]
    for row, jrow in zip(rows, data["rows"]):
        assert float(row["power_mean"]) == jrow["power"]["mean"]
        assert float(row["efficiency_mean"]) == jrow["efficiency"]["mean"]


def test_single_value_sweep_is_a_run(cli):
    code, (sweep_id,), err = cli("sweep", str(LISTING), "--values", "70")
    assert code == 0 and err.count(" DONE") == 1


def test_parallel_sweep(cli):
    code, _, err = cli("sweep", str(LISTING), "--values", "10,40,70", "--reps", "2", "--parallel", "3")
    assert code == 0 and err.count(" DONE") == 6


@pytest.mark.parametrize("param", ["network.ran.ru.address", "traffic.no_such_field", "traffic.protocol"])
def test_non_numeric_param(cli, param):
    assert cli("sweep", str(LISTING), "--param", param, "--values", "1")[0] == EXIT_USAGE


def test_bad_values_list(cli):
    with pytest.raises(SystemExit) as exc:
        cli("sweep", str(LISTING), "--values", "10,abc")
    assert exc.value.code == EXIT_USAGE


def test_report_classes(cli, capsys):
    _, (test_id,), _ = cli("run", str(LISTING))
    code, _, _ = cli("report", test_id, "--classes", "ran", "--format", "json")
    assert code == 0
    main(["report", test_id, "--classes", "ran,radio", "--format", "json", "--local", "--store", str(cli.store)])
    both = json.loads(capsys.readouterr().out)
    assert both["classes"] == ["ran", "radio"]


def test_unknown_ids(cli):
    assert cli("report", "0000")[0] == EXIT_UNKNOWN
    assert cli("report", "sweep-000000000000")[0] == EXIT_UNKNOWN


def test_seed_gives_byte_identical_reports(cli, tmp_path, capsys):
    outputs = []
    for d in ("a", "b"):
        store = str(tmp_path / d)
        main(["run", str(LISTING), "--seed", "11", "--local", "--no-pace", "--store", store])
        test_id = capsys.readouterr().out.strip()
        main(["report", test_id, "--format", "json", "--local", "--store", store])
        outputs.append(capsys.readouterr().out)
    assert outputs[0] == outputs[1]


def test_config_precedence(tmp_path):
    cfg_file = _write(tmp_path, {"seed": 1, "warp": 30, "store": "from-file"}, "cfg.json")
    env = {"RANPROF_CONFIG": cfg_file, "RANPROF_WARP": "90", "RANPROF_SIM": '{"pdu_interval_s": 2}'}
    cfg = load_config(environ=env, overrides={"seed": 5})
    assert (cfg.seed, cfg.warp, cfg.store, cfg.sim) == (5, 90.0, "from-file", {"pdu_interval_s": 2})


@pytest.mark.parametrize("env", [{"RANPROF_WARP": "0.5"}, {"RANPROF_SIM_URL": "ftp://x"}, {"RANPROF_SIM_URL": "nohost"}])
def test_bad_config(env):
    with pytest.raises(CliError) as exc:
        load_config(environ=env)
    assert exc.value.code == EXIT_USAGE


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture
def services(tmp_path, monkeypatch):
    monkeypatch.setenv("RANPROF_SIM_URL", f"http://127.0.0.1:{_free_port()}")
    monkeypatch.setenv("RANPROF_COLLECTOR_URL", f"http://127.0.0.1:{_free_port()}")
    monkeypatch.setenv("RANPROF_STORE", str(tmp_path / "srv"))
    yield
    main(["sim", "stop"])


def test_sim_lifecycle(cli, capsys, services):
    assert cli("sim", "start", local=False)[0] == 0
    assert main(["sim", "status"]) == 0
    status = json.loads(capsys.readouterr().out)
    assert status["components"] == [] and status["collectors"] == "up"
    assert cli("sim", "start", local=False)[0] == EXIT_PORT
    assert cli("sim", "stop", local=False)[0] == 0
    assert cli("sim", "stop", local=False)[0] == 0
    assert cli("sim", "status", local=False)[0] == 1


def test_port_conflict(cli, services, monkeypatch):
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        s.listen()
        monkeypatch.setenv("RANPROF_SIM_URL", f"http://127.0.0.1:{s.getsockname()[1]}")
        code, _, err = cli("sim", "start", local=False)
    assert code == EXIT_PORT and "in use" in err
