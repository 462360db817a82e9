import json

import pytest

import qdnas.cli as cli
from qdnas.archive import Evaluation, NicheSet
from qdnas.cli import (
    ConfigError,
    Trace,
    TraceError,
    cmd_oracle,
    cmd_report,
    cmd_run,
    collect_traces,
    csv_text,
    final_ranks_table,
    load_config,
    main,
    read_trace,
    report_tables,
    validate_config,
)
from qdnas.problems import EvaluationError, toy_cell_problem

BASE = {
    "problem": {"name": "toy_cell"},
    "niches": {"percentiles": [50]},
    "optimizer": {"name": "random_search"},
    "budget": {"full_evaluations": 20},
    "replications": 2,
    "seed": 3,
}


def _write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def _lines(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_validate_config_field_level_errors():
    bad = dict(BASE, optimizer={"name": "simulated_annealing"}, budget={}, replications=0, colour="red")
    with pytest.raises(ConfigError) as info:
        validate_config(bad)
    fields = {issue.split(":")[0] for issue in info.value.issues}
    assert fields == {"optimizer.name", "budget", "replications", "colour"}
    with pytest.raises(ConfigError) as info:
        validate_config(dict(BASE, optimizer={"name": "random_search", "params": {"eta": 3}}))
    assert info.value.issues[0].startswith("optimizer.params.eta")


def test_defaults_are_materialized():
    cfg = validate_config(dict(BASE, optimizer="qd_hyperband"))
    assert cfg.params == {"eta": 3, "rho": 0.0, "variant": "batched", "r_min": 1.0, "rounding": "integer"}
    assert cfg.problem == {"name": "toy_cell", "reference_fidelity": 27}
    assert cfg.replication_seed(4) == 7


def test_invalid_optimizer_rejected_before_any_evaluation(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", str(_write(tmp_path, dict(BASE, optimizer="nope"))), "--out-dir", str(out)]) == 2
    assert not out.exists()


def test_run_two_replications_ledger_exact(tmp_path):
    paths = cmd_run(validate_config(BASE), tmp_path)
    assert [p.name for p in paths] == ["random_search_rep000.jsonl", "random_search_rep001.jsonl"]
    for rep, p in enumerate(paths):
        recs = _lines(p)
        header, evals, end = recs[0], recs[1:-1], recs[-1]
        assert header["seed"] == 3 + rep and header["schema_version"] == 1
        assert len(evals) == 20 and end["type"] == "end"
        assert evals[-1]["budget"] == sum(e["fidelity"] for e in evals) == 20 * 27
        assert header["total_budget"] == 540
    assert _lines(paths[0])[1] != _lines(paths[1])[1]


def test_trace_replay_reproduces_elites(tmp_path):
    cfg = validate_config(dict(BASE, optimizer="qd_hyperband", budget={"fidelity_units": 500}, replications=1))
    problem = toy_cell_problem()
    ns = cli.build_niches(cfg.niches, problem)
    direct = cli.run_optimizer(cfg, problem, ns, cfg.replication_seed(0))
    [path] = cmd_run(cfg, tmp_path)
    replayed = read_trace(path).archive()
    assert [e.index if e else None for e in replayed.elites] == [e.index if e else None for e in direct.elites]
    assert replayed.elite_objectives() == direct.elite_objectives()
    assert replayed.budget == direct.budget <= 500


def test_interrupt_and_resume_gives_identical_traces(tmp_path, monkeypatch):
    cfg = validate_config(
        dict(BASE, optimizer={"name": "bop_elites_star", "params": {"n_candidates": 20}}, budget={"full_evaluations": 13})
    )
    clean = cmd_run(cfg, tmp_path / "clean")

    real = cli.run_optimizer
    calls = {"n": 0}

    def crash_second(cfg_, problem, ns, seed):
        calls["n"] += 1
        if calls["n"] == 2:
            raise EvaluationError("node lost", None)
        return real(cfg_, problem, ns, seed)

    monkeypatch.setattr(cli, "run_optimizer", crash_second)
    with pytest.raises(EvaluationError):
        cmd_run(cfg, tmp_path / "resumed")
    partial = tmp_path / "resumed" / "bop_elites_star_rep001.jsonl"
    assert partial.exists() and _lines(partial)[-1]["type"] != "end"
    monkeypatch.setattr(cli, "run_optimizer", real)

    first = (tmp_path / "resumed" / "bop_elites_star_rep000.jsonl").stat().st_mtime_ns
    resumed = cmd_run(cfg, tmp_path / "resumed", resume=True)
    assert (tmp_path / "resumed" / "bop_elites_star_rep000.jsonl").stat().st_mtime_ns == first
    for a, b in zip(clean, resumed):
        assert a.read_bytes() == b.read_bytes()


def test_more_replications_keep_existing_traces(tmp_path):
    cfg = validate_config(dict(BASE, replications=1))
    [p0] = cmd_run(cfg, tmp_path)
    stamp = p0.stat().st_mtime_ns
    more = validate_config(dict(BASE, replications=3))
    assert more.hash == cfg.hash
    paths = cmd_run(more, tmp_path, resume=True)
    assert len(paths) == 3 and p0.stat().st_mtime_ns == stamp


def test_parallel_matches_serial(tmp_path):
    a = cmd_run(validate_config(BASE), tmp_path / "a")
    b = cmd_run(validate_config(BASE), tmp_path / "b", parallel=2)
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]


def test_oracle_file_and_refusal(tmp_path):
    path = cmd_oracle(validate_config(dict(BASE, niches={"upper_bounds": [1.0, 96000.0, None]})), tmp_path)
    doc = json.loads(path.read_text())
    assert [n["empty"] for n in doc["niches"]] == [True, False, False]
    assert doc["niches"][1]["objective"] == 8.838821899958848
    assert set(doc["niches"][1]["configuration"]) == {"edges", "ops"}
    cont = _write(tmp_path, dict(BASE, problem={"name": "synthetic_continuous"}, niches={"default": True}), "c.json")
    assert main(["oracle", "--config", str(cont), "--out-dir", str(tmp_path / "o")]) == 2


def _run_mix(tmp_path):
    dirs = []
    for name, budget in (("random_search", {"full_evaluations": 16}), ("map_elites", {"full_evaluations": 16})):
        data = dict(BASE, optimizer={"name": name, "params": {"population_size": 8} if name == "map_elites" else {}}, budget=budget)
        d = tmp_path / name
        cmd_run(validate_config(data), d)
        dirs.append(d)
    for name in ("qd_hyperband", "mo_hyperband"):
        d = tmp_path / name
        cmd_run(validate_config(dict(BASE, optimizer=name, budget={"fidelity_units": 432})), d)
        dirs.append(d)
    return dirs


def test_report_is_byte_reproducible(tmp_path):
    dirs = _run_mix(tmp_path)
    a = cmd_report(dirs, tmp_path / "r1")
    b = cmd_report(list(reversed(dirs)), tmp_path / "r2")
    assert [p.name for p in a] == [f"{n}.csv" for n in cli.REPORTS]
    for x, y in zip(a, b):
        assert x.read_bytes() == y.read_bytes()
    ert_rows = (tmp_path / "r1" / "ert_ratios.csv").read_text().splitlines()
    assert ert_rows[0] == "problem,qd_optimizer,mo_optimizer,target,ert_qd,ert_mo,ratio"
    assert ert_rows[1].split(",")[-6:-4] == ["qd_hyperband", "mo_hyperband"]


def test_single_trace_curve_is_its_own_step_function(tmp_path):
    [path] = cmd_run(validate_config(dict(BASE, replications=1)), tmp_path)
    t = read_trace(path)
    rows = cli.anytime_table([t], cli.ReportOptions(grid_points=20))[1:]
    curve = cli._curve(t)
    for row in rows:
        assert float(row[3]) == curve.at(float(row[2])) and float(row[4]) == 0.0


def _fake_trace(problem, optimizer, rep, objective):
    ns = NicheSet.unbounded(1)
    header = {
        "problem_label": problem, "optimizer": optimizer, "replication": rep, "niche_set": ns.to_json(),
        "reference_fidelity": 1.0, "penalty": 100.0, "total_budget": 1.0,
    }
    return Trace(header, [Evaluation("x", 1.0, objective, (0.0,), 0, 1.0, False)])


def test_rank_table_two_problem_fixture():
    traces = [
        _fake_trace("p1", "A", 0, 10.0), _fake_trace("p1", "B", 0, 20.0),
        _fake_trace("p2", "A", 0, 30.0), _fake_trace("p2", "B", 0, 30.0),
    ]
    rows = final_ranks_table(traces)
    body = {(r[0], r[1]): r[2:] for r in rows[1:]}
    assert body[("p1", "A")][1] == "1.0" and body[("p1", "B")][1] == "2.0"
    assert body[("p2", "A")][1] == body[("p2", "B")][1] == "1.5"
    # hand computation: A ranks (1, 1.5) -> mean 1.25, se 0.25; B ranks (2, 1.5) -> 1.75, 0.25
    assert body[("mean", "A")][1:] == ["1.25", "0.25"]
    assert body[("mean", "B")][1:] == ["1.75", "0.25"]
    assert csv_text(rows) == csv_text(final_ranks_table(list(reversed(traces))))


def test_schema_mismatch_and_incomplete_traces(tmp_path):
    [path] = cmd_run(validate_config(dict(BASE, replications=1)), tmp_path / "t")
    recs = path.read_text().splitlines()
    header = json.loads(recs[0])
    header["schema_version"] = 99
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join([json.dumps(header)] + recs[1:]) + "\n")
    with pytest.raises(TraceError):
        read_trace(bad)
    assert main(["report", str(bad), "--out-dir", str(tmp_path / "r")]) == 2
    cut = tmp_path / "cut.jsonl"
    cut.write_text("\n".join(recs[:-1]) + "\n")
    assert not read_trace(cut).complete
    assert collect_traces([cut]) == []


def test_main_verbs(tmp_path, capsys):
    cfg = _write(tmp_path, dict(BASE, replications=1))
    assert main(["validate-config", "--config", str(cfg)]) == 0
    shown = json.loads(capsys.readouterr().out)
    assert shown["optimizer"]["params"]["design_size"] == 10
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "o"), "--replications", "2", "--seed", "9"]) == 0
    traces = sorted((tmp_path / "o").glob("*.jsonl"))
    assert len(traces) == 2 and _lines(traces[1])[0]["seed"] == 10
    assert main(["report", str(tmp_path / "o"), "--out-dir", str(tmp_path / "r"), "--grid-points", "5"]) == 0
    assert (tmp_path / "r" / "anytime.csv").read_text().count("\n") == 1 + 5
    bad = tmp_path / "broken.json"
    bad.write_text("{")
    assert main(["validate-config", "--config", str(bad)]) == 2


def test_evaluation_failure_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise EvaluationError("disk full", None)

    monkeypatch.setattr(cli, "run_optimizer", boom)
    cfg = _write(tmp_path, dict(BASE, replications=1))
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 1
    trace = read_trace(tmp_path / "o" / "random_search_rep000.jsonl")
    assert not trace.complete and trace.evaluations == []


def test_load_config_round_trip(tmp_path):
    cfg = load_config(_write(tmp_path, BASE))
    assert validate_config(cfg.materialized()) == cfg


def test_report_tables_all_present(tmp_path):
    [path] = cmd_run(validate_config(dict(BASE, replications=1)), tmp_path)
    tables = report_tables([read_trace(path)])
    assert set(tables) == set(cli.REPORTS)
