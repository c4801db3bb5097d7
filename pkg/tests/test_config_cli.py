import csv
import io
import json

import numpy as np
import pytest

from surplusopt import cli
from surplusopt.config import SimConfig, dump_config, from_dict, parse_config, validate
from surplusopt.exceptions import ConfigurationError
from surplusopt.graph import max_epsilon

from _configs import ring_config, unbalanced_ring


def two_cycle_config(**extra):
    cfg = {
        "graph": {"kind": "ring", "n": 2, "weight": 0.4},
        "objective": {"kind": "quadratic", "Q": [[1.0], [1.0]], "c": [[0.0], [2.0]]},
        "dim": 1,
        "T": 0.5,
        "epsilon": 0.1,
        "k_max": 200,
        "record_stride": 50,
    }
    cfg.update(extra)
    return cfg


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# parsing

def test_auto_epsilon_is_half_the_bound(write_config):
    cfg = parse_config(write_config(ring_config()))
    assert isinstance(cfg, SimConfig)
    assert cfg.epsilon == 0.5 * max_epsilon(unbalanced_ring(), 0.5)
    assert cfg.schedule == {"kind": "harmonic", "alpha0": 1.0, "exponent": 1.0}


def test_large_sampling_time_rejected(write_config):
    cfg = ring_config(graph={"kind": "ring", "n": 4, "weight": 1.0}, T=10)
    with pytest.raises(ConfigurationError, match=r"1/T - sum_j a_ij") as info:
        parse_config(write_config(cfg))
    assert info.value.condition == "sampling_time"


def test_square_summable_boundary_rejected(write_config):
    cfg = ring_config(schedule={"kind": "power", "alpha0": 1.0, "exponent": 0.5})
    with pytest.raises(ConfigurationError, match="step-size") as info:
        parse_config(write_config(cfg))
    assert info.value.condition == "step_size"


def test_disconnected_graph_rejected(write_config):
    cfg = two_cycle_config(graph={"kind": "from_edge_list", "n": 2, "edges": [[1, 2, 0.4]]})
    with pytest.raises(ConfigurationError, match="strong connectivity"):
        parse_config(write_config(cfg))


def test_coupling_gain_rejected_with_node(write_config):
    with pytest.raises(ConfigurationError, match="node 1") as info:
        parse_config(write_config(two_cycle_config(epsilon=1.6)))
    assert info.value.condition == "coupling_gain"


def test_agent_count_mismatch_rejected(write_config):
    cfg = two_cycle_config(objective={"kind": "quartic", "c": [[0.0]] * 3})
    with pytest.raises(ConfigurationError, match="agents"):
        parse_config(write_config(cfg))


def test_indefinite_objective_rejected(write_config):
    cfg = two_cycle_config(objective={"kind": "quadratic", "Q": [[1.0], [-1.0]], "c": [[0.0], [2.0]]})
    with pytest.raises(ConfigurationError, match="positive definite"):
        parse_config(write_config(cfg))


@pytest.mark.parametrize("data, message", [
    ({"graph": {"kind": "ring", "n": 2}, "objective": {"kind": "quartic", "c": [[0], [1]]}, "dim": 1},
     "T: required"),
    (dict(two_cycle_config(), colour="red"), "unknown field"),
    (two_cycle_config(dim="one"), "dim: expected a number"),
    (two_cycle_config(mode="fly"), "mode"),
    (two_cycle_config(record_stride=0), "record_stride"),
    (two_cycle_config(tolerances={"tol_z": 1.0}), "tolerances.tol_z"),
    (two_cycle_config(epsilon="big"), "epsilon"),
    ([1, 2], "top level"),
])
def test_field_errors_are_named(data, message):
    with pytest.raises(ConfigurationError, match=message):
        from_dict(data)


def test_json_syntax_error_has_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "graph": {,\n}')
    with pytest.raises(ConfigurationError, match="line 2 column"):
        parse_config(path)


def test_edge_list_path_is_relative_to_config(tmp_path, write_config):
    (tmp_path / "edges.txt").write_text("1 2 0.4\n2 1 0.4\n")
    cfg = parse_config(write_config(two_cycle_config(graph={"kind": "from_edge_list", "path": "edges.txt"})))
    assert cfg.build_graph().edges() == [(1, 2, 0.4), (2, 1, 0.4)]


def test_overrides_apply(write_config):
    cfg = parse_config(write_config(two_cycle_config()), seed=9, k_max=17, mode="verify")
    assert (cfg.seed, cfg.k_max, cfg.mode) == (9, 17, "verify")


def test_config_round_trip(tmp_path, write_config):
    cfg = parse_config(write_config(ring_config(schedule={"kind": "power", "alpha0": 2.0, "exponent": 0.8})))
    echo = tmp_path / "echo.json"
    echo.write_text(dump_config(cfg))
    assert parse_config(echo) == cfg


def test_validate_reports_spectral_radius(write_config):
    _, _, _, _, M, rho = validate(parse_config(write_config(two_cycle_config())))
    assert rho == pytest.approx(0.95, rel=1e-9)
    assert M.matrix.shape == (4, 4)


def test_explicit_initial_state(write_config):
    cfg = parse_config(write_config(two_cycle_config(initial={"r": [[0.0], [2.0]], "y": [[1.0], [-1.0]]})))
    st = cfg.build_initial_state(2)
    np.testing.assert_array_equal(st.r.ravel(), [0.0, 2.0])
    np.testing.assert_array_equal(st.y.ravel(), [1.0, -1.0])
    assert not st.q.any()


# execution

def test_check_mode_two_cycle(tmp_path, write_config):
    out = tmp_path / "check"
    stream = io.StringIO()
    status = cli.execute(parse_config(write_config(two_cycle_config(mode="check"))), out, stream)
    assert status == cli.EXIT_OK
    summary = json.loads((out / "check.json").read_text())
    assert summary["epsilon_max"] == pytest.approx(1.6, abs=1e-15)
    assert summary["gamma_hat"] < 1
    assert summary["column_sum_residual"] <= 1e-12
    assert "epsilon_max: 1.6" in stream.getvalue()
    assert not (out / "trajectory.csv").exists()


def test_run_mode_artifacts(tmp_path, write_config):
    out = tmp_path / "nested" / "run"
    status = cli.execute(parse_config(write_config(two_cycle_config())), out, io.StringIO())
    assert status == cli.EXIT_OK
    assert {p.name for p in out.iterdir()} == {"trajectory.csv", "report.json", "decay.csv",
                                              "config-echo.json"}
    rows = read_rows(out / "trajectory.csv")
    assert [int(r["k"]) for r in rows] == [0, 50, 100, 150, 200]
    assert {"r_1_1", "q_2_1", "y_2_1", "alpha_k", "consensus_error", "surplus_norm",
            "velocity_norm", "optimality_gap", "conservation_residual"} <= set(rows[0])
    report = json.loads((out / "report.json").read_text())
    assert report["diagnostics"]["max_conservation_residual"] <= 1e-10
    decay = read_rows(out / "decay.csv")
    assert len(decay) == 200 and set(decay[0]) == {"k", "e_k", "bound", "e_k_frobenius"}


def test_stride_equal_to_horizon_gives_two_rows(tmp_path, write_config):
    out = tmp_path / "run"
    cli.execute(parse_config(write_config(two_cycle_config(record_stride=200))), out, io.StringIO())
    assert [int(r["k"]) for r in read_rows(out / "trajectory.csv")] == [0, 200]


def test_repeat_runs_are_byte_identical(tmp_path, write_config):
    cfg = parse_config(write_config(ring_config(k_max=3000, record_stride=100)))
    for name in ("a", "b"):
        assert cli.execute(cfg, tmp_path / name, io.StringIO()) == cli.EXIT_OK
    for f in ("trajectory.csv", "report.json", "decay.csv", "config-echo.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_verify_mode_logs_deviation(tmp_path, write_config):
    stream = io.StringIO()
    cfg = parse_config(write_config(ring_config(k_max=200, mode="verify")))
    assert cli.execute(cfg, tmp_path, stream) == cli.EXIT_OK
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["diagnostics"]["verify_max_deviation"] <= 1e-10
    assert "max local/stacked deviation" in stream.getvalue()


def test_compare_mode_layout(tmp_path, write_config):
    cfg = parse_config(write_config(ring_config(k_max=2000, mode="compare")))
    assert cli.execute(cfg, tmp_path, io.StringIO()) == cli.EXIT_OK
    summary = json.loads((tmp_path / "compare.json").read_text())
    assert set(summary) >= {"x_star", "baseline_fixed_point", "surplus_on", "surplus_off",
                            "distance_ratio"}
    assert (tmp_path / "surplus_on" / "trajectory.csv").exists()
    assert (tmp_path / "surplus_off" / "trajectory.csv").exists()
    off = read_rows(tmp_path / "surplus_off" / "trajectory.csv")
    assert all(float(r["y_1_1"]) == 0.0 for r in off)


def test_divergence_exit_code(tmp_path, write_config):
    cfg = parse_config(write_config(two_cycle_config(tolerances={"guard": 1.0})))
    assert cli.execute(cfg, tmp_path, io.StringIO()) == cli.EXIT_DIVERGENCE


def test_verification_exit_code(monkeypatch, tmp_path, write_config):
    import surplusopt.protocol as protocol

    real = protocol.stacked_step
    monkeypatch.setattr(protocol, "stacked_step", lambda *a: real(*a) + 1e-6)
    cfg = parse_config(write_config(two_cycle_config(mode="verify")))
    assert cli.execute(cfg, tmp_path, io.StringIO()) == cli.EXIT_VERIFY


def test_unwritable_output_exit_code(tmp_path, write_config):
    blocker = tmp_path / "file"
    blocker.write_text("")
    cfg = parse_config(write_config(two_cycle_config()))
    assert cli.execute(cfg, blocker / "out", io.StringIO()) == cli.EXIT_IO


def test_main_validation_exit_code(write_config, tmp_path, capsys):
    path = write_config(two_cycle_config(T=10))
    assert cli.main(["run", "--config", str(path), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "sampling-time condition" in capsys.readouterr().err


def test_main_missing_config_exit_code(tmp_path):
    assert cli.main(["run", "--config", str(tmp_path / "nope.json")]) == cli.EXIT_IO


def test_main_flags_and_env_default(monkeypatch, tmp_path, write_config):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "root"))
    path = write_config(two_cycle_config())
    assert cli.main(["run", "--config", str(path), "--kmax", "20", "--seed", "4"]) == cli.EXIT_OK
    echo = json.loads((tmp_path / "root" / "run" / "config-echo.json").read_text())
    assert (echo["k_max"], echo["seed"]) == (20, 4)


def test_console_script_entry_point():
    from importlib.metadata import entry_points

    eps = {ep.name: ep.value for ep in entry_points(group="console_scripts")}
    assert eps.get("surplusopt") == "surplusopt.cli:main"


def test_persistent_clipping_is_flagged(tmp_path, write_config):
    cfg = parse_config(write_config(two_cycle_config(
        objective={"kind": "quartic", "c": [[-4.0], [4.0]]}, k_max=100, initial={"r": [[0.0], [0.0]]})))
    stream = io.StringIO()
    assert cli.execute(cfg, tmp_path, stream) == cli.EXIT_OK
    assert "clipping was still active" in stream.getvalue()
