"""Tests of the end-to-end pipeline: plant integration oracles, the
estimation loop ordering, Monte Carlo batching, trace emission, and the CLI."""

import numpy as np
import pytest

from smobserver.cli import main as cli_main
from smobserver.decomposition import LtiSystem
from smobserver.errors import InvalidDesignError
from smobserver.numerics import expm
from smobserver.pipeline import (build_design, certify_scenario, emit_plot_data,
                                 emit_traces, monte_carlo_containment,
                                 parse_traces, rk4_recurrence, run_algorithm1,
                                 simulate_plant, trace_header)


# -- plant integration oracles ---------------------------------------------

def test_simulate_plant_scalar_decay():
    sys = LtiSystem(np.array([[-1.0]]), np.zeros((1, 1)),
                    np.eye(1), np.zeros((1, 1)))
    ts, xs = simulate_plant(sys, np.array([1.0]),
                            lambda t: np.zeros((np.atleast_1d(t).shape[0], 1)),
                            dt=0.1, substeps=100, horizon=1.0)
    assert ts[-1] == pytest.approx(1.0)
    assert abs(xs[-1, 0] - np.exp(-1.0)) <= 1e-8


def test_simulate_plant_unforced_matches_exponential():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((3, 3))
    sys = LtiSystem(A, np.zeros((3, 1)), np.eye(3), np.zeros((3, 1)))
    x0 = rng.standard_normal(3)
    ts, xs = simulate_plant(sys, x0,
                            lambda t: np.zeros((np.atleast_1d(t).shape[0], 1)),
                            dt=0.1, substeps=50, horizon=2.0)
    ref = expm(A * 2.0) @ x0
    assert np.allclose(xs[-1], ref, rtol=1e-7, atol=1e-9)


def test_simulate_plant_pure_integrator():
    # dx = w with w = cos t: x(t) = x0 + sin t
    sys = LtiSystem(np.zeros((1, 1)), np.eye(1), np.eye(1), np.zeros((1, 1)))
    w_fn = lambda t: np.cos(np.atleast_1d(np.asarray(t)))[:, None]
    ts, xs = simulate_plant(sys, np.array([0.5]), w_fn,
                            dt=0.1, substeps=20, horizon=3.0)
    assert np.allclose(xs[:, 0], 0.5 + np.sin(ts), atol=1e-10)


def test_rk4_recurrence_weights_sum():
    # for constant w the three weights must sum to the ZOH-like quadrature
    # h/6 (B + hAB + ... + 4B + 2hAB + ... + B) -> compare one step against
    # the augmented exponential to fourth order
    A = np.array([[-0.3, 0.2], [0.0, -0.5]])
    B = np.array([[1.0], [2.0]])
    h = 0.01
    R, W1, W2, W3 = rk4_recurrence(A, B, h)
    from smobserver.numerics import zoh
    Ad, Bd = zoh(A, B, h)
    assert np.allclose(R, Ad, atol=1e-12)
    assert np.allclose(W1 + W2 + W3, Bd, atol=1e-11)


# -- estimation loop --------------------------------------------------------

def test_step_log_algorithm_order(cfg_mixed):
    log = []
    run_algorithm1(cfg_mixed.with_overrides(horizon=0.3), step_log=log)
    assert log[0] == "setup"
    assert log[1] == "fuse"
    body = log[2:]
    per_step = ["continuous", "gamma", "propagate", "gate", "update", "fuse"]
    assert body == per_step * 3


def test_run_is_contained_and_enveloped(run_mixed, run_ex1, run_ex2):
    for run in (run_mixed, run_ex1, run_ex2):
        assert run.ok
        assert run.containment_ok and run.eps1_ok
        assert run.worst_q <= 1.0 + 1e-9
        assert run.eps1_margin > 0.0


def test_updates_fire_on_mixed_scenario(run_mixed):
    assert np.all(np.isfinite(run_mixed.betas))
    assert np.all(run_mixed.betas > 0.0)
    assert not any(r.skipped for r in run_mixed.traces[1:])


def test_updates_never_fire_on_builtins(run_ex1, run_ex2):
    for run in (run_ex1, run_ex2):
        assert all(r.skipped for r in run.traces)


def test_design_requires_strongly_observable_part(cfg_mixed):
    # a zero output map makes the whole state weakly unobservable
    cfg = cfg_mixed.with_overrides(C=np.zeros((2, 2)), D=np.zeros((2, 1)))
    with pytest.raises(InvalidDesignError):
        build_design(cfg)


def test_certify_scenario_consistency(cfg_mixed):
    rep, run = certify_scenario(cfg_mixed)
    assert rep is run.report
    assert rep.case in ("lemma6", "lemma7")


# -- Monte Carlo ------------------------------------------------------------

def test_mc_empty():
    from smobserver.scenario import example2
    out = monte_carlo_containment(example2(), runs=0, seed=0)
    assert out["runs"] == 0
    assert out["containment_rate"] is None


def test_mc_mixed_contained(cfg_mixed):
    out = monte_carlo_containment(cfg_mixed, runs=10, seed=3)
    assert out["containment_rate"] == 1.0
    assert out["eps1_violations"] == 0
    assert out["worst_q"] <= 1.0 + 1e-9
    assert len(out["per_run_worst_q"]) == 10


def test_mc_batched_matches_single_run(cfg_mixed):
    """Feeding the nominal initial state and input through the batched path
    must reproduce the single-run worst quadratic form."""
    run = run_algorithm1(cfg_mixed)
    x0s = cfg_mixed.xhat0[:, None]

    def w_family(ts):
        return cfg_mixed.w_true(np.atleast_1d(np.asarray(ts)))[:, :, None]

    out = monte_carlo_containment(cfg_mixed, runs=1, seed=0, x0s=x0s,
                                  w_family=w_family)
    assert out["per_run_worst_q"][0] == pytest.approx(run.worst_q, abs=1e-10)


# -- emission and CLI -------------------------------------------------------

def test_trace_header_layout():
    cols = trace_header(2)
    assert cols[:3] == ["t", "x_true0", "x_true1"]
    assert cols[-2:] == ["contained", "skipped"]
    assert len(cols) == 1 + 4 * 2 + 9


def test_emit_parse_round_trip(tmp_path, run_mixed):
    path = tmp_path / "traces.csv"
    emit_traces(run_mixed.traces, path)
    back = parse_traces(path)
    assert len(back) == len(run_mixed.traces)
    for a, b in zip(run_mixed.traces, back):
        assert a.t == b.t
        assert np.array_equal(a.x_true, b.x_true)
        assert np.array_equal(a.lo, b.lo)
        assert (a.trP, a.vol, a.eps1) == (b.trP, b.vol, b.eps1)
        assert (np.isnan(a.alpha) and np.isnan(b.alpha)) or a.alpha == b.alpha
        assert a.contained == b.contained and a.skipped == b.skipped


def test_emit_traces_deterministic(tmp_path, run_mixed):
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    emit_traces(run_mixed.traces, p1)
    emit_traces(run_mixed.traces, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_emit_plot_data_files(tmp_path, run_mixed):
    written = emit_plot_data(run_mixed, tmp_path, ellipse_axes=(0, 1))
    names = {p.split("/")[-1] for p in map(str, written)}
    assert names == {"plot_volume.csv", "plot_bounds.csv",
                     "plot_ellipses_x0x1.csv"}
    head = (tmp_path / "plot_volume.csv").read_text().splitlines()[0]
    assert head == "t,vol,trP"


def test_cli_run_and_certify(tmp_path, cfg_mixed):
    scen = tmp_path / "mixed.yaml"
    cfg_mixed.with_overrides(horizon=2.0).save(scen)
    out = tmp_path / "out"
    assert cli_main(["run", "--scenario", str(scen),
                     "--out", str(out)]) == 0
    assert (out / "traces.csv").exists()
    assert (out / "certificate.yaml").exists()
    assert cli_main(["mc", "--scenario", str(scen), "--runs", "3",
                     "--seed", "1"]) == 0


def test_cli_missing_scenario_exits_3(tmp_path):
    assert cli_main(["run", "--scenario", str(tmp_path / "nope.yaml"),
                     "--out", str(tmp_path / "o")]) == 3


def test_cli_substep_overrides(tmp_path, cfg_mixed):
    scen = tmp_path / "mixed.yaml"
    cfg_mixed.with_overrides(horizon=1.0).save(scen)
    out = tmp_path / "out"
    assert cli_main(["run", "--scenario", str(scen), "--out", str(out),
                     "--substeps", "20", "--quad-substeps", "40",
                     "--hgo-substeps", "200"]) == 0
