from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rrmd.exceptions import DivergenceDetected, MissingConstants
from rrmd.kernels import quadratic, shannon
from rrmd.problems import DatasetSpec, FunctionalProblem, make_problem
from rrmd.solver import (
    SolverConfig,
    StepSchedule,
    mirror_step,
    read_trace,
    run,
    run_epoch,
    run_epoch_momentum,
    stationarity_measure,
    theoretical_step_cap,
    with_schedule,
    write_trace,
)

from oracles import incremental_gradient


def linear_problem(n=4, d=3, seed=0, kernel=None):
    c = np.random.default_rng(seed).normal(size=(n, d))
    kernel = quadratic(d) if kernel is None else kernel
    return FunctionalProblem(n, d, kernel, lambda x: c @ x, lambda idx, x: c[np.asarray(idx)]), c


def quadratic_bowl(n=6, d=3, seed=0):
    """``f_i(x) = ||x - c_i||**2 / 2`` with minimiser ``mean(c)``."""
    c = np.random.default_rng(seed).normal(size=(n, d))
    return FunctionalProblem(n, d, quadratic(d), lambda x: 0.5 * np.sum((x - c) ** 2, axis=1),
                             lambda idx, x: x - c[np.asarray(idx)]), c


def strip_wall(trace):
    return [replace(t, wall_ms=0.0) for t in trace]


# schedules -------------------------------------------------------------------------
def test_schedule_formulas():
    n, T = 32, 64
    assert StepSchedule("constant_imd", 2.0).step(5, n, T) == pytest.approx(2.0 / (n * T ** (1 / 3)))
    assert StepSchedule("constant_rr", 2.0).step(5, n, T) == pytest.approx(2.0 / (n ** (2 / 3) * T ** (1 / 3)))
    assert StepSchedule("polynomial", 1.0, gamma=0.75).step(16, n, T) == pytest.approx(16**-0.75)
    s = StepSchedule("capped_harmonic", 10.0, cap=1.0)
    assert s.step(5, n, T) == 1.0 and s.step(20, n, T) == pytest.approx(0.5)
    assert StepSchedule("fixed", 0.3).steps(n, 3).tolist() == [0.3, 0.3, 0.3]
    for bad in (dict(kind="nope"), dict(alpha=0.0), dict(kind="polynomial", gamma=0.5), dict(kind="capped_harmonic", cap=0)):
        with pytest.raises(ValueError):
            StepSchedule(**bad)


def test_config_validation_and_batch_default():
    assert SolverConfig().batch_for(384) == 2
    assert SolverConfig().batch_for(1000) == 5
    assert SolverConfig().batch_for(32) == 1
    for bad in (dict(momentum=1.0), dict(batch_size=0), dict(epochs=-1), dict(step_cap=0.0), dict(delta=0.0)):
        with pytest.raises(ValueError):
            SolverConfig(**bad)
    with pytest.raises(ValueError):
        SolverConfig(batch_size=10).batch_for(5)
    assert with_schedule(SolverConfig(), alpha=3.0).schedule.alpha == 3.0


# elementary steps ------------------------------------------------------------------------
def test_mirror_step_examples():
    x = np.array([0.5, 2.0, 1.0])
    np.testing.assert_array_equal(mirror_step(shannon(3), x, np.zeros(3), 1.0), x)
    v = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(mirror_step(quadratic(3), x, v, 0.1), x - 0.1 * v)
    assert mirror_step(shannon(1), np.array([1.0]), np.array([1.0]), 1.0)[0] == pytest.approx(math.exp(-1.0))


def test_single_component_epoch_is_one_mirror_step():
    p, c = linear_problem(n=1, kernel=shannon(3))
    x = np.array([1.0, 2.0, 0.5])
    x_next, _ = run_epoch(p, x, np.array([0]), 0.3)
    np.testing.assert_array_equal(x_next, mirror_step(p.kernel, x, c[0], 0.3))


def test_fixed_order_quadratic_matches_incremental_gradient_bitwise():
    p, c = linear_problem(n=5)
    x0 = np.array([0.1, -0.2, 0.3])
    grads = [lambda x, ci=ci: ci for ci in c]
    res = run(p, SolverConfig(scheme="fixed", schedule=StepSchedule("fixed", 0.01), batch_size=1, epochs=7,
                              diagnostics_cadence=0), x0=x0)
    ref = incremental_gradient(x0, grads, range(5), 0.01, 7)
    np.testing.assert_array_equal(res.x_final, ref)


def test_zero_step_leaves_point_unchanged():
    p, _ = linear_problem()
    x = np.array([1.0, 2.0, 3.0])
    x_next, _ = run_epoch(p, x, np.arange(4), 0.0)
    np.testing.assert_array_equal(x_next, x)


def test_momentum_off_reproduces_plain_epoch():
    p, _ = linear_problem(kernel=shannon(3))
    x = np.array([1.0, 0.5, 2.0])
    order = np.array([2, 0, 3, 1])
    a, _ = run_epoch(p, x, order, 0.05)
    b, _, _ = run_epoch_momentum(p, x, order, 0.05, 0.0, None)
    np.testing.assert_array_equal(a, b)
    a1, _ = run_epoch(p, x, order[:1], 0.05)
    b1, _, _ = run_epoch_momentum(p, x, order[:1], 0.05, 0.9, None)
    np.testing.assert_array_equal(a1, b1)


def test_momentum_geometric_displacement():
    n, d, alpha, beta = 6, 2, 0.1, 0.9
    g = np.array([1.0, -2.0])
    p = FunctionalProblem(n, d, quadratic(d), lambda x: np.full(n, g @ x), lambda idx, x: np.tile(g, (len(idx), 1)))
    x0 = np.zeros(d)
    x1, v1, _ = run_epoch_momentum(p, x0, np.arange(n), alpha, beta, None)
    factor = sum((1 - beta**i) / (1 - beta) for i in range(1, n + 1))
    np.testing.assert_allclose(x0 - x1, alpha * factor * g, rtol=1e-13)
    np.testing.assert_allclose(v1, alpha * (1 - beta**n) / (1 - beta) * g, rtol=1e-13)


def test_batched_epoch_uses_mean_gradient():
    p, c = linear_problem(n=4)
    x = np.zeros(3)
    x_next, _ = run_epoch(p, x, np.array([0, 1, 2, 3]), 0.5, batch_size=2)
    np.testing.assert_allclose(x_next, -0.5 * (c[:2].mean(0) + c[2:].mean(0)))


# stationarity --------------------------------------------------------------------------
def test_stationarity_examples():
    p, c = quadratic_bowl()
    x_star = c.mean(axis=0)
    assert stationarity_measure(p, x_star, 1.0) == pytest.approx(0.0, abs=1e-28)
    x = x_star + np.array([0.3, -0.1, 0.2])
    assert stationarity_measure(p, x, 0.7) == pytest.approx(0.5 * np.sum(p.grad(x) ** 2), rel=1e-12)
    q = FunctionalProblem(1, 1, shannon(1), lambda x: x.copy(), lambda idx, x: np.ones((len(idx), 1)))
    val, x_hat = stationarity_measure(q, np.array([1.0]), 1.0, return_point=True)
    assert x_hat[0] == pytest.approx(math.exp(-1))
    assert val == pytest.approx(math.exp(-1))
    # closed-form Bregman gap h(1) - h(e^-1) - h'(e^-1)(1 - e^-1) with h = x log x
    e1 = math.exp(-1)
    assert val == pytest.approx(0.0 - e1 * math.log(e1) - (math.log(e1) + 1) * (1 - e1))


# runs -------------------------------------------------------------------------------
def test_zero_epochs_returns_start():
    p, _ = quadratic_bowl()
    x0 = np.array([1.0, 2.0, 3.0])
    r = run(p, SolverConfig(epochs=0), x0=x0)
    np.testing.assert_array_equal(r.x_final, x0)
    assert len(r.trace) == 1 and r.trace[0].epoch == 1


def test_with_replacement_quadratic_converges():
    p, c = quadratic_bowl(n=20, seed=3)
    f_star = p.value(c.mean(axis=0))
    cfg = SolverConfig(scheme="sgd", schedule=StepSchedule("capped_harmonic", 1.0, cap=0.05), batch_size=1,
                       epochs=400, diagnostics_cadence=0)
    r = run(p, cfg, x0=np.full(3, 4.0))
    assert r.f_final - f_star < 1e-3 * (r.trace[0].f - f_star)


def test_seed_determinism_and_trace_layout():
    p = make_problem(DatasetSpec("phase_retrieval", 4, 16, seed=0))
    cfg = SolverConfig(epochs=6, schedule=StepSchedule("fixed", 1e-4), batch_size=2)
    a, b = run(p, cfg), run(p, cfg)
    assert strip_wall(a.trace) == strip_wall(b.trace)
    assert len(a.trace) == 7
    assert [t.samples for t in a.trace] == [16 * k for k in range(1, 7)] + [96]
    assert math.isnan(a.trace[-1].alpha) and math.isnan(a.trace[-1].drift)
    np.testing.assert_allclose(a.alphas, 1e-4 / 2)
    c = run(p, replace(cfg, seed=1))
    assert strip_wall(c.trace) != strip_wall(a.trace)


def test_step_cap_is_applied():
    p, _ = quadratic_bowl()
    r = run(p, SolverConfig(epochs=3, schedule=StepSchedule("fixed", 1.0), step_cap=0.01, batch_size=1))
    np.testing.assert_allclose(r.alphas, 0.01)


def test_divergence_detected():
    p, _ = quadratic_bowl()
    with pytest.raises(DivergenceDetected) as info:
        run(p, SolverConfig(epochs=20, schedule=StepSchedule("fixed", 5.0), batch_size=1), x0=np.full(3, 3.0))
    assert info.value.epoch is not None and len(info.value.traces) >= 1


def test_sampled_iterate_frequencies_follow_steps():
    p, _ = quadratic_bowl(n=2)
    steps = np.array([1e-3, 3e-3])
    hits = 0
    for seed in range(800):
        r = run(p, SolverConfig(epochs=2, batch_size=1, seed=seed, diagnostics_cadence=0), steps=steps)
        hits += r.sampled_epoch == 2
    assert abs(hits / 800 - 0.75) < 4 * math.sqrt(0.75 * 0.25 / 800)


def test_trace_roundtrip(tmp_path):
    p, _ = quadratic_bowl()
    r = run(p, SolverConfig(epochs=4, schedule=StepSchedule("fixed", 0.1), batch_size=1))
    path = tmp_path / "t.csv"
    write_trace(r, path, {"seed": 0, "scheme": "reshuffle"})
    meta, recs = read_trace(path)
    assert meta["scheme"] == "reshuffle"
    for a, b in zip(recs, r.trace):
        for field in ("epoch", "f", "grad_norm", "samples"):
            assert getattr(a, field) == getattr(b, field)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), scheme=st.sampled_from(["reshuffle", "shuffle_once", "fixed", "sgd"]))
def test_runs_stay_in_domain_and_count_samples(seed, scheme):
    p, _ = linear_problem(n=5, kernel=shannon(3), seed=seed % 100)
    r = run(p, SolverConfig(scheme=scheme, epochs=3, schedule=StepSchedule("fixed", 0.05), batch_size=1, seed=seed),
            x0=np.ones(3))
    assert np.all(r.iterates > 0)
    assert r.trace[-1].samples == 15


# theoretical caps ----------------------------------------------------------------------
def test_step_cap_plug_in_values():
    p, _ = quadratic_bowl()
    p.L_rel, p.G_bound = 1.0, 1.0
    assert theoretical_step_cap(p, delta=2.0, gamma=1.0).alpha_bar == pytest.approx(0.5)
    # separable kernels count one block per coordinate
    assert theoretical_step_cap(p, delta=2.0).alpha_bar == pytest.approx(1 / (2 * math.sqrt(24)))
    q, _ = linear_problem(kernel=shannon(3))
    q.L_rel, q.G_bound = 3.0, 2.0
    caps = theoretical_step_cap(q, delta=1.0, gamma=1.0)
    assert caps.alpha_bar == pytest.approx(min(1 / (2 * 3.0 * math.e), 1 / (2 * 2.0)))
    assert caps.per_sample == pytest.approx(caps.alpha_bar / q.n)


def test_step_cap_expected_smoothness_mode():
    p = make_problem(DatasetSpec("quadratic_inverse", 3, 8, seed=0))
    p.L_rel = 5.0
    A, B, tau, C = 2.0, 0.5, 1.5, 2.0
    p.expected_smoothness = (A, B, tau)
    x0 = p.initial_point(0)
    nu = math.sqrt(A * (C * (p.value(x0) - p.lower_bound)) ** tau + B * B)
    caps = theoretical_step_cap(p, delta=1.0, x0=x0, C=C, gamma=1.0)
    assert caps.mode == "expected_smoothness" and caps.G == pytest.approx(nu)
    assert caps.alpha_bar == pytest.approx(min(1 / (2 * 5.0 * p.kernel.kappa_delta(1.0)), 1 / (2 * nu)))


def test_step_cap_missing_constants():
    p, _ = quadratic_bowl()
    with pytest.raises(MissingConstants):
        theoretical_step_cap(p)
    p.L_rel = 1.0
    with pytest.raises(MissingConstants):
        theoretical_step_cap(p)
