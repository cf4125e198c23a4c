from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from rrmd.diagnostics import (
    LemmaReport,
    check_descent,
    check_dkc_empirical,
    check_drift,
    check_dual_lipschitz,
    check_error_bound,
    check_multiblock_lipschitz,
    check_sandwich,
    check_stationarity_bridge,
    error_bound,
    two_block_synthetic,
    write_reports,
)
from rrmd.experiments import calibrate
from rrmd.kernels import BoltzmannShannon, Kernel, burg, fermi_dirac, log_barrier, power, quadratic, shannon
from rrmd.problems import DatasetSpec, make_problem
from rrmd.solver import SolverConfig, StepSchedule, run, theoretical_step_cap


@pytest.fixture(scope="module")
def small_pr():
    p = make_problem(DatasetSpec("phase_retrieval", 4, 16, seed=0))
    calibrate(p)
    return p


def tracked_run(p, scale=1.0, epochs=5, seed=0):
    a = theoretical_step_cap(p).per_sample * scale
    cfg = SolverConfig(batch_size=1, epochs=epochs, seed=seed, schedule=StepSchedule("fixed", a), track_errors=True)
    return run(p, cfg)


class UnderstatedShannon(BoltzmannShannon):
    """Shannon kernel whose condition-number bound is too small."""

    def dkc(self, delta):
        return np.exp(np.asarray(delta, dtype=float) / 4.0)


class OverstatedCurvature(BoltzmannShannon):
    """Shannon kernel whose reported Hessian bounds are too large."""

    def eig_bounds(self, z):
        lo, hi = super().eig_bounds(z)
        return 10.0 * lo, 10.0 * hi


# trivial values ------------------------------------------------------------------------
def test_burg_bound_value():
    assert burg(1, 2.0).kappa_delta(3.0) == pytest.approx(9 / 4 + 6 + 5)


def test_report_pass_rule_and_csv(tmp_path):
    assert LemmaReport("dkc", 1, 1.0 + 1e-9).passed
    assert not LemmaReport("dkc", 1, 1.0 + 1e-7).passed
    path = tmp_path / "r.csv"
    write_reports([LemmaReport("dkc", 3, 0.5, seed=1)], path, {"seed": 1})
    text = path.read_text().splitlines()
    assert text[0] == "# seed=1" and text[2].startswith("dkc,3,0.5,0,True,1")


# kernel checks ---------------------------------------------------------------------------
@pytest.mark.parametrize("kernel", [shannon(2), burg(2, 0.5), fermi_dirac(2), power(3, 1.5), quadratic(2)],
                         ids=["shannon", "regularized_burg", "fermi_dirac", "power", "quadratic"])
def test_kernel_checks_pass(kernel):
    assert check_dkc_empirical(kernel, 1.0, trials=2000, seed=1).passed
    assert check_sandwich(kernel, trials=2000, seed=1).passed


def test_fermi_dirac_sandwich_is_tight_but_holds():
    rep = check_sandwich(fermi_dirac(3), trials=2000)
    assert rep.passed and rep.max_ratio > 0.99


def test_understated_bound_is_detected():
    rep = check_dkc_empirical(Kernel([UnderstatedShannon(2)]), 2.0, trials=2000)
    assert not rep.passed and rep.violations > 0
    assert rep.witness["kappa"] > rep.details["bound"]


def test_wrong_curvature_breaks_sandwich():
    assert not check_sandwich(Kernel([OverstatedCurvature(2)]), trials=500).passed


def test_dual_lipschitz_detects_small_constant(small_pr):
    good = check_dual_lipschitz(small_pr, trials=500)
    assert good.passed
    bad = check_dual_lipschitz(small_pr, trials=500, L=small_pr.L_rel * good.max_ratio / 2)
    assert not bad.passed


def test_log_barrier_has_no_finite_bound():
    assert math.isinf(log_barrier(2).kappa_delta(1.0))


def test_dual_lipschitz_needs_single_block():
    with pytest.raises(ValueError):
        check_dual_lipschitz(two_block_synthetic())


def test_multiblock_check_and_mutation():
    p = two_block_synthetic()
    rep = check_multiblock_lipschitz(p, trials=1000)
    assert rep.passed and rep.details["gamma"] > 1
    mu, Lh = p.block_bounds
    # a constant below the smallest admissible one is rejected
    assert check_multiblock_lipschitz(p, trials=1000, L=p.L_rel * rep.max_ratio**0.5 / 2).violations > 0
    assert rep.details["kappa"] == pytest.approx(float(np.max(Lh / mu)))


# run checks ------------------------------------------------------------------------------
def test_run_checks_pass_at_the_cap(small_pr):
    r = tracked_run(small_pr)
    for rep in (check_descent(r), check_error_bound(r, small_pr.L_rel), check_stationarity_bridge(r), check_drift(r, 1.0)):
        assert rep.passed, rep
    assert check_stationarity_bridge(r).details["upper_violations"] == 0


def test_mutated_diagnostics_are_detected(small_pr):
    r = tracked_run(small_pr)
    L = small_pr.L_rel
    d = r.diagnostics
    inflated = [replace(e, error_term=2.0 * error_bound(e, L)) for e in d]
    assert not check_error_bound(inflated, L).passed
    raised = [replace(e, f_next=e.f + 1.0) for e in d]
    assert not check_descent(raised).passed
    flat = [replace(e, stationarity=1e-3 * e.stationarity) for e in d]
    assert not check_stationarity_bridge(flat).passed
    drift = check_drift(r, 1.0).max_ratio
    assert not check_drift(r, 1.0 * drift / 2).passed


def test_error_term_vanishes_with_the_step(small_pr):
    E = [np.mean([e.error_term for e in tracked_run(small_pr, s).diagnostics]) for s in (1.0, 0.01)]
    assert E[1] < 1e-5 * E[0]


def test_error_term_scales_cubically(small_pr):
    E1 = np.mean([e.error_term for e in tracked_run(small_pr, 1.0).diagnostics])
    E2 = np.mean([e.error_term for e in tracked_run(small_pr, 0.5).diagnostics])
    assert 1 / 32 <= E2 / E1 <= 1 / 2
    assert E2 / E1 == pytest.approx(1 / 8, rel=0.25)


def test_single_component_has_no_error():
    p = make_problem(DatasetSpec("phase_retrieval", 3, 1, seed=2))
    p.L_rel, p.G_bound = 10.0, 10.0
    r = tracked_run(p)
    assert all(e.error_term == 0.0 for e in r.diagnostics)


def test_in_expectation_ratio_is_reported(small_pr):
    runs = [tracked_run(small_pr, seed=s) for s in range(3)]
    rep = check_error_bound(runs[0], small_pr.L_rel, runs=runs)
    assert 0.0 < rep.details["expectation_ratio"] <= 1.0


def test_checks_require_tracking(small_pr):
    r = run(small_pr, SolverConfig(epochs=2, schedule=StepSchedule("fixed", 1e-6)))
    with pytest.raises(ValueError):
        check_descent(r)
    assert math.isfinite(check_drift(r, 1.0).max_ratio)
