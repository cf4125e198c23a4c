from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rrmd.exceptions import DomainViolation
from rrmd.kernels import power, shannon
from rrmd.problems import (
    ZERO_COUNT_FLOOR,
    BallRegion,
    BoxRegion,
    DatasetSpec,
    FiniteSumProblem,
    FunctionalProblem,
    PhaseRetrieval,
    PoissonInverse,
    ProductRegion,
    QuadraticInverse,
    estimate_relative_L,
    expected_smoothness_check,
    fit_expected_smoothness,
    load_dataset,
    make_problem,
    save_dataset,
)

from oracles import central_grad, phase_retrieval_curvature_scan

SPECS = [
    DatasetSpec("phase_retrieval", 5, 30, seed=1),
    DatasetSpec("quadratic_inverse", 4, 12, seed=2),
    DatasetSpec("poisson_inverse", 6, 40, seed=3),
]


# trivial examples ----------------------------------------------------------------
def test_phase_retrieval_examples():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(10, 3))
    x = rng.normal(size=3)
    p = PhaseRetrieval(A, np.abs(A @ x))
    assert p.value(x) == pytest.approx(0.0, abs=1e-24)
    np.testing.assert_allclose(p.grad(x), 0.0, atol=1e-12)
    q = PhaseRetrieval(np.array([[1.0, 0.0]]), np.array([1.0]))
    assert q.value(np.zeros(2)) == 1.0
    np.testing.assert_array_equal(q.grad(np.zeros(2)), [0.0, 0.0])


def test_quadratic_inverse_examples():
    x = np.array([0.3, -1.2, 0.5])
    p = QuadraticInverse(np.stack([np.eye(3)] * 4), np.full(4, x @ x))
    assert p.value(x) == pytest.approx(0.0, abs=1e-28)
    np.testing.assert_allclose(p.component_grads(x), 0.0, atol=1e-14)
    q = QuadraticInverse(np.ones((1, 1, 1)), np.ones(1))
    assert q.component_value(0, [2.0]) == pytest.approx(2.25)
    assert q.component_grad(0, [2.0])[0] == pytest.approx(6.0)


def test_poisson_examples():
    rng = np.random.default_rng(1)
    A = rng.uniform(0.5, 2.0, size=(8, 3))
    x = rng.uniform(0.5, 2.0, size=3)
    p = PoissonInverse(A, A @ x)
    assert p.value(x) == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(p.grad(x), 0.0, atol=1e-14)
    q = PoissonInverse(np.ones((1, 1)), np.ones(1))
    assert q.component_value(0, [math.e]) == pytest.approx(1.0)
    assert q.component_grad(0, [math.e])[0] == pytest.approx(1.0)
    with pytest.raises(DomainViolation):
        PoissonInverse(np.array([[1.0, 1.0]]), np.ones(1)).value(np.array([-2.0, 1.0]))
    with pytest.raises(ValueError):
        PoissonInverse(np.array([[1.0, 0.0]]), np.ones(1))


# derived: finite differences ----------------------------------------------------------
@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind)
def test_component_gradients_match_finite_differences(spec):
    p = make_problem(spec)
    rng = np.random.default_rng(7)
    for x in p.region.sample(rng, 4):
        step = 1e-6 * (1 + np.linalg.norm(x))
        for i in range(0, p.n, 7):
            g = p.component_grad(i, x)
            fd = central_grad(lambda z: p.component_value(i, z), x, step)
            assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(g))
        np.testing.assert_allclose(p.grad(x), p.component_grads(x).mean(axis=0), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind)
def test_closed_form_hessians_match_finite_differences(spec):
    p = make_problem(spec)
    x = p.region.sample(np.random.default_rng(8), 1)[0]
    idx = np.arange(0, p.n, 5)
    H = p.component_hessians_at(idx, x)
    F = FiniteSumProblem.component_hessians_at(p, idx, x)
    np.testing.assert_allclose(H, F, rtol=1e-6, atol=1e-6 * np.abs(H).max())


# generators and files ------------------------------------------------------------------
@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind)
def test_generators_are_deterministic(spec, tmp_path):
    a, b = make_problem(spec), make_problem(spec)
    x = a.initial_point(0)
    assert a.value(x) == b.value(x)
    np.testing.assert_array_equal(a.x_true, b.x_true)
    path = tmp_path / "data.csv"
    save_dataset(a, path)
    c = load_dataset(path)
    assert (c.n, c.d, c.kind) == (a.n, a.d, a.kind)
    assert c.value(x) == pytest.approx(a.value(x), rel=1e-15)
    np.testing.assert_array_equal(c.x_true, a.x_true)


def test_poisson_zero_counts_are_floored():
    p = make_problem(DatasetSpec("poisson_inverse", 50, 1000, seed=0))
    assert np.all(p.b > 0)
    assert np.all((p.b == ZERO_COUNT_FLOOR) | (p.b >= 1))


def test_dataset_spec_validation():
    with pytest.raises(ValueError):
        DatasetSpec("nope", 2, 2)
    with pytest.raises(ValueError):
        DatasetSpec("phase_retrieval", 0, 2)
    with pytest.raises(ValueError):
        DatasetSpec("phase_retrieval", 2, 2, noise=-1.0)
    assert DatasetSpec("phase_retrieval", 2, 3).to_dict()["n"] == 3


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_region_embeddings_stay_inside(seed):
    rng = np.random.default_rng(seed)
    regions = [BallRegion(1.7, 3), BoxRegion([0.1, 2.0], [0.5, 9.0]),
               ProductRegion([BoxRegion([0.5], [2.0]), BallRegion(1.0, 2)])]
    for reg in regions:
        pts = reg.sample(rng, 20)
        np.testing.assert_allclose(reg.embed(reg.unembed(pts[0])), pts[0], rtol=1e-6, atol=1e-9)
    ball = regions[0]
    assert np.linalg.norm(ball.embed(rng.normal(scale=1e3, size=3))) <= 1.7
    box = regions[1]
    z = box.embed(rng.normal(scale=1e3, size=2))
    assert np.all(z >= box.lower) and np.all(z <= box.upper)


# relative smoothness --------------------------------------------------------------------
def test_relative_L_of_kernel_itself_is_one():
    h = power(2, 2.0)
    p = FunctionalProblem(3, 2, h, lambda x: np.full(3, float(h.value(x))),
                          lambda idx, x: np.tile(h.mirror_map(x), (len(idx), 1)))
    assert estimate_relative_L(p, safety=1.0, trials=8) == pytest.approx(1.0, rel=1e-4)


def test_relative_L_of_zero_function_is_zero():
    p = FunctionalProblem(2, 2, shannon(2), lambda x: np.zeros(2), lambda idx, x: np.zeros((len(idx), 2)),
                          region=BoxRegion([0.5, 0.5], [2.0, 2.0]))
    assert estimate_relative_L(p) == 0.0


def test_relative_L_against_grid_scan():
    p = make_problem(DatasetSpec("phase_retrieval", 2, 8, seed=0))
    grid = phase_retrieval_curvature_scan(p.A, p.b, 5.0, 201)
    est = estimate_relative_L(p, safety=1.0, region=BallRegion(5.0, 2))
    assert est == pytest.approx(grid, rel=1e-3)


def test_ensure_L_caches():
    p = make_problem(SPECS[1])
    first = p.ensure_L()
    p.L_rel = 123.0
    assert p.ensure_L() == 123.0 and first > 0


# expected smoothness --------------------------------------------------------------------
def test_expected_smoothness_bounded_gradient_case():
    G = 2.0
    u = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    p = FunctionalProblem(3, 2, power(2, 0.0), lambda x: u @ x + 5.0, lambda idx, x: G * u[idx])
    rep = expected_smoothness_check(p, 0.0, G, 0.0, samples=500)
    assert rep.passed


def test_expected_smoothness_constant_function():
    p = FunctionalProblem(2, 2, power(2, 0.0), lambda x: np.ones(2), lambda idx, x: np.zeros((len(idx), 2)))
    rep = expected_smoothness_check(p, 0.0, 0.0, 1.0, samples=100)
    assert rep.passed and rep.max_ratio == 0.0


def test_quadratic_inverse_fitted_constants_hold_on_fresh_sample():
    p = make_problem(DatasetSpec("quadratic_inverse", 8, 32, seed=0))
    region = BallRegion(10.0, 8)
    A, B = fit_expected_smoothness(p, 1.5, samples=2000, seed=0, region=region)
    rep = expected_smoothness_check(p, A, B, 1.5, samples=10_000, seed=1, region=region)
    assert rep.violations == 0, rep
