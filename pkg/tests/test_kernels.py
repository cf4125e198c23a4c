from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from rrmd.exceptions import DomainViolation, EmptyRegion, ShapeMismatch
from rrmd.kernels import (
    Kernel,
    RegionEstimate,
    burg,
    fermi_dirac,
    log1p_gap,
    log_barrier,
    power,
    quadratic,
    shannon,
    stack,
    xlogx_gap,
)

from oracles import bracket_inverse, central_grad, central_jacobian, integrated_bregman_1d, power_hessian

KERNELS = {
    "shannon": lambda d: shannon(d),
    "burg": lambda d: burg(d, 1.0),
    "burg_sigma2": lambda d: burg(d, 2.0),
    "log_barrier": lambda d: log_barrier(d),
    "fermi_dirac": lambda d: fermi_dirac(d),
    "power2": lambda d: power(d, 2.0),
    "power1.5": lambda d: power(d, 1.5),
    "power0": lambda d: power(d, 0.0),
    "quadratic": lambda d: quadratic(d),
}

# second derivatives written independently of the package
SCALAR_H2 = {
    "shannon": lambda t: 1.0 / t,
    "burg": lambda t: 1.0 / t**2 + 1.0,
    "log_barrier": lambda t: 1.0 / t**2,
    "fermi_dirac": lambda t: 1.0 / (t * (1.0 - t)),
    "quadratic": lambda t: 1.0,
}


# trivial values ------------------------------------------------------------------
def test_value_examples():
    assert quadratic(2).value([3.0, 4.0]) == pytest.approx(12.5)
    assert shannon(2).value([1.0, 1.0]) == pytest.approx(0.0, abs=1e-15)
    assert burg(1, 1.0).value([1.0]) == pytest.approx(0.5)


def test_mirror_map_examples():
    np.testing.assert_allclose(shannon(2).mirror_map([1.0, math.e]), [1.0, 2.0])
    x = np.array([0.6, 0.8])
    np.testing.assert_allclose(power(2, 2.0).mirror_map(x), 2 * x)
    np.testing.assert_allclose(burg(1, 1.0).mirror_map([1.0]), [0.0], atol=1e-15)


def test_inverse_mirror_map_examples():
    np.testing.assert_allclose(shannon(1).inverse_mirror_map([1.0]), [1.0])
    np.testing.assert_allclose(burg(1, 1.0).inverse_mirror_map([0.0]), [1.0])
    y = np.array([1.2, 1.6])  # norm 2, so t**3 + t = 2 gives t = 1
    np.testing.assert_allclose(power(2, 2.0).inverse_mirror_map(y), y / 2, rtol=1e-14)


def test_bregman_examples():
    assert quadratic(2).bregman([1.0, 0.0], [0.0, 0.0]) == pytest.approx(0.5)
    for name, make in KERNELS.items():
        k = make(3)
        x = k.sample_interior(np.random.default_rng(0), 4)
        np.testing.assert_allclose(k.bregman(x, x), 0.0, atol=1e-14)
    closed = 2 * math.log(2) - 1
    assert shannon(1).bregman([2.0], [1.0]) == pytest.approx(closed, rel=1e-14)
    assert integrated_bregman_1d(SCALAR_H2["shannon"], 2.0, 1.0) == pytest.approx(closed, rel=1e-10)


def test_dual_distance_examples():
    x, y = np.array([1.0, 2.0]), np.array([4.0, 6.0])
    assert quadratic(2).dual_distance(x, y) == pytest.approx(5.0)
    assert shannon(1).dual_distance([1.0], [math.e]) == pytest.approx(1.0)
    assert fermi_dirac(1).dual_distance([0.5], [0.5]) == 0.0


def test_hessian_bound_examples():
    hb = quadratic(3).hessian_bounds(np.random.default_rng(0).normal(size=(5, 3)))
    np.testing.assert_allclose(hb.mu, 1.0)
    np.testing.assert_allclose(hb.L, 1.0)
    hb = shannon(1).hessian_bounds(np.array([[1.0], [math.e]]))
    assert hb.mu[0] == pytest.approx(1 / math.e)
    assert hb.L[0] == pytest.approx(1.0)
    assert hb.kappa[0] == pytest.approx(math.e)


def test_power_sphere_bounds_against_eigendecomposition():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(200, 4))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    hb = power(4, 2.0).hessian_bounds(z)
    ev = np.array([np.linalg.eigvalsh(power_hessian(p, 2.0)) for p in z])
    assert hb.mu[0] == pytest.approx(2.0) == pytest.approx(ev.min())
    assert hb.L[0] == pytest.approx(4.0) == pytest.approx(ev.max())
    assert hb.kappa[0] == pytest.approx(2.0)


def test_dkc_bound_values():
    assert shannon(1).kappa_delta(1.0) == pytest.approx(math.e)
    assert burg(1, 1.0).kappa_delta(1.0) == pytest.approx(10.0)
    assert burg(1, 2.0).kappa_delta(3.0) == pytest.approx(13.25)
    for delta in (0.1, 1.0, 7.0):
        assert power(3, 0.0).kappa_delta(delta) == pytest.approx(2.0)
        assert quadratic(2).kappa_delta(delta) == 1.0
        assert fermi_dirac(2).kappa_delta(delta) == pytest.approx(math.exp(delta))
        assert power(2, 2.0).kappa_delta(delta) == pytest.approx(3 * (1 + delta) ** 2 + 1)


def test_dkc_bound_per_block_radii():
    k = stack(shannon(2), power(2, 2.0))
    np.testing.assert_allclose(k.dkc_bound([0.5, 1.0, 2.0]), [math.exp(0.5), math.e, 3 * 9 + 1])
    with pytest.raises(ValueError):
        k.dkc_bound(0.0)


# derived: independent oracles ------------------------------------------------------------
@pytest.mark.parametrize("name", list(KERNELS))
def test_mirror_map_is_gradient_of_value(name):
    k = KERNELS[name](3)
    for x in k.sample_interior(np.random.default_rng(1), 5):
        np.testing.assert_allclose(k.mirror_map(x), central_grad(lambda z: float(k.value(z)), x, 1e-6 * min(1, *np.abs(x))), rtol=2e-6, atol=2e-6)


@pytest.mark.parametrize("name", list(KERNELS))
def test_hessian_is_jacobian_of_mirror_map(name):
    k = KERNELS[name](3)
    for x in k.sample_interior(np.random.default_rng(2), 5):
        J = central_jacobian(lambda z: k.mirror_map(z), x, 1e-7 * min(1, *np.abs(x)))
        np.testing.assert_allclose(k.hessian(x), J, rtol=1e-5, atol=1e-5)


@pytest.mark.parametrize("name", ["shannon", "burg", "log_barrier", "fermi_dirac", "quadratic"])
def test_inverse_against_bracketing_root(name):
    k = KERNELS[name](1)
    dphi = lambda t: float(k.mirror_map([t], check=False)[0])  # noqa: E731
    lo, hi = {"fermi_dirac": (1e-300, 1 - 1e-16), "quadratic": (-1e6, 1e6)}.get(name, (1e-300, 1e12))
    for y in (-5.0, -0.3, 0.0, 0.7, 4.0):
        if name == "log_barrier" and y >= 0:
            continue  # the log barrier's dual space is the negative half-line
        t = bracket_inverse(dphi, y, lo, hi)
        assert k.inverse_mirror_map([y])[0] == pytest.approx(t, rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("name", ["shannon", "burg", "log_barrier", "fermi_dirac"])
def test_bregman_against_quadrature(name):
    k = KERNELS[name](1)
    rng = np.random.default_rng(4)
    pts = k.sample_interior(rng, 20)
    for a, b in zip(pts[::2, 0], pts[1::2, 0]):
        ref = integrated_bregman_1d(SCALAR_H2[name], a, b)
        assert float(k.bregman([a], [b])) == pytest.approx(ref, rel=1e-8, abs=1e-14)


@pytest.mark.parametrize("r", [0.5, 1.5, 2.0, 3.0])
def test_power_bregman_against_quadrature(r):
    k = power(3, r)
    rng = np.random.default_rng(5)
    for _ in range(10):
        w, z = rng.normal(size=3), rng.normal(size=3)
        for scale in (1.0, 1e-4):
            zz = w + scale * (z - w)
            diff = zz - w
            f = lambda t: (1 - t) * diff @ power_hessian(w + t * diff, r) @ diff  # noqa: E731
            ref = quad(f, 0, 1, epsrel=1e-12, epsabs=1e-300)[0]
            assert float(k.bregman(zz, w)) == pytest.approx(ref, rel=1e-8)


def test_small_gap_helpers_match_direct_formulas():
    u = np.array([-0.5, -0.05, 1e-8, 0.03, 2.0])
    np.testing.assert_allclose(log1p_gap(u), u - np.log1p(u), rtol=1e-6, atol=1e-20)
    np.testing.assert_allclose(xlogx_gap(u), (1 + u) * np.log1p(u) - u, rtol=1e-6, atol=1e-20)
    # near zero the series keeps the leading term u**2/2 that the direct form loses
    assert float(xlogx_gap(1e-9)) == pytest.approx(0.5e-18, rel=1e-6)


# properties ------------------------------------------------------------------------------
@settings(max_examples=60, deadline=None)
@given(name=st.sampled_from(list(KERNELS)), seed=st.integers(0, 2**31 - 1), d=st.integers(1, 5))
def test_roundtrip_and_nonnegativity(name, seed, d):
    k = KERNELS[name](d)
    rng = np.random.default_rng(seed)
    x, y = k.sample_interior(rng, 8), k.sample_interior(rng, 8)
    back = k.inverse_mirror_map(k.mirror_map(x))
    assert np.all(np.linalg.norm(back - x, axis=-1) <= 1e-10 * (1 + np.linalg.norm(x, axis=-1)))
    assert np.all(k.bregman(x, y) >= 0)
    rho_xy, rho_yx = k.dual_distance(x, y), k.dual_distance(y, x)
    np.testing.assert_allclose(rho_xy, rho_yx)


@settings(max_examples=40, deadline=None)
@given(name=st.sampled_from(list(KERNELS)), seed=st.integers(0, 2**31 - 1))
def test_three_point_identity(name, seed):
    k = KERNELS[name](3)
    rng = np.random.default_rng(seed)
    x, y, z = (k.sample_interior(rng, 16) for _ in range(3))
    lhs = k.bregman(x, z) - k.bregman(x, y) - k.bregman(y, z)
    rhs = np.sum((k.mirror_map(y) - k.mirror_map(z)) * (x - y), axis=-1)
    scale = 1 + np.abs(k.bregman(x, z)) + np.abs(k.bregman(x, y)) + np.abs(k.bregman(y, z))
    assert np.all(np.abs(lhs - rhs) <= 1e-9 * scale)


@settings(max_examples=40, deadline=None)
@given(name=st.sampled_from(list(KERNELS)), seed=st.integers(0, 2**31 - 1))
def test_dual_distance_triangle_inequality(name, seed):
    k = KERNELS[name](2)
    rng = np.random.default_rng(seed)
    x, y, z = (k.sample_interior(rng, 16) for _ in range(3))
    assert np.all(k.dual_distance(x, z) <= k.dual_distance(x, y) + k.dual_distance(y, z) + 1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_eig_bounds_bracket_hessian_spectrum(seed):
    k = stack(shannon(2), power(3, 2.0), fermi_dirac(1))
    x = k.sample_interior(np.random.default_rng(seed), 4)
    lo, hi = k.eig_bounds(x)
    H = k.hessian(x)
    for p in range(len(x)):
        for j, (s, n) in enumerate(k.partition):
            ev = np.linalg.eigvalsh(H[p, s : s + n, s : s + n])
            assert lo[p, j] <= ev.min() * (1 + 1e-12) and ev.max() <= hi[p, j] * (1 + 1e-12)


# errors, structure, serialisation ------------------------------------------------------------
def test_domain_violations():
    with pytest.raises(DomainViolation):
        shannon(2).mirror_map([1.0, -1.0])
    with pytest.raises(DomainViolation):
        fermi_dirac(1).bregman([1.5], [0.5])
    with pytest.raises(DomainViolation):
        burg(1).value([0.0])
    assert not shannon(1).in_domain([0.0])


def test_stack_partition_and_block_norms():
    k = stack(shannon(2), power(3, 2.0))
    assert k.partition == ((0, 1), (1, 1), (2, 3))
    assert k.n_blocks == 3 and k.dim == 5
    v = np.array([3.0, -4.0, 1.0, 2.0, 2.0])
    np.testing.assert_allclose(k.block_norms(v), [3.0, 4.0, 3.0])
    with pytest.raises(ShapeMismatch):
        Kernel([])


def test_stacked_kernel_is_sum_of_parts(rng):
    a, b = shannon(2), power(3, 2.0)
    k = stack(a, b)
    x, y = k.sample_interior(rng, 5), k.sample_interior(rng, 5)
    np.testing.assert_allclose(k.value(x), a.value(x[:, :2]) + b.value(x[:, 2:]))
    np.testing.assert_allclose(k.bregman(x, y), a.bregman(x[:, :2], y[:, :2]) + b.bregman(x[:, 2:], y[:, 2:]))


@pytest.mark.parametrize("name", list(KERNELS))
def test_record_roundtrip(name, rng):
    k = KERNELS[name](3)
    k2 = Kernel.from_record(k.to_record())
    x = k.sample_interior(rng, 3)
    np.testing.assert_array_equal(k.mirror_map(x), k2.mirror_map(x))
    assert k2.partition == k.partition


def test_region_estimate_diameter_and_errors():
    k = shannon(2)
    pts = np.array([[1.0, 1.0], [math.e, 1.0], [1.0, math.e**2]])
    reg = RegionEstimate(k, pts)
    np.testing.assert_allclose(reg.dual_diameter, [1.0, 2.0])
    assert reg.kappa[1] == pytest.approx(math.e**2)
    with pytest.raises(EmptyRegion):
        RegionEstimate(k, np.zeros((0, 2)))


def test_clamp_counts_extreme_duals():
    k = shannon(2)
    assert k.clamp_count(np.array([800.0, 0.0])) == 1
    x = k.inverse_mirror_map(np.array([800.0, 0.0]))
    assert np.all(np.isfinite(x))
    assert fermi_dirac(1).inverse_mirror_map([100.0])[0] < 1.0
