"""Sampling-based falsification of the geometric and per-epoch inequalities.

Every check returns a :class:`LemmaReport` whose ``max_ratio`` is the
largest observed ``LHS / RHS``; a report passes when that ratio stays at or
below ``1 + 1e-8``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .compose import gamma_constant
from .kernels import Kernel, power, shannon, stack
from .problems import BallRegion, BoxRegion, FiniteSumProblem, FunctionalProblem, ProductRegion
from .sampling import stream
from .solver import EpochDiagnostics, RunResult

PASS_TOLERANCE = 1e-8
SEGMENT_POINTS = 64
REFINED_POINTS = 256
#: Pairs whose ratio exceeds this are re-evaluated on the refined segment.
NEAR_VIOLATION = 1.0 - 1e-3


@dataclass
class LemmaReport:
    """Outcome of one falsification run.

    Attributes
    ----------
    lemma : str
        Descriptive identifier such as ``"dual_lipschitz"``.
    trials : int
        Number of evaluated cases.
    max_ratio : float
        Largest ``LHS / RHS`` observed.
    witness : dict
        Inputs of the worst case.
    seed : int or None
        Seed that regenerates the trial set.
    details : dict
        Check-specific extras (per-relation maxima and similar).
    """

    lemma: str
    trials: int
    max_ratio: float
    witness: dict = field(default_factory=dict, repr=False)
    seed: int | None = None
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.max_ratio <= 1.0 + PASS_TOLERANCE)

    @property
    def violations(self) -> int:
        return int(self.details.get("violations", 0 if self.passed else 1))

    def to_row(self) -> dict:
        return {
            "lemma": self.lemma,
            "trials": self.trials,
            "max_ratio": repr(float(self.max_ratio)),
            "violations": self.violations,
            "pass": self.passed,
            "seed": "" if self.seed is None else self.seed,
        }


def write_reports(reports, path, meta: dict | None = None) -> None:
    """Aggregate CSV of reports, preceded by ``# key=value`` metadata lines."""
    with open(path, "w", newline="") as fh:
        for key, val in (meta or {}).items():
            fh.write(f"# {key}={val}\n")
        cols = ["lemma", "trials", "max_ratio", "violations", "pass", "seed"]
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in reports:
            w.writerow(r.to_row())


def _ratio(lhs, rhs):
    lhs, rhs = np.asarray(lhs, dtype=float), np.asarray(rhs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))


def _report(lemma, ratios, witnesses, seed=None, **details) -> LemmaReport:
    ratios = np.asarray(ratios, dtype=float)
    if ratios.size == 0:
        return LemmaReport(lemma, 0, 0.0, {}, seed, {"violations": 0, **details})
    k = int(np.argmax(ratios))
    wit = witnesses(k) if callable(witnesses) else {}
    viol = int(np.count_nonzero(ratios > 1.0 + PASS_TOLERANCE))
    return LemmaReport(lemma, int(ratios.size), float(ratios[k]), wit, seed, {"violations": viol, **details})


# geometry helpers -------------------------------------------------------------------
def dual_segment(kernel: Kernel, x: np.ndarray, y: np.ndarray, points: int = SEGMENT_POINTS) -> np.ndarray:
    """Preimages of ``points`` equispaced dual samples between ``x`` and ``y``.

    ``x`` and ``y`` have shape ``(P, d)``; the result has shape ``(P, points, d)``.
    """
    yx, yy = kernel.mirror_map(x), kernel.mirror_map(y)
    t = np.linspace(0.0, 1.0, points)[None, :, None]
    return kernel.inverse_mirror_map((1.0 - t) * yx[:, None, :] + t * yy[:, None, :])


def segment_bounds(kernel: Kernel, x, y, points: int = SEGMENT_POINTS):
    """Per-pair, per-block ``(mu_j, L_j)`` over the dual segment, shapes ``(P, m)``."""
    lo, hi = kernel.eig_bounds(dual_segment(kernel, x, y, points))
    return lo.min(axis=1), hi.max(axis=1)


def pairs_in_dual_ball(kernel: Kernel, rng, trials: int, delta: float):
    """Anchor points and partners whose per-block dual distance is at most ``delta``.

    The block radii are drawn as ``delta * U**(1/dim_j)`` so that partners
    fill the dual ball and concentrate near its boundary in higher dimension.
    """
    x = kernel.sample_interior(rng, trials)
    step = np.empty_like(x)
    for s, n in kernel.partition:
        u = rng.normal(size=(trials, n))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        step[:, s : s + n] = u * (delta * rng.random((trials, 1)) ** (1.0 / n))
    y = kernel.inverse_mirror_map(kernel.mirror_map(x) + step)
    ok = kernel.in_domain(y) & kernel.in_domain(x)
    return x[ok], y[ok]


# kernel checks ----------------------------------------------------------------------------
def check_dkc_empirical(kernel: Kernel, delta: float, trials: int = 10_000, seed: int = 0) -> LemmaReport:
    """Realised condition number on dual segments of length at most ``delta`` versus the analytic bound.

    For each pair the region is the preimage of the dual segment; its
    per-block condition number ``max L_j / min mu_j`` is compared with
    ``kernel.dkc_bound(delta)``.
    """
    rng = stream(seed, "diagnostics", 10)
    x, y = pairs_in_dual_ball(kernel, rng, trials, delta)
    bound = kernel.dkc_bound(delta)
    mu, L = segment_bounds(kernel, x, y)
    ratio = (L / mu / bound).max(axis=1)
    return _report(
        "dkc",
        ratio,
        lambda k: {"x": x[k], "y": y[k], "delta": delta, "kappa": float((L[k] / mu[k]).max())},
        seed,
        delta=delta,
        bound=float(bound.max()),
        realised=float((L / mu).max()) if len(x) else 0.0,
    )


def check_sandwich(kernel: Kernel, trials: int = 10_000, seed: int = 0, delta: float = 2.0) -> LemmaReport:
    """``rho**2/(2 L_j) <= D(y, x) <= rho**2/(2 mu_j)`` and ``||x - y|| <= rho / mu_j`` per block.

    Regions are dual-segment preimages, whose dual images are convex.
    """
    rng = stream(seed, "diagnostics", 11)
    x, y = pairs_in_dual_ball(kernel, rng, trials, delta)

    def ratios(points):
        mu, L = segment_bounds(kernel, x, y, points)
        rho = kernel.block_dual_distance(x, y)
        D = _block_bregman(kernel, y, x)
        dist = kernel.block_norms(x - y)
        r_lower = _ratio(rho**2 / (2 * L), D)
        r_upper = _ratio(D, rho**2 / (2 * mu))
        r_dist = _ratio(dist, rho / mu)
        return np.stack([r_lower, r_upper, r_dist]).max(axis=0).max(axis=1), (r_lower, r_upper, r_dist)

    worst, parts = _refine(*ratios(SEGMENT_POINTS), lambda: ratios(REFINED_POINTS))
    return _report(
        "sandwich",
        worst,
        lambda k: {"x": x[k], "y": y[k]},
        seed,
        lower=float(parts[0].max()) if len(x) else 0.0,
        upper=float(parts[1].max()) if len(x) else 0.0,
        distance=float(parts[2].max()) if len(x) else 0.0,
    )


def _refine(worst, parts, rerun):
    if np.any(worst > NEAR_VIOLATION):
        fine_worst, fine_parts = rerun()
        near = worst > NEAR_VIOLATION
        worst = np.where(near, np.minimum(worst, fine_worst), worst)
        parts = tuple(np.where(near[:, None], np.minimum(a, b), a) for a, b in zip(parts, fine_parts))
    return worst, parts


def _block_bregman(kernel: Kernel, x, y) -> np.ndarray:
    """Bregman divergence per block, shape ``(P, m)``."""
    out = np.empty((x.shape[0], kernel.n_blocks))
    col, off = 0, 0
    for comp in kernel.components:
        xs, ys = x[:, off : off + comp.dim], y[:, off : off + comp.dim]
        if comp.separable:
            for j in range(comp.dim):
                out[:, col + j] = comp.bregman(xs[:, j : j + 1], ys[:, j : j + 1])
            col += comp.dim
        else:
            out[:, col] = comp.bregman(xs, ys)
            col += 1
        off += comp.dim
    return out


# problem checks --------------------------------------------------------------------------
def _problem_pairs(p: FiniteSumProblem, rng, trials: int, region=None):
    """Half independent pairs from the region, half close pairs in the dual."""
    region = p.region if region is None else region
    x = region.sample(rng, trials)
    far = region.sample(rng, trials)
    kernel = p.kernel
    scale = 10.0 ** rng.uniform(-3, 0, size=(trials, 1))
    near = kernel.inverse_mirror_map(
        kernel.mirror_map(x) + scale * np.linalg.norm(kernel.mirror_map(x), axis=1, keepdims=True) * rng.normal(size=x.shape) / np.sqrt(p.d)
    )
    use_far = rng.random(trials) < 0.5
    y = np.where(use_far[:, None], far, near)
    ok = kernel.in_domain(x) & kernel.in_domain(y)
    return x[ok], y[ok]


def check_dual_lipschitz(
    p: FiniteSumProblem, trials: int = 10_000, radius: float | None = None, seed: int = 0, L: float | None = None
) -> LemmaReport:
    """``||grad f(x) - grad f(y)|| <= L sqrt(kappa) rho_h(x, y)`` with ``kappa`` over the dual segment.

    Parameters
    ----------
    p : FiniteSumProblem
        Problem with a single-block kernel.
    trials : int
        Number of pairs.
    radius : float, optional
        Radius of the sampling ball; defaults to ``p.region``.
    seed : int
        Seed of the pair stream.
    L : float, optional
        Relative-smoothness constant; defaults to ``p.ensure_L()``.
    """
    kernel = p.kernel
    if kernel.n_blocks != 1:
        raise ValueError("check_dual_lipschitz needs a single-block kernel; use check_multiblock_lipschitz")
    L = p.ensure_L() if L is None else float(L)
    region = None if radius is None else BallRegion(radius, p.d)
    rng = stream(seed, "diagnostics", 12)
    x, y = _problem_pairs(p, rng, trials, region)
    gx = np.array([p.grad(v) for v in x])
    gy = np.array([p.grad(v) for v in y])
    lhs = np.linalg.norm(gx - gy, axis=1)
    rho = kernel.dual_distance(x, y)

    def ratios(points):
        mu, Lh = segment_bounds(kernel, x, y, points)
        kappa = (Lh / mu)[:, 0]
        return _ratio(lhs, L * np.sqrt(kappa) * rho), ()

    worst, _ = _refine(*ratios(SEGMENT_POINTS), lambda: ratios(REFINED_POINTS))
    return _report("dual_lipschitz", worst, lambda k: {"x": x[k], "y": y[k], "L": L}, seed, L=L)


def check_multiblock_lipschitz(
    p: FiniteSumProblem, trials: int = 10_000, seed: int = 0, L: float | None = None, block_bounds=None
) -> LemmaReport:
    """Multi-block dual Lipschitz inequality with weights ``1/mu_j`` and constant ``L Gamma kappa``.

    Parameters
    ----------
    p : FiniteSumProblem
        Problem whose kernel has at least two blocks and whose region is a
        product of per-block sets with convex dual images.
    block_bounds : tuple of arrays, optional
        Per-block ``(mu_j, L_j)`` over the region. Defaults to the analytic
        bounds of :func:`two_block_synthetic`'s region when available, else
        to extreme values over a dense sample of the region.
    """
    kernel = p.kernel
    m = kernel.n_blocks
    if m < 2:
        raise ValueError("check_multiblock_lipschitz needs at least two blocks")
    L = p.ensure_L() if L is None else float(L)
    rng = stream(seed, "diagnostics", 13)
    x = p.region.sample(rng, trials)
    y = p.region.sample(rng, trials)
    if block_bounds is None:
        block_bounds = getattr(p, "block_bounds", None)
    if block_bounds is None:
        lo, hi = kernel.eig_bounds(p.region.sample(rng, 20_000))
        block_bounds = (lo.min(axis=0), hi.max(axis=0))
    mu, Lh = (np.asarray(b, dtype=float) for b in block_bounds)
    kappa = float(np.max(Lh / mu))
    gamma = gamma_constant(mu, m)
    gx = np.array([p.grad(v) for v in x])
    gy = np.array([p.grad(v) for v in y])
    lhs = np.sum(kernel.block_norms(gx - gy) ** 2 / mu, axis=1)
    rho = kernel.block_dual_distance(x, y)
    rhs = (L * gamma * kappa) ** 2 * np.sum(rho**2 / mu, axis=1)
    return _report(
        "multiblock_lipschitz",
        _ratio(lhs, rhs),
        lambda k: {"x": x[k], "y": y[k], "L": L},
        seed,
        L=L,
        gamma=gamma,
        kappa=kappa,
    )


def two_block_synthetic(n: int = 8, seed: int = 0) -> FunctionalProblem:
    """Problem on ``R_{++} x R^2`` with kernel ``Shannon(1) x Power(2, r=2)``.

    ``f_i(x) = p_i (t log t - t) + q_i ||z||**4 / 4 + s_i t <u_i, z>`` with
    ``x = (t, z)``. The region is the product of ``t`` in ``[exp(-1), e]``
    (a Shannon dual interval) and the ball ``||z|| <= 1.5`` (a Power dual
    ball centred at the origin), so each block and its dual image are convex.
    """
    rng = stream(seed, "data", 7)
    pw = rng.uniform(0.5, 1.5, n)
    qw = rng.uniform(0.5, 1.5, n)
    sw = 0.3 * rng.normal(size=n)
    U = rng.normal(size=(n, 2))
    U /= np.linalg.norm(U, axis=1, keepdims=True)

    def values(x):
        t, z = x[0], x[1:]
        return pw * (t * np.log(t) - t) + qw * (z @ z) ** 2 / 4 + sw * t * (U @ z)

    def grads_at(idx, x):
        t, z = x[0], x[1:]
        gt = pw[idx] * np.log(t) + sw[idx] * (U[idx] @ z)
        gz = qw[idx, None] * (z @ z) * z + (sw[idx] * t)[:, None] * U[idx]
        return np.column_stack([gt, gz])

    t_lo, t_hi, R = np.exp(-1.0), np.e, 1.5
    region = ProductRegion([BoxRegion([t_lo], [t_hi]), BallRegion(R, 2)])
    kernel = stack(shannon(1), power(2, 2.0))
    prob = FunctionalProblem(n, 3, kernel, values, grads_at, region=region)
    # Shannon curvature is 1/t; Power curvature spans [1, 3 R**2 + 1] on the ball.
    prob.block_bounds = (np.array([1.0 / t_hi, 1.0]), np.array([1.0 / t_lo, 3.0 * R**2 + 1.0]))
    return prob


# run checks ------------------------------------------------------------------------------
def _diags(source) -> list[EpochDiagnostics]:
    if isinstance(source, RunResult):
        if not source.diagnostics:
            raise ValueError("run was executed without track_errors=True")
        return source.diagnostics
    return list(source)


def check_descent(source) -> LemmaReport:
    """``f(x^{k+1}) + D_h(x^k, x^{k+1}) / (2 n alpha) <= f(x^k) + E_k`` on every epoch."""
    d = _diags(source)
    lhs = np.array([e.f_next + e.bregman_next / (2.0 * e.horizon) for e in d])
    rhs = np.array([e.f + e.error_term for e in d])
    return _report("epoch_descent", _ratio(lhs, rhs), lambda k: {"epoch": d[k].epoch})


def error_bound(e: EpochDiagnostics, L: float) -> float:
    """Deterministic bound ``(kappa L G)**2 / (2 mu) (n alpha)**3``, inflated by ``Gamma**2 kappa`` for ``m > 1``."""
    base = (e.kappa_delta * L * e.G_epoch) ** 2 / (2.0 * e.mu_min) * e.horizon**3
    if e.n_blocks > 1:
        base *= e.gamma**2 * e.kappa_delta
    return base


def check_error_bound(source, L: float, runs=None) -> LemmaReport:
    """Recorded ``E_k`` against the deterministic per-epoch bound.

    Parameters
    ----------
    source : RunResult or list of EpochDiagnostics
        Run with tracked error terms.
    L : float
        Relative-smoothness constant.
    runs : list of RunResult, optional
        Repetitions of a reshuffled run with different seeds. When given,
        the across-seed mean of ``E_k`` is also compared with the mean of
        the in-expectation bound ``4 L**2 (kappa n alpha)**3 G(x^k) + 4 (kappa L G)**2 / mu n**2 alpha**3``
        (with the ``Gamma**2 kappa`` inflation for ``m > 1``); the result
        is stored under ``details["expectation_ratio"]``.
    """
    d = _diags(source)
    lhs = np.array([e.error_term for e in d])
    rhs = np.array([error_bound(e, L) for e in d])
    rep = _report("error_bound", _ratio(lhs, rhs), lambda k: {"epoch": d[k].epoch, "L": L})
    if runs:
        per = [_diags(r) for r in runs]
        T = min(len(x) for x in per)
        mean_E = np.array([np.mean([x[k].error_term for x in per]) for k in range(T)])
        mean_B = np.array([np.mean([_expectation_bound(x[k], L) for x in per]) for k in range(T)])
        rep.details["expectation_ratio"] = float(np.max(_ratio(mean_E, mean_B)))
    return rep


def _expectation_bound(e: EpochDiagnostics, L: float) -> float:
    k, na = e.kappa_delta, e.horizon
    val = 4 * L**2 * (k * na) ** 3 * e.stationarity + 4 * (k * L * e.G_epoch) ** 2 / e.mu_min * e.n**2 * e.alpha**3
    if e.n_blocks > 1:
        val *= e.gamma**2 * e.kappa_delta
    return val


def check_stationarity_bridge(source) -> LemmaReport:
    """``||grad f||**2 / mu <= 2 kappa G`` and ``G <= 2 kappa D / (n alpha)**2 + 2 E / (n alpha)``.

    ``max_ratio`` covers the first relation; the second is reported under
    ``details["upper_ratio"]``.
    """
    d = [e for e in _diags(source) if np.isfinite(e.stationarity)]
    lower = _ratio([e.grad_norm_sq / e.mu_min for e in d], [2.0 * e.kappa_delta * e.stationarity for e in d])
    upper = _ratio(
        [e.stationarity for e in d],
        [2.0 * e.kappa_delta * e.bregman_next / e.horizon**2 + 2.0 * e.error_term / e.horizon for e in d],
    )
    return _report(
        "stationarity_bridge",
        lower,
        lambda k: {"epoch": d[k].epoch},
        upper_ratio=float(upper.max()) if upper.size else 0.0,
        upper_violations=int(np.count_nonzero(upper > 1.0 + PASS_TOLERANCE)),
    )


def check_drift(source, delta: float) -> LemmaReport:
    """Largest intra-epoch dual drift ``rho_h(y^{k,i}, x^k)`` against ``delta / 2``."""
    if isinstance(source, RunResult):
        drifts = np.array([t.max_intra_drift for t in source.trace[:-1]])
    else:
        drifts = np.array([e.max_intra_drift for e in _diags(source)])
    return _report("drift", drifts / (0.5 * delta), lambda k: {"epoch": k + 1}, delta=delta)
