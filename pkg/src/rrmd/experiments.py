"""Reference solutions, relative-error curves, step-size grids and complexity slopes."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .exceptions import BudgetExhausted, DegenerateReference, DivergenceDetected
from .problems import FiniteSumProblem, PhaseRetrieval, estimate_relative_L, fit_expected_smoothness
from .solver import RunResult, SolverConfig, mirror_step, run

log = logging.getLogger("rrmd")

#: The log grid of step scales used for hyperparameter selection.
DEFAULT_GRID = tuple(10.0**e for e in range(-6, 1))
DEGENERATE_LEVEL = 1e-300
#: Mirror-descent iterations before the quasi-Newton fallback takes over.
MD_STAGE_ITER = 2000


# constants ------------------------------------------------------------------------------
#: Growth exponent of the expected-smoothness fit: quartic losses have
#: squared gradients growing like ``f**1.5``.
DEFAULT_TAU = {"phase_retrieval": 1.5, "quadratic_inverse": 1.5}


def calibrate(p: FiniteSumProblem, tau: float | None = None, seed: int = 0) -> FiniteSumProblem:
    """Estimate and attach ``L_rel`` and, without a gradient bound, expected-smoothness constants."""
    p.ensure_L(seed=seed)
    if p.G_bound is None and p.expected_smoothness is None:
        tau = DEFAULT_TAU.get(getattr(p, "kind", ""), 1.0) if tau is None else tau
        A, B = fit_expected_smoothness(p, tau, seed=seed)
        p.expected_smoothness = (A, B, tau)
    return p


# reference solutions -------------------------------------------------------------------
@dataclass
class ReferenceSolution:
    """Certified near-stationary point.

    ``certificate`` is the projected gradient norm on the closure of the
    kernel domain; it equals ``||grad f(x)||`` at interior points.
    """

    x: np.ndarray
    f: float
    grad_norm: float
    certificate: float
    iterations: int
    method: str

    def verify(self, p: FiniteSumProblem, tol: float = 1e-8) -> bool:
        return projected_gradient_norm(p, self.x) <= tol

    def save(self, path) -> None:
        header = f"f={self.f!r} grad_norm={self.grad_norm!r} certificate={self.certificate!r} iterations={self.iterations} method={self.method}"
        np.savetxt(path, self.x[None], delimiter=",", header=header, fmt="%.17g")

    @classmethod
    def load(cls, path) -> ReferenceSolution:
        with open(path) as fh:
            head = fh.readline().lstrip("#").split()
        meta = dict(tok.split("=", 1) for tok in head)
        x = np.loadtxt(path, delimiter=",", ndmin=2)[0]
        return cls(x, float(meta["f"]), float(meta["grad_norm"]), float(meta["certificate"]),
                   int(meta["iterations"]), meta["method"])


def _closure_bounds(p: FiniteSumProblem):
    """Box bounds of the closure of the kernel domain, or ``None`` if unbounded."""
    lows, highs = [], []
    for comp in p.kernel.components:
        interval = getattr(comp, "interval", None)
        if interval is None:
            lows.append(np.full(comp.dim, -np.inf))
            highs.append(np.full(comp.dim, np.inf))
        else:
            lo, hi = interval
            lows.append(np.asarray(lo, dtype=float))
            highs.append(np.asarray(hi, dtype=float))
    lo, hi = np.concatenate(lows), np.concatenate(highs)
    if np.all(np.isinf(lo)) and np.all(np.isinf(hi)):
        return None
    return lo, hi


def projected_gradient_norm(p: FiniteSumProblem, x) -> float:
    """Norm of the gradient with components pushing against an active bound removed."""
    x = np.asarray(x, dtype=float)
    g = p.grad(x)
    bounds = _closure_bounds(p)
    if bounds is not None:
        lo, hi = bounds
        scale = 1e-12 * np.maximum(1.0, np.abs(x))
        at_lo = (x - lo <= scale) & (g > 0)
        at_hi = (hi - x <= scale) & (g < 0)
        g = np.where(at_lo | at_hi, 0.0, g)
    return float(np.linalg.norm(g))


def mirror_descent_backtracking(p: FiniteSumProblem, x0, tol: float, max_iter: int, t0: float = 1.0):
    """Full-batch mirror descent with a doubling/halving step search.

    A step ``t`` is accepted when the majorisation
    ``f(x+) <= f(x) + <g, x+ - x> + D_h(x+, x) / t`` holds; the next trial
    step is then doubled.
    """
    kernel = p.kernel
    x = np.asarray(x0, dtype=float)
    f = p.value(x)
    t = t0
    for it in range(max_iter):
        g = p.grad(x)
        if np.linalg.norm(g) <= tol:
            return x, it
        for _ in range(80):
            try:
                x_new = mirror_step(kernel, x, g, t)
                f_new = p.value(x_new)
            except (ArithmeticError, ValueError):
                t *= 0.5
                continue
            model = f + g @ (x_new - x) + float(kernel.bregman(x_new, x, check=False)) / t
            if f_new <= model + 1e-15 * abs(f):
                break
            t *= 0.5
        else:
            return x, it
        if np.array_equal(x_new, x):
            return x, it
        x, f = x_new, f_new
        t *= 2.0
    return x, max_iter


def _fd_hessian(p: FiniteSumProblem, x: np.ndarray) -> np.ndarray:
    eps = 1e-6 * max(1.0, float(np.max(np.abs(x))))
    cols = []
    for j in range(p.d):
        e = np.zeros(p.d)
        e[j] = eps
        cols.append((p.grad(x + e) - p.grad(x - e)) / (2 * eps))
    H = np.column_stack(cols)
    return 0.5 * (H + H.T)


def _newton_polish(p: FiniteSumProblem, x: np.ndarray, tol: float, steps: int = 30) -> np.ndarray:
    kernel = p.kernel
    for _ in range(steps):
        g = p.grad(x)
        if np.linalg.norm(g) <= tol:
            break
        H = _fd_hessian(p, x)
        try:
            dx = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        f0, s = p.value(x), 1.0
        while s > 1e-8:
            cand = x - s * dx
            if np.all(kernel.in_domain(cand)) and p.value(cand) <= f0 + 1e-14 * abs(f0):
                break
            s *= 0.5
        else:
            break
        if np.linalg.norm(p.grad(cand)) >= np.linalg.norm(g) and s < 1.0:
            break
        x = cand
    return x


def reference_solution(
    p: FiniteSumProblem, tol: float = 1e-8, max_iter: int = 20_000, x0=None, seed: int = 0
) -> ReferenceSolution:
    """Near-stationary point certified by ``projected_gradient_norm <= tol``.

    Full-batch mirror descent with backtracking runs first. If it stalls
    before the certificate holds, an L-BFGS-B pass on the closure of the
    domain and a finite-difference Newton polish follow. Phase retrieval
    starts from the ground truth when it is known, so that the reference is
    the stationary point next to the signal (a stationary point, not a
    certified global minimum).

    Raises
    ------
    BudgetExhausted
        If no stage reaches the certificate.
    """
    if x0 is None:
        x0 = p.x_true if isinstance(p, PhaseRetrieval) and p.x_true is not None else p.initial_point(seed)
    x, iters = mirror_descent_backtracking(p, x0, tol, min(max_iter, MD_STAGE_ITER))
    method = "mirror_descent"
    cert = projected_gradient_norm(p, x)
    if cert > tol:
        bounds = _closure_bounds(p)
        box = None if bounds is None else list(zip(np.where(np.isinf(bounds[0]), None, bounds[0]),
                                                    np.where(np.isinf(bounds[1]), None, bounds[1])))
        if box is not None:
            # L-BFGS-B needs closed bounds; keep a hair inside the open domain.
            box = [(None if lo is None else lo + 1e-12, None if hi is None else hi - 1e-12) for lo, hi in box]
        res = minimize(p.value, x, jac=p.grad, method="L-BFGS-B", bounds=box,
                       options={"maxiter": max_iter, "gtol": 0.1 * tol, "ftol": 1e-16, "maxcor": 30})
        x = np.asarray(res.x, dtype=float)
        iters += int(res.nit)
        method = "mirror_descent+lbfgsb"
        if np.all(p.kernel.in_domain(x)):
            x = _newton_polish(p, x, tol)
            method += "+newton"
        cert = projected_gradient_norm(p, x)
    if cert > tol:
        raise BudgetExhausted(f"certificate {cert:.3e} above tolerance {tol:.1e}", cert, x)
    g = p.grad(x)
    return ReferenceSolution(x, p.value(x), float(np.linalg.norm(g)), cert, iters, method)


# relative error ----------------------------------------------------------------------------
@dataclass
class ErrorCurve:
    epochs: np.ndarray
    passes: np.ndarray
    error: np.ndarray
    absolute: bool

    def rows(self):
        kind = "absolute" if self.absolute else "relative"
        for e, p, v in zip(self.epochs, self.passes, self.error):
            yield int(e), int(p), float(v), kind


def relative_error(f_values, f_ref: float) -> np.ndarray:
    """``(f - f_ref) / f_ref``.

    Raises
    ------
    DegenerateReference
        If ``f_ref <= 1e-300``.
    """
    if f_ref <= DEGENERATE_LEVEL:
        raise DegenerateReference(f"reference value {f_ref:.3e} is too small for a relative error")
    return (np.asarray(f_values, dtype=float) - f_ref) / f_ref


def relative_error_curve(trace, f_ref: float) -> ErrorCurve:
    """Error curve over a trace; falls back to absolute error for a degenerate reference."""
    f = np.array([t.f for t in trace])
    epochs = np.array([t.epoch for t in trace])
    passes = epochs - 1
    try:
        return ErrorCurve(epochs, passes, relative_error(f, f_ref), absolute=False)
    except DegenerateReference:
        log.warning("degenerate reference value %.3e; reporting absolute error", f_ref)
        return ErrorCurve(epochs, passes, f - f_ref, absolute=True)


# grids --------------------------------------------------------------------------------
@dataclass
class GridCell:
    alpha: float
    seed: int
    status: str
    f_final: float
    error: float
    result: RunResult | None = field(default=None, repr=False)


def _run_cell(args):
    p, cfg = args
    try:
        return "ok", run(p, cfg)
    except DivergenceDetected as exc:
        return "diverged", exc


def grid_search(
    p: FiniteSumProblem,
    cfg: SolverConfig,
    grid=None,
    repetitions: int = 1,
    f_ref: float | None = None,
    threads: int = 1,
    keep_results: bool = False,
) -> list[GridCell]:
    """Run every ``(alpha, seed)`` cell of a step grid.

    Cells whose effective step sequence coincides (for example when a cap
    binds for every epoch) are run once and shared. ``seed`` ranges over
    ``cfg.seed, cfg.seed + 1, ...``. Divergent cells are reported with
    ``status="diverged"`` and infinite error.
    """
    grid = [cfg.schedule.alpha] if not grid else list(grid)
    if any(not a > 0 for a in grid):
        raise ValueError("grid values must be positive")
    keys, jobs, index = [], [], {}
    for a in grid:
        for r in range(repetitions):
            c = replace(cfg, schedule=replace(cfg.schedule, alpha=float(a)), seed=cfg.seed + r)
            steps = c.schedule.steps(p.n, c.epochs)
            if c.step_cap is not None:
                steps = np.minimum(steps, c.step_cap)
            key = (steps.tobytes(), c.seed)
            if key not in index:
                index[key] = len(jobs)
                jobs.append((p, c))
            keys.append((a, c.seed, index[key]))
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            outs = list(ex.map(_run_cell, jobs))
    else:
        outs = [_run_cell(j) for j in jobs]
    cells = []
    for a, seed, j in keys:
        status, res = outs[j]
        if status == "ok":
            f_final = res.f_final
            err = (f_final - f_ref) / f_ref if f_ref is not None and f_ref > DEGENERATE_LEVEL else f_final
            cells.append(GridCell(float(a), seed, status, f_final, float(err), res if keep_results else None))
        else:
            cells.append(GridCell(float(a), seed, status, math.inf, math.inf, None))
    return cells


def best_alpha(cells: list[GridCell]) -> tuple[float, float]:
    """Grid value with the smallest median final error, and that median."""
    alphas = sorted({c.alpha for c in cells})
    med = [float(np.median([c.error for c in cells if c.alpha == a])) for a in alphas]
    k = int(np.argmin(med))
    return alphas[k], med[k]


# complexity -----------------------------------------------------------------------------
@dataclass
class ComplexityReport:
    """Log-log fit of the stationarity measure against the epoch budget.

    ``mean_expected`` averages ``E[G(x_tilde) | trajectory]``, the
    step-weighted mean of ``G`` over the stored iterates; ``mean_sampled``
    averages the single drawn iterate per repetition. Both estimate the
    same expectation.
    """

    T: np.ndarray
    mean_expected: np.ndarray
    mean_sampled: np.ndarray
    slope: float
    slope_sampled: float
    repetitions: int


def fit_slope(T, values) -> float:
    """Least-squares slope of ``log(values)`` on ``log(T)``."""
    return float(np.polyfit(np.log(np.asarray(T, dtype=float)), np.log(np.asarray(values, dtype=float)), 1)[0])


def complexity_study(
    p: FiniteSumProblem, T_grid, cfg: SolverConfig, repetitions: int = 10, threads: int = 1
) -> ComplexityReport:
    """Stationarity of the step-weighted sampled iterate for each budget ``T``.

    The schedule of ``cfg`` (normally ``constant_imd`` or ``constant_rr``)
    is evaluated at each ``T``; the stationarity measure is recorded every
    epoch so the conditional expectation over the iterate draw is exact.
    """
    T_grid = [int(T) for T in T_grid]
    if len(T_grid) < 4:
        raise ValueError("complexity study needs at least four budgets")
    jobs = [(p, replace(cfg, epochs=T, seed=cfg.seed + r, diagnostics_cadence=1))
            for T in T_grid for r in range(repetitions)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            outs = list(ex.map(_run_cell, jobs))
    else:
        outs = [_run_cell(j) for j in jobs]
    exp_vals, samp_vals = [], []
    for i, T in enumerate(T_grid):
        chunk = outs[i * repetitions : (i + 1) * repetitions]
        e, s = [], []
        for status, res in chunk:
            if status != "ok":
                raise res
            G = np.array([t.stationarity for t in res.trace[:-1]])
            e.append(float(np.sum(G * res.alphas) / np.sum(res.alphas)))
            s.append(res.stationarity_sampled)
        exp_vals.append(np.mean(e))
        samp_vals.append(np.mean(s))
    return ComplexityReport(
        T=np.array(T_grid),
        mean_expected=np.array(exp_vals),
        mean_sampled=np.array(samp_vals),
        slope=fit_slope(T_grid, exp_vals),
        slope_sampled=fit_slope(T_grid, samp_vals),
        repetitions=repetitions,
    )
