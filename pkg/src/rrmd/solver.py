"""Shuffled mirror descent: schedules, epochs, the stationarity measure and runs."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .compose import gamma_constant
from .exceptions import DivergenceDetected, DomainViolation, MissingConstants
from .kernels import Kernel, RegionEstimate
from .problems import FiniteSumProblem
from .sampling import SamplingScheme, canonical_scheme, stream

log = logging.getLogger("rrmd")

SCHEDULE_KINDS = ("constant_imd", "constant_rr", "polynomial", "capped_harmonic", "fixed")

#: Number of dual-segment samples added to each epoch region.
SEGMENT_SAMPLES = 16


@dataclass(frozen=True)
class StepSchedule:
    """Per-epoch step sizes.

    Every kind is scaled by ``alpha``:

    ``constant_imd``     ``alpha / (n T**(1/3))``
    ``constant_rr``      ``alpha / (n**(2/3) T**(1/3))``
    ``polynomial``       ``alpha / k**gamma`` with ``gamma`` in ``(1/2, 1]``
    ``capped_harmonic``  ``min(cap, alpha / k)``
    ``fixed``            ``alpha``
    """

    kind: str = "fixed"
    alpha: float = 1.0
    gamma: float = 1.0
    cap: float = 1e-5

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule {self.kind!r}")
        if not self.alpha > 0:
            raise ValueError("schedule alpha must be positive")
        if self.kind == "polynomial" and not 0.5 < self.gamma <= 1.0:
            raise ValueError("polynomial schedule needs gamma in (1/2, 1]")
        if self.kind == "capped_harmonic" and not self.cap > 0:
            raise ValueError("capped_harmonic needs a positive cap")

    def step(self, k: int, n: int, T: int) -> float:
        """Step size of epoch ``k`` (1-based) for ``n`` components and ``T`` epochs."""
        a = self.alpha
        if self.kind == "constant_imd":
            return a / (n * T ** (1.0 / 3.0))
        if self.kind == "constant_rr":
            return a / (n ** (2.0 / 3.0) * T ** (1.0 / 3.0))
        if self.kind == "polynomial":
            return a / k**self.gamma
        if self.kind == "capped_harmonic":
            return min(self.cap, a / k)
        return a

    def steps(self, n: int, T: int) -> np.ndarray:
        return np.array([self.step(k, n, T) for k in range(1, T + 1)])


@dataclass(frozen=True)
class SolverConfig:
    """Inputs of a run.

    Parameters
    ----------
    scheme : str
        Sampling scheme (see :class:`~rrmd.sampling.SamplingScheme`).
    schedule : StepSchedule
        Step sizes.
    momentum : float, default=0.0
        Heavy-ball weight ``beta`` in ``[0, 1)``; zero disables momentum.
    batch_size : int or None
        Components per step; ``None`` means ``max(1, n // 192)``.
    epochs : int
        Number of epochs ``T``.
    seed : int
        Master seed.
    diagnostics_cadence : int, default=1
        Evaluate the stationarity measure every this many epochs; 0 disables.
    step_cap : float or None
        Optional hard upper bound on the per-epoch step.
    track_errors : bool, default=False
        Record the per-epoch error term and descent quantities.
    delta : float, default=1.0
        Dual radius used for the condition-number bound in diagnostics.
    divergence_factor : float, default=1e6
        Abort when ``f(x^k)`` exceeds this multiple of ``f(x^1)``.
    """

    scheme: str = "reshuffle"
    schedule: StepSchedule = field(default_factory=StepSchedule)
    momentum: float = 0.0
    batch_size: int | None = None
    epochs: int = 100
    seed: int = 0
    diagnostics_cadence: int = 1
    step_cap: float | None = None
    track_errors: bool = False
    delta: float = 1.0
    divergence_factor: float = 1e6

    def __post_init__(self):
        object.__setattr__(self, "scheme", canonical_scheme(self.scheme))
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.diagnostics_cadence < 0:
            raise ValueError("diagnostics_cadence must be nonnegative")
        if self.step_cap is not None and not self.step_cap > 0:
            raise ValueError("step_cap must be positive")
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    def batch_for(self, n: int) -> int:
        b = max(1, n // 192) if self.batch_size is None else self.batch_size
        if b > n:
            raise ValueError(f"batch_size {b} exceeds n={n}")
        return b


@dataclass
class TraceRecord:
    """State at the start of epoch ``k``.

    ``drift`` is ``rho_h(x^k, x^{k+1})`` and ``max_intra_drift`` the largest
    ``rho_h(y^{k,i}, x^k)`` within the epoch. ``samples`` counts component
    gradients consumed once epoch ``k`` completes. The terminal row
    (``k = T + 1``) carries ``nan`` step and drift columns.
    """

    epoch: int
    f: float
    grad_norm: float
    stationarity: float
    alpha: float
    drift: float
    max_intra_drift: float
    samples: int
    wall_ms: float


@dataclass
class EpochDiagnostics:
    """Quantities entering the per-epoch inequalities.

    All step-dependent entries use the per-sample step ``alpha`` (the
    schedule step divided by the batch size), whose epoch horizon is
    ``n * alpha``.
    """

    epoch: int
    alpha: float
    n: int
    f: float
    f_next: float
    bregman_next: float
    error_term: float
    kappa_delta: float
    kappa_region: float
    mu: np.ndarray
    L: np.ndarray
    diameter: np.ndarray
    gamma: float
    G_epoch: float
    grad_norm_sq: float
    stationarity: float
    max_intra_drift: float

    @property
    def horizon(self) -> float:
        return self.n * self.alpha

    @property
    def mu_min(self) -> float:
        return float(np.min(self.mu))

    @property
    def n_blocks(self) -> int:
        return int(np.size(self.mu))


@dataclass
class EpochStats:
    max_intra_drift: float
    clamp_events: int
    visited: np.ndarray | None = None
    error_sq: np.ndarray | None = None
    G_epoch: float = 0.0


@dataclass
class StepCaps:
    """Theoretical step bounds for a problem-kernel pair."""

    alpha_bar: float
    per_sample: float
    rr_cap: float
    kappa_delta: float
    L: float
    G: float
    gamma: float
    mode: str


@dataclass
class RunResult:
    """Output of :func:`run`."""

    trace: list[TraceRecord]
    diagnostics: list[EpochDiagnostics]
    x_initial: np.ndarray
    x_final: np.ndarray
    x_sampled: np.ndarray
    sampled_epoch: int
    stationarity_sampled: float
    stationarity_min: float
    alphas: np.ndarray
    iterates: np.ndarray
    clamp_events: int
    cap_compliance: dict = field(default_factory=dict)
    batch_size: int = 1

    @property
    def f_final(self) -> float:
        return self.trace[-1].f

    @property
    def grad_norm_final(self) -> float:
        return self.trace[-1].grad_norm

    def summary(self) -> dict:
        return {
            "f_final": self.f_final,
            "grad_norm_final": self.grad_norm_final,
            "stationarity_min": self.stationarity_min,
            "stationarity_sampled": self.stationarity_sampled,
            "sampled_epoch": self.sampled_epoch,
            "clamp_events": self.clamp_events,
            **{f"cap_{k}": v for k, v in self.cap_compliance.items()},
        }


# elementary steps ---------------------------------------------------------------
def mirror_step(kernel: Kernel, x, v, alpha: float) -> np.ndarray:
    """``grad h*(grad h(x) - alpha v)``: the Bregman proximal step on a linear model."""
    x = np.asarray(x, dtype=float)
    out = kernel.inverse_mirror_map(kernel.mirror_map(x) - alpha * np.asarray(v, dtype=float))
    if not np.all(kernel.in_domain(out)):
        raise DomainViolation("mirror step left the open domain in floating point")
    return out


def stationarity_measure(p: FiniteSumProblem, x, horizon: float, return_point: bool = False):
    """``D_h(x, x_hat) / horizon**2`` with ``x_hat`` the full-gradient mirror step.

    Parameters
    ----------
    p : FiniteSumProblem
        Problem.
    x : ndarray
        Interior point.
    horizon : float
        Step of the full-gradient step, ``n * alpha``.
    return_point : bool
        Also return ``x_hat``.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    x = np.asarray(x, dtype=float)
    x_hat = mirror_step(p.kernel, x, p.grad(x), horizon)
    val = float(p.kernel.bregman(x, x_hat)) / horizon**2
    return (val, x_hat) if return_point else val


def _epoch(p, x, order, alpha, batch, beta, v, track):
    kernel = p.kernel
    y0 = kernel.mirror_map(x, check=False)
    y = y0.copy()
    z = x
    drift = 0.0
    clamps = 0
    visited = [x] if track else None
    grads_y = [] if track else None
    for start in range(0, len(order), batch):
        idx = order[start : start + batch]
        G = p.component_grads_at(idx, z)
        if track:
            grads_y.append(G)
        g = G[0] if batch == 1 else G.mean(axis=0)
        if beta is None:
            y = y - alpha * g
        else:
            v = beta * v + alpha * g
            y = y - v
        clamps += kernel.clamp_count(y)
        z = kernel.inverse_mirror_map(y)
        drift = max(drift, float(np.linalg.norm(y - y0)))
        if track:
            visited.append(z)
    if not np.all(np.isfinite(z)) or not kernel.in_domain(z):
        raise DivergenceDetected("epoch produced a non-finite or non-interior iterate", [], None)
    stats = EpochStats(max_intra_drift=drift, clamp_events=clamps)
    if track:
        Gy = np.concatenate(grads_y, axis=0)
        Gx = p.component_grads_at(order, x)
        stats.visited = np.array(visited)
        stats.error_sq = kernel.block_norms(Gx - Gy) ** 2
        stats.G_epoch = float(max(np.linalg.norm(Gx, axis=1).max(), np.linalg.norm(Gy, axis=1).max()))
    return z, v, stats


def run_epoch(p: FiniteSumProblem, x, order, alpha: float, batch_size: int = 1, track: bool = False):
    """One pass of shuffled mirror descent over ``order``.

    Consecutive chunks of ``batch_size`` indices share a step with their
    averaged gradient.

    Returns
    -------
    x_next : ndarray
    stats : EpochStats
    """
    x_next, _, stats = _epoch(p, np.asarray(x, dtype=float), np.asarray(order), alpha, batch_size, None, None, track)
    return x_next, stats


def run_epoch_momentum(
    p: FiniteSumProblem, x, order, alpha: float, beta: float, v_state, batch_size: int = 1, track: bool = False
):
    """Heavy-ball variant: ``v <- beta v + alpha g`` and ``grad h(x+) = grad h(x) - v``.

    The momentum buffer ``v`` already carries the step, so the dual update
    subtracts it without another factor of ``alpha``.

    Returns
    -------
    x_next : ndarray
    v_next : ndarray
    stats : EpochStats
    """
    x = np.asarray(x, dtype=float)
    v = np.zeros_like(x) if v_state is None else np.asarray(v_state, dtype=float)
    return _epoch(p, x, np.asarray(order), alpha, batch_size, float(beta), v, track)


# theoretical caps -----------------------------------------------------------------
def theoretical_step_cap(
    p: FiniteSumProblem, delta: float = 1.0, x0=None, C: float = 2.0, gamma: float | None = None
) -> StepCaps:
    """Step bounds ``alpha_bar = min(1/(2 Gamma L kappa_delta), delta/(2G))`` and ``1/(7 kappa_delta**2 n L)``.

    ``Gamma`` is one for single-block kernels and defaults to ``sqrt(8 m)``
    for ``m > 1`` blocks. When ``p.G_bound`` is ``None`` the gradient bound
    is replaced by ``nu = sqrt(A (C (f(x0) - f_low))**tau + B**2)`` from the
    fitted expected-smoothness constants.
    """
    if p.L_rel is None:
        raise MissingConstants("relative smoothness constant L is not available")
    L = float(p.L_rel)
    kappa = p.kernel.kappa_delta(delta)
    if p.G_bound is not None:
        G, mode = float(p.G_bound), "bounded"
    elif p.expected_smoothness is not None:
        A, B, tau = p.expected_smoothness
        x0 = p.initial_point() if x0 is None else np.asarray(x0, dtype=float)
        gap = max(p.value(x0) - p.lower_bound, 0.0)
        G, mode = math.sqrt(A * (C * gap) ** tau + B * B), "expected_smoothness"
    else:
        raise MissingConstants("neither a gradient bound nor expected-smoothness constants are set")
    m = p.kernel.n_blocks
    if gamma is None:
        gamma = 1.0 if m == 1 else math.sqrt(8.0 * m)
    first = 1.0 / (2.0 * gamma * L * kappa) if L > 0 else math.inf
    second = delta / (2.0 * G) if G > 0 else math.inf
    alpha_bar = min(first, second)
    rr = 1.0 / (7.0 * kappa**2 * p.n * L) if L > 0 else math.inf
    return StepCaps(alpha_bar, alpha_bar / p.n, rr, kappa, L, G, gamma, mode)


# runs -----------------------------------------------------------------------------
def _segment(kernel: Kernel, a: np.ndarray, b: np.ndarray, k: int = SEGMENT_SAMPLES) -> np.ndarray:
    ya, yb = kernel.mirror_map(a, check=False), kernel.mirror_map(b, check=False)
    t = np.linspace(0.0, 1.0, k)[:, None]
    return kernel.inverse_mirror_map((1 - t) * ya + t * yb)


def _epoch_diagnostics(p, cfg, k, x, x_next, x_hat, alpha, f, f_next, G_val, stats) -> EpochDiagnostics:
    kernel = p.kernel
    pts = [stats.visited, x_next[None], _segment(kernel, x, x_next)]
    if x_hat is not None:
        pts += [x_hat[None], _segment(kernel, x, x_hat)]
    region = RegionEstimate(kernel, np.concatenate(pts, axis=0))
    diam = region.dual_diameter
    kappa = float(np.max(kernel.dkc_bound(np.maximum(cfg.delta, diam))))
    mu = region.mu
    m = kernel.n_blocks
    weighted = float(np.sum(stats.error_sq / mu))
    gamma = 1.0 if m == 1 else gamma_constant(mu, m)
    g = p.grad(x)
    return EpochDiagnostics(
        epoch=k,
        alpha=alpha,
        n=p.n,
        f=f,
        f_next=f_next,
        bregman_next=float(kernel.bregman(x, x_next, check=False)),
        error_term=0.5 * kappa * alpha * weighted,
        kappa_delta=kappa,
        kappa_region=float(np.max(region.kappa)),
        mu=np.array(mu),
        L=np.array(region.L),
        diameter=np.array(diam),
        gamma=gamma,
        G_epoch=stats.G_epoch,
        grad_norm_sq=float(g @ g),
        stationarity=G_val,
        max_intra_drift=stats.max_intra_drift,
    )


def run(p: FiniteSumProblem, cfg: SolverConfig, x0=None, steps=None) -> RunResult:
    """Run ``cfg.epochs`` epochs of shuffled mirror descent.

    Parameters
    ----------
    p : FiniteSumProblem
        Problem.
    cfg : SolverConfig
        Configuration.
    x0 : ndarray, optional
        Initial point; defaults to ``p.initial_point(cfg.seed)``.
    steps : ndarray, optional
        Explicit per-epoch schedule steps overriding ``cfg.schedule``.

    Returns
    -------
    RunResult
        Per-epoch trace (plus a terminal row for ``x^{T+1}``), optional
        per-epoch diagnostics, the final iterate and an iterate drawn with
        probability proportional to its step.

    Raises
    ------
    DivergenceDetected
        When ``f`` exceeds ``cfg.divergence_factor * f(x^1)`` or turns non-finite.
    """
    n, T = p.n, cfg.epochs
    B = cfg.batch_for(n)
    kernel = p.kernel
    x = p.initial_point(cfg.seed) if x0 is None else np.array(x0, dtype=float)
    kernel.check_domain(x)
    x_initial = x.copy()
    if steps is None:
        steps = cfg.schedule.steps(n, T)
    steps = np.asarray(steps, dtype=float)
    if steps.shape != (T,):
        raise ValueError(f"expected {T} steps, got shape {steps.shape}")
    if cfg.step_cap is not None:
        steps = np.minimum(steps, cfg.step_cap)
    alphas = steps / B
    scheme = SamplingScheme(cfg.scheme, cfg.seed)
    beta = cfg.momentum if cfg.momentum > 0 else None
    v = np.zeros_like(x) if beta is not None else None

    f = p.value(x)
    f_limit = cfg.divergence_factor * max(f, np.finfo(float).tiny)
    trace: list[TraceRecord] = []
    diags: list[EpochDiagnostics] = []
    iterates = np.empty((T + 1, p.d))
    iterates[0] = x
    G_vals = np.full(T, np.nan)
    clamps = 0
    t0 = time.perf_counter()
    for k in range(1, T + 1):
        alpha = alphas[k - 1]
        order = scheme.next_epoch_order(n, k)
        want_G = cfg.diagnostics_cadence > 0 and (k - 1) % cfg.diagnostics_cadence == 0
        x_hat = None
        g = p.grad(x)
        if want_G or cfg.track_errors:
            G_vals[k - 1], x_hat = stationarity_measure(p, x, n * alpha, return_point=True)
        try:
            x_next, v, stats = _epoch(p, x, order, alpha, B, beta, v, cfg.track_errors)
        except DivergenceDetected as exc:
            raise DivergenceDetected(str(exc), trace, k) from None
        clamps += stats.clamp_events
        f_next = p.value(x_next)
        drift = float(kernel.dual_distance(x, x_next, check=False))
        trace.append(
            TraceRecord(
                epoch=k,
                f=f,
                grad_norm=float(np.linalg.norm(g)),
                stationarity=float(G_vals[k - 1]),
                alpha=float(alpha),
                drift=drift,
                max_intra_drift=stats.max_intra_drift,
                samples=k * n,
                wall_ms=1e3 * (time.perf_counter() - t0),
            )
        )
        if cfg.track_errors:
            diags.append(_epoch_diagnostics(p, cfg, k, x, x_next, x_hat, alpha, f, f_next, float(G_vals[k - 1]), stats))
        if not math.isfinite(f_next) or f_next > f_limit:
            raise DivergenceDetected(f"objective reached {f_next:.3e} at epoch {k}", trace, k)
        x, f = x_next, f_next
        iterates[k] = x
    g = p.grad(x)
    trace.append(
        TraceRecord(T + 1, f, float(np.linalg.norm(g)), math.nan, math.nan, math.nan, math.nan,
                    T * n, 1e3 * (time.perf_counter() - t0))
    )
    if T > 0:
        k_sel = int(stream(cfg.seed, "select").choice(T, p=alphas / alphas.sum()))
        x_sel = iterates[k_sel]
        G_sel = G_vals[k_sel]
        if not math.isfinite(G_sel):
            G_sel = stationarity_measure(p, x_sel, n * alphas[k_sel])
        finite = G_vals[np.isfinite(G_vals)]
        G_min = float(min(finite.min(), G_sel)) if finite.size else float(G_sel)
        sampled_epoch = k_sel + 1
    else:
        x_sel, G_sel, G_min, sampled_epoch = x_initial, math.nan, math.nan, 0
    result = RunResult(
        trace=trace,
        diagnostics=diags,
        x_initial=x_initial,
        x_final=x,
        x_sampled=np.array(x_sel),
        sampled_epoch=sampled_epoch,
        stationarity_sampled=float(G_sel),
        stationarity_min=G_min,
        alphas=alphas,
        iterates=iterates,
        clamp_events=clamps,
        batch_size=B,
    )
    result.cap_compliance = _cap_compliance(p, cfg, alphas, x_initial)
    return result


def _cap_compliance(p, cfg, alphas, x0) -> dict:
    if p.L_rel is None or alphas.size == 0:
        return {}
    try:
        caps = theoretical_step_cap(p, cfg.delta, x0=x0)
    except MissingConstants:
        return {}
    out = {
        "epoch_cap": bool(np.all(alphas <= caps.per_sample)),
        "rr_cap": bool(np.all(alphas <= caps.rr_cap)),
    }
    if not out["epoch_cap"]:
        log.info("schedule exceeds alpha_bar/n = %.3e (max step %.3e)", caps.per_sample, alphas.max())
    return out


# output ------------------------------------------------------------------------
TRACE_COLUMNS = [f.name for f in fields(TraceRecord)]


def write_trace(result: RunResult, path, meta: dict | None = None) -> None:
    """Write the trace as CSV preceded by ``# key=value`` metadata lines."""
    with open(path, "w", newline="") as fh:
        for key, val in (meta or {}).items():
            fh.write(f"# {key}={val}\n")
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for rec in result.trace:
            w.writerow([_fmt(v) for v in asdict(rec).values()])


def read_trace(path) -> tuple[dict, list[TraceRecord]]:
    """Inverse of :func:`write_trace`."""
    meta = {}
    with open(path, newline="") as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key] = val
            else:
                lines.append(line)
    rows = list(csv.DictReader(lines))
    recs = []
    for r in rows:
        recs.append(
            TraceRecord(
                epoch=int(r["epoch"]),
                samples=int(r["samples"]),
                **{k: float(r[k]) for k in TRACE_COLUMNS if k not in ("epoch", "samples")},
            )
        )
    return meta, recs


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def with_schedule(cfg: SolverConfig, **changes) -> SolverConfig:
    """Copy of ``cfg`` with schedule fields replaced."""
    return replace(cfg, schedule=replace(cfg.schedule, **changes))
