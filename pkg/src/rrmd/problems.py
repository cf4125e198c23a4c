"""Finite-sum objectives, synthetic data generators and constant estimation."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit

from .exceptions import DomainViolation
from .kernels import Kernel, burg, power, xlogx_gap
from .sampling import stream

PROBLEM_KINDS = ("phase_retrieval", "quadratic_inverse", "poisson_inverse")


@dataclass(frozen=True)
class DatasetSpec:
    """Recipe for a synthetic dataset.

    Parameters
    ----------
    kind : {"phase_retrieval", "quadratic_inverse", "poisson_inverse"}
        Problem family.
    d, n : int
        Dimension and number of components.
    noise : float, default=0.1
        Standard deviation of the additive measurement noise (unused for
        Poisson data, whose noise is the counting process itself).
    seed : int, default=0
        Seed of the data stream.
    sigma : float, default=1.0
        Regulariser weight of the Burg kernel paired with Poisson data.
    """

    kind: str
    d: int
    n: int
    noise: float = 0.1
    seed: int = 0
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in PROBLEM_KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.d < 1 or self.n < 1:
            raise ValueError("d and n must be at least 1")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class BallRegion:
    """Euclidean ball used to sample probe points."""

    def __init__(self, radius: float, dim: int):
        self.radius = float(radius)
        self.dim = int(dim)

    def sample(self, rng, size):
        u = rng.normal(size=(size, self.dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        rad = self.radius * rng.random(size) ** (1.0 / self.dim)
        return u * rad[:, None]

    def embed(self, y):
        return self.radius * y / np.sqrt(1.0 + y @ y)

    def unembed(self, x):
        gap = max(self.radius**2 - x @ x, 1e-12 * self.radius**2)
        return x / np.sqrt(gap)


class BoxRegion:
    """Axis-aligned open box used to sample probe points."""

    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.dim = self.lower.size

    def sample(self, rng, size):
        return self.lower + (self.upper - self.lower) * rng.random((size, self.dim))

    def embed(self, y):
        return self.lower + (self.upper - self.lower) * expit(y)

    def unembed(self, x):
        p = np.clip((x - self.lower) / (self.upper - self.lower), 1e-9, 1 - 1e-9)
        return logit(p)


class ProductRegion:
    """Cartesian product of regions acting on consecutive coordinate ranges."""

    def __init__(self, parts):
        self.parts = list(parts)
        self._cuts = np.cumsum([0] + [r.dim for r in self.parts])
        self.dim = int(self._cuts[-1])

    def _split(self, v):
        return [v[..., a:b] for a, b in zip(self._cuts[:-1], self._cuts[1:])]

    def sample(self, rng, size):
        return np.concatenate([r.sample(rng, size) for r in self.parts], axis=-1)

    def embed(self, y):
        return np.concatenate([r.embed(v) for r, v in zip(self.parts, self._split(y))])

    def unembed(self, x):
        return np.concatenate([r.unembed(v) for r, v in zip(self.parts, self._split(x))])


class FiniteSumProblem(ABC):
    """Average ``f(x) = (1/n) sum_i f_i(x)`` paired with a kernel.

    Subclasses implement the vectorised :meth:`component_values` and
    :meth:`component_grads_at`; the scalar per-component accessors and the
    full objective are derived from them.

    Attributes
    ----------
    L_rel : float or None
        Relative-smoothness constant, filled in by :meth:`ensure_L`.
    G_bound : float or None
        Uniform bound on component gradient norms; ``None`` means unbounded,
        in which case step caps use the expected-smoothness fit.
    lower_bound : float
        Known lower bound on ``f``.
    """

    kind = "custom"
    lower_bound = 0.0

    def __init__(self, n: int, d: int, kernel: Kernel, region=None, x_true=None, spec=None):
        if kernel.dim != d:
            raise ValueError(f"kernel dimension {kernel.dim} does not match d={d}")
        self.n, self.d = int(n), int(d)
        self.kernel = kernel
        self.region = region if region is not None else BallRegion(2.0, d)
        self.x_true = None if x_true is None else np.asarray(x_true, dtype=float)
        self.spec = spec
        self.L_rel: float | None = None
        self.G_bound: float | None = None
        self.expected_smoothness: tuple[float, float, float] | None = None

    # vectorised core ---------------------------------------------------------
    @abstractmethod
    def component_values(self, x: np.ndarray) -> np.ndarray:
        """All ``f_i(x)``, shape ``(n,)``."""

    @abstractmethod
    def component_grads_at(self, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Gradients of the components ``idx`` at ``x``, shape ``(len(idx), d)``."""

    def component_grads(self, x: np.ndarray) -> np.ndarray:
        return self.component_grads_at(np.arange(self.n), x)

    def component_hessians_at(self, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Hessians of the components ``idx``, shape ``(len(idx), d, d)``; central differences by default."""
        eps = 1e-5 * max(1.0, float(np.max(np.abs(x))))
        return _fd_hessians(self, x, idx, eps)

    def component_value(self, i: int, x) -> float:
        return float(self.component_values(np.asarray(x, dtype=float))[i])

    def component_grad(self, i: int, x) -> np.ndarray:
        return self.component_grads_at(np.array([i]), np.asarray(x, dtype=float))[0]

    def value(self, x) -> float:
        return float(np.mean(self.component_values(np.asarray(x, dtype=float))))

    def grad(self, x) -> np.ndarray:
        return self.component_grads(np.asarray(x, dtype=float)).mean(axis=0)

    def batch_grad(self, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self.component_grads_at(idx, x).mean(axis=0)

    def initial_point(self, seed: int = 0) -> np.ndarray:
        return self.kernel.sample_interior(stream(seed, "init"), 1)[0]

    def ensure_L(self, **kwargs) -> float:
        if self.L_rel is None:
            self.L_rel = estimate_relative_L(self, **kwargs)
        return self.L_rel


class PhaseRetrieval(FiniteSumProblem):
    """Real phase retrieval ``f_i(x) = (<a_i, x>**2 - b_i**2)**2`` with the quartic kernel."""

    kind = "phase_retrieval"

    def __init__(self, A, b, x_true=None, spec=None, radius=None):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        n, d = self.A.shape
        self.b2 = self.b**2
        self.scale = float(np.sqrt(np.mean(self.b2))) or 1.0
        radius = 2.0 * max(self.scale, 1.0) if radius is None else radius
        super().__init__(n, d, power(d, 2.0), BallRegion(radius, d), x_true, spec)

    def component_values(self, x):
        s = self.A @ x
        return (s * s - self.b2) ** 2

    def component_grads_at(self, idx, x):
        a = self.A[idx]
        s = a @ x
        return (4.0 * (s * s - self.b2[idx]) * s)[:, None] * a

    def grad(self, x):
        s = self.A @ x
        return self.A.T @ (4.0 * (s * s - self.b2) * s) / self.n

    def component_hessians_at(self, idx, x):
        a = self.A[idx]
        s = a @ x
        return (4.0 * (3.0 * s * s - self.b2[idx]))[:, None, None] * a[:, :, None] * a[:, None, :]

    def initial_point(self, seed=0):
        u = stream(seed, "init").normal(size=self.d)
        return self.scale * u / np.linalg.norm(u)


class QuadraticInverse(FiniteSumProblem):
    """Quadratic inverse problem ``f_i(x) = (x' M_i x - b_i)**2 / 4`` with the quartic kernel."""

    kind = "quadratic_inverse"

    def __init__(self, M, b, x_true=None, spec=None, radius=None):
        self.M = np.asarray(M, dtype=float)
        self.b = np.asarray(b, dtype=float)
        n, d, _ = self.M.shape
        mean_trace = float(np.mean(np.trace(self.M, axis1=1, axis2=2))) / d
        self.scale = float(np.sqrt(max(np.mean(self.b), 1e-12) / max(mean_trace, 1e-12)))
        radius = 2.0 * max(self.scale, 1.0) if radius is None else radius
        super().__init__(n, d, power(d, 2.0), BallRegion(radius, d), x_true, spec)

    def component_values(self, x):
        Mx = self.M @ x
        return 0.25 * (Mx @ x - self.b) ** 2

    def component_grads_at(self, idx, x):
        Mx = self.M[idx] @ x
        return (Mx @ x - self.b[idx])[:, None] * Mx

    def component_hessians_at(self, idx, x):
        M = self.M[idx]
        Mx = M @ x
        r = Mx @ x - self.b[idx]
        return r[:, None, None] * M + 2.0 * Mx[:, :, None] * Mx[:, None, :]

    def initial_point(self, seed=0):
        u = stream(seed, "init").normal(size=self.d)
        return self.scale * u / np.linalg.norm(u)


class PoissonInverse(FiniteSumProblem):
    """Poisson inverse problem ``f_i(x) = KL(b_i, <a_i, x>)`` with the regularised Burg kernel."""

    kind = "poisson_inverse"

    def __init__(self, A, b, x_true=None, spec=None, sigma: float = 1.0):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        if np.any(self.A <= 0) or np.any(self.b <= 0):
            raise ValueError("Poisson data needs entrywise positive A and b")
        n, d = self.A.shape
        self.sigma = float(sigma)
        self.level = float(self.b.sum() / self.A.sum())
        region = BoxRegion(np.full(d, 1e-2 * self.level), np.full(d, 4.0 * self.level))
        super().__init__(n, d, burg(d, sigma), region, x_true, spec)

    def _forward(self, x):
        s = self.A @ x
        if np.any(s <= 0):
            raise DomainViolation("Poisson model needs <a_i, x> > 0")
        return s

    def component_values(self, x):
        s = self._forward(x)
        return self.b * xlogx_gap((s - self.b) / self.b)

    def component_grads_at(self, idx, x):
        a = self.A[idx]
        s = a @ x
        if np.any(s <= 0):
            raise DomainViolation("Poisson model needs <a_i, x> > 0")
        return np.log(s / self.b[idx])[:, None] * a

    def component_hessians_at(self, idx, x):
        a = self.A[idx]
        s = a @ x
        if np.any(s <= 0):
            raise DomainViolation("Poisson model needs <a_i, x> > 0")
        return (1.0 / s)[:, None, None] * a[:, :, None] * a[:, None, :]

    def grad(self, x):
        s = self._forward(x)
        return self.A.T @ np.log(s / self.b) / self.n

    def initial_point(self, seed=0):
        return np.full(self.d, self.level)


class FunctionalProblem(FiniteSumProblem):
    """Finite sum given by vectorised callables.

    Parameters
    ----------
    values : callable
        ``values(x) -> (n,)``.
    grads_at : callable
        ``grads_at(idx, x) -> (len(idx), d)``.
    """

    def __init__(self, n, d, kernel, values, grads_at, region=None, x_true=None, G_bound=None):
        super().__init__(n, d, kernel, region, x_true)
        self._values = values
        self._grads_at = grads_at
        self.G_bound = G_bound

    def component_values(self, x):
        return np.asarray(self._values(x), dtype=float)

    def component_grads_at(self, idx, x):
        return np.asarray(self._grads_at(np.asarray(idx), x), dtype=float)


# generators ----------------------------------------------------------------
def make_phase_retrieval(spec: DatasetSpec) -> PhaseRetrieval:
    """Gaussian measurements ``a_i`` and moduli ``b_i = |<a_i, x_true>| + e_i``.

    The ground truth has i.i.d. uniform entries on ``[0, 1]``, mimicking
    pixel intensities.
    """
    if spec.kind != "phase_retrieval":
        raise ValueError("spec.kind must be phase_retrieval")
    rng = stream(spec.seed, "data")
    x_true = rng.random(spec.d)
    A = rng.normal(size=(spec.n, spec.d))
    b = np.abs(A @ x_true) + spec.noise * rng.normal(size=spec.n)
    return PhaseRetrieval(A, b, x_true=x_true, spec=spec)


def make_quadratic_inverse(spec: DatasetSpec) -> QuadraticInverse:
    """PSD matrices ``M_i = C_i C_i' / d`` and ``b_i = max(x' M_i x + e_i, 0)``."""
    if spec.kind != "quadratic_inverse":
        raise ValueError("spec.kind must be quadratic_inverse")
    rng = stream(spec.seed, "data")
    x_true = rng.normal(size=spec.d) / np.sqrt(spec.d)
    C = rng.normal(size=(spec.n, spec.d, spec.d))
    M = C @ np.transpose(C, (0, 2, 1)) / spec.d
    clean = np.einsum("i,nij,j->n", x_true, M, x_true)
    b = np.maximum(clean + spec.noise * rng.normal(size=spec.n), 0.0)
    return QuadraticInverse(M, b, x_true=x_true, spec=spec)


#: Zero Poisson counts are replaced by this value so that ``log(<a, x> / b)``
#: stays finite.
ZERO_COUNT_FLOOR = 0.5


def make_poisson_inverse(spec: DatasetSpec) -> PoissonInverse:
    """``x_true ~ U[0, 10]^d``, ``A = |t_5|`` entrywise and ``b ~ Poisson(A x_true)``."""
    if spec.kind != "poisson_inverse":
        raise ValueError("spec.kind must be poisson_inverse")
    rng = stream(spec.seed, "data")
    x_true = 10.0 * rng.random(spec.d)
    A = np.abs(rng.standard_t(5, size=(spec.n, spec.d)))
    counts = rng.poisson(A @ x_true).astype(float)
    b = np.where(counts > 0, counts, ZERO_COUNT_FLOOR)
    return PoissonInverse(A, b, x_true=x_true, spec=spec, sigma=spec.sigma)


GENERATORS = {
    "phase_retrieval": make_phase_retrieval,
    "quadratic_inverse": make_quadratic_inverse,
    "poisson_inverse": make_poisson_inverse,
}


def make_problem(spec: DatasetSpec) -> FiniteSumProblem:
    return GENERATORS[spec.kind](spec)


# relative smoothness ---------------------------------------------------------
def _fd_hessians(p: FiniteSumProblem, x: np.ndarray, idx: np.ndarray, eps: float) -> np.ndarray:
    """Central-difference Hessians of the components ``idx``, shape ``(k, d, d)``."""
    cols = []
    for j in range(p.d):
        e = np.zeros(p.d)
        e[j] = eps
        cols.append((p.component_grads_at(idx, x + e) - p.component_grads_at(idx, x - e)) / (2 * eps))
    H = np.stack(cols, axis=-1)
    return 0.5 * (H + np.transpose(H, (0, 2, 1)))


def _relative_curvature(p: FiniteSumProblem, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """``max_v |v' F_i v| / (v' H v)`` for each component in ``idx``."""
    F = p.component_hessians_at(idx, x)
    H = p.kernel.hessian(x)
    w, V = np.linalg.eigh(H)
    Hm = (V / np.sqrt(w)) @ V.T
    ev = np.linalg.eigvalsh(Hm @ F @ Hm)
    return np.max(np.abs(ev), axis=-1)


def estimate_relative_L(
    p: FiniteSumProblem,
    trials: int = 32,
    seed: int = 0,
    safety: float = 1.5,
    refine: int = 3,
    region=None,
    refine_iter: int = 20,
) -> float:
    """Sampled estimate of the relative-smoothness constant of every ``f_i``.

    At each probe point the maximum of ``|v' grad^2 f_i(x) v| / (v' grad^2 h(x) v)``
    over all directions ``v`` is a generalised eigenvalue of finite-difference
    Hessians. The best few probes are then refined by local ascent inside
    the region. The result is a lower bound on the true constant, inflated
    by ``safety``.

    Parameters
    ----------
    p : FiniteSumProblem
        Problem to probe.
    trials : int, default=32
        Number of random probe points.
    seed : int, default=0
        Seed of the probe stream.
    safety : float, default=1.5
        Multiplicative inflation applied to the sampled maximum.
    refine : int, default=3
        Number of probe points refined by local ascent.
    region : BallRegion or BoxRegion, optional
        Probe region; defaults to ``p.region``.
    refine_iter : int, default=20
        Iteration budget of each local ascent.
    """
    region = p.region if region is None else region
    rng = stream(seed, "diagnostics", 1)
    pts = region.sample(rng, trials)
    all_idx = np.arange(p.n)
    scores = np.array([_relative_curvature(p, x, all_idx) for x in pts])
    best = float(scores.max()) if scores.size else 0.0
    if refine and best > 0:
        flat = np.argsort(scores, axis=None)[::-1][:refine]
        for t, i in zip(*np.unravel_index(flat, scores.shape)):
            idx = np.array([i])

            def neg(y, idx=idx):
                return -float(_relative_curvature(p, region.embed(y), idx)[0])

            res = minimize(neg, region.unembed(pts[t]), method="L-BFGS-B", options={"maxiter": refine_iter})
            best = max(best, -float(res.fun))
    return safety * best


# expected smoothness -----------------------------------------------------------
@dataclass
class SmoothnessReport:
    """Outcome of an expected-smoothness falsification run."""

    trials: int
    max_ratio: float
    violations: int
    witness: np.ndarray | None = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return self.violations == 0


def _es_terms(p: FiniteSumProblem, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lhs = np.empty(len(pts))
    gap = np.empty(len(pts))
    for k, x in enumerate(pts):
        G = p.component_grads(x)
        lhs[k] = np.mean(np.sum(G * G, axis=1))
        gap[k] = max(p.value(x) - p.lower_bound, 0.0)
    return lhs, gap


def fit_expected_smoothness(
    p: FiniteSumProblem, tau: float, samples: int = 2000, seed: int = 0, region=None, margin: float = 1.25
) -> tuple[float, float]:
    """Fit ``(A, B)`` in ``mean ||grad f_i||**2 <= A (f - f_low)**tau + B**2``.

    ``log A`` is the log-space least-squares intercept shifted up to the
    envelope of the samples with the larger half of the gaps; ``B**2`` then
    covers the remaining excess. Both are inflated by ``margin``.
    """
    region = p.region if region is None else region
    pts = region.sample(stream(seed, "diagnostics", 2), samples)
    lhs, gap = _es_terms(p, pts)
    ok = (gap > 0) & (lhs > 0)
    if not np.any(ok):
        return 0.0, float(np.sqrt(margin * lhs.max()))
    resid = np.log(lhs[ok]) - tau * np.log(gap[ok])
    upper = gap[ok] >= np.median(gap[ok])
    A = float(np.exp(resid[upper].max()))
    B2 = float(np.max(np.maximum(lhs - A * gap**tau, 0.0)))
    return margin * A, float(np.sqrt(margin * B2))


def expected_smoothness_check(
    p: FiniteSumProblem, A: float, B: float, tau: float, samples: int = 10_000, seed: int = 1, region=None
) -> SmoothnessReport:
    """Evaluate the expected-smoothness inequality at sampled points."""
    region = p.region if region is None else region
    pts = region.sample(stream(seed, "diagnostics", 3), samples)
    lhs, gap = _es_terms(p, pts)
    rhs = A * gap**tau + B * B
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))
    k = int(np.argmax(ratio))
    return SmoothnessReport(
        trials=samples,
        max_ratio=float(ratio[k]),
        violations=int(np.count_nonzero(ratio > 1.0 + 1e-8)),
        witness=pts[k],
    )


# dataset files -------------------------------------------------------------------
def save_dataset(p: FiniteSumProblem, path) -> None:
    """Write the problem data as a CSV matrix with a commented header.

    Each row holds one component: ``a_i`` (or the row-major ``M_i``) followed
    by ``b_i``.
    """
    if isinstance(p, QuadraticInverse):
        rows = np.column_stack([p.M.reshape(p.n, -1), p.b])
    elif isinstance(p, (PhaseRetrieval, PoissonInverse)):
        rows = np.column_stack([p.A, p.b])
    else:
        raise TypeError(f"cannot serialise problem of type {type(p).__name__}")
    spec = p.spec
    header = [f"kind={p.kind} d={p.d} n={p.n}"]
    if spec is not None:
        header.append(" ".join(f"{k}={v}" for k, v in spec.to_dict().items() if k not in ("kind", "d", "n")))
    if p.x_true is not None:
        header.append("x_true=" + ",".join(repr(float(v)) for v in p.x_true))
    np.savetxt(path, rows, delimiter=",", header="\n".join(header), comments="# ", fmt="%.17g")


def load_dataset(path) -> FiniteSumProblem:
    """Inverse of :func:`save_dataset`."""
    meta: dict[str, str] = {}
    x_true = None
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if body.startswith("x_true="):
                x_true = np.array([float(v) for v in body[len("x_true="):].split(",")])
                continue
            for tok in body.split():
                key, _, val = tok.partition("=")
                meta[key] = val
    rows = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    kind, d, n = meta["kind"], int(meta["d"]), int(meta["n"])
    spec = None
    if "seed" in meta:
        spec = DatasetSpec(kind=kind, d=d, n=n, noise=float(meta.get("noise", 0.1)),
                           seed=int(meta["seed"]), sigma=float(meta.get("sigma", 1.0)))
    b = rows[:, -1]
    if kind == "quadratic_inverse":
        return QuadraticInverse(rows[:, :-1].reshape(n, d, d), b, x_true=x_true, spec=spec)
    if kind == "phase_retrieval":
        return PhaseRetrieval(rows[:, :-1], b, x_true=x_true, spec=spec)
    sigma = spec.sigma if spec is not None else 1.0
    return PoissonInverse(rows[:, :-1], b, x_true=x_true, spec=spec, sigma=sigma)
