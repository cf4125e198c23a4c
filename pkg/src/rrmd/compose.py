"""Affine compositions, conic sums and the multi-block inflation constant."""

from __future__ import annotations

import math

import numpy as np

from ._roots import increasing_root
from .exceptions import (
    CompatibilityViolation,
    DomainViolation,
    NonpositiveMu,
    NumericOverflow,
    PartitionMismatch,
    RootFindFailure,
    ShapeMismatch,
    SingularBlock,
)
from .kernels import (
    BlockKernel,
    BoltzmannShannon,
    CoordinateKernel,
    FermiDirac,
    Kernel,
    LogBarrier,
    Power,
    Quadratic,
    RegularizedBurg,
)

#: Relative singular-value threshold below which an affine block is rejected.
SINGULAR_RTOL = 1e-12
#: Number of random pairs used by the conic compatibility spot-check.
COMPATIBILITY_PAIRS = 512


def _interval_center(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        mid = 0.5 * (lo + hi)
    return np.where(
        np.isfinite(lo) & np.isfinite(hi),
        mid,
        np.where(np.isfinite(lo), lo + 1.0, np.where(np.isfinite(hi), hi - 1.0, 0.0)),
    )


class AffineCoordinate(CoordinateKernel):
    """``phi(z) = h(a * z + b)`` for a coordinate-separable ``h`` and diagonal ``a``."""

    kind = "affine"

    def __init__(self, base: CoordinateKernel, a, b):
        self.base = base
        self.dim = base.dim
        self.a = np.asarray(a, dtype=float).reshape(self.dim)
        self.b = np.asarray(b, dtype=float).reshape(self.dim)
        if np.any(self.a == 0) or not np.all(np.isfinite(self.a)):
            raise SingularBlock("diagonal affine coefficient is zero")

    def _u(self, z):
        return self.a * z + self.b

    def phi(self, z):
        return self.base.phi(self._u(z))

    def dphi(self, z):
        return self.a * self.base.dphi(self._u(z))

    def d2phi(self, z):
        return self.a * self.a * self.base.d2phi(self._u(z))

    def dphi_inv(self, y):
        return (self.base.grad_conj(y / self.a) - self.b) / self.a

    def breg(self, z, w):
        return self.base.breg(self._u(z), self._u(w))

    @property
    def interval(self):
        lo, hi = self.base.interval
        p, q = (lo - self.b) / self.a, (hi - self.b) / self.a
        return np.minimum(p, q), np.maximum(p, q)

    def clamp_count(self, y):
        return self.base.clamp_count(np.asarray(y) / self.a)

    def dkc(self, delta):
        # Scalar blocks have condition number one, so only the radius rescales.
        return np.asarray(self.base.dkc(np.asarray(delta, dtype=float) / np.abs(self.a)))

    def sample(self, rng, size):
        return (self.base.sample(rng, size) - self.b) / self.a

    def to_record(self):
        return {"kind": "affine", "base": self.base.to_record(), "a": self.a.tolist(), "b": self.b.tolist()}


class AffineBlock(BlockKernel):
    """``phi(z) = h(A z + b)`` for a single-block ``h`` and square nonsingular ``A``."""

    kind = "affine"
    separable = False

    def __init__(self, base: BlockKernel, A, b):
        if base.separable:
            raise ShapeMismatch("full affine maps need a single-block base kernel")
        self.base = base
        self.dim = base.dim
        self.A = np.asarray(A, dtype=float).reshape(self.dim, self.dim)
        self.b = np.asarray(b, dtype=float).reshape(self.dim)
        sv = np.linalg.svd(self.A, compute_uv=False)
        self.sigma_max, self.sigma_min = float(sv[0]), float(sv[-1])
        if not self.sigma_min > SINGULAR_RTOL * self.sigma_max:
            raise SingularBlock(
                f"affine block is singular (sigma_min={self.sigma_min:.3e}, sigma_max={self.sigma_max:.3e})"
            )
        self.A_inv = np.linalg.inv(self.A)

    @property
    def cond(self) -> float:
        return self.sigma_max / self.sigma_min

    def _u(self, z):
        return np.asarray(z, dtype=float) @ self.A.T + self.b

    def value(self, z):
        return self.base.value(self._u(z))

    def grad(self, z):
        return self.base.grad(self._u(z)) @ self.A

    def grad_conj(self, y):
        w = np.asarray(y, dtype=float) @ self.A_inv
        return (self.base.grad_conj(w) - self.b) @ self.A_inv.T

    def hessian(self, z):
        H = self.base.hessian(self._u(z))
        return np.einsum("ji,...jk,kl->...il", self.A, H, self.A)

    def eig_bounds(self, z):
        ev = np.linalg.eigvalsh(self.hessian(z))
        return ev[..., :1], ev[..., -1:]

    def in_domain(self, z):
        return self.base.in_domain(self._u(z))

    def bregman(self, z, w):
        return self.base.bregman(self._u(z), self._u(w))

    def clamp_count(self, y):
        return self.base.clamp_count(np.asarray(y, dtype=float) @ self.A_inv)

    def dkc(self, delta):
        inner = self.base.dkc(float(np.max(delta)) / self.sigma_min)
        return self.cond**2 * np.asarray(inner, dtype=float)

    def sample(self, rng, size):
        return (self.base.sample(rng, size) - self.b) @ self.A_inv.T

    def to_record(self):
        return {"kind": "affine", "base": self.base.to_record(), "A": self.A.tolist(), "b": self.b.tolist()}


class ConicCoordinate(CoordinateKernel):
    """``alpha * h + beta * g`` for two coordinate-separable kernels."""

    kind = "conic"

    def __init__(self, h: CoordinateKernel, g: CoordinateKernel, alpha: float, beta: float,
                 tol: float = 1e-12, maxiter: int = 200):
        self.h, self.g = h, g
        self.alpha, self.beta = float(alpha), float(beta)
        self.dim = h.dim
        self.tol, self.maxiter = tol, maxiter

    def phi(self, z):
        return self.alpha * self.h.phi(z) + self.beta * self.g.phi(z)

    def dphi(self, z):
        return self.alpha * self.h.dphi(z) + self.beta * self.g.dphi(z)

    def d2phi(self, z):
        return self.alpha * self.h.d2phi(z) + self.beta * self.g.d2phi(z)

    def breg(self, z, w):
        return self.alpha * self.h.breg(z, w) + self.beta * self.g.breg(z, w)

    @property
    def interval(self):
        lh, hh = self.h.interval
        lg, hg = self.g.interval
        return np.maximum(lh, lg), np.minimum(hh, hg)

    def dphi_inv(self, y):
        lo, hi = self.interval
        lo = np.broadcast_to(lo, y.shape)
        hi = np.broadcast_to(hi, y.shape)
        try:
            with np.errstate(all="ignore"):
                x0 = self.h.grad_conj(y / self.alpha)
            good = np.isfinite(x0) & (x0 > lo) & (x0 < hi)
        except (DomainViolation, NumericOverflow):
            x0, good = np.zeros_like(y), np.zeros(y.shape, dtype=bool)
        x0 = np.where(good, x0, _interval_center(lo, hi))

        def fun(x):
            with np.errstate(all="ignore"):
                return self.dphi(x)

        def dfun(x):
            with np.errstate(all="ignore"):
                return self.d2phi(x)

        return increasing_root(fun, dfun, y, x0, lo, hi, tol=self.tol, maxiter=self.maxiter)

    def dkc(self, delta):
        delta = np.asarray(delta, dtype=float)
        return np.maximum(self.h.dkc(delta / self.alpha), self.g.dkc(delta / self.beta))

    def sample(self, rng, size):
        pts = self.h.sample(rng, size)
        lo, hi = self.interval
        inside = (pts > lo) & (pts < hi)
        return np.where(inside, pts, _interval_center(lo, hi))

    def to_record(self):
        return {"kind": "conic", "h": self.h.to_record(), "g": self.g.to_record(),
                "alpha": self.alpha, "beta": self.beta}


class ConicBlock(BlockKernel):
    """``alpha * h + beta * g`` for two single-block kernels of equal dimension.

    The inverse mirror map has no closed form and is computed by damped
    Newton on the strictly convex function ``alpha h + beta g - <y, .>``.
    """

    kind = "conic"
    separable = False

    def __init__(self, h: BlockKernel, g: BlockKernel, alpha: float, beta: float,
                 tol: float = 1e-12, maxiter: int = 200):
        self.h, self.g = h, g
        self.alpha, self.beta = float(alpha), float(beta)
        self.dim = h.dim
        self.tol, self.maxiter = tol, maxiter

    def value(self, z):
        return self.alpha * self.h.value(z) + self.beta * self.g.value(z)

    def grad(self, z):
        return self.alpha * self.h.grad(z) + self.beta * self.g.grad(z)

    def hessian(self, z):
        return self.alpha * self.h.hessian(z) + self.beta * self.g.hessian(z)

    def bregman(self, z, w):
        return self.alpha * self.h.bregman(z, w) + self.beta * self.g.bregman(z, w)

    def eig_bounds(self, z):
        ev = np.linalg.eigvalsh(self.hessian(z))
        return ev[..., :1], ev[..., -1:]

    def in_domain(self, z):
        return self.h.in_domain(z) & self.g.in_domain(z)

    def _start(self, y: np.ndarray) -> np.ndarray:
        try:
            with np.errstate(all="ignore"):
                x = self.h.grad_conj(y / self.alpha)
        except (DomainViolation, NumericOverflow, RootFindFailure):
            x = np.full_like(y, np.nan)
        bad = ~np.asarray(self.in_domain(np.nan_to_num(x, nan=np.inf)))
        if np.any(bad):
            fallback = self.h.sample(np.random.default_rng(0), 1)[0]
            x[bad] = fallback
        return x

    def grad_conj(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise NumericOverflow("dual point has non-finite coordinates")
        flat = y.reshape(-1, self.dim)
        x = self._start(flat)
        res = self.grad(x) - flat
        rn = np.linalg.norm(res, axis=-1)
        active = np.ones(flat.shape[0], dtype=bool)
        for _ in range(self.maxiter):
            idx = np.flatnonzero(active)
            xa, ra, rna = x[idx], res[idx], rn[idx]
            step = np.linalg.solve(self.hessian(xa), ra[..., None])[..., 0]
            t = np.ones(idx.size)
            pending = np.ones(idx.size, dtype=bool)
            cand, rc, rnc = xa.copy(), ra.copy(), rna.copy()
            # Backtrack on the residual norm, for which the Newton direction
            # is always a descent direction.
            for _ in range(60):
                p = np.flatnonzero(pending)
                trial = xa[p] - t[p, None] * step[p]
                inside = np.asarray(self.in_domain(trial))
                with np.errstate(all="ignore"):
                    rt = np.where(inside[:, None], self.grad(np.where(inside[:, None], trial, xa[p])) - flat[idx[p]], np.inf)
                rnt = np.linalg.norm(rt, axis=-1)
                ok = inside & (rnt <= (1.0 - 1e-4 * t[p]) * rna[p])
                ok |= inside & (rnt <= 1e-15 * (1.0 + np.linalg.norm(flat[idx[p]], axis=-1)))
                acc = p[ok]
                cand[acc], rc[acc], rnc[acc] = trial[ok], rt[ok], rnt[ok]
                pending[acc] = False
                t[p[~ok]] *= 0.5
                if not np.any(pending):
                    break
            moved = ~pending
            x[idx[moved]], res[idx[moved]], rn[idx[moved]] = cand[moved], rc[moved], rnc[moved]
            size = t * np.linalg.norm(step, axis=-1)
            done = pending | (size <= self.tol * np.maximum(1.0, np.linalg.norm(cand, axis=-1)))
            # A stalled line search at the roundoff floor counts as converged.
            stalled = pending & (rna > 1e-9 * (1.0 + np.linalg.norm(flat[idx], axis=-1)))
            if np.any(stalled):
                raise RootFindFailure("conic Newton line search stalled")
            active[idx[done]] = False
            if not np.any(active):
                return x.reshape(y.shape)
        raise RootFindFailure("conic inverse mirror map did not converge")

    def dkc(self, delta):
        delta = float(np.max(delta))
        return np.maximum(self.h.dkc(delta / self.alpha), self.g.dkc(delta / self.beta))

    def sample(self, rng, size):
        pts = self.h.sample(rng, size)
        keep = self.g.in_domain(pts)
        if not np.all(keep):
            raise DomainViolation("conic sample fell outside the second kernel's domain")
        return pts

    def clamp_count(self, y):
        return 0

    def to_record(self):
        return {"kind": "conic", "h": self.h.to_record(), "g": self.g.to_record(),
                "alpha": self.alpha, "beta": self.beta}


def compose_affine(h: Kernel, A, b) -> Kernel:
    """Kernel ``z -> h(A z + b)`` for block-diagonal nonsingular ``A``.

    Parameters
    ----------
    h : Kernel
        Base kernel.
    A : array_like of shape (d, d)
        Block-diagonal matrix conforming to ``h.partition``. Blocks of
        coordinate-separable components are scalars, so ``A`` must be diagonal
        there.
    b : array_like of shape (d,)
        Offset vector.

    Raises
    ------
    ShapeMismatch
        If ``A`` or ``b`` have the wrong shape or ``A`` has entries outside
        the diagonal blocks.
    SingularBlock
        If some block has ``sigma_min <= 1e-12 * sigma_max``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    d = h.dim
    if A.shape != (d, d) or b.shape != (d,):
        raise ShapeMismatch(f"expected A of shape {(d, d)} and b of shape {(d,)}, got {A.shape}, {b.shape}")
    mask = np.zeros((d, d), dtype=bool)
    for s, n in h.partition:
        mask[s : s + n, s : s + n] = True
    if np.any(A[~mask] != 0):
        raise ShapeMismatch("A is not block diagonal with respect to the kernel partition")
    comps = []
    for comp, s in zip(h.components, h._offsets[:-1]):
        sl = slice(s, s + comp.dim)
        if comp.separable:
            diag = np.diag(A)[sl]
            scale = np.max(np.abs(diag))
            if not np.all(np.abs(diag) > SINGULAR_RTOL * scale) or scale == 0:
                raise SingularBlock("a scalar affine block is zero")
            comps.append(AffineCoordinate(comp, diag, b[sl]))
        else:
            comps.append(AffineBlock(comp, A[sl, sl], b[sl]))
    return Kernel(comps)


def _compatibility_check(h: BlockKernel, g: BlockKernel, pairs: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    x = h.sample(rng, pairs)
    y = h.sample(rng, pairs)
    ok = np.asarray(g.in_domain(x)) & np.asarray(g.in_domain(y))
    x, y = x[ok], y[ok]
    if x.shape[0] == 0:
        raise CompatibilityViolation("kernels share no sampled interior points")
    dh = h.grad(x) - h.grad(y)
    dg = g.grad(x) - g.grad(y)
    prod = dh * dg if h.separable else np.sum(dh * dg, axis=-1)
    scale = np.abs(dh) * np.abs(dg) if h.separable else np.linalg.norm(dh, axis=-1) * np.linalg.norm(dg, axis=-1)
    if np.any(prod < -1e-12 * np.maximum(scale, 1e-300)):
        raise CompatibilityViolation("gradient increments of the two kernels point in opposite directions")


def combine_conic(h: Kernel, g: Kernel, alpha: float, beta: float, seed: int = 0) -> Kernel:
    """Kernel ``alpha * h + beta * g`` for kernels with identical block partitions.

    The monotone-gradient compatibility condition is spot-checked on
    512 random pairs per component before construction.
    """
    if not (alpha > 0 and beta > 0):
        raise ValueError("conic weights must be positive")
    if h.partition != g.partition or h._offsets != g._offsets:
        raise PartitionMismatch(f"partitions differ: {h.partition} vs {g.partition}")
    comps = []
    for ch, cg in zip(h.components, g.components):
        if ch.separable != cg.separable:
            raise PartitionMismatch("cannot combine a separable with a single-block component")
        _compatibility_check(ch, cg, COMPATIBILITY_PAIRS, seed)
        if ch.separable:
            comps.append(ConicCoordinate(ch, cg, alpha, beta))
        else:
            comps.append(ConicBlock(ch, cg, alpha, beta))
    return Kernel(comps)


def gamma_constant(mu, m: int | None = None) -> float:
    """Multi-block inflation constant from per-block strong-convexity moduli.

    ``sqrt(min(8 m, 8 e (2 + 3 log(max mu / min mu))))``.
    """
    mu = np.asarray(mu, dtype=float).ravel()
    if mu.size == 0 or np.any(~(mu > 0)):
        raise NonpositiveMu("all block moduli must be positive")
    m = mu.size if m is None else int(m)
    ratio = float(mu.max() / mu.min())
    return math.sqrt(min(8.0 * m, 8.0 * math.e * (2.0 + 3.0 * math.log(ratio))))


_SIMPLE = {
    "shannon": lambda r: BoltzmannShannon(r["dim"]),
    "regularized_burg": lambda r: RegularizedBurg(r["dim"], r.get("sigma", 1.0)),
    "burg": lambda r: LogBarrier(r["dim"]),
    "fermi_dirac": lambda r: FermiDirac(r["dim"]),
    "quadratic": lambda r: Quadratic(r["dim"]),
    "power": lambda r: Power(r["dim"], r.get("r", 2.0)),
}


def component_from_record(record: dict) -> BlockKernel:
    """Rebuild a component from :meth:`BlockKernel.to_record` output."""
    kind = record.get("kind")
    if kind in _SIMPLE:
        return _SIMPLE[kind](record)
    if kind == "affine":
        base = component_from_record(record["base"])
        if "a" in record:
            return AffineCoordinate(base, record["a"], record["b"])
        return AffineBlock(base, record["A"], record["b"])
    if kind == "conic":
        h = component_from_record(record["h"])
        g = component_from_record(record["g"])
        cls = ConicCoordinate if h.separable else ConicBlock
        return cls(h, g, record["alpha"], record["beta"])
    raise ValueError(f"unknown kernel kind {kind!r}")
