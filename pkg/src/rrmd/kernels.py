"""Block-separable Legendre kernels and their mirror maps.

A :class:`Kernel` is a stack of :class:`BlockKernel` components acting on
contiguous coordinate ranges. A component is either *coordinate separable*
(every coordinate is its own block, as for the entropies) or a single block
over its whole range (as for the power kernel).

All array methods accept points of shape ``(..., d)`` and broadcast over the
leading axes.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._roots import power_radius, power_radius_array
from .exceptions import DomainViolation, EmptyRegion, NumericOverflow, ShapeMismatch

#: Shannon dual coordinates are clipped to this range before ``exp``.
SHANNON_DUAL_CLIP = (-700.0, 700.0)
#: Fermi-Dirac dual coordinates are clipped so that the logistic map stays
#: below one in double precision (``1 / (1 + exp(-37))`` already rounds to 1).
FERMI_DIRAC_DUAL_CLIP = (-700.0, 36.0)


def _as_points(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def log1p_gap(u):
    """``u - log1p(u)`` without cancellation near zero."""
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < 0.1
    us = np.where(small, u, 0.0)
    series = np.zeros_like(us)
    power = us * us
    for k in range(2, 19):
        series += (power / k) if k % 2 == 0 else (-power / k)
        power = power * us
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = u - np.log1p(u)
    return np.where(small, series, direct)


def xlogx_gap(u):
    """``(1 + u) * log1p(u) - u`` without cancellation near zero."""
    u = np.asarray(u, dtype=float)
    return u * u - (1.0 + u) * log1p_gap(u)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)
_GL_T = 0.5 * (_GL_NODES + 1.0)
_GL_W = 0.5 * _GL_WEIGHTS


class BlockKernel(ABC):
    """A Legendre function on a contiguous coordinate range.

    Subclasses set ``kind``, ``dim`` and ``separable``. When ``separable`` is
    true each coordinate is an independent block and the per-block arrays
    returned by :meth:`eig_bounds` and :meth:`dkc` have length ``dim``;
    otherwise they have length one.
    """

    kind: str = "abstract"
    dim: int
    separable: bool = False

    @property
    def n_blocks(self) -> int:
        return self.dim if self.separable else 1

    @abstractmethod
    def value(self, z: np.ndarray) -> np.ndarray:
        """Kernel value, summed over the last axis."""

    @abstractmethod
    def grad(self, z: np.ndarray) -> np.ndarray:
        """Mirror map."""

    @abstractmethod
    def grad_conj(self, y: np.ndarray) -> np.ndarray:
        """Inverse mirror map."""

    @abstractmethod
    def hessian(self, z: np.ndarray) -> np.ndarray:
        """Hessian matrices of shape ``(..., dim, dim)``."""

    @abstractmethod
    def eig_bounds(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Smallest and largest Hessian eigenvalue per block, shape ``(..., n_blocks)``."""

    @abstractmethod
    def in_domain(self, z: np.ndarray) -> np.ndarray:
        """Boolean mask over the leading axes: is every coordinate interior."""

    @abstractmethod
    def dkc(self, delta) -> np.ndarray:
        """Analytic condition-number bound per block for dual diameter ``delta``."""

    @abstractmethod
    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` interior points at a moderate scale."""

    @abstractmethod
    def to_record(self) -> dict:
        """Serialisable description of the component."""

    def clamp_count(self, y: np.ndarray) -> int:
        """Number of dual coordinates that :meth:`grad_conj` would clip."""
        return 0

    def bregman(self, z: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Bregman divergence ``D(z, w)`` summed over the component."""
        z, w = _as_points(z), _as_points(w)
        d = self.value(z) - self.value(w) - np.sum(self.grad(w) * (z - w), axis=-1)
        return np.maximum(d, 0.0)


class CoordinateKernel(BlockKernel):
    """Coordinate-separable kernel defined by scalar functions.

    Subclasses provide elementwise ``phi``, ``dphi``, ``d2phi``, ``dphi_inv``
    and the open interval ``(lower, upper)`` of each coordinate.
    """

    separable = True

    @abstractmethod
    def phi(self, z): ...

    @abstractmethod
    def dphi(self, z): ...

    @abstractmethod
    def d2phi(self, z): ...

    @abstractmethod
    def dphi_inv(self, y): ...

    @property
    @abstractmethod
    def interval(self) -> tuple[np.ndarray, np.ndarray]: ...

    def breg(self, z, w):
        """Elementwise Bregman divergence; generic formula unless overridden."""
        return self.phi(z) - self.phi(w) - self.dphi(w) * (z - w)

    def value(self, z):
        return np.sum(self.phi(_as_points(z)), axis=-1)

    def bregman(self, z, w):
        return np.maximum(np.sum(self.breg(_as_points(z), _as_points(w)), axis=-1), 0.0)

    def grad(self, z):
        return self.dphi(_as_points(z))

    def grad_conj(self, y):
        y = _as_points(y)
        if not np.all(np.isfinite(y)):
            raise NumericOverflow("dual point has non-finite coordinates")
        return self.dphi_inv(y)

    def hessian(self, z):
        c = self.d2phi(_as_points(z))
        return c[..., :, None] * np.eye(self.dim)

    def eig_bounds(self, z):
        c = self.d2phi(_as_points(z))
        return c, c

    def in_domain(self, z):
        z = _as_points(z)
        lo, hi = self.interval
        return np.all((z > lo) & (z < hi) & np.isfinite(z), axis=-1)


class BoltzmannShannon(CoordinateKernel):
    """Entropy ``sum x log x`` on the positive orthant."""

    kind = "shannon"

    def __init__(self, dim: int):
        self.dim = int(dim)

    def phi(self, z):
        return z * np.log(z)

    def dphi(self, z):
        return np.log(z) + 1.0

    def d2phi(self, z):
        return 1.0 / z

    def dphi_inv(self, y):
        return np.exp(np.clip(y, *SHANNON_DUAL_CLIP) - 1.0)

    def breg(self, z, w):
        return w * xlogx_gap((z - w) / w)

    @property
    def interval(self):
        return np.zeros(self.dim), np.full(self.dim, np.inf)

    def clamp_count(self, y):
        y = _as_points(y)
        return int(np.count_nonzero((y < SHANNON_DUAL_CLIP[0]) | (y > SHANNON_DUAL_CLIP[1])))

    def dkc(self, delta):
        return np.broadcast_to(np.exp(np.asarray(delta, dtype=float)), (self.dim,)).copy()

    def sample(self, rng, size):
        return np.exp(rng.normal(0.0, 1.0, size=(size, self.dim)))

    def to_record(self):
        return {"kind": self.kind, "dim": self.dim}


class RegularizedBurg(CoordinateKernel):
    """Regularised Burg entropy ``sum -log x + (sigma/2) x**2`` on the positive orthant.

    Parameters
    ----------
    dim : int
        Number of coordinates.
    sigma : float, default=1.0
        Weight of the quadratic regulariser; must be positive.
    """

    kind = "regularized_burg"

    def __init__(self, dim: int, sigma: float = 1.0):
        if not sigma > 0:
            raise ValueError(f"regularized Burg needs sigma > 0, got {sigma}")
        self.dim = int(dim)
        self.sigma = float(sigma)

    def phi(self, z):
        return -np.log(z) + 0.5 * self.sigma * z * z

    def dphi(self, z):
        return -1.0 / z + self.sigma * z

    def d2phi(self, z):
        return 1.0 / (z * z) + self.sigma

    def breg(self, z, w):
        return log1p_gap(z / w - 1.0) + 0.5 * self.sigma * (z - w) ** 2

    def dphi_inv(self, y):
        root = np.hypot(y, 2.0 * math.sqrt(self.sigma))
        # Two algebraically equal forms; pick the one without cancellation.
        with np.errstate(divide="ignore", invalid="ignore"):
            neg = 2.0 / (root - y)
            pos = (y + root) / (2.0 * self.sigma)
        return np.where(y < 0, neg, pos)

    @property
    def interval(self):
        return np.zeros(self.dim), np.full(self.dim, np.inf)

    def dkc(self, delta):
        t = np.asarray(delta, dtype=float) / self.sigma
        return np.broadcast_to(t * t + 4.0 * t + 5.0, (self.dim,)).copy()

    def sample(self, rng, size):
        return np.exp(rng.normal(0.0, 1.0, size=(size, self.dim)))

    def to_record(self):
        return {"kind": self.kind, "dim": self.dim, "sigma": self.sigma}


class LogBarrier(CoordinateKernel):
    """Plain Burg entropy ``sum -log x``.

    It is a valid Legendre function but has no finite condition-number bound,
    so :meth:`dkc` returns infinity. It exists mainly as a building block for
    conic sums.
    """

    kind = "burg"

    def __init__(self, dim: int):
        self.dim = int(dim)

    def phi(self, z):
        return -np.log(z)

    def dphi(self, z):
        return -1.0 / z

    def d2phi(self, z):
        return 1.0 / (z * z)

    def breg(self, z, w):
        return log1p_gap(z / w - 1.0)

    def dphi_inv(self, y):
        if np.any(y >= 0):
            raise DomainViolation("log-barrier dual coordinates must be negative")
        return -1.0 / y

    @property
    def interval(self):
        return np.zeros(self.dim), np.full(self.dim, np.inf)

    def dkc(self, delta):
        return np.full(self.dim, np.inf)

    def sample(self, rng, size):
        return np.exp(rng.normal(0.0, 1.0, size=(size, self.dim)))

    def to_record(self):
        return {"kind": self.kind, "dim": self.dim}


class FermiDirac(CoordinateKernel):
    """Entropy ``sum x log x + (1 - x) log(1 - x)`` on the open unit box."""

    kind = "fermi_dirac"

    def __init__(self, dim: int):
        self.dim = int(dim)

    def phi(self, z):
        return z * np.log(z) + (1.0 - z) * np.log1p(-z)

    def dphi(self, z):
        return np.log(z) - np.log1p(-z)

    def d2phi(self, z):
        return 1.0 / (z * (1.0 - z))

    def breg(self, z, w):
        return w * xlogx_gap((z - w) / w) + (1.0 - w) * xlogx_gap((w - z) / (1.0 - w))

    def dphi_inv(self, y):
        return 1.0 / (1.0 + np.exp(-np.clip(y, *FERMI_DIRAC_DUAL_CLIP)))

    @property
    def interval(self):
        return np.zeros(self.dim), np.ones(self.dim)

    def clamp_count(self, y):
        y = _as_points(y)
        lo, hi = FERMI_DIRAC_DUAL_CLIP
        return int(np.count_nonzero((y < lo) | (y > hi)))

    def dkc(self, delta):
        return np.broadcast_to(np.exp(np.asarray(delta, dtype=float)), (self.dim,)).copy()

    def sample(self, rng, size):
        return 1.0 / (1.0 + np.exp(-rng.normal(0.0, 1.5, size=(size, self.dim))))

    def to_record(self):
        return {"kind": self.kind, "dim": self.dim}


class Quadratic(CoordinateKernel):
    """Euclidean kernel ``0.5 * ||x||**2``."""

    kind = "quadratic"

    def __init__(self, dim: int):
        self.dim = int(dim)

    def phi(self, z):
        return 0.5 * z * z

    def dphi(self, z):
        return np.array(z, dtype=float, copy=True)

    def d2phi(self, z):
        return np.ones_like(z, dtype=float)

    def breg(self, z, w):
        return 0.5 * (z - w) ** 2

    def dphi_inv(self, y):
        return np.array(y, dtype=float, copy=True)

    @property
    def interval(self):
        return np.full(self.dim, -np.inf), np.full(self.dim, np.inf)

    def dkc(self, delta):
        return np.ones(self.dim)

    def sample(self, rng, size):
        return rng.normal(0.0, 1.0, size=(size, self.dim))

    def to_record(self):
        return {"kind": self.kind, "dim": self.dim}


class Power(BlockKernel):
    """Single-block kernel ``||x||**(r+2) / (r+2) + 0.5 * ||x||**2`` on all of space.

    Parameters
    ----------
    dim : int
        Block dimension.
    r : float, default=2.0
        Growth exponent, ``r >= 0``. ``r = 2`` gives the quartic kernel used
        for phase retrieval.
    """

    kind = "power"

    def __init__(self, dim: int, r: float = 2.0):
        if not r >= 0:
            raise ValueError(f"power kernel needs r >= 0, got {r}")
        self.dim = int(dim)
        self.r = float(r)

    def value(self, z):
        nz = np.linalg.norm(_as_points(z), axis=-1)
        return nz ** (self.r + 2.0) / (self.r + 2.0) + 0.5 * nz * nz

    def grad(self, z):
        z = _as_points(z)
        nz = np.linalg.norm(z, axis=-1, keepdims=True)
        return (nz**self.r + 1.0) * z

    def grad_conj(self, y):
        y = _as_points(y)
        if not np.all(np.isfinite(y)):
            raise NumericOverflow("dual point has non-finite coordinates")
        if y.ndim == 1:
            t = power_radius(math.sqrt(float(np.dot(y, y))), self.r)
            return y / (t**self.r + 1.0)
        s = np.linalg.norm(y, axis=-1, keepdims=True)
        t = power_radius_array(s, self.r)
        return y / (t**self.r + 1.0)

    def bregman(self, z, w):
        z, w = _as_points(z), _as_points(w)
        diff = z - w
        dd = np.sum(diff * diff, axis=-1)
        if self.r == 0.0:
            return dd
        if self.r == 2.0:
            ww = np.sum(w * w, axis=-1)
            gap = np.sum((z + w) * diff, axis=-1)
            return 0.5 * dd + 0.5 * ww * dd + 0.25 * gap * gap
        # The direct formula is accurate unless D is tiny next to the terms it
        # subtracts; those short segments use the integral form
        # D = int_0^1 (1 - t) <diff, H(w + t diff) diff> dt instead.
        hz, hw = self.value(z), self.value(w)
        lin = np.sum(self.grad(w) * diff, axis=-1)
        direct = hz - hw - lin
        scale = np.abs(hz) + np.abs(hw) + np.abs(lin)
        short = direct <= 1e-6 * scale
        if not np.any(short):
            return np.maximum(direct, 0.0)
        pts = w[..., None, :] + _GL_T[:, None] * diff[..., None, :]
        npt = np.linalg.norm(pts, axis=-1)
        proj = np.sum(pts * diff[..., None, :], axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            radial = np.where(npt > 0, self.r * npt ** (self.r - 2.0) * proj * proj, 0.0)
        quad = (npt**self.r + 1.0) * dd[..., None] + radial
        integral = np.sum(_GL_W * (1.0 - _GL_T) * quad, axis=-1)
        return np.where(short, integral, np.maximum(direct, 0.0))

    def hessian(self, z):
        z = _as_points(z)
        nz = np.linalg.norm(z, axis=-1, keepdims=True)[..., None]
        eye = np.eye(self.dim)
        outer = z[..., :, None] * z[..., None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(nz > 0, self.r * nz ** (self.r - 2.0), 0.0)
        return (nz**self.r + 1.0) * eye + coef * outer

    def eig_bounds(self, z):
        nz = np.linalg.norm(_as_points(z), axis=-1, keepdims=True)
        hi = (self.r + 1.0) * nz**self.r + 1.0
        if self.dim == 1:
            return hi, hi
        return nz**self.r + 1.0, hi

    def in_domain(self, z):
        return np.all(np.isfinite(_as_points(z)), axis=-1)

    def dkc(self, delta):
        delta = float(np.max(delta))
        return np.array([(self.r + 1.0) * (1.0 + delta) ** self.r + 1.0])

    def sample(self, rng, size):
        return rng.normal(0.0, 1.0, size=(size, self.dim))

    def to_record(self):
        return {"kind": self.kind, "dim": self.dim, "r": self.r}


@dataclass(frozen=True)
class HessianBounds:
    """Per-block extreme Hessian eigenvalues over a point cloud."""

    mu: np.ndarray
    L: np.ndarray

    @property
    def kappa(self) -> np.ndarray:
        return self.L / self.mu

    @property
    def mu_min(self) -> float:
        return float(np.min(self.mu))

    @property
    def kappa_max(self) -> float:
        return float(np.max(self.kappa))


class Kernel:
    """Block-separable kernel assembled from contiguous components.

    Parameters
    ----------
    components : sequence of BlockKernel
        Components in coordinate order; component ``c`` acts on the next
        ``components[c].dim`` coordinates.
    """

    def __init__(self, components):
        components = list(components)
        if not components:
            raise ShapeMismatch("a kernel needs at least one component")
        self.components: tuple[BlockKernel, ...] = tuple(components)
        offsets = np.cumsum([0] + [c.dim for c in components])
        self._offsets = tuple(int(o) for o in offsets)
        self.dim = self._offsets[-1]
        partition = []
        for comp, start in zip(components, self._offsets[:-1]):
            if comp.separable:
                partition.extend((start + j, 1) for j in range(comp.dim))
            else:
                partition.append((start, comp.dim))
        self.partition: tuple[tuple[int, int], ...] = tuple(partition)
        self._starts = np.array([s for s, _ in partition], dtype=int)
        self._single = components[0] if len(components) == 1 else None

    @property
    def n_blocks(self) -> int:
        return len(self.partition)

    @property
    def kind(self) -> str:
        kinds = {c.kind for c in self.components}
        return kinds.pop() if len(kinds) == 1 else "stack"

    def __repr__(self) -> str:
        inner = ", ".join(f"{c.kind}[{c.dim}]" for c in self.components)
        return f"Kernel({inner})"

    def _split(self, x: np.ndarray):
        if x.shape[-1] != self.dim:
            raise ShapeMismatch(f"expected last dimension {self.dim}, got {x.shape[-1]}")
        o = self._offsets
        return [x[..., o[c] : o[c + 1]] for c in range(len(self.components))]

    def _map(self, name: str, x: np.ndarray) -> np.ndarray:
        if self._single is not None:
            if x.shape[-1] != self.dim:
                raise ShapeMismatch(f"expected last dimension {self.dim}, got {x.shape[-1]}")
            return getattr(self._single, name)(x)
        parts = [getattr(c, name)(p) for c, p in zip(self.components, self._split(x))]
        return np.concatenate(parts, axis=-1)

    # domain -----------------------------------------------------------------
    def in_domain(self, x) -> np.ndarray:
        x = _as_points(x)
        if self._single is not None:
            if x.shape[-1] != self.dim:
                raise ShapeMismatch(f"expected last dimension {self.dim}, got {x.shape[-1]}")
            return self._single.in_domain(x)
        masks = [c.in_domain(p) for c, p in zip(self.components, self._split(x))]
        return np.logical_and.reduce(masks)

    def check_domain(self, x) -> None:
        """Raise :class:`DomainViolation` unless every point is interior."""
        if not np.all(self.in_domain(x)):
            raise DomainViolation(f"point outside the open domain of {self!r}")

    # values and maps -------------------------------------------------------
    def value(self, x, check: bool = True) -> np.ndarray:
        x = _as_points(x)
        if check:
            self.check_domain(x)
        if self._single is not None:
            return self._single.value(x)
        return sum(c.value(p) for c, p in zip(self.components, self._split(x)))

    def mirror_map(self, x, check: bool = True) -> np.ndarray:
        x = _as_points(x)
        if check:
            self.check_domain(x)
        return self._map("grad", x)

    def inverse_mirror_map(self, y) -> np.ndarray:
        return self._map("grad_conj", _as_points(y))

    def clamp_count(self, y) -> int:
        y = _as_points(y)
        return sum(c.clamp_count(p) for c, p in zip(self.components, self._split(y)))

    def bregman(self, x, y, check: bool = True) -> np.ndarray:
        """Bregman divergence ``D(x, y) = h(x) - h(y) - <grad h(y), x - y>``."""
        x, y = _as_points(x), _as_points(y)
        if check:
            self.check_domain(x)
            self.check_domain(y)
        if self._single is not None:
            if x.shape[-1] != self.dim:
                raise ShapeMismatch(f"expected last dimension {self.dim}, got {x.shape[-1]}")
            return self._single.bregman(x, y)
        return sum(
            c.bregman(p, q) for c, p, q in zip(self.components, self._split(x), self._split(y))
        )

    def dual_distance(self, x, y, check: bool = True) -> np.ndarray:
        x, y = _as_points(x), _as_points(y)
        return np.linalg.norm(self.mirror_map(x, check) - self.mirror_map(y, check), axis=-1)

    def block_norms(self, v) -> np.ndarray:
        """Euclidean norm of ``v`` restricted to each block, shape ``(..., m)``."""
        v = _as_points(v)
        return np.sqrt(np.add.reduceat(v * v, self._starts, axis=-1))

    def block_dual_distance(self, x, y, check: bool = True) -> np.ndarray:
        return self.block_norms(self.mirror_map(x, check) - self.mirror_map(y, check))

    # curvature -------------------------------------------------------------
    def hessian(self, x) -> np.ndarray:
        x = _as_points(x)
        out = np.zeros(x.shape + (self.dim,))
        o = self._offsets
        for c, (comp, part) in enumerate(zip(self.components, self._split(x))):
            out[..., o[c] : o[c + 1], o[c] : o[c + 1]] = comp.hessian(part)
        return out

    def eig_bounds(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = _as_points(x)
        if self._single is not None:
            return self._single.eig_bounds(x)
        los, his = zip(*(c.eig_bounds(p) for c, p in zip(self.components, self._split(x))))
        return np.concatenate(los, axis=-1), np.concatenate(his, axis=-1)

    def hessian_bounds(self, region) -> HessianBounds:
        """Per-block ``(mu_j, L_j)`` over a point cloud or :class:`RegionEstimate`."""
        points = region.points if isinstance(region, RegionEstimate) else _as_points(region)
        points = np.atleast_2d(points)
        if points.shape[0] == 0:
            raise EmptyRegion("hessian bounds need at least one point")
        lo, hi = self.eig_bounds(points)
        return HessianBounds(mu=lo.min(axis=0), L=hi.max(axis=0))

    def dkc_bound(self, delta) -> np.ndarray:
        """Analytic bound on each block's condition number over dual diameter ``delta``.

        ``delta`` is a scalar or one radius per block.
        """
        delta = np.broadcast_to(np.asarray(delta, dtype=float), (self.n_blocks,))
        if not np.all(delta > 0):
            raise ValueError(f"delta must be positive, got {delta}")
        out, j = [], 0
        for c in self.components:
            m = c.n_blocks
            out.append(np.asarray(c.dkc(delta[j : j + m] if m > 1 else delta[j]), dtype=float).reshape(m))
            j += m
        return np.concatenate(out)

    def kappa_delta(self, delta: float) -> float:
        return float(np.max(self.dkc_bound(delta)))

    def sample_interior(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.concatenate([c.sample(rng, size) for c in self.components], axis=-1)

    # serialisation ---------------------------------------------------------
    def to_record(self) -> dict:
        return {
            "kind": "kernel",
            "components": [c.to_record() for c in self.components],
            "partition": [list(p) for p in self.partition],
        }

    @classmethod
    def from_record(cls, record: dict) -> Kernel:
        from .compose import component_from_record

        if record.get("kind") != "kernel":
            return cls([component_from_record(record)])
        return cls([component_from_record(r) for r in record["components"]])


@dataclass
class RegionEstimate:
    """A finite cloud of interior points standing in for a region.

    Attributes
    ----------
    kernel : Kernel
        Kernel whose geometry is used.
    points : ndarray of shape (N, d)
        Interior points.
    """

    kernel: Kernel
    points: np.ndarray
    _bounds: HessianBounds | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.points = np.atleast_2d(_as_points(self.points))
        if self.points.shape[0] == 0:
            raise EmptyRegion("a region needs at least one point")

    @property
    def bounds(self) -> HessianBounds:
        if self._bounds is None:
            self._bounds = self.kernel.hessian_bounds(self.points)
        return self._bounds

    @property
    def mu(self) -> np.ndarray:
        return self.bounds.mu

    @property
    def L(self) -> np.ndarray:
        return self.bounds.L

    @property
    def kappa(self) -> np.ndarray:
        return self.bounds.kappa

    @cached_property
    def dual_diameter(self) -> np.ndarray:
        """Maximum pairwise dual distance within each block."""
        from scipy.spatial.distance import pdist

        duals = self.kernel.mirror_map(self.points)
        if duals.shape[0] < 2:
            return np.zeros(self.kernel.n_blocks)
        return np.array(
            [
                np.ptp(duals[:, s]) if n == 1 else pdist(duals[:, s : s + n]).max()
                for s, n in self.kernel.partition
            ]
        )


# factories -----------------------------------------------------------------
def shannon(d: int) -> Kernel:
    return Kernel([BoltzmannShannon(d)])


def burg(d: int, sigma: float = 1.0) -> Kernel:
    return Kernel([RegularizedBurg(d, sigma)])


def log_barrier(d: int) -> Kernel:
    return Kernel([LogBarrier(d)])


def fermi_dirac(d: int) -> Kernel:
    return Kernel([FermiDirac(d)])


def power(d: int, r: float = 2.0) -> Kernel:
    return Kernel([Power(d, r)])


def quadratic(d: int) -> Kernel:
    return Kernel([Quadratic(d)])


def stack(*kernels: Kernel) -> Kernel:
    """Concatenate kernels acting on consecutive coordinate ranges."""
    comps = []
    for k in kernels:
        comps.extend(k.components)
    return Kernel(comps)


# free-function aliases -----------------------------------------------------
def kernel_value(k: Kernel, x) -> np.ndarray:
    return k.value(x)


def mirror_map(k: Kernel, x) -> np.ndarray:
    return k.mirror_map(x)


def inverse_mirror_map(k: Kernel, y) -> np.ndarray:
    return k.inverse_mirror_map(y)


def bregman_div(k: Kernel, x, y) -> np.ndarray:
    return k.bregman(x, y)


def dual_distance(k: Kernel, x, y) -> np.ndarray:
    return k.dual_distance(x, y)


def hessian_bounds(k: Kernel, region) -> HessianBounds:
    return k.hessian_bounds(region)


def dkc_bound(k: Kernel, delta: float) -> np.ndarray:
    return k.dkc_bound(delta)
