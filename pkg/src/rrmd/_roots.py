"""Safeguarded Newton solvers for strictly increasing scalar maps."""

from __future__ import annotations

import math

import numpy as np

from .exceptions import RootFindFailure


def power_radius(s: float, r: float, tol: float = 1e-13, maxiter: int = 100) -> float:
    """Solve ``t * (t**r + 1) = s`` for ``t >= 0``.

    Newton starts at ``min(s, s**(1/(r+1)))``, which always lies at or above
    the root; the map is convex and increasing on ``t >= 0`` so the iterates
    decrease monotonically. A bisection step on ``[0, max(1, s)]`` replaces
    any step that leaves the bracket.
    """
    if s < 0 or not math.isfinite(s):
        raise RootFindFailure(f"radius equation needs a finite s >= 0, got {s}")
    if s == 0.0:
        return 0.0
    if r == 0.0:
        return 0.5 * s
    lo, hi = 0.0, max(1.0, s)
    t = min(s, s ** (1.0 / (r + 1.0)))
    for _ in range(maxiter):
        tr = t**r
        res = t * (tr + 1.0) - s
        if res > 0:
            hi = min(hi, t)
        elif res < 0:
            lo = max(lo, t)
        else:
            return t
        t_new = t - res / ((r + 1.0) * tr + 1.0)
        if not (lo <= t_new <= hi):
            t_new = 0.5 * (lo + hi)
        if abs(t_new - t) <= tol * t_new:
            return t_new
        t = t_new
    raise RootFindFailure(f"radius equation did not converge for s={s}, r={r}")


def power_radius_array(s: np.ndarray, r: float, tol: float = 1e-13, maxiter: int = 100) -> np.ndarray:
    """Vectorised :func:`power_radius` over an array of right-hand sides."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise RootFindFailure("radius equation needs finite s >= 0")
    if r == 0.0:
        return 0.5 * s
    out = np.zeros_like(s)
    pos = s > 0
    if not np.any(pos):
        return out
    sp = s[pos]
    lo = np.zeros_like(sp)
    hi = np.maximum(1.0, sp)
    t = np.minimum(sp, sp ** (1.0 / (r + 1.0)))
    active = np.ones(sp.shape, dtype=bool)
    for _ in range(maxiter):
        tr = t**r
        res = t * (tr + 1.0) - sp
        hi = np.where(res > 0, np.minimum(hi, t), hi)
        lo = np.where(res < 0, np.maximum(lo, t), lo)
        t_new = t - res / ((r + 1.0) * tr + 1.0)
        bad = ~((t_new >= lo) & (t_new <= hi))
        t_new = np.where(bad, 0.5 * (lo + hi), t_new)
        done = (np.abs(t_new - t) <= tol * t_new) | (res == 0)
        t = np.where(active, t_new, t)
        active &= ~done
        if not np.any(active):
            out[pos] = t
            return out
    raise RootFindFailure(f"radius equation did not converge for {int(active.sum())} entries")


def increasing_root(
    fun,
    dfun,
    target: np.ndarray,
    x0: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    tol: float = 1e-12,
    maxiter: int = 200,
) -> np.ndarray:
    """Solve ``fun(x) = target`` elementwise for an increasing ``fun``.

    Parameters
    ----------
    fun, dfun : callable
        Elementwise map and its (positive) derivative.
    target : ndarray
        Right-hand sides.
    x0 : ndarray
        Starting points strictly inside ``(lower, upper)``.
    lower, upper : ndarray
        Open domain bounds per entry; may be infinite.
    tol : float
        Relative tolerance on the Newton step.
    maxiter : int
        Iteration budget.

    Notes
    -----
    A bracket ``(a, b)`` around the root is tightened from the sign of the
    residual at every iterate. Newton steps that leave the bracket are
    replaced by bisection when both ends are finite, and by geometric
    expansion when one end is still at an infinite domain bound.
    """
    target = np.asarray(target, dtype=float)
    x = np.array(np.broadcast_to(x0, target.shape), dtype=float)
    a = np.array(np.broadcast_to(lower, target.shape), dtype=float)
    b = np.array(np.broadcast_to(upper, target.shape), dtype=float)
    active = np.ones(target.shape, dtype=bool)
    for _ in range(maxiter):
        res = fun(x) - target
        a = np.where(res < 0, x, a)
        b = np.where(res > 0, x, b)
        slope = dfun(x)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            x_new = x - res / slope
        ok = np.isfinite(x_new) & (x_new > a) & (x_new < b)
        both = np.isfinite(a) & np.isfinite(b)
        scale = np.maximum(1.0, np.abs(x))
        fallback = np.where(
            both,
            0.5 * (a + b),
            np.where(np.isfinite(a), a + 2.0 * scale, b - 2.0 * scale),
        )
        x_new = np.where(ok, x_new, fallback)
        step = np.abs(x_new - x)
        done = (res == 0) | (step <= tol * np.maximum(np.abs(x_new), 1e-300))
        done |= both & ((b - a) <= tol * np.maximum(np.abs(x_new), 1e-300))
        x = np.where(active, x_new, x)
        active &= ~done
        if not np.any(active):
            return x
    raise RootFindFailure(f"monotone solve did not converge for {int(active.sum())} entries")
