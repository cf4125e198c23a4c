"""Epoch orderings and the sampling-without-replacement variance formula."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .exceptions import BadT

#: Stream tags mixed into the seed. Each consumer of randomness gets its own
#: stream so that, for example, the epoch budget never perturbs the dataset.
STREAM_TAGS = {
    "data": 1,
    "permutation": 2,
    "tiebreak": 3,
    "select": 4,
    "init": 5,
    "diagnostics": 6,
}

SCHEME_ALIASES = {
    "reshuffle": "reshuffle",
    "uniform_reshuffle": "reshuffle",
    "rr": "reshuffle",
    "shuffle_once": "shuffle_once",
    "so": "shuffle_once",
    "fixed": "fixed",
    "fixed_order": "fixed",
    "with_replacement": "with_replacement",
    "sgd": "with_replacement",
}


def stream(seed: int, tag: str, *extra: int) -> np.random.Generator:
    """Counter-based Philox generator for ``(seed, tag, *extra)``.

    Philox4x64 is keyed through :class:`numpy.random.SeedSequence`, which
    makes the output identical on every platform for a given key.
    """
    key = np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAM_TAGS[tag], *map(int, extra)))
    return np.random.Generator(np.random.Philox(key))


def canonical_scheme(kind: str) -> str:
    try:
        return SCHEME_ALIASES[kind.lower()]
    except KeyError:
        raise ValueError(f"unknown sampling scheme {kind!r}") from None


@dataclass
class SamplingScheme:
    """Source of per-epoch index orders.

    Parameters
    ----------
    kind : {"reshuffle", "shuffle_once", "fixed", "with_replacement"}
        ``reshuffle`` draws a fresh uniform permutation every epoch,
        ``shuffle_once`` reuses the first one, ``fixed`` uses the identity
        and ``with_replacement`` draws ``n`` i.i.d. uniform indices.
    seed : int
        Master seed; the permutation stream is derived from it.
    """

    kind: str = "reshuffle"
    seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)
    _fixed: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        self.kind = canonical_scheme(self.kind)
        self._rng = stream(self.seed, "permutation")

    @property
    def without_replacement(self) -> bool:
        return self.kind != "with_replacement"

    def next_epoch_order(self, n: int, epoch_index: int | None = None) -> np.ndarray:
        """Indices (0-based) visited during the next epoch."""
        if n < 1:
            raise ValueError("n must be at least 1")
        if self.kind == "fixed":
            return np.arange(n)
        if self.kind == "shuffle_once":
            if n not in self._fixed:
                self._fixed[n] = self._rng.permutation(n)
            return self._fixed[n].copy()
        if self.kind == "reshuffle":
            return self._rng.permutation(n)
        return self._rng.integers(0, n, size=n)


def next_epoch_order(scheme: SamplingScheme, n: int, epoch_index: int | None = None) -> np.ndarray:
    return scheme.next_epoch_order(n, epoch_index)


def _as_samples(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def _population_variance(X: np.ndarray) -> tuple[np.ndarray, float]:
    mean = X.mean(axis=0)
    return mean, float(np.mean(np.sum((X - mean) ** 2, axis=1)))


def without_replacement_moments(X, t: int) -> tuple[np.ndarray, float]:
    """Mean and expected squared deviation of a size-``t`` subsample mean.

    Returns ``X_bar`` and ``(n - t) / (t (n - 1)) * sigma**2`` with
    ``sigma**2 = (1/n) sum ||X_i - X_bar||**2``.
    """
    X = _as_samples(X)
    n = X.shape[0]
    if not 1 <= t <= n:
        raise BadT(f"need 1 <= t <= n, got t={t}, n={n}")
    mean, var = _population_variance(X)
    if t == n:
        return mean, 0.0
    return mean, (n - t) / (t * (n - 1)) * var


def exact_without_replacement(X, t: int) -> float:
    """Average of ``||mean(X_S) - X_bar||**2`` over all size-``t`` subsets."""
    X = _as_samples(X)
    n = X.shape[0]
    if not 1 <= t <= n:
        raise BadT(f"need 1 <= t <= n, got t={t}, n={n}")
    mean = X.mean(axis=0)
    subsets = np.array(list(itertools.combinations(range(n), t)))
    devs = X[subsets].mean(axis=1) - mean
    return float(np.mean(np.sum(devs * devs, axis=1)))


def monte_carlo_without_replacement(
    X, t: int, draws: int, rng: np.random.Generator, chunk: int = 10_000
) -> tuple[float, float]:
    """Monte Carlo estimate and standard error of the subsample deviation."""
    X = _as_samples(X)
    n = X.shape[0]
    if not 1 <= t <= n:
        raise BadT(f"need 1 <= t <= n, got t={t}, n={n}")
    mean = X.mean(axis=0)
    vals = []
    remaining = draws
    while remaining > 0:
        m = min(chunk, remaining)
        idx = np.argsort(rng.random((m, n)), axis=1)[:, :t]
        devs = X[idx].mean(axis=1) - mean
        vals.append(np.sum(devs * devs, axis=1))
        remaining -= m
    vals = np.concatenate(vals)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(draws))
