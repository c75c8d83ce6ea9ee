"""Probability-evaluation backends.

``Exact`` enumerates every noise outcome of a finite-alphabet model and sums
exact weights. ``MonteCarlo`` averages over seeded counter-based samples and
reports normal-approximation confidence intervals.

Both backends reduce a *kernel*: a function mapping a
:class:`~bonfield.fields.FieldBatch` to an ``(N, K)`` array of per-outcome
values. One pass evaluates all ``K`` columns on the same outcomes, and every
column is reduced independently as a contiguous 1-d array, so a column's
result does not depend on which other columns share the pass.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from statistics import NormalDist
from typing import Callable, Sequence

import numpy as np

from .fields import BLOCK_SIZE, DEFAULT_CAP, FieldBatch, FieldModel, InsufficientSupport, StateSpaceTooLarge
from .lattice import SiteSet

Event = Callable[[FieldBatch], np.ndarray]
Kernel = Callable[[FieldBatch], np.ndarray]


@dataclass(frozen=True)
class Estimate:
    """A point estimate with a symmetric confidence half-width."""

    point: float
    half_width: float = 0.0
    n: int = 0

    @property
    def lo(self) -> float:
        return self.point - self.half_width

    @property
    def hi(self) -> float:
        return self.point + self.half_width

    def scale(self, c: float) -> "Estimate":
        return Estimate(c * self.point, abs(c) * self.half_width, self.n)

    def __add__(self, other: "Estimate") -> "Estimate":
        return Estimate(self.point + other.point, self.half_width + other.half_width, max(self.n, other.n))


@dataclass(frozen=True)
class ProbEstimate(Estimate):
    """An estimated probability; the reported interval is clipped to [0, 1]."""

    @property
    def lo(self) -> float:
        return max(0.0, self.point - self.half_width)

    @property
    def hi(self) -> float:
        return min(1.0, self.point + self.half_width)


def _column_sums(x: np.ndarray, w: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    xf = np.asfortranarray(x, dtype=np.float64)
    k = xf.shape[1]
    s = np.empty(k)
    s2 = np.empty(k)
    for j in range(k):
        col = xf[:, j]
        if w is None:
            s[j] = col.sum()
            s2[j] = (col * col).sum()
        else:
            s[j] = (w * col).sum()
            s2[j] = 0.0
    return s, s2


class Estimator:
    """Common interface: ``prob``, ``joint_prob``, ``expect`` over one window."""

    model: FieldModel
    window: SiteSet
    exact: bool = False

    def moments(self, kernel: Kernel, k: int) -> tuple[np.ndarray, np.ndarray, int]:
        raise NotImplementedError

    def require(self, sites: SiteSet):
        missing = frozenset(sites) - self.window
        if missing:
            raise InsufficientSupport(
                f"insufficient support: estimator window misses {sorted(missing)[:3]}"
            )

    def describe(self) -> dict:
        raise NotImplementedError

    # ------------------------------------------------------------------

    def _finish(self, s, s2, n, indicator: Sequence[bool], scales: Sequence[float]) -> list[Estimate]:
        raise NotImplementedError

    def evaluate(self, kernel: Kernel, k: int, indicator: Sequence[bool] | None = None,
                 scales: Sequence[float] | None = None) -> list[Estimate]:
        """Reduce a ``k``-column kernel to one estimate per column.

        ``indicator[j]`` marks 0/1 columns (reported as :class:`ProbEstimate`).
        ``scales[j]`` bounds ``|column j|``; it sets the rule-of-three floor
        when a Monte Carlo column shows no variation.
        """
        indicator = list(indicator) if indicator is not None else [False] * k
        scales = list(scales) if scales is not None else [1.0 if f else 0.0 for f in indicator]
        s, s2, n = self.moments(kernel, k)
        return self._finish(s, s2, n, indicator, scales)

    def joint_prob(self, events: Sequence[Event]) -> list[ProbEstimate]:
        events = list(events)

        def kernel(batch):
            return np.stack([np.asarray(e(batch), dtype=bool) for e in events], axis=1)

        return self.evaluate(kernel, len(events), [True] * len(events))

    def prob(self, event: Event) -> ProbEstimate:
        return self.joint_prob([event])[0]

    def expect(self, statistics: Sequence[Callable[[FieldBatch], np.ndarray]],
               scales: Sequence[float] | None = None) -> list[Estimate]:
        statistics = list(statistics)

        def kernel(batch):
            return np.stack([np.asarray(f(batch), dtype=np.float64) for f in statistics], axis=1)

        return self.evaluate(kernel, len(statistics), [False] * len(statistics), scales)


class Exact(Estimator):
    """Exhaustive enumeration; every half-width is zero."""

    exact = True

    def __init__(self, model: FieldModel, window: SiteSet, cap: int = DEFAULT_CAP):
        self.model = model
        self.window = frozenset(window)
        self.cap = cap
        self.n_outcomes = model.state_count(self.window)
        if self.n_outcomes > cap:
            raise StateSpaceTooLarge(
                f"state space too large: {self.n_outcomes} outcomes exceeds cap {cap}"
            )

    def moments(self, kernel, k):
        total = np.zeros(k)
        for w, batch in self.model.enumerate_batches(self.window, self.cap):
            s, _ = _column_sums(kernel(batch), w)
            total = total + s
        return total, np.zeros(k), self.n_outcomes

    def _finish(self, s, s2, n, indicator, scales):
        return [
            (ProbEstimate if ind else Estimate)(float(s[j]), 0.0, n)
            for j, ind in enumerate(indicator)
        ]

    def outcome_batches(self):
        return self.model.enumerate_batches(self.window, self.cap)

    def describe(self):
        return {"backend": "exact", "outcomes": self.n_outcomes}


class MonteCarlo(Estimator):
    """Seeded Monte Carlo over counter blocks, optionally threaded.

    Per-block partial sums are combined in block order, so results are
    identical for any ``workers``.
    """

    def __init__(self, model: FieldModel, window: SiteSet, n_samples: int, seed: int = 0,
                 confidence: float = 0.99, workers: int = 1):
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not 0.0 < confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")
        self.model = model
        self.window = frozenset(window)
        self.n_samples = int(n_samples)
        self.seed = int(seed)
        self.confidence = confidence
        self.workers = max(1, int(workers))
        self.z = NormalDist().inv_cdf(0.5 + confidence / 2.0)

    def block_batches(self):
        """``(start, batch)`` for each used block, in order."""
        nblocks = -(-self.n_samples // BLOCK_SIZE)
        for b in range(nblocks):
            yield b * BLOCK_SIZE, self._block(b)

    def _block(self, b: int) -> FieldBatch:
        batch = self.model.sample_block(self.window, self.seed, b)
        used = min(BLOCK_SIZE, self.n_samples - b * BLOCK_SIZE)
        if used < BLOCK_SIZE:
            batch = FieldBatch(batch.sites, batch.values[:used])
        return batch

    def moments(self, kernel, k):
        nblocks = -(-self.n_samples // BLOCK_SIZE)

        def run(b):
            return _column_sums(kernel(self._block(b)))

        if self.workers == 1:
            parts = [run(b) for b in range(nblocks)]
        else:
            with ThreadPoolExecutor(self.workers) as pool:
                parts = list(pool.map(run, range(nblocks)))
        s = np.zeros(k)
        s2 = np.zeros(k)
        for a, b in parts:
            s = s + a
            s2 = s2 + b
        return s, s2, self.n_samples

    def half_width(self, s: float, s2: float, n: int, scale: float) -> float:
        mean = s / n
        var = max(s2 / n - mean * mean, 0.0)
        if n > 1:
            var *= n / (n - 1)
        hw = self.z * math.sqrt(var / n)
        if var == 0.0:
            hw = max(hw, 3.0 * scale / n)
        return hw

    def _finish(self, s, s2, n, indicator, scales):
        out = []
        for j, ind in enumerate(indicator):
            hw = self.half_width(float(s[j]), float(s2[j]), n, scales[j])
            out.append((ProbEstimate if ind else Estimate)(float(s[j]) / n, hw, n))
        return out

    def describe(self):
        return {
            "backend": "mc",
            "n_samples": self.n_samples,
            "seed": self.seed,
            "confidence": self.confidence,
        }


def estimator_from_spec(spec: dict, model: FieldModel, window: SiteSet, workers: int = 1) -> Estimator:
    """Build a backend from ``{"backend": "exact"|"mc", ...}``."""
    backend = spec.get("backend", "exact")
    if backend == "exact":
        return Exact(model, window, int(spec.get("cap", DEFAULT_CAP)))
    if backend == "mc":
        return MonteCarlo(
            model,
            window,
            int(spec.get("n_samples", 100_000)),
            int(spec.get("seed", 0)),
            float(spec.get("confidence", 0.99)),
            workers,
        )
    raise ValueError(f"estimator.backend: unknown backend {backend!r}")
