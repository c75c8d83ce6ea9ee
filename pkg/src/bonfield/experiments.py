"""Desk-scale experiments: compound-Poisson counts and heavy-tailed sums.

The compound-Poisson Monte Carlo path never materialises the length-``n``
field. Ones of the iid Bernoulli(p) base sequence are generated as running
sums of Geometric(p) gaps, pattern hits ``A_j = {Y_j = Y_{j+1} = 1}`` are read
off gaps equal to 1, and a compiled kernel turns the hit positions of each
sample into the statistics the bound needs.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist

import numba
import numpy as np

from . import lattice
from .bounds import HOLDS, HOLDS_CI, VIOLATED, EXACT_TOL, stationary_d1
from .estimate import Estimate, Exact, MonteCarlo, ProbEstimate
from .events import PointSet
from .fields import BLOCK_SIZE, Bernoulli, MovingField, Pareto


def pattern_model(p: float) -> MovingField:
    """1-dependent 0-1 field ``1{Y_i = 1, Y_{i+1} = 1}`` over iid Bernoulli(p)."""
    return MovingField(Bernoulli(p), [(0,), (1,)], "all_ones")


# --------------------------------------------------------------------------
# compound Poisson


@dataclass
class CountRow:
    k: int
    target: Estimate
    approx: Estimate
    error: float
    error_lo: float
    bound: Estimate
    verdict: str

    def csv_fields(self) -> list:
        return [
            self.k, repr(self.target.point), repr(self.target.half_width),
            repr(self.approx.point), repr(self.approx.half_width),
            repr(self.error), repr(self.error_lo),
            repr(self.bound.point), repr(self.bound.half_width), self.verdict,
        ]


CP_COLUMNS = [
    "rate", "n", "m", "p", "k", "target", "target_hw", "approx", "approx_hw",
    "error", "error_lo", "bound", "bound_hw", "verdict",
]


@dataclass
class CompoundPoissonReport:
    rate: float
    n: int
    m: int
    p: float
    backend: dict
    rows: list[CountRow] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.verdict != VIOLATED for r in self.rows)

    def csv_rows(self) -> list[list]:
        head = [repr(self.rate), self.n, self.m, repr(self.p)]
        return [head + r.csv_fields() for r in self.rows]

    def to_dict(self) -> dict:
        return {
            "rate": self.rate, "n": self.n, "m": self.m, "p": self.p,
            "backend": self.backend,
            "rows": [dict(zip(CP_COLUMNS[4:], r.csv_fields())) for r in self.rows],
        }


@numba.njit(nogil=True, cache=False)
def _pattern_stats(pos, L, n, m, k_max, tgt, sdelta, cnt, far):
    """Per-row statistics from sorted positions of ones (values > L ignored).

    tgt[r, k-1]    = 1{#hits in 1..n == k}
    sdelta[r, k-1] = sum_{t=1..n} 1{#hits in [t, t+m] == k} - 1{#hits in [t+1, t+m] == k}
    cnt[r]         = #hits in 1..n
    far[r]         = #{unordered hit pairs i < j <= n with j - i > m}
    """
    rows, width = pos.shape
    hits = np.empty(width, dtype=np.int64)
    for r in range(rows):
        h = 0
        for i in range(width - 1):
            nxt = pos[r, i + 1]
            if nxt > L:
                break
            if nxt == pos[r, i] + 1:
                hits[h] = pos[r, i]
                h += 1
        c = 0
        near = 0
        for i in range(h):
            if hits[i] <= n:
                c += 1
                j = i + 1
                while j < h and hits[j] <= n and hits[j] - hits[i] <= m:
                    near += 1
                    j += 1
        cnt[r] = c
        far[r] = c * (c - 1) // 2 - near
        for k in range(1, k_max + 1):
            tgt[r, k - 1] = 1 if c == k else 0
        last = 0
        for i in range(h):
            lo = hits[i] - m
            if lo < 1:
                lo = 1
            if lo <= last:
                lo = last + 1
            hi = hits[i]
            if hi > n:
                hi = n
            for t in range(lo, hi + 1):
                full = 0
                inner = 0
                for q in range(h):
                    v = hits[q]
                    if t <= v <= t + m:
                        full += 1
                        if v >= t + 1:
                            inner += 1
                for k in range(1, k_max + 1):
                    sdelta[r, k - 1] += (1 if full == k else 0) - (1 if inner == k else 0)
            if hi > last:
                last = hi


def _hit_positions(gen: np.random.Generator, p: float, rows: int, L: int) -> np.ndarray:
    """Sorted positions of ones of a Bernoulli(p) sequence, padded past ``L``."""
    mean = p * L
    width = int(math.ceil(mean + 6.0 * math.sqrt(mean) + 10))
    pos = np.cumsum(gen.geometric(p, size=(rows, width)), axis=1)
    while np.any(pos[:, -1] <= L):
        more = gen.geometric(p, size=(rows, width))
        pos = np.concatenate([pos, pos[:, -1:] + np.cumsum(more, axis=1)], axis=1)
    return pos


def _cp_block(seed: int, block: int, rows: int, p: float, n: int, m: int, k_max: int):
    tgt = np.zeros((rows, k_max), dtype=np.int64)
    sdelta = np.zeros((rows, k_max), dtype=np.int64)
    cnt = np.zeros(rows, dtype=np.int64)
    far = np.zeros(rows, dtype=np.int64)
    if p > 0:
        gen = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, block, 0]))
        pos = _hit_positions(gen, p, BLOCK_SIZE, n + m + 1)[:rows]
        _pattern_stats(np.ascontiguousarray(pos), n + m + 1, n, m, k_max, tgt, sdelta, cnt, far)
    cols = np.concatenate([tgt, sdelta, cnt[:, None], far[:, None]], axis=1).astype(np.float64)
    return cols.sum(axis=0), (cols * cols).sum(axis=0)


def _mc_half_width(s, s2, n, z, scale):
    mean = s / n
    var = max(s2 / n - mean * mean, 0.0) * (n / (n - 1) if n > 1 else 1.0)
    hw = z * math.sqrt(var / n)
    if var == 0.0:
        hw = max(hw, 3.0 * scale / n)
    return hw


def pattern_count_mc(rate: float, n: int, m: int, k_max: int, n_samples: int, seed: int = 0,
                     confidence: float = 0.99, workers: int = 1) -> dict:
    """Monte Carlo moments of the pattern-count statistics.

    Returns estimates of ``P(S_n = k)``, ``sum_t Delta_t`` for ``U = {k}``
    (unbiased for ``n (P(S_{m+1} = k) - P(S_m = k))`` by stationarity),
    ``P(A_1)`` and the unordered far-pair sum, all from the same samples.
    """
    p = math.sqrt(rate / n)
    if p == 0.0:
        zero = Estimate(0.0, 0.0, n_samples)
        zp = ProbEstimate(0.0, 0.0, n_samples)
        return {"p": p, "target": [zp] * k_max, "approx": [zero] * k_max, "p_a1": zero, "far": zero}
    nblocks = -(-n_samples // BLOCK_SIZE)

    def run(b):
        rows = min(BLOCK_SIZE, n_samples - b * BLOCK_SIZE)
        return _cp_block(seed, b, rows, p, n, m, k_max)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, range(nblocks)))
    else:
        parts = [run(b) for b in range(nblocks)]
    s = np.zeros(2 * k_max + 2)
    s2 = np.zeros(2 * k_max + 2)
    for a, b in parts:
        s = s + a
        s2 = s2 + b
    z = NormalDist().inv_cdf(0.5 + confidence / 2.0)
    N = n_samples

    def est(j, scale, cls=Estimate):
        return cls(float(s[j]) / N, _mc_half_width(float(s[j]), float(s2[j]), N, z, scale), N)

    npairs = n * (n - 1) / 2
    return {
        "p": p,
        "target": [est(j, 1.0, ProbEstimate) for j in range(k_max)],
        "approx": [est(k_max + j, 2.0 * n) for j in range(k_max)],
        "p_a1": est(2 * k_max, float(n)).scale(1.0 / n),
        "far": est(2 * k_max + 1, npairs),
    }


def compound_poisson(rate: float, n: int, m: int = 1, k_max: int = 3, backend: str = "exact",
                     n_samples: int = 100_000, seed: int = 0, confidence: float = 0.99,
                     workers: int = 1) -> CompoundPoissonReport:
    """Error of the block approximation for counts of the pattern ``Y_i = Y_{i+1} = 1``.

    ``Y`` is iid Bernoulli(p) with ``p = sqrt(rate / n)`` so that the expected
    number of hits in ``1..n`` is about ``rate``. For each ``k`` the report
    compares ``P(S_n = k)`` with ``n (P(S_{m+1} = k) - P(S_m = k))`` against
    ``2 m P(A_1) + 2 sum_{i<j, j-i>m} P(A_i & A_j)``.
    """
    if rate < 0 or n < 1 or m < 0 or m > n or k_max < 1:
        raise ValueError("need rate >= 0, n >= 1, 0 <= m <= n, k_max >= 1")
    p = math.sqrt(rate / n)
    if backend == "exact":
        model = pattern_model(p)
        est = Exact(model, lattice.line(n + m, 1))
        rep = CompoundPoissonReport(rate, n, m, p, est.describe())
        for k in range(1, k_max + 1):
            res = stationary_d1(PointSet([k]), est, n, m)
            verdict = HOLDS if res.lhs.point <= res.rhs.point + EXACT_TOL else VIOLATED
            rep.rows.append(CountRow(k, res.target, res.approx, res.lhs.point, res.lhs.point, res.rhs, verdict))
        return rep
    if backend != "mc":
        raise ValueError(f"unknown backend {backend!r}")
    mc = pattern_count_mc(rate, n, m, k_max, n_samples, seed, confidence, workers)
    desc = {"backend": "mc", "n_samples": n_samples, "seed": seed, "confidence": confidence}
    rep = CompoundPoissonReport(rate, n, m, p, desc)
    bound = mc["p_a1"].scale(2 * m) + mc["far"].scale(2.0)
    for k in range(1, k_max + 1):
        tgt, apx = mc["target"][k - 1], mc["approx"][k - 1]
        err = abs(tgt.point - apx.point)
        err_lo = max(0.0, err - tgt.half_width - apx.half_width)
        verdict = HOLDS_CI if err_lo <= bound.hi else VIOLATED
        rep.rows.append(CountRow(k, tgt, apx, err, err_lo, bound, verdict))
    return rep


# --------------------------------------------------------------------------
# heavy-tailed sums


def _check_alpha(alpha: float):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1) (centering-free regime), got {alpha}")


def moving_pareto(alpha: float, offsets) -> MovingField:
    return MovingField(Pareto(alpha), offsets, "sum")


LD_COLUMNS = ["alpha", "n", "m", "x", "u", "u_hw", "v", "v_hw", "abs_diff", "combined_hw", "agree"]


@dataclass
class LargeDevReport:
    alpha: float
    n: int
    m: int
    offsets: list
    backend: dict
    rows: list[dict] = field(default_factory=list)

    def csv_rows(self) -> list[list]:
        return [[repr(self.alpha), self.n, self.m] + [r[c] if isinstance(r[c], bool) else repr(r[c]) for c in LD_COLUMNS[3:]]
                for r in self.rows]

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "n": self.n, "m": self.m, "offsets": self.offsets,
                "backend": self.backend, "rows": self.rows}


def large_deviation(alpha: float, n: int, m: int, x_list, n_samples: int, seed: int = 0,
                    confidence: float = 0.99, workers: int = 1, offsets=None) -> LargeDevReport:
    """Compare ``u(x) = x^a P(S_n / B_n > x)`` with its block reduction.

    ``X_i`` is the sum of iid Pareto(a) noise over ``offsets`` (default
    ``0..m``), ``B_n = n^(1/a)`` and
    ``v(x) = x^a n (P(X_1 + .. + X_{m+1} > x B_n) - P(X_1 + .. + X_m > x B_n))``.
    Both are estimated from the same samples.
    """
    _check_alpha(alpha)
    if m < 0 or m >= n:
        raise ValueError("need 0 <= m < n")
    offsets = [(o,) for o in range(m + 1)] if offsets is None else [tuple(o) for o in offsets]
    model = moving_pareto(alpha, offsets)
    est = MonteCarlo(model, lattice.line(n, 1), n_samples, seed, confidence, workers)
    bn = n ** (1.0 / alpha)
    xs = [float(x) for x in x_list]

    def kernel(batch):
        vals = batch.values
        total = vals.sum(axis=1)
        head = np.cumsum(vals[:, : m + 1], axis=1)
        cols = []
        for x in xs:
            c = x * bn
            upper = head[:, m] > c
            lower = head[:, m - 1] > c if m > 0 else np.zeros(len(batch), dtype=bool)
            cols.append(total > c)
            cols.append(upper.astype(np.float64) - lower)
        return np.stack(cols, axis=1).astype(np.float64)

    k = 2 * len(xs)
    ests = est.evaluate(kernel, k, [True, False] * len(xs), [1.0] * k)
    rep = LargeDevReport(alpha, n, m, [list(o) for o in offsets], est.describe())
    for i, x in enumerate(xs):
        w = x**alpha
        u = ests[2 * i].scale(w)
        v = ests[2 * i + 1].scale(w * n)
        diff = abs(u.point - v.point)
        comb = u.half_width + v.half_width
        rep.rows.append({
            "x": x, "u": u.point, "u_hw": u.half_width, "v": v.point, "v_hw": v.half_width,
            "abs_diff": diff, "combined_hw": comb, "agree": bool(diff <= comb),
        })
    return rep


def iid_tail_reduction(alpha: float, n: int, x: float) -> float:
    """Closed form ``x^a n P(Y > x B_n)`` for iid Pareto(a) noise."""
    c = x * n ** (1.0 / alpha)
    return x**alpha * n * (c**-alpha if c >= 1 else 1.0)


TR_COLUMNS = ["alpha", "n", "x", "delta", "target", "truncated", "discrepancy", "discrepancy_hw", "ratio"]


@dataclass
class TruncationReport:
    alpha: float
    n: int
    x: float
    delta: float
    backend: dict
    target: Estimate
    truncated: Estimate
    discrepancy: Estimate

    @property
    def ratio(self) -> float:
        return self.discrepancy.point / self.target.point if self.target.point > 0 else float("nan")

    def csv_rows(self) -> list[list]:
        return [[repr(self.alpha), self.n, repr(self.x), repr(self.delta), repr(self.target.point),
                 repr(self.truncated.point), repr(self.discrepancy.point),
                 repr(self.discrepancy.half_width), repr(self.ratio)]]

    def to_dict(self) -> dict:
        def e(v):
            return {"point": v.point, "half_width": v.half_width}

        return {"alpha": self.alpha, "n": self.n, "x": self.x, "delta": self.delta,
                "backend": self.backend, "target": e(self.target), "truncated": e(self.truncated),
                "discrepancy": e(self.discrepancy), "ratio": self.ratio}


def truncation_check(alpha: float, n: int, x: float, delta: float, n_samples: int, seed: int = 0,
                     confidence: float = 0.99, workers: int = 1, offsets=((0,),)) -> TruncationReport:
    """``x^a |P(S_n / B_n > x) - P(sum_j Z_j > x)|`` where ``Z_j`` drops terms below ``B_n x delta``."""
    _check_alpha(alpha)
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    model = moving_pareto(alpha, offsets)
    est = MonteCarlo(model, lattice.line(n, 1), n_samples, seed, confidence, workers)
    bn = n ** (1.0 / alpha)
    cut = bn * x * delta

    def kernel(batch):
        vals = batch.values
        full = vals.sum(axis=1) / bn > x
        kept = np.where(np.abs(vals) < cut, 0.0, vals).sum(axis=1) / bn > x
        return np.stack([full, kept, full.astype(np.float64) - kept], axis=1).astype(np.float64)

    tgt, trc, diff = est.evaluate(kernel, 3, [True, True, False], [1.0, 1.0, 1.0])
    w = x**alpha
    disc = Estimate(abs(diff.point) * w, diff.half_width * w, diff.n)
    return TruncationReport(alpha, n, x, delta, est.describe(), tgt.scale(w), trc.scale(w), disc)
