"""Block inclusion-exclusion approximation and its certified error bound.

For a family ``{A_T}`` with complete cover ``{C_t}``, a finite set ``lam`` of
sites and a cluster size ``m``::

    |P(A_lam) - sum_t Delta_t|
        <= c1 * sum_{s in boundary} P(C_s) + c2 * sum_{far (s,t)} P(C_s & C_t)

where ``Delta_t`` is the signed sum over cube corners ``eps`` of
``P(A_{B_t^eps})`` and the far-pair sum runs over ordered pairs of ``lam``
at Chebyshev distance greater than ``m``. The same inequality holds with
indicators in place of probabilities on every outcome; both forms are
checked here.
"""

from __future__ import annotations

import csv
import io
import threading
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import lattice
from .estimate import Estimate, Estimator, ProbEstimate
from .events import EventFamily, SumFamily, TargetSet
from .fields import FieldBatch, FieldSample, InsufficientSupport
from .lattice import Site, SiteSet

EXACT_TOL = 1e-12

HOLDS = "holds"
HOLDS_CI = "holds-within-CI"
VIOLATED = "violated"


def constants(d: int, m: int) -> tuple[float, float]:
    """``c1 = 2^d ((m+1)^d - 1)`` and ``c2 = (1 + 2^d (2m+1)^d) / 2``."""
    if d < 1 or m < 0:
        raise ValueError(f"need d >= 1 and m >= 0, got d={d}, m={m}")
    c1 = float(2**d * ((m + 1) ** d - 1))
    c2 = 0.5 * (1 + 2**d * (2 * m + 1) ** d)
    return c1, c2


# --------------------------------------------------------------------------
# evaluation plans: how A_T and C_t are computed on a batch


class _FamilyPlan:
    def __init__(self, family: EventFamily):
        self.family = family
        self.name = family.name

    def member(self, T, batch):
        return self.family.member_batch(T, batch)

    def covered(self, sites, batch):
        return self.family.covered_matrix(sites, batch)


class _DirectSumPlan:
    """Sums of field values tested against ``U`` directly, without a family object."""

    def __init__(self, target: TargetSet):
        if target.contains(np.zeros(1, dtype=np.int64))[0]:
            raise ValueError("target set must exclude 0")
        self.target = target
        self.name = f"sum in {target!r}"

    def member(self, T, batch):
        if not T:
            s = np.zeros((len(batch),) + batch.value_shape, dtype=batch.values.dtype)
        else:
            s = batch.values[:, batch.cols(T)].sum(axis=1)
        return self.target.contains(s)

    def covered(self, sites, batch):
        if not sites:
            return np.zeros((len(batch), 0), dtype=bool)
        v = batch.values[:, batch.cols(sites)]
        ne = v != 0
        if ne.ndim > 2:
            ne = ne.reshape(ne.shape[0], ne.shape[1], -1).any(axis=2)
        return ne


# --------------------------------------------------------------------------
# instances


@dataclass(frozen=True)
class BoundInstance:
    family: EventFamily
    lam: SiteSet
    m: int

    def __post_init__(self):
        if not self.lam:
            raise ValueError("lambda must be a nonempty finite site set")
        if self.m < 0:
            raise ValueError("m must be >= 0")
        object.__setattr__(self, "lam", lattice.site_set(self.lam))

    @property
    def d(self) -> int:
        return lattice.dimension(self.lam)

    @cached_property
    def sites(self) -> list[Site]:
        return sorted(self.lam)

    @cached_property
    def window(self) -> SiteSet:
        return lattice.window(self.lam, self.m)

    @cached_property
    def boundary(self) -> list[Site]:
        return sorted(lattice.boundary(self.lam, self.m))

    @cached_property
    def corner_list(self) -> list[lattice.Corner]:
        return lattice.corners(self.d)

    @cached_property
    def eps_sets(self) -> list[list[tuple[Site, ...]]]:
        """``eps_sets[i][j]``: sorted ``B_t^eps`` for ``t = sites[i]``, ``eps = corners[j]``."""
        return [
            [tuple(sorted(lattice.eps_block(t, c, self.m))) for c in self.corner_list]
            for t in self.sites
        ]

    @cached_property
    def far(self) -> np.ndarray:
        return lattice.far_matrix(self.sites, self.m)

    @cached_property
    def n_far_pairs(self) -> int:
        return int(self.far.sum())

    @property
    def constants(self) -> tuple[float, float]:
        return constants(self.d, self.m)


class _Terms:
    """Per-outcome quantities of the pointwise inequality on one batch."""

    def __init__(self, inst: BoundInstance, plan, batch: FieldBatch):
        memo: dict[tuple, np.ndarray] = {}

        def member(T):
            hit = memo.get(T)
            if hit is None:
                hit = memo[T] = np.asarray(plan.member(list(T), batch), dtype=bool)
            return hit

        signs = [c.sign for c in inst.corner_list]
        self.target = member(tuple(inst.sites))
        self.deltas = np.zeros((len(batch), len(inst.sites)), dtype=np.int64)
        for i, sets in enumerate(inst.eps_sets):
            for sgn, T in zip(signs, sets):
                self.deltas[:, i] += sgn * member(T)
        self.delta_sum = self.deltas.sum(axis=1)
        self.boundary_count = plan.covered(inst.boundary, batch).sum(axis=1)
        cov = plan.covered(inst.sites, batch).astype(np.float64)
        self.pair_count = ((cov @ inst.far) * cov).sum(axis=1)
        c1, c2 = inst.constants
        lhs = np.abs(self.target.astype(np.int64) - self.delta_sum)
        self.pointwise_ok = lhs <= c1 * self.boundary_count + c2 * self.pair_count


# --------------------------------------------------------------------------
# pointwise quantities


def delta_pointwise(family: EventFamily, sample: FieldSample, t: Site, m: int) -> int:
    """``sum_eps (-1)^|eps| 1(A_{B_t^eps})`` on one sample."""
    need = lattice.block(t, m)
    missing = need - frozenset(sample.support)
    if missing:
        raise InsufficientSupport(f"insufficient support: block of {t} needs {sorted(missing)[:3]}")
    batch = FieldBatch.from_sample(sample)
    total = 0
    for c in lattice.corners(len(t)):
        T = sorted(lattice.eps_block(t, c, m))
        total += c.sign * int(family.member_batch(T, batch)[0])
    return total


def delta_batch(family: EventFamily, batch: FieldBatch, t: Site, m: int) -> np.ndarray:
    """Row-wise ``delta_t`` on a batch."""
    out = np.zeros(len(batch), dtype=np.int64)
    for c in lattice.corners(len(t)):
        out += c.sign * family.member_batch(sorted(lattice.eps_block(t, c, m)), batch)
    return out


def verify_pointwise(instance: BoundInstance, sample: FieldSample) -> bool:
    missing = instance.window - frozenset(sample.support)
    if missing:
        raise InsufficientSupport(f"insufficient support: sample misses {sorted(missing)[:3]}")
    terms = _Terms(instance, _FamilyPlan(instance.family), FieldBatch.from_sample(sample))
    return bool(terms.pointwise_ok[0])


# --------------------------------------------------------------------------
# integrated quantities


def delta_mean(family: EventFamily, estimator: Estimator, t: Site, m: int) -> Estimate:
    """``Delta_t`` as the signed sum of the ``2^d`` corner probabilities."""
    estimator.require(lattice.block(t, m))
    cs = lattice.corners(len(t))
    sets = [sorted(lattice.eps_block(t, c, m)) for c in cs]
    probs = estimator.joint_prob([lambda b, T=T: family.member_batch(T, b) for T in sets])
    point = 0.0
    hw = 0.0
    for c, p in zip(cs, probs):
        point += c.sign * p.point
        hw += p.half_width
    return Estimate(point, hw, probs[0].n)


def approx_sum(instance: BoundInstance, estimator: Estimator) -> Estimate:
    """``sum_{t in lam} Delta_t``.

    The point value is the literal signed sum of corner probabilities; the
    Monte Carlo half-width comes from the per-sample ``sum_t delta_t``
    evaluated on the same samples.
    """
    estimator.require(instance.window)
    uniq = sorted({T for sets in instance.eps_sets for T in sets}, key=lambda T: (len(T), T))
    col = {T: j for j, T in enumerate(uniq)}
    fam = instance.family
    k = len(uniq)

    def kernel(batch):
        out = np.empty((len(batch), k + 1))
        for T, j in col.items():
            out[:, j] = fam.member_batch(list(T), batch)
        out[:, k] = _Terms(instance, _FamilyPlan(fam), batch).delta_sum
        return out

    scale = len(instance.sites) * 2 ** (instance.d - 1)
    ests = estimator.evaluate(kernel, k + 1, [True] * k + [False], [1.0] * k + [scale])
    signs = [c.sign for c in instance.corner_list]
    point = 0.0
    for sets in instance.eps_sets:
        for sgn, T in zip(signs, sets):
            point += sgn * ests[col[T]].point
    return Estimate(point, ests[k].half_width, ests[k].n)


def rhs_bound(instance: BoundInstance, estimator: Estimator) -> tuple[Estimate, Estimate]:
    """``(c1 * sum_boundary P(C_s), c2 * sum_far P(C_s & C_t))`` from literal per-term probabilities."""
    estimator.require(instance.window)
    c1, c2 = instance.constants
    fam = instance.family
    bnd = instance.boundary
    pairs = [(i, j) for i, j in combinations(range(len(instance.sites)), 2) if instance.far[i, j]]
    nb = len(bnd)

    def kernel(batch):
        out = np.empty((len(batch), nb + len(pairs)))
        out[:, :nb] = fam.covered_matrix(bnd, batch)
        cov = fam.covered_matrix(instance.sites, batch)
        for q, (i, j) in enumerate(pairs):
            out[:, nb + q] = cov[:, i] & cov[:, j]
        return out

    ests = estimator.evaluate(kernel, nb + len(pairs), [True] * (nb + len(pairs)))
    b = Estimate(0.0, 0.0, ests[0].n if ests else 0)
    for e in ests[:nb]:
        b = b + e
    p = Estimate(0.0, 0.0, b.n)
    # ordered pairs: (s, t) and (t, s) carry the same probability
    for e in ests[nb:]:
        p = p + e + e
    return b.scale(c1), p.scale(c2)


# --------------------------------------------------------------------------
# reports


@dataclass
class BoundReport:
    d: int
    m: int
    lam_size: int
    family: str
    model: str
    backend: dict
    target: ProbEstimate
    approx: Estimate
    error: float
    error_lo: float
    error_hi: float
    boundary_term: Estimate
    pair_term: Estimate
    c1: float
    c2: float
    verdict: str
    boundary_size: int = 0
    far_pairs: int = 0
    pointwise_checked: int = 0
    pointwise_failures: int = 0

    @property
    def rhs(self) -> float:
        return self.boundary_term.point + self.pair_term.point

    @property
    def slack(self) -> float:
        return self.rhs - self.error

    def to_dict(self) -> dict:
        def est(e):
            return {"point": e.point, "half_width": e.half_width, "n": e.n}

        return {
            "d": self.d,
            "m": self.m,
            "lambda_size": self.lam_size,
            "family": self.family,
            "model": self.model,
            "backend": self.backend,
            "constants": {"c1": self.c1, "c2": self.c2},
            "target": est(self.target),
            "approx": est(self.approx),
            "error": {"point": self.error, "lo": self.error_lo, "hi": self.error_hi},
            "boundary_term": est(self.boundary_term),
            "pair_term": est(self.pair_term),
            "rhs": self.rhs,
            "slack": self.slack,
            "boundary_size": self.boundary_size,
            "far_pairs": self.far_pairs,
            "pointwise": {"checked": self.pointwise_checked, "failures": self.pointwise_failures},
            "verdict": self.verdict,
        }

    def csv_row(self) -> list:
        return [
            self.d, self.m, self.lam_size, self.family, self.model,
            _fmt(self.target.point), _fmt(self.approx.point), _fmt(self.error),
            _fmt(self.boundary_term.point), _fmt(self.pair_term.point), _fmt(self.slack),
            self.verdict,
        ]


CSV_COLUMNS = [
    "d", "m", "lambda_size", "family", "model", "target", "approx", "error",
    "boundary_term", "pair_term", "slack", "verdict",
]


def _fmt(x: float) -> str:
    return repr(float(x))


def reports_to_csv(reports: Sequence[BoundReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def _verdict(estimator: Estimator, err_lo: float, err: float, rhs_hi: float, rhs: float) -> str:
    if estimator.exact:
        return HOLDS if err <= rhs + EXACT_TOL else VIOLATED
    return HOLDS_CI if err_lo <= rhs_hi else VIOLATED


def _verify_plan(instance: BoundInstance, plan, estimator: Estimator, model_name: str,
                 pointwise: bool) -> BoundReport:
    estimator.require(instance.window)
    c1, c2 = instance.constants
    lock = threading.Lock()
    tally = [0, 0]

    def kernel(batch):
        t = _Terms(instance, plan, batch)
        if pointwise:
            bad = int((~t.pointwise_ok).sum())
            with lock:
                tally[0] += len(batch)
                tally[1] += bad
        return np.stack(
            [t.target.astype(np.float64), t.delta_sum, t.boundary_count, t.pair_count], axis=1
        )

    scales = [1.0, len(instance.sites) * 2 ** (instance.d - 1), len(instance.boundary), instance.n_far_pairs]
    tgt, apx, bcount, pcount = estimator.evaluate(kernel, 4, [True, False, False, False], scales)
    err = abs(tgt.point - apx.point)
    spread = tgt.half_width + apx.half_width
    err_lo = max(0.0, err - spread)
    err_hi = err + spread
    bterm = bcount.scale(c1)
    pterm = pcount.scale(c2)
    verdict = _verdict(estimator, err_lo, err, bterm.hi + pterm.hi, bterm.point + pterm.point)
    return BoundReport(
        d=instance.d, m=instance.m, lam_size=len(instance.sites), family=plan.name,
        model=model_name, backend=estimator.describe(), target=tgt, approx=apx,
        error=err, error_lo=err_lo, error_hi=err_hi, boundary_term=bterm, pair_term=pterm,
        c1=c1, c2=c2, verdict=verdict, boundary_size=len(instance.boundary),
        far_pairs=instance.n_far_pairs, pointwise_checked=tally[0], pointwise_failures=tally[1],
    )


def verify(instance: BoundInstance, estimator: Estimator, pointwise: bool = False) -> BoundReport:
    """Assemble every term of the inequality for ``instance`` and judge it.

    With ``pointwise=True`` the indicator form is also checked on every
    enumerated outcome (or every Monte Carlo sample); failures are counted
    in the report and force the verdict to ``violated``.
    """
    rep = _verify_plan(instance, _FamilyPlan(instance.family), estimator, str(estimator.model), pointwise)
    if rep.pointwise_failures:
        rep.verdict = VIOLATED
    return rep


def verify_sum(target: TargetSet, lam: SiteSet, m: int, estimator: Estimator, pointwise: bool = False) -> BoundReport:
    """Sum-field form of :func:`verify`: ``A_T = {S_T in U}``, ``C_t = {Z_t != 0}``, evaluated directly."""
    plan = _DirectSumPlan(target)
    inst = BoundInstance(SumFamily(target), lam, m)
    rep = _verify_plan(inst, plan, estimator, str(estimator.model), pointwise)
    if rep.pointwise_failures:
        rep.verdict = VIOLATED
    return rep


# --------------------------------------------------------------------------
# one-dimensional stationary form


class StationaryResult(NamedTuple):
    lhs: Estimate
    rhs: Estimate
    target: ProbEstimate
    approx: Estimate
    bridge_gap: float | None


def stationary_d1(target: TargetSet, estimator: Estimator, n: int, m: int, start: int = 1) -> StationaryResult:
    """Both sides of the stationary 1-d inequality for partial sums::

        |P(S_n in U) - n (P(S_{m+1} in U) - P(S_m in U))|
            <= 2 m P(Z_1 != 0) + 2 sum_{i<j<=n, j-i>m} P(Z_i != 0, Z_j != 0)

    With an exact backend the bridge to the block form (``approx_sum`` over
    ``{1..n}``) is checked and its gap returned; a gap above 1e-12 means the
    model is not translation invariant and raises ``ValueError``.
    """
    if not 0 <= m <= n:
        raise ValueError(f"need 0 <= m <= n, got m={m}, n={n}")
    sites = [(start + i,) for i in range(max(n, m + 1))]
    if any(len(s) != 1 for s in estimator.window):
        raise ValueError("stationary_d1 needs a 1-dimensional field")
    estimator.require(frozenset(sites))
    fam = SumFamily(target)
    first_n, first_m1, first_m = sites[:n], sites[: m + 1], sites[:m]
    lam = sites[:n]
    far = lattice.far_matrix(lam, m)
    upper = np.triu(far, 1)

    def kernel(batch):
        cov = fam.covered_matrix(lam, batch).astype(np.float64)
        return np.stack([
            fam.member_batch(first_n, batch),
            fam.member_batch(first_m1, batch),
            fam.member_batch(first_m, batch),
            cov[:, 0],
            ((cov @ upper) * cov).sum(axis=1),
        ], axis=1)

    p_n, p_m1, p_m, p_z1, pairs = estimator.evaluate(
        kernel, 5, [True, True, True, True, False], [1, 1, 1, 1, float(upper.sum())]
    )
    approx = Estimate(n * (p_m1.point - p_m.point), n * (p_m1.half_width + p_m.half_width), p_n.n)
    gap = abs(p_n.point - approx.point)
    spread = p_n.half_width + approx.half_width
    lhs = Estimate(gap, spread, p_n.n)
    rhs = p_z1.scale(2 * m) + pairs.scale(2.0)
    bridge = None
    if estimator.exact:
        blk = approx_sum(BoundInstance(fam, frozenset(lam), m), estimator)
        bridge = abs(blk.point - approx.point)
        if bridge > EXACT_TOL:
            raise ValueError(f"bridge identity fails by {bridge:.3g}: model is not translation invariant")
    return StationaryResult(lhs, rhs, p_n, approx, bridge)


# --------------------------------------------------------------------------
# classical first-order Bonferroni


def classical_bonferroni(events: Sequence[Callable[[FieldBatch], np.ndarray]],
                         estimator: Estimator) -> tuple[Estimate, Estimate]:
    """``gap = sum P(A_i) - P(union A_i)`` and ``bound = sum_{i<j} P(A_i & A_j)``."""
    events = list(events)
    if not events:
        raise ValueError("need at least one event")
    n = len(events)
    pairs = list(combinations(range(n), 2))

    def kernel(batch):
        ind = np.stack([np.asarray(e(batch), dtype=bool) for e in events], axis=1)
        cols = [ind[:, i] for i in range(n)] + [ind.any(axis=1)]
        cols += [ind[:, i] & ind[:, j] for i, j in pairs]
        return np.stack(cols, axis=1)

    k = n + 1 + len(pairs)
    ests = estimator.evaluate(kernel, k, [True] * k)
    singles, union, joint = ests[:n], ests[n], ests[n + 1:]
    gap = Estimate(sum(e.point for e in singles) - union.point,
                   sum(e.half_width for e in singles) + union.half_width, union.n)
    bound = Estimate(sum(e.point for e in joint), sum(e.half_width for e in joint), union.n)
    return gap, bound
