"""Indexed event families ``{A_T}`` with per-site complete covers ``{C_t}``.

Every family evaluates on a :class:`~bonfield.fields.FieldBatch` and returns
one boolean per row, so the same code serves single samples, enumerated
outcome chunks and Monte Carlo blocks.
"""

from __future__ import annotations

import itertools
from abc import ABC, abstractmethod
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .fields import FieldBatch, FieldSample
from .lattice import Site


# --------------------------------------------------------------------------
# target sets


class TargetSet(ABC):
    """Vectorised membership predicate on field values."""

    @abstractmethod
    def contains(self, values: np.ndarray) -> np.ndarray: ...

    def __contains__(self, value) -> bool:
        return bool(self.contains(np.asarray(value)[None, ...])[0])


class Interval(TargetSet):
    """Real interval; ``None`` endpoints are infinite. Closed unless flagged open."""

    def __init__(self, lo: float | None = None, hi: float | None = None,
                 lo_open: bool = False, hi_open: bool = False):
        self.lo, self.hi = lo, hi
        self.lo_open, self.hi_open = lo_open, hi_open

    def contains(self, values):
        ok = np.ones(values.shape, dtype=bool)
        if self.lo is not None:
            ok &= (values > self.lo) if self.lo_open else (values >= self.lo)
        if self.hi is not None:
            ok &= (values < self.hi) if self.hi_open else (values <= self.hi)
        return ok

    def __repr__(self):
        left = "(" if self.lo_open or self.lo is None else "["
        right = ")" if self.hi_open or self.hi is None else "]"
        lo = "-inf" if self.lo is None else f"{self.lo:g}"
        hi = "inf" if self.hi is None else f"{self.hi:g}"
        return f"{left}{lo},{hi}{right}"


class PointSet(TargetSet):
    """A finite set of values (scalars, complex numbers or matrices)."""

    def __init__(self, values: Iterable[Any]):
        self.values = [np.asarray(v) for v in values]

    def contains(self, values):
        vshape = self.values[0].shape if self.values else ()
        lead = values.shape[: values.ndim - len(vshape)]
        axes = tuple(range(len(lead), values.ndim))
        ok = np.zeros(lead, dtype=bool)
        for v in self.values:
            if np.issubdtype(values.dtype, np.inexact) or np.issubdtype(v.dtype, np.inexact):
                eq = np.isclose(values, v, rtol=0.0, atol=1e-12)
            else:
                eq = values == v
            ok |= eq.all(axis=axes) if axes else eq
        return ok

    def __repr__(self):
        return "{" + ",".join(str(v.tolist()) for v in self.values) + "}"


class Predicate(TargetSet):
    """Arbitrary vectorised predicate, e.g. a region of the complex plane."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], name: str = "predicate"):
        self.fn, self.name = fn, name

    def contains(self, values):
        return np.asarray(self.fn(values), dtype=bool)

    def __repr__(self):
        return self.name


def _nonzero(values: np.ndarray, neutral) -> np.ndarray:
    ne = values != neutral
    if ne.ndim > 1:
        ne = ne.reshape(ne.shape[0], -1).any(axis=1)
    return ne


# --------------------------------------------------------------------------
# families


class EventFamily(ABC):
    """``member(T)`` says whether ``A_T`` occurs; ``covered(t)`` whether ``C_t`` does."""

    name: str = "family"

    @abstractmethod
    def member_batch(self, T: Sequence[Site], batch: FieldBatch) -> np.ndarray: ...

    @abstractmethod
    def covered_batch(self, t: Site, batch: FieldBatch) -> np.ndarray: ...

    def covered_matrix(self, sites: Sequence[Site], batch: FieldBatch) -> np.ndarray:
        """``(N, len(sites))`` boolean matrix of cover indicators."""
        if not sites:
            return np.zeros((len(batch), 0), dtype=bool)
        return np.stack([self.covered_batch(t, batch) for t in sites], axis=1)

    def member(self, T: Iterable[Site], sample: FieldSample) -> bool:
        return bool(self.member_batch(sorted(T), FieldBatch.from_sample(sample))[0])

    def covered(self, t: Site, sample: FieldSample) -> bool:
        return bool(self.covered_batch(t, FieldBatch.from_sample(sample))[0])

    def __str__(self):
        return self.name


class UnionFamily(EventFamily):
    """``A_T = union of C_t over t in T`` with ``C_t = {Z_t in cover}``."""

    def __init__(self, cover: TargetSet | None = None, name: str | None = None):
        self.cover = cover
        self.name = name or (f"union{cover!r}" if cover is not None else "union(Z!=0)")

    def covered_batch(self, t, batch):
        col = batch.column(t)
        if self.cover is None:
            return _nonzero(col, 0)
        return self.cover.contains(col)

    def member_batch(self, T, batch):
        out = np.zeros(len(batch), dtype=bool)
        for t in T:
            out |= self.covered_batch(t, batch)
        return out


def union_family(cover: TargetSet | None = None) -> UnionFamily:
    return UnionFamily(cover)


def max_family(level: float) -> UnionFamily:
    """``A_T = {max_T Z > level}``, the union family over threshold covers."""
    return UnionFamily(Interval(lo=level, lo_open=True), name=f"max>{level:g}")


def neutral_in(target: TargetSet, neutral) -> bool:
    try:
        return bool(target.contains(np.asarray(neutral)[None, ...])[0])
    except TypeError:
        return False


class SumFamily(EventFamily):
    """``A_T = {S_T in U}`` with ``S_empty = 0`` and ``C_t = {Z_t != 0}``."""

    def __init__(self, target: TargetSet):
        if neutral_in(target, 0):
            raise ValueError("sum family: target set must exclude 0")
        self.target = target
        self.name = f"sum in {target!r}"

    def sums(self, T, batch):
        if not T:
            return np.zeros((len(batch),) + batch.value_shape, dtype=batch.values.dtype)
        return batch.take(T).sum(axis=1)

    def member_batch(self, T, batch):
        return self.target.contains(self.sums(T, batch))

    def covered_batch(self, t, batch):
        return _nonzero(batch.column(t), 0)


class ProductFamily(EventFamily):
    """``A_T = {prod_T Z in U}`` with empty product 1 and ``C_t = {Z_t != 1}``."""

    def __init__(self, target: TargetSet):
        if neutral_in(target, 1):
            raise ValueError("product family: target set must exclude 1")
        self.target = target
        self.name = f"product in {target!r}"

    def member_batch(self, T, batch):
        if not T:
            prod = np.ones(len(batch), dtype=batch.values.dtype)
        else:
            prod = batch.take(T).prod(axis=1)
        return self.target.contains(prod)

    def covered_batch(self, t, batch):
        return _nonzero(batch.column(t), 1)


def lex_key(site: Site):
    return site


def revlex_key(site: Site):
    return tuple(-c for c in site)


ORDERS = {"lex": lex_key, "revlex": revlex_key}


class SemigroupFamily(EventFamily):
    """Ordered products in a matrix semigroup with neutral ``identity``.

    Factors are multiplied left to right in the order given by ``order``
    (a sort key on sites, lexicographic by default).
    """

    def __init__(self, target: TargetSet, identity=None, order: str | Callable = "lex", size: int = 2):
        self.identity = np.eye(size, dtype=np.int64) if identity is None else np.asarray(identity)
        if neutral_in(target, self.identity):
            raise ValueError("semigroup family: target set must exclude the identity")
        self.target = target
        self.order_name = order if isinstance(order, str) else getattr(order, "__name__", "custom")
        self.key = ORDERS[order] if isinstance(order, str) else order
        self.name = f"semigroup[{self.order_name}] in {target!r}"

    def products(self, T, batch):
        n = len(batch)
        dtype = np.result_type(batch.values.dtype, self.identity.dtype)
        out = np.broadcast_to(self.identity.astype(dtype), (n,) + self.identity.shape).copy()
        for t in sorted(T, key=self.key):
            out = np.matmul(out, batch.column(t))
        return out

    def member_batch(self, T, batch):
        return self.target.contains(self.products(T, batch))

    def covered_batch(self, t, batch):
        return _nonzero(batch.column(t), self.identity)


def sum_family(target: TargetSet) -> SumFamily:
    return SumFamily(target)


def product_family(target: TargetSet) -> ProductFamily:
    return ProductFamily(target)


def semigroup_family(target: TargetSet, order: str | Callable = "lex", identity=None) -> SemigroupFamily:
    return SemigroupFamily(target, identity=identity, order=order)


# --------------------------------------------------------------------------
# complete-cover checks


def _any_covered(family: EventFamily, sites: Iterable[Site], batch: FieldBatch) -> np.ndarray:
    out = np.zeros(len(batch), dtype=bool)
    for t in sites:
        out |= family.covered_batch(t, batch)
    return out


def check_cover_batch(family: EventFamily, batch: FieldBatch, T1: Iterable[Site], T2: Iterable[Site]) -> np.ndarray:
    """Row-wise check of both cover laws for ``(T1, T2)`` and ``(T1, empty)``."""
    T1, T2 = frozenset(T1), frozenset(T2)
    m1 = family.member_batch(sorted(T1), batch)
    m2 = family.member_batch(sorted(T2), batch)
    m0 = family.member_batch([], batch)
    sym = _any_covered(family, sorted(T1 ^ T2), batch)
    own = _any_covered(family, sorted(T1), batch)
    law_pair = ~(m1 ^ m2) | sym
    law_empty = ~(m1 ^ m0) | own
    law_inclusion = ~m1 | own
    return law_pair & law_empty & law_inclusion & ~m0


def check_cover(family: EventFamily, sample: FieldSample, T1: Iterable[Site], T2: Iterable[Site]) -> bool:
    return bool(check_cover_batch(family, FieldBatch.from_sample(sample), T1, T2)[0])


def subsets(sites: Iterable[Site]) -> list[tuple[Site, ...]]:
    pts = sorted(sites)
    return [c for r in range(len(pts) + 1) for c in itertools.combinations(pts, r)]


# --------------------------------------------------------------------------
# JSON specs


def target_from_spec(spec: dict) -> TargetSet:
    kind = spec.get("type")
    if kind == "interval":
        return Interval(spec.get("lo"), spec.get("hi"), bool(spec.get("lo_open", False)), bool(spec.get("hi_open", False)))
    if kind == "point_set":
        vals = [complex(v) if isinstance(v, str) else v for v in spec["values"]]
        return PointSet(vals)
    raise ValueError(f"family.target.type: unknown target {kind!r}")


def family_from_spec(spec: dict) -> EventFamily:
    """Build a family from ``{"family": ..., "target": {...}, "order": "lex"}``."""
    kind = spec.get("family")
    target = target_from_spec(spec["target"]) if "target" in spec else None
    if kind == "union":
        return UnionFamily(target)
    if target is None:
        raise ValueError("family.target: required for sum, product and semigroup families")
    if kind == "sum":
        return SumFamily(target)
    if kind == "product":
        return ProductFamily(target)
    if kind == "semigroup":
        order = spec.get("order", "lex")
        if order not in ORDERS:
            raise ValueError(f"family.order: unknown order {order!r}")
        return SemigroupFamily(target, identity=spec.get("identity"), order=order, size=int(spec.get("size", 2)))
    raise ValueError(f"family.family: unknown family {kind!r}")
