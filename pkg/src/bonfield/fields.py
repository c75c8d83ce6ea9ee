"""Random field models on a finite window.

A model turns iid base noise into field values on a requested window. Every
model supports seeded sampling; models with a finite noise alphabet also
support exhaustive enumeration of outcomes with exact probabilities.

Sampling is counter-based: sample ``i`` under seed ``s`` is row
``i % BLOCK_SIZE`` of block ``i // BLOCK_SIZE``, and each block draws its
uniforms from a Philox generator keyed by ``s`` with the block number in the
counter. A sample therefore depends only on ``(model, window, seed, i)``,
never on how blocks are split among workers.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

from .lattice import Site, SiteSet, add, site_set

BLOCK_SIZE = 1024
DEFAULT_CAP = 2**24
ENUM_CHUNK = 2**16


class StateSpaceTooLarge(ValueError):
    pass


class NonEnumerableModel(ValueError):
    pass


class InsufficientSupport(ValueError):
    pass


# --------------------------------------------------------------------------
# marginals


class Marginal(ABC):
    finite: bool = True

    @abstractmethod
    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms on [0, 1) to draws of this law (inverse transform)."""

    @property
    def value_shape(self) -> tuple[int, ...]:
        return ()

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        raise NonEnumerableModel(f"non-enumerable marginal: {self!r}")


@dataclass(frozen=True)
class Bernoulli(Marginal):
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"Bernoulli p must lie in [0, 1], got {self.p}")

    def from_uniform(self, u):
        return (u < self.p).astype(np.int64)

    def support(self):
        return np.array([0, 1], dtype=np.int64), np.array([1.0 - self.p, self.p])


@dataclass(frozen=True)
class PointMass(Marginal):
    value: float

    def from_uniform(self, u):
        return np.full(u.shape, self.value)

    def support(self):
        return np.array([self.value]), np.array([1.0])


class Table(Marginal):
    """Finite law ``{(value, prob)}``; values may be scalars or square matrices."""

    def __init__(self, values: Sequence[Any], probs: Sequence[float]):
        vals = np.asarray(values)
        if vals.dtype == object:
            raise ValueError("table values must share one shape")
        probs = np.asarray(probs, dtype=np.float64)
        if len(vals) != len(probs) or len(probs) == 0:
            raise ValueError("table needs one probability per value")
        if np.any(probs < 0) or np.any(probs > 1):
            raise ValueError("table probabilities must lie in [0, 1]")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"table probabilities sum to {probs.sum()}, not 1")
        self.values = vals
        self.probs = probs
        self._cum = np.cumsum(probs)
        self._cum[-1] = 1.0

    def __repr__(self):
        return f"Table({self.values.tolist()!r}, {self.probs.tolist()!r})"

    @property
    def value_shape(self):
        return self.values.shape[1:]

    def from_uniform(self, u):
        idx = np.searchsorted(self._cum, u, side="right")
        return self.values[np.minimum(idx, len(self.probs) - 1)]

    def support(self):
        return self.values, self.probs


@dataclass(frozen=True)
class Pareto(Marginal):
    """Pareto law with scale 1: density ``alpha x^(-alpha-1)`` on ``x >= 1``."""

    alpha: float
    finite = False

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"Pareto alpha must be > 0, got {self.alpha}")

    def from_uniform(self, u):
        return np.power(1.0 - u, -1.0 / self.alpha)


# --------------------------------------------------------------------------
# samples


@dataclass
class FieldSample:
    """One realisation of the field on ``support``."""

    values: dict[Site, Any]
    support: SiteSet = field(default=None)

    def __post_init__(self):
        if self.support is None:
            self.support = frozenset(self.values)
        elif frozenset(self.values) != self.support:
            raise ValueError("sample values must be defined on exactly the support")

    def __getitem__(self, site: Site):
        try:
            return self.values[site]
        except KeyError:
            raise InsufficientSupport(f"site {site} outside the sample support") from None


class FieldBatch:
    """``N`` realisations on a common ordered site list.

    ``values`` has shape ``(N, len(sites), *value_shape)``.
    """

    def __init__(self, sites: Sequence[Site], values: np.ndarray):
        self.sites = tuple(sites)
        self.index = {s: i for i, s in enumerate(self.sites)}
        self.values = values

    def __len__(self):
        return self.values.shape[0]

    @property
    def value_shape(self):
        return self.values.shape[2:]

    def cols(self, sites: Iterable[Site]) -> list[int]:
        try:
            return [self.index[s] for s in sites]
        except KeyError as exc:
            raise InsufficientSupport(f"site {exc.args[0]} outside the field window") from None

    def column(self, site: Site) -> np.ndarray:
        return self.values[:, self.cols([site])[0]]

    def take(self, sites: Sequence[Site]) -> np.ndarray:
        return self.values[:, self.cols(sites)]

    def row(self, i: int) -> FieldSample:
        v = self.values[i]
        return FieldSample({s: v[j] for j, s in enumerate(self.sites)})

    @classmethod
    def from_sample(cls, sample: FieldSample) -> "FieldBatch":
        sites = sorted(sample.support)
        vals = np.asarray([sample.values[s] for s in sites])
        return cls(sites, vals[None, ...])


@dataclass(frozen=True)
class WeightedOutcome:
    sample: FieldSample
    probability: float


# --------------------------------------------------------------------------
# models


class FieldModel(ABC):
    """Base noise ``marginal`` on ``noise_sites(window)`` pushed through ``push``."""

    marginal: Marginal

    @abstractmethod
    def dependence_range(self) -> int: ...

    @abstractmethod
    def noise_sites(self, sites: Sequence[Site]) -> list: ...

    @abstractmethod
    def push(self, noise: np.ndarray, sites: Sequence[Site]) -> np.ndarray: ...

    @abstractmethod
    def describe(self) -> str: ...

    def __str__(self):
        return self.describe()

    # sampling ------------------------------------------------------------

    def sample_block(self, window: SiteSet, seed: int, block: int) -> FieldBatch:
        """All ``BLOCK_SIZE`` samples of one counter block."""
        sites = sorted(window)
        k = len(self.noise_sites(sites))
        gen = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, block, 0]))
        u = gen.random((BLOCK_SIZE, k))
        return FieldBatch(sites, self.push(self.marginal.from_uniform(u), sites))

    def sample_batch(self, window: SiteSet, seed: int, start: int, count: int) -> FieldBatch:
        """Samples ``start, ..., start + count - 1`` as one batch."""
        parts = []
        i, stop = start, start + count
        while i < stop:
            b, r = divmod(i, BLOCK_SIZE)
            take = min(BLOCK_SIZE - r, stop - i)
            blk = self.sample_block(window, seed, b)
            parts.append(blk.values[r:r + take])
            i += take
        sites = sorted(window)
        if not parts:
            return FieldBatch(sites, np.zeros((0, len(sites))))
        return FieldBatch(sites, np.concatenate(parts))

    def sample(self, window: SiteSet, seed: int, index: int) -> FieldSample:
        return self.sample_batch(window, seed, index, 1).row(0)

    # enumeration ---------------------------------------------------------

    def state_count(self, window: SiteSet) -> int:
        values, _ = self.marginal.support()
        return len(values) ** len(self.noise_sites(sorted(window)))

    def enumerate_batches(
        self, window: SiteSet, cap: int = DEFAULT_CAP, chunk: int = ENUM_CHUNK
    ) -> Iterator[tuple[np.ndarray, FieldBatch]]:
        """Yield ``(probabilities, batch)`` chunks covering every noise outcome.

        Outcomes are ordered lexicographically in the noise symbols, so the
        stream is deterministic and index-addressable.
        """
        values, probs = self.marginal.support()
        sites = sorted(window)
        k = len(self.noise_sites(sites))
        a = len(values)
        total = a**k
        if total > cap:
            raise StateSpaceTooLarge(
                f"state space too large: {a}^{k} = {total} outcomes exceeds cap {cap}"
            )
        powers = a ** np.arange(k - 1, -1, -1, dtype=np.int64)
        for lo in range(0, total, chunk):
            idx = np.arange(lo, min(lo + chunk, total), dtype=np.int64)
            sym = (idx[:, None] // powers[None, :]) % a
            w = np.prod(probs[sym], axis=1) if k else np.ones(len(idx))
            noise = values[sym]
            yield w, FieldBatch(sites, self.push(noise, sites))

    def enumerate_outcomes(self, window: SiteSet, cap: int = DEFAULT_CAP) -> Iterator[WeightedOutcome]:
        for w, batch in self.enumerate_batches(window, cap):
            for i in range(len(batch)):
                yield WeightedOutcome(batch.row(i), float(w[i]))


class IIDField(FieldModel):
    def __init__(self, marginal: Marginal):
        self.marginal = marginal

    def dependence_range(self):
        return 0

    def noise_sites(self, sites):
        return list(sites)

    def push(self, noise, sites):
        return noise

    def describe(self):
        return f"iid({self.marginal!r})"


COMBINERS = ("sum", "max", "product", "all_ones")


class MovingField(FieldModel):
    """``Z_t = combine(Y_{t+o} : o in offsets)`` with ``Y`` iid ``marginal``.

    ``all_ones`` gives the pattern indicator ``1{Y_{t+o} = 1 for every o}``.
    """

    def __init__(self, marginal: Marginal, offsets: Iterable[Iterable[int]], combiner: str = "sum"):
        if combiner not in COMBINERS:
            raise ValueError(f"unknown combiner {combiner!r}; expected one of {COMBINERS}")
        if marginal.value_shape:
            raise ValueError("moving transforms need scalar base noise")
        self.marginal = marginal
        self.offsets = sorted(site_set(offsets))
        if not self.offsets:
            raise ValueError("moving transform needs at least one offset")
        self.combiner = combiner
        self._cache: dict = {}

    @property
    def d(self):
        return len(self.offsets[0])

    def dependence_range(self):
        arr = np.asarray(self.offsets)
        return int((arr.max(axis=0) - arr.min(axis=0)).max())

    def noise_sites(self, sites):
        key = tuple(sites)
        hit = self._cache.get(key)
        if hit is None:
            if sites and len(sites[0]) != self.d:
                raise ValueError("window and offsets differ in dimension")
            noise = sorted({add(s, o) for s in sites for o in self.offsets})
            pos = {s: i for i, s in enumerate(noise)}
            gather = np.array([[pos[add(s, o)] for o in self.offsets] for s in sites], dtype=np.int64)
            hit = self._cache[key] = (noise, gather.reshape(len(sites), len(self.offsets)))
        return hit[0]

    def push(self, noise, sites):
        self.noise_sites(sites)
        gather = self._cache[tuple(sites)][1]
        g = noise[:, gather]  # (N, |sites|, |offsets|)
        if self.combiner == "sum":
            return g.sum(axis=2)
        if self.combiner == "max":
            return g.max(axis=2)
        if self.combiner == "product":
            return g.prod(axis=2)
        return np.all(g == 1, axis=2).astype(np.int64)

    def describe(self):
        offs = ",".join("(" + ",".join(map(str, o)) + ")" for o in self.offsets)
        return f"moving[{self.combiner}]({self.marginal!r};{offs})"


class ExplicitField(FieldModel):
    """A joint table over a fixed finite window with a declared dependence range."""

    def __init__(self, sites: Iterable[Iterable[int]], outcomes: Sequence[tuple[Sequence[Any], float]], range_: int = 0):
        self.sites = sorted(site_set(sites))
        self._pos = {s: i for i, s in enumerate(self.sites)}
        table = np.asarray([o[0] for o in outcomes])
        if table.ndim < 2 or table.shape[1] != len(self.sites):
            raise ValueError("each explicit outcome must list one value per site")
        self.table = table
        self.marginal = Table(np.arange(len(outcomes)), [o[1] for o in outcomes])
        self._range = int(range_)

    def dependence_range(self):
        return self._range

    def noise_sites(self, sites):
        missing = [s for s in sites if s not in self._pos]
        if missing:
            raise InsufficientSupport(f"explicit model does not cover site {missing[0]}")
        return [None]

    def push(self, noise, sites):
        self.noise_sites(sites)
        cols = [self._pos[s] for s in sites]
        return self.table[noise[:, 0]][:, cols]

    def describe(self):
        return f"explicit({len(self.sites)} sites, {len(self.table)} outcomes)"


# --------------------------------------------------------------------------
# module-level operations


def sample(model: FieldModel, window: SiteSet, seed: int, index: int) -> FieldSample:
    return model.sample(window, seed, index)


def enumerate_outcomes(model: FieldModel, window: SiteSet, cap: int = DEFAULT_CAP) -> Iterator[WeightedOutcome]:
    return model.enumerate_outcomes(window, cap)


def dependence_range(model: FieldModel) -> int:
    return model.dependence_range()


# --------------------------------------------------------------------------
# JSON specs


def _parse_value(v):
    if isinstance(v, str):
        return complex(v.replace(" ", ""))
    return v


def marginal_from_spec(spec: dict) -> Marginal:
    kind = spec.get("type")
    if kind == "bernoulli":
        return Bernoulli(float(spec["p"]))
    if kind == "pareto":
        return Pareto(float(spec["alpha"]))
    if kind == "point":
        return PointMass(_parse_value(spec["value"]))
    if kind == "table":
        entries = spec["entries"]
        vals = [_parse_value(e[0]) for e in entries]
        return Table(vals, [float(e[1]) for e in entries])
    raise ValueError(f"marginal.type: unknown marginal {kind!r}")


def model_from_spec(spec: dict) -> FieldModel:
    """Build a model from ``{"kind": "iid"|"moving"|"explicit", ...}``."""
    kind = spec.get("kind")
    if kind == "iid":
        return IIDField(marginal_from_spec(spec["marginal"]))
    if kind == "moving":
        return MovingField(
            marginal_from_spec(spec["marginal"]),
            spec["offsets"],
            spec.get("combiner", "sum"),
        )
    if kind == "explicit":
        return ExplicitField(spec["sites"], [(o[0], float(o[1])) for o in spec["outcomes"]], spec.get("range", 0))
    raise ValueError(f"model.kind: unknown model kind {kind!r}")
