"""Integer-lattice geometry for block inclusion-exclusion.

Sites are plain tuples of ints; a site set is a ``frozenset`` of such tuples.
Iteration order is always lexicographic (``sorted``) so that every report
derived from these sets is reproducible.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

Site = tuple[int, ...]
SiteSet = frozenset  # frozenset[Site]


def site_set(points: Iterable[Iterable[int]]) -> SiteSet:
    """Build a validated site set (all points of one dimension)."""
    pts = frozenset(tuple(int(c) for c in p) for p in points)
    dims = {len(p) for p in pts}
    if len(dims) > 1:
        raise ValueError(f"mixed dimensions in site set: {sorted(dims)}")
    if 0 in dims:
        raise ValueError("sites must have at least one coordinate")
    return pts


def dimension(sites: SiteSet) -> int:
    for p in sites:
        return len(p)
    raise ValueError("empty site set has no dimension")


def box(shape: Iterable[int], origin: Iterable[int] | None = None) -> SiteSet:
    """All points of ``origin + {0..shape_1-1} x ... x {0..shape_d-1}``."""
    shape = tuple(int(s) for s in shape)
    if any(s < 0 for s in shape):
        raise ValueError(f"negative box extent: {shape}")
    origin = tuple(origin) if origin is not None else (0,) * len(shape)
    if len(origin) != len(shape):
        raise ValueError("origin and shape differ in dimension")
    ranges = [range(o, o + s) for o, s in zip(origin, shape)]
    return frozenset(itertools.product(*ranges))


def line(n: int, start: int = 1) -> SiteSet:
    """The 1-d segment ``{start, ..., start + n - 1}``."""
    return frozenset((i,) for i in range(start, start + n))


def add(t: Site, s: Site) -> Site:
    return tuple(a + b for a, b in zip(t, s))


def chebyshev(s: Site, t: Site) -> int:
    return max(abs(a - b) for a, b in zip(s, t))


def base_block(d: int, m: int) -> SiteSet:
    """``B = {0, ..., m}^d``."""
    if d < 1 or m < 0:
        raise ValueError(f"need d >= 1 and m >= 0, got d={d}, m={m}")
    return frozenset(itertools.product(range(m + 1), repeat=d))


def block(t: Site, m: int) -> SiteSet:
    """The block ``B_t = t + B``."""
    return frozenset(add(t, b) for b in base_block(len(t), m))


@dataclass(frozen=True, order=True)
class Corner:
    """A vertex ``eps`` of the unit cube ``{0,1}^d``."""

    eps: tuple[int, ...]

    def __post_init__(self):
        if any(e not in (0, 1) for e in self.eps):
            raise ValueError(f"corner entries must be 0/1: {self.eps}")

    @property
    def parity(self) -> int:
        return sum(self.eps)

    @property
    def sign(self) -> int:
        return -1 if self.parity % 2 else 1


def corners(d: int) -> list[Corner]:
    """All ``2^d`` corners in lexicographic order."""
    if d < 1:
        raise ValueError(f"need d >= 1, got {d}")
    return [Corner(e) for e in itertools.product((0, 1), repeat=d)]


def eps_block(t: Site, eps: Corner | tuple[int, ...], m: int) -> SiteSet:
    """``B_t^eps = B_t ∩ B_{t+eps}``, a box with side ``m + 1 - eps_k``."""
    e = eps.eps if isinstance(eps, Corner) else tuple(eps)
    if len(e) != len(t):
        raise ValueError("site and corner differ in dimension")
    ranges = [range(tk + ek, tk + m + 1) for tk, ek in zip(t, e)]
    return frozenset(itertools.product(*ranges))


def window(lam: SiteSet, m: int) -> SiteSet:
    """Minkowski sum ``lam + {0..m}^d``: every site any ``B_t, t in lam`` touches."""
    if not lam:
        return frozenset()
    offs = base_block(dimension(lam), m)
    return frozenset(add(t, b) for t in lam for b in offs)


def boundary_parts(lam: SiteSet, m: int) -> tuple[SiteSet, SiteSet]:
    """The outer and inner parts of the two-part boundary of ``lam``.

    Outer: sites outside ``lam`` covered by some ``B_t``, ``t in lam``.
    Inner: sites ``t in lam`` with ``t in B_s minus B_{s+1}`` for some ``s``
    outside ``lam``. ``t`` lies in ``B_s minus B_{s+1}`` iff ``t - s`` is in
    ``B`` and has a zero coordinate, so only the finitely many ``s = t - b``
    need scanning.
    """
    if not lam:
        return frozenset(), frozenset()
    outer = window(lam, m) - lam
    d = dimension(lam)
    faces = [b for b in base_block(d, m) if min(b) == 0]
    inner = frozenset(
        t for t in lam
        if any(tuple(a - c for a, c in zip(t, b)) not in lam for b in faces)
    )
    return outer, inner


def boundary(lam: SiteSet, m: int) -> SiteSet:
    outer, inner = boundary_parts(lam, m)
    return outer | inner


def far_pairs(lam: SiteSet, m: int) -> Iterator[tuple[Site, Site]]:
    """Ordered pairs ``(s, t)`` of ``lam`` at Chebyshev distance ``> m``."""
    pts = sorted(lam)
    for s in pts:
        for t in pts:
            if chebyshev(s, t) > m:
                yield s, t


def far_matrix(sites: list[Site], m: int) -> np.ndarray:
    """0/1 matrix ``F[i, j] = [||s_i - s_j||_inf > m]`` over an ordered site list."""
    if not sites:
        return np.zeros((0, 0))
    a = np.asarray(sites)
    dist = np.abs(a[:, None, :] - a[None, :, :]).max(axis=2)
    return (dist > m).astype(np.float64)
