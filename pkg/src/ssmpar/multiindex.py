"""Multi-index algebra and power-series composition coefficients.

Multi-indices are plain tuples of non-negative integers. Coefficient maps are
sparse dictionaries keyed by multi-index; only nonzero entries are stored.
"""

from __future__ import annotations

import builtins
from dataclasses import dataclass
from math import comb
from typing import Dict, Iterable, Mapping, Tuple

import numpy as np

MultiIndex = Tuple[int, ...]
ScalarSeries = Dict[MultiIndex, complex]

__all__ = [
    "MultiIndex",
    "MonomialBasis",
    "CompositionTable",
    "check_index",
    "index_order",
    "unit",
    "zero",
    "add",
    "subtract",
    "enumerate_indices",
    "indices_up_to",
    "basis",
    "multiply_series",
    "scalar_power_coefficients",
    "vector_power_coefficients",
    "evaluate_monomials",
]


def check_index(m: Iterable[int]) -> MultiIndex:
    """Return ``m`` as a tuple after validating non-negativity."""
    t = tuple(int(v) for v in m)
    if any(v < 0 for v in t):
        raise ValueError(f"multi-index entries must be non-negative, got {t}")
    return t


def index_order(m: MultiIndex) -> int:
    return sum(m)


def unit(j: int, dimension: int) -> MultiIndex:
    return tuple(1 if i == j else 0 for i in range(dimension))


def zero(dimension: int) -> MultiIndex:
    return (0,) * dimension


def add(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    return tuple(x + y for x, y in zip(a, b))


def subtract(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    """Element-wise difference; raises if any entry would become negative."""
    out = tuple(x - y for x, y in zip(a, b))
    if any(v < 0 for v in out):
        raise ValueError(f"cannot subtract {b} from {a}: negative entry")
    return out


def _dominates(h: MultiIndex, m: MultiIndex) -> bool:
    return all(x >= y for x, y in zip(h, m))


_ENUM_CACHE: Dict[Tuple[int, int], Tuple[MultiIndex, ...]] = {}


def enumerate_indices(order: int, dimension: int) -> Tuple[MultiIndex, ...]:
    """All multi-indices of a given order in canonical order.

    Canonical order is graded reverse-lexicographic: within one order the
    tuples are sorted lexicographically in decreasing order, so that
    ``enumerate_indices(3, 2)`` gives ``(3,0), (2,1), (1,2), (0,3)``.

    Parameters
    ----------
    order : int
        Total degree, ``>= 0``.
    dimension : int
        Number of entries, ``>= 1``.

    Returns
    -------
    tuple of tuple of int
        ``binomial(order + dimension - 1, dimension - 1)`` indices.
    """
    if order < 0 or dimension < 1:
        raise ValueError("order must be >= 0 and dimension >= 1")
    key = (order, dimension)
    hit = _ENUM_CACHE.get(key)
    if hit is not None:
        return hit

    def rec(remaining: int, slots: int):
        if slots == 1:
            yield (remaining,)
            return
        for first in range(remaining, -1, -1):
            for rest in rec(remaining - first, slots - 1):
                yield (first,) + rest

    out = tuple(rec(order, dimension))
    _ENUM_CACHE[key] = out
    return out


# module-level alias matching the operation name; shadows the builtin only here
enumerate = enumerate_indices  # noqa: A001


def indices_up_to(max_order: int, dimension: int, min_order: int = 0) -> Tuple[MultiIndex, ...]:
    out = []
    for k in range(min_order, max_order + 1):
        out.extend(enumerate_indices(k, dimension))
    return tuple(out)


@dataclass(frozen=True)
class MonomialBasis:
    """All monomials of one order in canonical order."""

    dimension: int
    order: int
    indices: Tuple[MultiIndex, ...]

    def __len__(self) -> int:
        return len(self.indices)

    def position(self, m: MultiIndex) -> int:
        return self.indices.index(tuple(m))


def basis(order: int, dimension: int) -> MonomialBasis:
    idx = enumerate_indices(order, dimension)
    assert len(idx) == comb(order + dimension - 1, dimension - 1)
    return MonomialBasis(dimension, order, idx)


def multiply_series(a: Mapping[MultiIndex, complex], b: Mapping[MultiIndex, complex],
                    max_order: int) -> ScalarSeries:
    """Truncated product of two sparse scalar series."""
    out: ScalarSeries = {}
    for ma, ca in a.items():
        oa = sum(ma)
        if oa > max_order:
            continue
        for mb, cb in b.items():
            if oa + sum(mb) > max_order:
                continue
            h = add(ma, mb)
            out[h] = out.get(h, 0.0) + ca * cb
    return {h: v for h, v in out.items() if v != 0}


class CompositionTable:
    """Powers of one scalar power series without constant term.

    ``table.power(s)`` returns the sparse map ``h -> H_{s,h}`` of
    ``(sum_m W_m p^m)^s`` truncated at ``max_order``. Powers are built by the
    radial-derivative recursion and cached; returned maps must not be mutated.

    Parameters
    ----------
    series : mapping
        Coefficients ``W_m``; the zero index must be absent or zero.
    dimension : int
        Length of the multi-indices.
    max_order : int
        Truncation order of every power.
    """

    def __init__(self, series: Mapping[MultiIndex, complex], dimension: int, max_order: int):
        z = zero(dimension)
        if abs(series.get(z, 0.0)) != 0.0:
            raise ValueError("series has a nonzero constant term; composition recursion requires none")
        self.dimension = dimension
        self.max_order = max_order
        self._series = {tuple(m): complex(c) for m, c in series.items()
                        if c != 0 and sum(m) <= max_order}
        self._powers: Dict[int, ScalarSeries] = {0: {z: 1.0 + 0j}}

    @property
    def series(self) -> ScalarSeries:
        return dict(self._series)

    def power(self, s: int) -> ScalarSeries:
        if s < 0:
            raise ValueError("power must be non-negative")
        if s in self._powers:
            return self._powers[s]
        prev = self.power(s - 1)
        if s == 1:
            out = dict(self._series)
        else:
            out = {}
            # H_{s,h} = (s/h_j) sum_{m<=h} m_j W_m H_{s-1,h-m}, j first nonzero slot of h
            targets = set()
            for m in self._series:
                for q in prev:
                    if sum(m) + sum(q) <= self.max_order:
                        targets.add(add(m, q))
            for h in targets:
                j = next(i for i, v in builtins.enumerate(h) if v)
                acc = 0j
                for m, w in self._series.items():
                    if m[j] == 0 or not _dominates(h, m):
                        continue
                    hp = prev.get(subtract(h, m))
                    if hp is not None:
                        acc += m[j] * w * hp
                if acc != 0:
                    out[h] = s * acc / h[j]
        self._powers[s] = out
        return out


def scalar_power_coefficients(series: Mapping[MultiIndex, complex], coordinate: int | None,
                              power: int, target_order: int,
                              dimension: int | None = None) -> ScalarSeries:
    """Coefficients ``H^i_{s,h}`` of the ``s``-th power of one coordinate.

    Parameters
    ----------
    series : mapping
        Either a scalar map ``m -> W^i_m`` (``coordinate=None``) or a vector
        map ``m -> W_m`` from which entry ``coordinate`` is taken.
    coordinate : int or None
        Coordinate ``i`` to extract from a vector-valued series.
    power : int
        Exponent ``s >= 0``.
    target_order : int
        Highest ``|h|`` retained.

    Returns
    -------
    dict
        Sparse map ``h -> H^i_{s,h}``.

    Raises
    ------
    ValueError
        If the series has a nonzero constant term.
    """
    scalar = _extract(series, coordinate)
    if dimension is None:
        dimension = len(next(iter(series))) if series else 1
    return dict(CompositionTable(scalar, dimension, target_order).power(power))


def _extract(series: Mapping[MultiIndex, object], coordinate: int | None) -> ScalarSeries:
    if coordinate is None:
        return {tuple(m): complex(c) for m, c in series.items() if c != 0}
    out = {}
    for m, v in series.items():
        c = complex(np.asarray(v)[coordinate])
        if c != 0:
            out[tuple(m)] = c
    return out


def vector_power_coefficients(series: Mapping[MultiIndex, object], power_index: MultiIndex,
                              target_order: int, dimension: int | None = None,
                              tables: Dict[int, CompositionTable] | None = None) -> ScalarSeries:
    """Coefficients ``H_{n,h}`` of ``W(p)^n = prod_i W^i(p)^{n_i}``.

    ``tables`` may carry prebuilt per-coordinate :class:`CompositionTable`
    objects (keyed by coordinate) to share work across many ``n``.
    """
    if dimension is None:
        dimension = len(next(iter(series))) if series else 1
    result: ScalarSeries = {zero(dimension): 1.0 + 0j}
    for i, ni in builtins.enumerate(power_index):
        if ni == 0:
            continue
        if tables is not None and i in tables:
            tab = tables[i]
        else:
            tab = CompositionTable(_extract(series, i), dimension, target_order)
            if tables is not None:
                tables[i] = tab
        result = multiply_series(result, tab.power(ni), target_order)
        if not result:
            break
    return result


def evaluate_monomials(indices: Iterable[MultiIndex], p: np.ndarray) -> np.ndarray:
    """Values ``p^m`` for each index; ``p`` has shape ``(M,)`` or ``(M, K)``."""
    p = np.asarray(p)
    idx = np.asarray(list(indices), dtype=int)
    if p.ndim == 1:
        return np.prod(p[None, :] ** idx, axis=1)
    return np.prod(p[None, :, :] ** idx[:, :, None], axis=1)
