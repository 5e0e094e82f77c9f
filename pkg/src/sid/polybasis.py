"""Multivariate monomial bases: enumeration, evaluation and analytic gradients.

A monomial of total degree ``k`` is stored twice: as an exponent vector of
length ``d`` and as a padded list of ``n`` variable slots (``x*x*y`` becomes
``[0, 0, 1]``; unused slots point at a constant-one column).  The slot form
makes batched evaluation and the product rule cheap, because every monomial
is a product of at most ``n`` gathered factors.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from math import comb
from typing import Sequence

import numpy as np

DEFAULT_MAX_TERMS = 50_000
_CHUNK_ELEMENTS = 4_000_000


class BasisSizeError(ValueError):
    """Requested basis would exceed the configured term cap."""


@dataclass(frozen=True)
class MonomialBasis:
    """All-monomial basis in graded-lex order, constant term excluded.

    Attributes
    ----------
    d : int
        Number of state variables.
    max_degree : int
        Largest total degree present.
    exponents : np.ndarray
        ``(K, d)`` integer exponent matrix, one row per basis function.
    """

    d: int
    max_degree: int
    exponents: np.ndarray
    _slots: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def from_exponents(cls, exponents: Sequence[Sequence[int]], max_degree: int | None = None):
        exps = np.asarray(exponents, dtype=np.int64)
        if exps.ndim != 2 or exps.shape[0] == 0:
            raise ValueError("exponents must be a non-empty (K, d) array")
        if np.any(exps < 0):
            raise ValueError("exponents must be nonnegative")
        degrees = exps.sum(axis=1)
        if np.any(degrees < 1):
            raise ValueError("constant monomial is not allowed in the basis")
        if len({tuple(r) for r in exps.tolist()}) != len(exps):
            raise ValueError("duplicate exponent vectors")
        n = int(degrees.max()) if max_degree is None else int(max_degree)
        d = exps.shape[1]
        slots = np.full((len(exps), n), d, dtype=np.int64)
        for i, row in enumerate(exps):
            vars_ = np.repeat(np.arange(d), row)
            slots[i, : len(vars_)] = vars_
        exps.setflags(write=False)
        slots.setflags(write=False)
        return cls(d=d, max_degree=n, exponents=exps, _slots=slots)

    @property
    def size(self) -> int:
        return int(self.exponents.shape[0])

    def __len__(self) -> int:
        return self.size

    @property
    def degrees(self) -> np.ndarray:
        return self.exponents.sum(axis=1)

    def index_of(self, exponent: Sequence[int]) -> int:
        target = tuple(int(e) for e in exponent)
        lookup = getattr(self, "_lookup", None)
        if lookup is None:
            lookup = {tuple(r): i for i, r in enumerate(self.exponents.tolist())}
            object.__setattr__(self, "_lookup", lookup)
        try:
            return lookup[target]
        except KeyError:
            raise KeyError(f"monomial {target} not in basis") from None

    def labels(self, names: Sequence[str] | None = None) -> list[str]:
        """Human-readable monomial labels, e.g. ``xyz`` or ``NO*HO2``."""
        if names is None:
            names = [f"x{j + 1}" for j in range(self.d)]
        if len(names) != self.d:
            raise ValueError(f"expected {self.d} variable names, got {len(names)}")
        sep = "" if all(len(s) == 1 for s in names) else "*"
        out = []
        for row in self.exponents:
            parts = []
            for j, e in enumerate(row):
                if e == 1:
                    parts.append(names[j])
                elif e > 1:
                    parts.append(f"{names[j]}^{e}")
            out.append(sep.join(parts))
        return out

    # -- evaluation ---------------------------------------------------------

    def _padded(self, X: np.ndarray, fill: float) -> np.ndarray:
        pad = np.full(X.shape[:-1] + (1,), fill, dtype=float)
        return np.concatenate([X, pad], axis=-1)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.d:
            raise ValueError(f"state has dimension {X.shape[-1]}, basis expects {self.d}")
        return X

    def _chunks(self, P: int):
        step = max(1, _CHUNK_ELEMENTS // max(1, self.size * self.max_degree))
        for start in range(0, P, step):
            yield slice(start, min(P, start + step))

    def _factors(self, Xp: np.ndarray) -> np.ndarray:
        # (P, K, n) gathered factors
        return Xp[:, self._slots]

    @staticmethod
    def _products_excluding(F: np.ndarray) -> np.ndarray:
        """For each slot s, product of all other slots (no division)."""
        n = F.shape[-1]
        ones = np.ones(F.shape[:-1] + (1,))
        left = np.concatenate([ones, np.cumprod(F[..., :-1], axis=-1)], axis=-1)
        right = np.cumprod(F[..., ::-1], axis=-1)[..., ::-1]
        right = np.concatenate([right[..., 1:], ones], axis=-1)
        assert left.shape[-1] == n
        return left * right

    def evaluate(self, X) -> np.ndarray:
        """Basis values, ``(..., K)`` for states ``(..., d)``."""
        X = self._check(X)
        flat = X.reshape(-1, self.d)
        out = np.empty((flat.shape[0], self.size))
        for sl in self._chunks(flat.shape[0]):
            out[sl] = self._factors(self._padded(flat[sl], 1.0)).prod(axis=-1)
        return out.reshape(X.shape[:-1] + (self.size,))

    def gradient(self, X) -> np.ndarray:
        """Analytic Jacobian ``d b_i / d x_j``, shape ``(..., K, d)``."""
        X = self._check(X)
        flat = X.reshape(-1, self.d)
        P, K = flat.shape[0], self.size
        out = np.zeros((P, K, self.d + 1))
        rows = np.arange(K)
        for sl in self._chunks(P):
            excl = self._products_excluding(self._factors(self._padded(flat[sl], 1.0)))
            block = np.zeros((excl.shape[0], K, self.d + 1))
            for s in range(self.max_degree):
                # each monomial has a single variable per slot, so no index collisions
                block[:, rows, self._slots[:, s]] += excl[:, :, s]
            out[sl] = block
        return out[..., : self.d].reshape(X.shape[:-1] + (K, self.d))

    def directional(self, X, V) -> np.ndarray:
        """``(grad b(x)) v`` for paired rows of X and V, shape ``(..., K)``."""
        X = self._check(X)
        V = self._check(V)
        if V.shape != X.shape:
            raise ValueError("X and V must have the same shape")
        fx, fv = X.reshape(-1, self.d), V.reshape(-1, self.d)
        out = np.empty((fx.shape[0], self.size))
        for sl in self._chunks(fx.shape[0]):
            excl = self._products_excluding(self._factors(self._padded(fx[sl], 1.0)))
            dirs = self._factors(self._padded(fv[sl], 0.0))
            out[sl] = np.einsum("pks,pks->pk", excl, dirs)
        return out.reshape(X.shape[:-1] + (self.size,))

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {"d": self.d, "n": self.max_degree, "terms": self.exponents.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "MonomialBasis":
        return cls.from_exponents(data["terms"], max_degree=data["n"])


def basis_size(d: int, n: int) -> int:
    return comb(d + n, n) - 1


def enumerate_monomials(d: int, n: int, max_terms: int = DEFAULT_MAX_TERMS) -> MonomialBasis:
    """All monomials in ``d`` variables of total degree 1..n, graded-lex order.

    Within a degree the order is lexicographically descending in the exponent
    vector (``x^2, xy, xz, y^2, ...``), so the degree-n basis is a prefix of
    the degree-(n+1) basis.
    """
    if d < 1 or n < 1:
        raise ValueError("d and n must be positive")
    K = basis_size(d, n)
    if K > max_terms:
        raise BasisSizeError(f"basis with d={d}, n={n} has {K} terms (cap {max_terms})")
    rows = []
    for k in range(1, n + 1):
        for combo in combinations_with_replacement(range(d), k):
            e = [0] * d
            for j in combo:
                e[j] += 1
            rows.append(e)
    return MonomialBasis.from_exponents(rows, max_degree=n)


def eval_basis(basis: MonomialBasis, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("eval_basis takes a single state vector")
    return basis.evaluate(x)


def eval_basis_gradient(basis: MonomialBasis, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("eval_basis_gradient takes a single state vector")
    return basis.gradient(x)
