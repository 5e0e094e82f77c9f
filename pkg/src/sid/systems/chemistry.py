"""Truncated photochemical ozone mechanism: 11 species, 10 reactions.

Concentrations are in ppm and time in minutes, which is the unit system in
which the tabulated rate constants are physically sensible (k3 for
O3 + NO is about 27 ppm^-1 min^-1).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

SPECIES = ["O3", "NO", "NO2", "HCHO", "HO2", "HO2H", "OH", "O", "HNO3", "CO", "H2"]
SPECIES12 = SPECIES + ["H2O"]

#: rate constants at 298 K, 1 atm, mid-day photolysis
RATE_CONSTANTS = np.array(
    [0.5, 22.179, 26.937, 0.015, 0.022, 13844.97, 12652.43, 15454.98, 0.0003, 2492.71]
)

# species x reactions
STOICHIOMETRY = np.array(
    [
        [0, 1, -1, 0, 0, 0, 0, 0, 0, 0],  # O3
        [1, 0, -1, 0, 0, 0, -1, 0, 0, 0],  # NO
        [-1, 0, 1, 0, 0, 0, 1, -1, 0, 0],  # NO2
        [0, 0, 0, -1, -1, -1, 0, 0, 0, 0],  # HCHO
        [0, 0, 0, 2, 0, 1, -1, 0, 0, 1],  # HO2
        [0, 0, 0, 0, 0, 0, 0, 0, -1, -1],  # HO2H
        [0, 0, 0, 0, 0, -1, 1, -1, 2, -1],  # OH
        [1, -1, 0, 0, 0, 0, 0, 0, 0, 0],  # O
        [0, 0, 0, 0, 0, 0, 0, 1, 0, 0],  # HNO3
        [0, 0, 0, 1, 1, 1, 0, 0, 0, 0],  # CO
        [0, 0, 0, 0, 1, 0, 0, 0, 0, 0],  # H2
    ],
    dtype=np.int64,
)

CARBON = {"HCHO": 1, "CO": 1}
NITROGEN = {"NO": 1, "NO2": 1, "HNO3": 1}
HYDROGEN = {"HCHO": 2, "HO2": 1, "HO2H": 2, "OH": 1, "HNO3": 1, "H2": 2, "H2O": 2}

IDX = {s: i for i, s in enumerate(SPECIES12)}
I_O, I_OH = IDX["O"], IDX["OH"]

#: uniform initial-condition ranges (ppm): ozone 0-100 ppb, radicals 0-10 ppt
#: (short-lived; O and OH are overwritten by their steady state anyway),
#: everything else 0-10 ppb
INITIAL_RANGES = {
    "O3": (0.0, 0.1),
    "NO": (0.0, 0.01),
    "NO2": (0.0, 0.01),
    "HCHO": (0.0, 0.01),
    "HO2": (0.0, 1e-5),
    "HO2H": (0.0, 0.01),
    "OH": (0.0, 1e-5),
    "O": (0.0, 1e-5),
    "HNO3": (0.0, 0.01),
    "CO": (0.0, 0.01),
    "H2": (0.0, 0.01),
    "H2O": (0.0, 0.01),
}


class ChemistryDomainError(ValueError):
    """Negative concentrations were passed to a rate evaluator."""


class PSSASingularError(ZeroDivisionError):
    """A pseudo-steady-state denominator vanished."""


class StoichiometryError(ValueError):
    """The augmented water row would need a non-integer coefficient."""


def atom_vector(counts: Mapping[str, int], species: Sequence[str] = SPECIES) -> np.ndarray:
    return np.array([counts.get(s, 0) for s in species], dtype=np.int64)


def water_row(B: np.ndarray = STOICHIOMETRY) -> np.ndarray:
    """H2O coefficients that close the hydrogen balance of every reaction."""
    h = atom_vector(HYDROGEN, SPECIES)
    imbalance = h @ B
    if np.any(imbalance % 2):
        raise StoichiometryError(f"odd hydrogen imbalance {imbalance.tolist()}")
    return -imbalance // 2


def stoichiometry12() -> np.ndarray:
    return np.vstack([STOICHIOMETRY, water_row(STOICHIOMETRY)])


def _check_nonneg(X: np.ndarray) -> None:
    if np.any(X < 0):
        raise ChemistryDomainError("negative concentration")


def mass_action_rates(X, k=RATE_CONSTANTS, B: np.ndarray = STOICHIOMETRY) -> np.ndarray:
    """Reaction rates r_j = k_j * prod over reactants of C_i^|B_ij|, shape (..., 10)."""
    X = np.asarray(X, dtype=float)
    n = B.shape[0]
    reactant = np.where(B < 0, -B, 0)
    r = np.empty(X.shape[:-1] + (B.shape[1],))
    for j in range(B.shape[1]):
        term = np.full(X.shape[:-1], float(k[j]))
        for i in np.nonzero(reactant[:n, j])[0]:
            term = term * X[..., i] ** reactant[i, j]
        r[..., j] = term
    return r


def chemistry_field(X, k=RATE_CONSTANTS) -> np.ndarray:
    """The 11 species tendencies written out term by term."""
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != 11:
        raise ValueError("chemistry state must have 11 components")
    _check_nonneg(X)
    O3, NO, NO2, HCHO, HO2, HO2H, OH, O, HNO3, CO, H2 = (X[..., i] for i in range(11))
    k1, k2, k3, k4, k5, k6, k7, k8, k9, k10 = k
    out = np.empty_like(X)
    out[..., 0] = k2 * O - k3 * O3 * NO
    out[..., 1] = k1 * NO2 - k3 * O3 * NO - k7 * NO * HO2
    out[..., 2] = -k1 * NO2 + k3 * O3 * NO + k7 * NO * HO2 - k8 * NO2 * OH
    out[..., 3] = -k4 * HCHO - k5 * HCHO - k6 * HCHO * OH
    out[..., 4] = 2 * k4 * HCHO + k6 * HCHO * OH - k7 * NO * HO2 + k10 * HO2H * OH
    out[..., 5] = -k9 * HO2H - k10 * HO2H * OH
    out[..., 6] = -k6 * HCHO * OH + k7 * NO * HO2 - k8 * NO2 * OH + 2 * k9 * HO2H - k10 * HO2H * OH
    out[..., 7] = k1 * NO2 - k2 * O
    out[..., 8] = k8 * NO2 * OH
    out[..., 9] = k4 * HCHO + k5 * HCHO + k6 * HCHO * OH
    out[..., 10] = k5 * HCHO
    return out


def stoichiometric_field(X, k=RATE_CONSTANTS, B: np.ndarray = STOICHIOMETRY) -> np.ndarray:
    """B @ r(x): the same tendencies assembled from the stoichiometric matrix."""
    X = np.asarray(X, dtype=float)
    _check_nonneg(X)
    return mass_action_rates(X, k, B) @ B.T.astype(float)


def pssa_closure(X, k=RATE_CONSTANTS) -> tuple[np.ndarray, np.ndarray]:
    """Algebraic steady-state concentrations of O and OH."""
    X = np.asarray(X, dtype=float)
    g = lambda s: X[..., IDX[s]]  # noqa: E731
    k1, k2, k6, k7, k8, k9, k10 = (k[i] for i in (0, 1, 5, 6, 7, 8, 9))
    if k2 <= 0:
        raise PSSASingularError("k2 must be positive")
    den = k6 * g("HCHO") + k8 * g("NO2") + k10 * g("HO2H")
    if np.any(den <= 0):
        raise PSSASingularError("OH steady-state denominator is zero")
    c_o = k1 * g("NO2") / k2
    c_oh = (k7 * g("NO") * g("HO2") + 2 * k9 * g("HO2H")) / den
    return c_o, c_oh


def apply_pssa(X, k=RATE_CONSTANTS) -> np.ndarray:
    X = np.array(X, dtype=float)
    c_o, c_oh = pssa_closure(X, k)
    X[..., I_O] = c_o
    X[..., I_OH] = c_oh
    return X


def chemistry_pssa_field(X, k=RATE_CONSTANTS, B: np.ndarray = STOICHIOMETRY) -> np.ndarray:
    """Tendencies with O and OH in pseudo-steady state (their rates set to 0)."""
    X = np.asarray(X, dtype=float)
    _check_nonneg(X)
    Xs = apply_pssa(X, k)
    out = mass_action_rates(Xs, k, B) @ B.T.astype(float)
    out[..., I_O] = 0.0
    out[..., I_OH] = 0.0
    return out


def chemistry12_field(X, k=RATE_CONSTANTS) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != 12:
        raise ValueError("12-species state must have 12 components")
    return stoichiometric_field(X, k, stoichiometry12())


@dataclass
class ChemistryModel:
    """Species list, stoichiometry and rate constants of a mechanism variant."""

    species: list[str]
    B: np.ndarray
    k: np.ndarray = field(default_factory=lambda: RATE_CONSTANTS.copy())
    pssa_enabled: bool = False
    ranges: dict = field(default_factory=lambda: dict(INITIAL_RANGES))

    @classmethod
    def ozone11(cls, k=None, pssa: bool = False, ranges=None) -> "ChemistryModel":
        return cls(list(SPECIES), STOICHIOMETRY.copy(), _rates(k), pssa, _ranges(ranges))

    @classmethod
    def ozone12(cls, k=None, pssa: bool = False, ranges=None) -> "ChemistryModel":
        return cls(list(SPECIES12), stoichiometry12(), _rates(k), pssa, _ranges(ranges))

    @property
    def n_species(self) -> int:
        return len(self.species)

    def field(self, X) -> np.ndarray:
        if self.pssa_enabled:
            return chemistry_pssa_field(X, self.k, self.B)
        if self.n_species == 11:
            return chemistry_field(X, self.k)
        return stoichiometric_field(X, self.k, self.B)

    def full_field(self, X) -> np.ndarray:
        return stoichiometric_field(X, self.k, self.B)

    def project(self, X) -> np.ndarray:
        """Clip to the nonnegative orthant and, under PSSA, refill O and OH."""
        X = np.maximum(np.asarray(X, dtype=float), 0.0)
        return apply_pssa(X, self.k) if self.pssa_enabled else X

    def random_initial(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        lo = np.array([self.ranges[s][0] for s in self.species])
        hi = np.array([self.ranges[s][1] for s in self.species])
        shape = (self.n_species,) if n is None else (n, self.n_species)
        return lo + (hi - lo) * rng.random(shape)


def _rates(k) -> np.ndarray:
    if k is None:
        return RATE_CONSTANTS.copy()
    k = np.asarray(k, dtype=float)
    if k.shape != (10,) or np.any(k <= 0):
        raise ValueError("expected 10 positive rate constants")
    return k


def _ranges(overrides) -> dict:
    out = dict(INITIAL_RANGES)
    for name, pair in (overrides or {}).items():
        if name not in out:
            raise ValueError(f"unknown species {name!r}")
        lo, hi = (float(v) for v in pair)
        if not 0 <= lo <= hi:
            raise ValueError(f"{name}: need 0 <= lo <= hi, got {lo}, {hi}")
        out[name] = (lo, hi)
    return out
