"""Dynamical systems behind one interface, addressable by name."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .. import ode
from ..polybasis import MonomialBasis
from . import chemistry as chem
from . import fluid

__all__ = [
    "DynamicalSystem",
    "SamplerError",
    "get_system",
    "system_names",
    "sample_states",
    "known_cq_catalog",
    "lotka_volterra_field",
    "oscillator_field",
]


class SamplerError(RuntimeError):
    """Too many candidate states were rejected."""


@dataclass
class DynamicalSystem:
    name: str
    dim: int
    field: Callable[[np.ndarray], np.ndarray]
    var_names: list[str]
    sampler: Callable[[np.random.Generator, int], np.ndarray]
    initial_state: Callable[[np.random.Generator], np.ndarray]
    catalog: dict[str, Callable] = field(default_factory=dict)
    description: str = ""
    # simulation defaults
    sim_field: Optional[Callable[[np.ndarray], np.ndarray]] = None
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None
    admissible: Optional[Callable[[np.ndarray], bool]] = None
    horizon: float = 1.0
    chemistry: Optional[chem.ChemistryModel] = None
    # field errors that should shrink the step rather than abort
    step_errors: tuple = ()

    def __post_init__(self):
        if len(self.var_names) != self.dim:
            raise ValueError(f"{self.name}: {len(self.var_names)} names for dimension {self.dim}")

    @property
    def integration_field(self):
        return self.sim_field if self.sim_field is not None else self.field


# ---------------------------------------------------------------------------
# vector fields


def lotka_volterra_field(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != 3:
        raise ValueError("Lotka-Volterra state must have 3 components")
    x, y, z = X[..., 0], X[..., 1], X[..., 2]
    return np.stack([x * (y - z), y * (z - x), z * (x - y)], axis=-1)


def oscillator_field(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != 2:
        raise ValueError("oscillator state must have 2 components")
    return np.stack([X[..., 1], -X[..., 0]], axis=-1)


# ---------------------------------------------------------------------------
# samplers


def _gaussian(d):
    def sample(rng, P):
        return rng.standard_normal((P, d))

    return sample


def _constrained_gaussian(d, project, degenerate):
    def sample(rng, P):
        kept, tried = [], 0
        while sum(len(k) for k in kept) < P:
            need = P - sum(len(k) for k in kept)
            cand = rng.standard_normal((need, d))
            tried += need
            bad = degenerate(cand)
            kept.append(project(cand[~bad]))
            if tried >= 2 * P and sum(len(k) for k in kept) < tried / 2:
                raise SamplerError(f"more than half of {tried} candidate states were degenerate")
        return np.concatenate(kept)[:P]

    return sample


POINTS_PER_TRAJECTORY = 40
CHEM_HORIZON = 20.0  # minutes


def _chemistry_sampler(model: chem.ChemistryModel):
    def sample(rng, P):
        n_traj = math.ceil(P / POINTS_PER_TRAJECTORY)
        x0 = model.random_initial(rng, n_traj)
        t = np.linspace(0.0, CHEM_HORIZON, POINTS_PER_TRAJECTORY)
        states, _ = ode.dopri45(
            model.field, x0, t, rtol=1e-8, atol=1e-14, project=model.project,
            reject_on=(chem.ChemistryDomainError,),
        )
        # trajectory-major ordering: all points of trajectory 0, then 1, ...
        pts = np.transpose(states, (1, 0, 2)).reshape(-1, model.n_species)
        return pts[:P]

    return sample


def _uniform_box(lo, hi, d):
    def init(rng):
        return lo + (hi - lo) * rng.random(d)

    return init


# ---------------------------------------------------------------------------
# known invariants as (exponent, coefficient) term lists


def _symbols(names):
    import sympy

    return sympy.symbols(names, real=True)


def _poly_terms(expr, syms):
    import sympy

    poly = sympy.Poly(sympy.expand(expr), *syms)
    return [(m, float(c)) for m, c in poly.terms()]


def _catalog_from(quantities_fn, labels, names):
    @lru_cache(maxsize=None)
    def expansions():
        syms = _symbols(names)
        q = quantities_fn(list(syms))
        return {lab: _poly_terms(q[lab], syms) for lab in labels}

    return {lab: (lambda lab=lab: expansions()[lab]) for lab in labels}


def _linear_catalog(vectors: dict[str, dict[str, int]], names):
    out = {}
    for label, counts in vectors.items():
        terms = []
        for s, c in counts.items():
            e = [0] * len(names)
            e[names.index(s)] = 1
            terms.append((tuple(e), float(c)))
        out[label] = lambda terms=terms: terms
    return out


def _lv_catalog():
    return {
        "H1": lambda: [((1, 0, 0), 1.0), ((0, 1, 0), 1.0), ((0, 0, 1), 1.0)],
        "H2": lambda: [((1, 1, 1), 1.0)],
    }


def _sho_catalog():
    return {"H": lambda: [((2, 0), 1.0), ((0, 2), 1.0)]}


# ---------------------------------------------------------------------------
# registry


def _build(name: str, rate_constants=None, initial_ranges=None) -> DynamicalSystem:
    if name == "lv3":
        return DynamicalSystem(
            name="lv3",
            dim=3,
            field=lotka_volterra_field,
            var_names=["x", "y", "z"],
            sampler=_gaussian(3),
            initial_state=_uniform_box(0.5, 2.0, 3),
            catalog=_lv_catalog(),
            description="three-species Lotka-Volterra",
            horizon=5.0,
        )
    if name == "sho2":
        return DynamicalSystem(
            name="sho2",
            dim=2,
            field=oscillator_field,
            var_names=["x", "p"],
            sampler=_gaussian(2),
            initial_state=_uniform_box(-1.0, 1.0, 2),
            catalog=_sho_catalog(),
            description="1D harmonic oscillator",
            horizon=2 * np.pi,
        )
    if name == "fluid2d":
        sampler = _constrained_gaussian(12, fluid.project_constraint2d, fluid.degenerate2d)
        return DynamicalSystem(
            name="fluid2d",
            dim=12,
            field=fluid.fluid2d_field,
            var_names=list(fluid.NAMES_2D),
            sampler=sampler,
            initial_state=lambda rng: sampler(rng, 1)[0],
            catalog=_catalog_from(fluid.quantities2d, fluid.CATALOG_2D, fluid.NAMES_2D),
            description="triangular fluid element (area preserving)",
            horizon=1.0,
        )
    if name == "fluid3d":
        sampler = _constrained_gaussian(24, fluid.project_constraint3d, fluid.degenerate3d)
        return DynamicalSystem(
            name="fluid3d",
            dim=24,
            field=fluid.fluid3d_field,
            var_names=list(fluid.NAMES_3D),
            sampler=sampler,
            initial_state=lambda rng: sampler(rng, 1)[0],
            catalog=_catalog_from(fluid.quantities3d, fluid.CATALOG_3D, fluid.NAMES_3D),
            description="tetrahedral fluid element (volume preserving)",
            horizon=1.0,
        )
    if name in ("ozone11", "ozone11-pssa", "ozone12"):
        pssa = name == "ozone11-pssa"
        if name == "ozone12":
            model = chem.ChemistryModel.ozone12(rate_constants, pssa=False, ranges=initial_ranges)
            sim_model = chem.ChemistryModel.ozone12(rate_constants, pssa=True, ranges=initial_ranges)
            known = {"H_C": chem.CARBON, "H_N": chem.NITROGEN, "H_H": chem.HYDROGEN}
        else:
            model = chem.ChemistryModel.ozone11(rate_constants, pssa=pssa, ranges=initial_ranges)
            sim_model = chem.ChemistryModel.ozone11(rate_constants, pssa=True, ranges=initial_ranges)
            known = {"H_C": chem.CARBON, "H_N": chem.NITROGEN}
        return DynamicalSystem(
            name=name,
            dim=model.n_species,
            field=model.field,
            var_names=list(model.species),
            sampler=_chemistry_sampler(model),
            initial_state=lambda rng: sim_model.random_initial(rng),
            catalog=_linear_catalog(known, model.species),
            description=f"ozone photochemistry, {model.n_species} species"
            + (" (PSSA for O, OH)" if pssa else ""),
            sim_field=sim_model.field,
            project=sim_model.project,
            admissible=lambda x: bool(np.all(x > -1e-12)),
            horizon=CHEM_HORIZON,
            chemistry=model,
            step_errors=(chem.ChemistryDomainError,),
        )
    raise KeyError(f"unknown system {name!r}; choose from {', '.join(SYSTEM_NAMES)}")


SYSTEM_NAMES = ["lv3", "sho2", "fluid2d", "fluid3d", "ozone11", "ozone11-pssa", "ozone12"]
CHEMISTRY_NAMES = ("ozone11", "ozone11-pssa", "ozone12")


def system_names() -> list[str]:
    return list(SYSTEM_NAMES)


def get_system(name: str, rate_constants=None, initial_ranges=None) -> DynamicalSystem:
    """Look up a system by name; chemistry accepts rate-constant and
    initial-range overrides (``{species: (lo, hi)}`` in ppm)."""
    if (rate_constants is not None or initial_ranges) and name not in CHEMISTRY_NAMES:
        raise ValueError(f"{name} takes no chemistry overrides")
    return _build(name, rate_constants, initial_ranges)


def sample_states(system: DynamicalSystem, P: int, seed: int) -> np.ndarray:
    """``P`` states from the system's sampling domain, deterministic in ``seed``."""
    if P < 1:
        raise ValueError("P must be positive")
    rng = np.random.default_rng(seed)
    X = np.asarray(system.sampler(rng, P), dtype=float)
    assert X.shape == (P, system.dim)
    return X


def known_cq_catalog(system: DynamicalSystem, basis: MonomialBasis) -> list[tuple[str, np.ndarray]]:
    """Coefficient vectors of the system's known invariants in ``basis``.

    Invariants needing monomials outside the basis are skipped with a warning.
    """
    if basis.d != system.dim:
        raise ValueError("basis dimension does not match system")
    out = []
    for label, terms_fn in system.catalog.items():
        theta = np.zeros(basis.size)
        try:
            for expo, coef in terms_fn():
                theta[basis.index_of(expo)] += coef
        except KeyError:
            warnings.warn(f"{system.name}: {label} is not expressible in a degree-{basis.max_degree} basis")
            continue
        out.append((label, theta))
    return out
