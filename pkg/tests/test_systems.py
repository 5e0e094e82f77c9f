from fractions import Fraction

import numpy as np
import pytest

from sid.polybasis import enumerate_monomials
from sid.systems import (
    chemistry as chem,
    fluid,
    get_system,
    known_cq_catalog,
    sample_states,
    system_names,
)

# The third linear invariant of the 11-species mechanism, derived by hand from
# the null space of B^T restricted to the full-field reactions.  The H2
# coefficient is 6 - 12 k4/k5 = -24/11 for the tabulated k4, k5.
CQ3 = {
    "O3": 6, "NO": -5, "NO2": 1, "HCHO": 3, "HO2": 9, "HO2H": 6,
    "OH": 3, "O": 6, "HNO3": 4, "CO": -3, "H2": Fraction(-24, 11),
}


def cq3_vector():
    return np.array([float(CQ3[s]) for s in chem.SPECIES])


def positive_states(n, d, seed=0):
    return np.random.default_rng(seed).uniform(0.0, 0.1, size=(n, d))


def test_registry_dimensions():
    dims = {name: get_system(name).dim for name in system_names()}
    assert dims == {
        "lv3": 3, "sho2": 2, "fluid2d": 12, "fluid3d": 24,
        "ozone11": 11, "ozone11-pssa": 11, "ozone12": 12,
    }
    with pytest.raises(KeyError):
        get_system("nope")
    with pytest.raises(ValueError):
        get_system("lv3", rate_constants=[1.0] * 10)


def test_lotka_volterra_field_explicit():
    s = get_system("lv3")
    assert np.allclose(s.field(np.array([1.0, 2.0, 3.0])), [1 * (2 - 3), 2 * (3 - 1), 3 * (1 - 2)])
    assert np.array_equal(s.field(np.array([2.0, 2.0, 2.0])), np.zeros(3))


def test_stoichiometric_assembly_matches_explicit_field():
    X = positive_states(50, 11)
    assert np.allclose(chem.stoichiometric_field(X), chem.chemistry_field(X), rtol=1e-13, atol=1e-16)


@pytest.mark.parametrize("atoms", [chem.CARBON, chem.NITROGEN])
def test_atom_balance_every_reaction(atoms):
    a = chem.atom_vector(atoms)
    assert np.all(a @ chem.STOICHIOMETRY == 0)


def test_water_row_oracle():
    # one water in HCHO + OH -> HO2 + CO + H2O and in HO2H + OH -> HO2 + H2O
    assert chem.water_row().tolist() == [0, 0, 0, 0, 0, 1, 0, 0, 0, 1]
    B12 = chem.stoichiometry12()
    h = chem.atom_vector(chem.HYDROGEN, chem.SPECIES12)
    assert np.all(h @ B12 == 0)
    with pytest.raises(chem.StoichiometryError):
        # a lone HO2 carries one hydrogen, which no whole water can balance
        chem.water_row(np.array([[0], [0], [0], [0], [1], [0], [0], [0], [0], [0], [0]]))


def test_cq3_is_exact_for_full_field():
    X = positive_states(200, 11, seed=4)
    F = chem.chemistry_field(X)
    v = cq3_vector()
    assert np.max(np.abs(F @ v)) < 1e-12 * np.max(np.abs(F) @ np.abs(v))
    # and the coefficient follows the rate constants
    k = chem.RATE_CONSTANTS
    assert np.isclose(6 - 12 * k[3] / k[4], -24 / 11)


def test_pssa_states_are_fixed_points_of_fast_species():
    X = chem.apply_pssa(positive_states(30, 11, seed=2))
    F = chem.chemistry_field(X)
    scale = np.abs(F).max()
    assert np.max(np.abs(F[:, chem.I_O])) < 1e-12 * scale
    assert np.max(np.abs(F[:, chem.I_OH])) < 1e-12 * scale
    G = chem.chemistry_pssa_field(X)
    assert np.all(G[:, [chem.I_O, chem.I_OH]] == 0)
    # slow species see the same tendencies
    slow = [i for i in range(11) if i not in (chem.I_O, chem.I_OH)]
    assert np.allclose(G[:, slow], F[:, slow], rtol=1e-10, atol=1e-18)


def test_chemistry_errors():
    x = positive_states(1, 11)[0]
    x[0] = -1e-3
    with pytest.raises(chem.ChemistryDomainError):
        chem.chemistry_field(x)
    with pytest.raises(chem.PSSASingularError):
        chem.pssa_closure(np.zeros(11))
    with pytest.raises(ValueError):
        chem.ChemistryModel.ozone11(k=[1.0] * 9)
    with pytest.raises(ValueError):
        chem.ChemistryModel.ozone11(ranges={"XYZ": (0, 1)})
    with pytest.raises(ValueError):
        chem.ChemistryModel.ozone11(ranges={"O3": (1, 0)})


def test_initial_ranges_override():
    s = get_system("ozone11", initial_ranges={"O3": (0.5, 0.5)})
    x = s.initial_state(np.random.default_rng(0))
    assert x[0] == 0.5
    assert np.all(x >= 0)


def test_fluid2d_constraint_and_force_direction():
    s = get_system("fluid2d")
    X = sample_states(s, 40, seed=1)
    q = fluid.quantities2d([X[:, i] for i in range(12)])
    # sampled velocities keep the area stationary
    assert np.max(np.abs(q["D"])) < 1e-12
    F = s.field(X)
    x, y, _, _ = fluid._split2d([X[:, i] for i in range(12)])
    gx, gy = fluid.area_gradient2d(x, y)
    for i in range(3):
        # accelerations are parallel to the area gradient and share one multiplier
        lam = F[:, 4 * i + 2] * gy[i] - F[:, 4 * i + 3] * gx[i]
        assert np.max(np.abs(lam)) < 1e-10
    # total force vanishes: center of mass moves uniformly
    assert np.allclose(F[:, 2] + F[:, 6] + F[:, 10], 0, atol=1e-10)


def test_fluid_degenerate_configuration():
    X = np.zeros(12)
    with pytest.raises(fluid.DegenerateConfigurationError):
        fluid.fluid2d_field(X)
    with pytest.raises(fluid.DegenerateConfigurationError):
        fluid.fluid3d_field(np.zeros(24))


def test_fluid3d_volume_rate_zero_on_samples():
    s = get_system("fluid3d")
    X = sample_states(s, 30, seed=2)
    q = fluid.quantities3d([X[:, i] for i in range(24)])
    assert np.max(np.abs(q["D"])) < 1e-10 * max(1.0, np.abs(q["V"]).max())


@pytest.mark.filterwarnings("ignore:.*not expressible")
@pytest.mark.parametrize(
    "name,degree",
    [("lv3", 3), ("sho2", 2), ("fluid2d", 2), ("fluid2d", 4), ("fluid3d", 2), ("fluid3d", 3),
     ("ozone11", 1), ("ozone12", 1)],
)
def test_catalog_is_conserved(name, degree):
    """grad H . f = 0 at sampled states for every catalogued invariant."""
    s = get_system(name)
    basis = enumerate_monomials(s.dim, degree)
    X = sample_states(s, 60, seed=3)
    F = s.field(X)
    J = basis.gradient(X)
    cat = known_cq_catalog(s, basis)
    assert cat
    for label, theta in cat:
        gH = np.einsum("pkd,k->pd", J, theta)
        rate = np.einsum("pd,pd->p", gH, F)
        scale = np.einsum("pd,pd->p", np.abs(gH), np.abs(F))
        assert np.max(np.abs(rate) / (scale + 1e-300)) < 1e-10, label


def test_catalog_skips_terms_outside_basis():
    s = get_system("lv3")
    with pytest.warns(UserWarning):
        cat = known_cq_catalog(s, enumerate_monomials(3, 2))
    assert [lab for lab, _ in cat] == ["H1"]


def test_sampling_deterministic_and_shaped():
    for name in ("lv3", "fluid2d", "ozone11"):
        s = get_system(name)
        a = sample_states(s, 45, seed=7)
        b = sample_states(s, 45, seed=7)
        assert a.shape == (45, s.dim)
        assert np.array_equal(a, b)
    X = sample_states(get_system("ozone12"), 80, seed=0)
    assert np.all(X >= 0)
