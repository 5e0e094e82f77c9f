import csv

import numpy as np
import pytest

from sid import ode
from sid.polybasis import enumerate_monomials
from sid.simulate import (
    ConservationStats,
    IntegrationControl,
    Trajectory,
    conservation_stats,
    fluid_identity_check,
    integrate,
    monte_carlo_validate,
    per_case_rows,
)
from sid.systems import DynamicalSystem, chemistry as chem, fluid, get_system, known_cq_catalog

LV_BASIS = enumerate_monomials(3, 3)


def lv_thetas():
    return np.stack([th for _, th in known_cq_catalog(get_system("lv3"), LV_BASIS)], axis=1)


def species_vector(counts, species=chem.SPECIES):
    return np.array([float(counts.get(s, 0)) for s in species])


def test_lv_fixed_point():
    tr = integrate(get_system("lv3"), np.ones(3), 5.0)
    assert np.abs(tr.states - 1.0).max() < 1e-14


def test_lv_conserves_sum_and_product():
    tr = integrate(get_system("lv3"), np.array([1.0, 2.0, 3.0]), 5.0)
    H = LV_BASIS.evaluate(tr.states) @ lv_thetas()
    assert np.allclose(H, 6.0, rtol=1e-7)
    st = conservation_stats(tr, lv_thetas(), LV_BASIS, cv_threshold=1e-8)
    assert np.all(st.cv < 1e-8) and np.all(st.passed)


def test_rk4_fourth_order():
    s = get_system("lv3")
    x0 = np.array([1.0, 2.0, 3.0])
    ref = integrate(s, x0, 1.0, IntegrationControl(rtol=1e-13, atol=1e-15, n_out=11)).states
    errs = []
    for dt in (0.02, 0.01):
        tr = integrate(s, x0, 1.0, IntegrationControl(method="rk4", dt=dt, n_out=11))
        errs.append(np.abs(tr.states - ref).max())
    assert 12.0 < errs[0] / errs[1] < 20.0


def test_rk4_output_grid_strictly_increasing():
    tr = integrate(get_system("sho2"), np.array([1.0, 0.0]), 1.0, IntegrationControl(method="rk4", dt=0.1, n_out=50))
    assert np.all(np.diff(tr.t) > 0) and tr.t[-1] == 1.0


def test_nonconserved_probe_and_zero_invariant():
    s = get_system("ozone11")
    tr = integrate(s, s.initial_state(np.random.default_rng(0)), 20.0)
    basis = enumerate_monomials(11, 1)
    o3 = species_vector({"O3": 1})
    zero = np.zeros(11)
    st = conservation_stats(tr, np.stack([o3, zero], axis=1), basis, cv_threshold=1e-3)
    assert st.cv[0, 0] > 1e-3
    assert st.absolute[0, 1] and st.cv[0, 1] == 0.0 and not st.absolute[0, 0]


def test_pssa_rows_stay_at_steady_state():
    s = get_system("ozone11")
    tr = integrate(s, s.initial_state(np.random.default_rng(3)), 20.0)
    c_o, c_oh = chem.pssa_closure(tr.states)
    assert np.allclose(tr.states[:, chem.I_O], c_o, rtol=1e-12, atol=0)
    assert np.allclose(tr.states[:, chem.I_OH], c_oh, rtol=1e-12, atol=0)
    assert np.all(s.integration_field(tr.states)[:, [chem.I_O, chem.I_OH]] == 0)
    assert np.all(tr.states >= 0)


def test_fluid2d_area_and_energy_conserved():
    s = get_system("fluid2d")
    tr = integrate(s, s.initial_state(np.random.default_rng(1)), 1.0)
    q = fluid.quantities2d([tr.states[:, i] for i in range(12)])
    for name in ("A", "E", "L"):
        v = q[name]
        assert np.std(v) < 1e-6 * max(abs(np.mean(v)), 1e-12), name


def test_fluid3d_volume_and_energy_conserved():
    s = get_system("fluid3d")
    tr = integrate(s, s.initial_state(np.random.default_rng(2)), 1.0)
    q = fluid.quantities3d([tr.states[:, i] for i in range(24)])
    for name in ("V", "E"):
        v = q[name]
        assert np.std(v) < 1e-6 * abs(np.mean(v)), name


def test_fluid_identities():
    res = fluid_identity_check(1000, seed=0)
    assert res["identity2d"] < 1e-8
    assert res["circulation3d"] < 1e-10
    assert res["com3d"] < 1e-8
    # the form IK = EA - L omega - DG, as usually printed, has the wrong sign
    assert res["identity2d_as_printed"] > 0.1


def test_center_of_mass_state_quantities_vanish():
    X = np.tile([0.3, -1.2, 0.7, 2.0], 3)
    q = fluid.quantities2d(list(X))
    for name in ("L", "E", "I", "G", "K", "A", "D", "omega"):
        assert abs(q[name]) < 1e-14, name
    Y = np.tile([0.3, -1.2, 0.5, 0.7, 2.0, -0.1], 4)
    r = fluid.quantities3d(list(Y))
    for name in ("L_x", "L_y", "L_z", "E", "V", "D", "G", "K", "C1", "C2", "C3", "C4"):
        assert abs(r[name]) < 1e-14, name


def test_monte_carlo_chemistry_atom_invariants():
    s = get_system("ozone11")
    thetas = np.stack([species_vector(chem.CARBON), species_vector(chem.NITROGEN)], axis=1)
    st = monte_carlo_validate(s, thetas, enumerate_monomials(11, 1), n_cases=6, seed=0, cv_threshold=1e-6)
    assert st.n_cases == 6 and not st.failures
    assert np.all(st.pass_fraction == 1.0)


def test_monte_carlo_thread_independent():
    s = get_system("lv3")
    a = monte_carlo_validate(s, lv_thetas(), LV_BASIS, n_cases=8, seed=3, threads=1)
    b = monte_carlo_validate(s, lv_thetas(), LV_BASIS, n_cases=8, seed=3, threads=4)
    assert np.array_equal(a.cv, b.cv) and np.array_equal(a.mean, b.mean)
    assert np.all(a.cv < 1e-6)
    d = a.to_dict()
    assert d["n_cases"] == 8 and d["pass_fraction"] == [1.0, 1.0]


def test_monte_carlo_env_threads(monkeypatch):
    monkeypatch.setenv("SID_THREADS", "3")
    s = get_system("lv3")
    st = monte_carlo_validate(s, lv_thetas(), LV_BASIS, n_cases=4, seed=0)
    assert st.n_cases == 4


def test_monte_carlo_records_failures():
    def field(X):
        X = np.asarray(X, dtype=float)
        if np.any(X[..., 0] > 0.5):
            raise ValueError("outside model domain")
        return -X

    s = DynamicalSystem(
        name="decay", dim=1, field=field, var_names=["x"],
        sampler=lambda rng, P: rng.random((P, 1)), initial_state=lambda rng: rng.random(1),
    )
    basis = enumerate_monomials(1, 1)
    st = monte_carlo_validate(s, np.ones(1), basis, n_cases=10, seed=0, t_end=0.1)
    assert st.failures and st.n_cases + len(st.failures) == 10
    assert all("outside model domain" in msg for _, msg in st.failures)
    assert 0.0 <= st.pass_fraction[0] <= 1.0
    with pytest.raises(ValueError):
        monte_carlo_validate(s, np.ones(1), basis, n_cases=0)


def test_step_underflow_raises_with_time():
    # x' = x^2 from x = 1 blows up at t = 1
    with pytest.raises(ode.IntegrationError) as err:
        ode.dopri45(lambda x: x**2, np.array([1.0]), np.array([0.0, 2.0]))
    assert abs(err.value.t - 1.0) < 1e-6


def test_trajectory_validation_and_csv(tmp_path):
    t = np.array([0.0, 1.0])
    with pytest.raises(ValueError):
        Trajectory(t, np.zeros((3, 2)), "x")
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 0.0]), np.zeros((2, 2)), "x")
    with pytest.raises(ValueError):
        Trajectory(t, np.array([[0.0, np.nan], [0.0, 0.0]]), "x")
    tr = integrate(get_system("sho2"), np.array([1.0, 0.0]), 1.0, IntegrationControl(n_out=5))
    path = tr.to_csv(tmp_path / "traj.csv", ["x", "p"])
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "x", "p"] and len(rows) == 6
    assert float(rows[-1][0]) == 1.0


def test_integration_argument_errors():
    s = get_system("lv3")
    with pytest.raises(ValueError):
        integrate(s, np.ones(3), 0.0)
    with pytest.raises(ValueError):
        integrate(s, np.ones(2), 1.0)
    with pytest.raises(ValueError):
        IntegrationControl(method="euler")
    with pytest.raises(ValueError):
        IntegrationControl(rtol=0)
    with pytest.raises(ValueError):
        conservation_stats(integrate(s, np.ones(3), 0.1), np.ones((5, 1)), LV_BASIS)


def test_stats_rows_and_threshold():
    st = ConservationStats(["H"], np.ones((2, 1)), np.zeros((2, 1)), np.array([[1e-9], [1e-2]]),
                           np.zeros((2, 1), bool), 1e-3)
    assert st.pass_fraction.tolist() == [0.5]
    rows = per_case_rows(st)
    assert [r[-1] for r in rows] == [True, False]
    with pytest.raises(ValueError):
        ConservationStats(["H"], st.mean, st.std, st.cv, st.absolute).passed
