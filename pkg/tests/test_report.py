import csv
import json
from fractions import Fraction

import numpy as np
import pytest

from sid import report
from sid.detector import CoefficientSet, DiscoverOptions, build_g_matrix, discover
from sid.polybasis import enumerate_monomials
from sid.report import (
    format_formula,
    parse_formula,
    project_onto_nullspace,
    snap_rational,
)
from sid.systems import chemistry as chem, get_system, sample_states

CQ3_INT = [6, -5, 1, 3, 9, 6, 3, 6, 4, -3]


@pytest.fixture(scope="module")
def lv_report():
    return discover(get_system("lv3"), enumerate_monomials(3, 3), DiscoverOptions(P=100, seed=0))


@pytest.fixture(scope="module")
def chem_g():
    s = get_system("ozone11")
    return build_g_matrix(s, enumerate_monomials(11, 1), sample_states(s, 200, seed=1))


# -- snapping ---------------------------------------------------------------


def test_snap_printed_carbon_and_nitrogen_rows():
    cq1 = np.zeros(11)
    cq1[[3, 9]] = 0.707
    r = snap_rational(cq1)
    assert r.coefficients[3] == r.coefficients[9] == 1 and r.all_rational
    cq2 = np.zeros(11)
    cq2[[1, 2, 8]] = 0.577
    r = snap_rational(-cq2)
    assert [r.coefficients[i] for i in (1, 2, 8)] == [1, 1, 1]
    assert r.pivot == pytest.approx(-0.577)


def test_snap_cq3_exact_vector(chem_g):
    v = np.array(CQ3_INT + [-24 / 11])
    r = snap_rational(0.0617 * v, G=chem_g)
    assert r.coefficients == [Fraction(c) for c in CQ3_INT] + [Fraction(-24, 11)]
    assert r.all_rational


def test_snap_cq3_h2_reverts_under_tight_tolerance(chem_g):
    v = np.array(CQ3_INT + [-2.213115])
    loose = snap_rational(v, G=chem_g, conservation_tol=10.0)
    assert loose.coefficients[-1] == Fraction(-20, 9)
    tight = snap_rational(v, G=chem_g, conservation_tol=1.0)
    assert tight.coefficients[:10] == [Fraction(c) for c in CQ3_INT]
    assert not tight.accepted[-1]
    assert tight.coefficients[-1] == pytest.approx(-2.213115, abs=1e-12)
    assert tight.residual_after <= max(tight.residual_before, report.RESIDUAL_FLOOR)


def test_snap_integer_only():
    v = np.array(CQ3_INT + [-24 / 11])
    r = snap_rational(v, max_den=1)
    assert not r.accepted[-1]  # -2.18 is not within 0.02 of an integer
    r = snap_rational(v, max_den=1, entry_tol=0.5)
    assert r.coefficients[-1] == -2 and r.all_rational


def test_snap_rejects_far_entries_and_keeps_them():
    v = np.array([1.0, np.pi, 0.0, 2.5])
    r = snap_rational(v, max_den=1)
    assert r.coefficients[0] == 1 and r.coefficients[2] == 0
    assert r.coefficients[1] == np.pi and r.coefficients[3] == 2.5
    assert list(r.accepted) == [True, False, True, False]
    with pytest.raises(ValueError):
        snap_rational(np.zeros(3))


# -- formulas ---------------------------------------------------------------


def test_format_examples():
    basis = enumerate_monomials(3, 3)
    names = ["x", "y", "z"]
    xyz = np.zeros(basis.size)
    xyz[basis.index_of((1, 1, 1))] = 1.0
    assert format_formula(xyz, basis, names) == "xyz"
    h1 = np.zeros(basis.size)
    h1[:3] = 1.0
    assert format_formula(h1, basis, names) == "x + y + z"
    assert format_formula(np.zeros(basis.size), basis, names) == "0"
    with pytest.raises(ValueError):
        format_formula([1.0], basis, names)


def test_format_chemistry_and_parse_back():
    basis = enumerate_monomials(11, 1)
    coefs = [Fraction(c) for c in CQ3_INT] + [Fraction(-24, 11)]
    text = format_formula(coefs, basis, chem.SPECIES)
    assert text == (
        "6*O3 - 5*NO + NO2 + 3*HCHO + 9*HO2 + 6*HO2H + 3*OH + 6*O + 4*HNO3 - 3*CO - 24/11*H2"
    )
    assert parse_formula(text, basis, chem.SPECIES) == coefs


def test_parse_mixed_and_errors():
    basis = enumerate_monomials(2, 2)
    got = parse_formula("-x + 2.5*x^2 - 1/3*xy", basis, ["x", "y"])
    assert got == [Fraction(-1), Fraction(0), 2.5, Fraction(-1, 3), Fraction(0)]
    assert parse_formula("0", basis, ["x", "y"]) == [0] * 5
    with pytest.raises(ValueError):
        parse_formula("x + w", basis, ["x", "y"])


def test_lv_formulas(lv_report):
    assert sorted(report.invariant_formulas(lv_report)) == ["x + y + z", "xyz"]


# -- projection -------------------------------------------------------------


def test_projection_examples(lv_report):
    T = lv_report.stage1.theta
    assert project_onto_nullspace(T[:, 0], lv_report.stage1) < 1e-12
    xyz = np.zeros(T.shape[0])
    xyz[lv_report.basis.index_of((1, 1, 1))] = 1.0
    assert project_onto_nullspace(xyz, lv_report.stage1) < 1e-6
    v = np.random.default_rng(0).normal(size=T.shape[0])
    assert project_onto_nullspace(v, T) > 1e-2
    assert project_onto_nullspace(np.zeros(T.shape[0]), T) == 0.0
    with pytest.raises(ValueError):
        project_onto_nullspace(np.ones(3), T)


def test_projection_invariant_under_rotation(lv_report):
    T = lv_report.stage1.theta
    Q, _ = np.linalg.qr(np.random.default_rng(1).normal(size=(T.shape[1], T.shape[1])))
    rng = np.random.default_rng(2)
    for _ in range(5):
        v = rng.normal(size=T.shape[0])
        assert abs(project_onto_nullspace(v, T) - project_onto_nullspace(v, T @ Q)) < 1e-12


# -- export -----------------------------------------------------------------


def test_json_round_trip_bitwise(lv_report, tmp_path):
    files = report.export(lv_report, tmp_path / "rep.json")
    assert [f.name for f in files] == ["rep.json", "rep.meta.json"]
    back = report.load_report(tmp_path / "rep.json")
    for stage in ("stage1", "stage2", "stage3"):
        assert np.array_equal(getattr(back, stage).theta, getattr(lv_report, stage).theta)
    assert np.array_equal(back.spectrum_g.values, lv_report.spectrum_g.values)
    assert np.array_equal(back.basis.exponents, lv_report.basis.exponents)
    assert back.options == lv_report.options
    assert back.timings == lv_report.timings
    assert report.dumps_report(back) == report.dumps_report(lv_report)
    # timings stay out of the main document
    assert "timings" not in json.loads((tmp_path / "rep.json").read_text())


def test_csv_export(lv_report, tmp_path):
    report.export(lv_report, tmp_path, "csv")
    K = lv_report.basis.size
    for stage, M in ((1, lv_report.M), (2, lv_report.M), (3, lv_report.c)):
        rows = list(csv.reader(open(tmp_path / f"theta_stage{stage}.csv")))
        assert len(rows) == K + 1
        assert rows[0] == ["term"] + [f"H{m + 1}" for m in range(M)]
        assert [r[0] for r in rows[1:]] == lv_report.basis.labels(lv_report.var_names)
    for name in ("spectrum_g", "spectrum_a"):
        rows = list(csv.reader(open(tmp_path / f"{name}.csv")))
        assert rows[0] == ["index", "sigma"]
        vals = [float(r[1]) for r in rows[1:]]
        assert vals == sorted(vals, reverse=True)
    with pytest.raises(ValueError):
        report.export(lv_report, tmp_path, "xml")


def test_io_errors_carry_path(lv_report, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(report.ReportIOError) as err:
        report.export(lv_report, blocker / "rep.json")
    assert str(blocker) in str(err.value)
    with pytest.raises(report.ReportIOError):
        report.load_report(tmp_path / "missing.json")


def test_reports_byte_identical_per_seed():
    a = discover(get_system("lv3"), enumerate_monomials(3, 3), DiscoverOptions(P=100, seed=4))
    b = discover(get_system("lv3"), enumerate_monomials(3, 3), DiscoverOptions(P=100, seed=4))
    assert report.dumps_report(a) == report.dumps_report(b)


def test_coefficient_set_round_trip():
    cs = CoefficientSet(2, np.arange(6.0).reshape(3, 2), np.array([0.1, 0.2]), ["a", "b"])
    back = report._coefset(cs.to_dict(), 3)
    assert np.array_equal(back.theta, cs.theta) and back.labels == ["a", "b"]
