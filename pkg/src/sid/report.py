"""Readable formulas, rational snapping and on-disk artifacts for discovery runs."""
from __future__ import annotations

import csv
import json
import re
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .detector import (
    CoefficientSet,
    DiscoverOptions,
    DiscoveryReport,
    SingularSpectrum,
    SparsifyOptions,
)
from .polybasis import MonomialBasis

Coef = Union[Fraction, float]

ZERO_REL = 1e-8  # entries below this fraction of the largest are zero
RESIDUAL_FLOOR = 1e-12


class ReportIOError(OSError):
    def __init__(self, path, cause: Exception):
        super().__init__(f"{path}: {cause}")
        self.path = str(path)


# ---------------------------------------------------------------------------
# rational snapping


@dataclass
class SnapResult:
    """Outcome of snapping one coefficient vector to small rationals.

    ``ratios`` is the original vector divided by the pivot; ``coefficients``
    holds a ``Fraction`` where the snap was kept and the float ratio
    elsewhere.
    """

    original: np.ndarray
    ratios: np.ndarray
    coefficients: list
    pivot: float
    entry_residual: np.ndarray  # |ratio - nearest rational|
    residual_before: float
    residual_after: float
    accepted: np.ndarray  # bool per entry

    @property
    def values(self) -> np.ndarray:
        return np.array([float(c) for c in self.coefficients])

    @property
    def all_rational(self) -> bool:
        return bool(np.all(self.accepted))


def conservation_residual(G: Optional[np.ndarray], v: np.ndarray) -> float:
    """Scale-free residual ||G v|| / (||G||_F ||v||); zero when G is None."""
    if G is None:
        return 0.0
    nv = np.linalg.norm(v)
    nG = np.linalg.norm(G)
    if nv == 0 or nG == 0:
        return 0.0
    return float(np.linalg.norm(G @ v) / (nG * nv))


def snap_rational(
    theta,
    max_den: int = 12,
    entry_tol: float = 0.02,
    conservation_tol: float = 10.0,
    G: Optional[np.ndarray] = None,
) -> SnapResult:
    """Divide by the smallest nonzero entry and snap ratios to rationals.

    Parameters
    ----------
    theta : array_like, shape (K,)
    max_den : largest allowed denominator (continued-fraction approximant)
    entry_tol : a ratio is snapped only if within this distance of the rational
    conservation_tol : the snapped vector's conservation residual may be at
        most this multiple of the original's (with a floor of 1e-12); snaps
        are reverted one at a time, worst first, until it is
    G : optional (P, K) matrix of g-vectors at check points.  Without it no
        conservation check is done.
    """
    theta = np.asarray(theta, dtype=float)
    mag = np.abs(theta)
    if mag.max(initial=0.0) == 0.0:
        raise ValueError("cannot snap the zero vector")
    nz = mag > ZERO_REL * mag.max()
    k = int(np.flatnonzero(nz)[np.argmin(mag[nz])])
    pivot = float(theta[k])
    ratios = np.where(nz, theta / pivot, 0.0)
    fracs = [Fraction(float(r)).limit_denominator(max_den) for r in ratios]
    snapped = np.array([float(f) for f in fracs])
    err = np.abs(ratios - snapped)
    accepted = err < entry_tol

    r0 = conservation_residual(G, ratios)
    v = np.where(accepted, snapped, ratios)
    r1 = conservation_residual(G, v)
    if G is not None:
        limit = max(conservation_tol * r0, RESIDUAL_FLOOR)
        Gv = G @ v  # reverting entry i adds G[:, i] * (ratio_i - snap_i)
        while r1 > limit and np.any(accepted):
            idx = np.flatnonzero(accepted)
            delta = ratios[idx] - snapped[idx]
            trial = Gv[:, None] + G[:, idx] * delta[None, :]
            norms = np.linalg.norm(trial, axis=0)
            best = int(np.argmin(norms))
            i = idx[best]
            accepted[i] = False
            v[i] = ratios[i]
            Gv = trial[:, best]
            r1 = conservation_residual(G, v)

    coefs: list = [fracs[i] if accepted[i] else float(ratios[i]) for i in range(len(ratios))]
    return SnapResult(
        original=theta.copy(),
        ratios=ratios,
        coefficients=coefs,
        pivot=pivot,
        entry_residual=err,
        residual_before=r0,
        residual_after=r1,
        accepted=accepted,
    )


# ---------------------------------------------------------------------------
# formulas


def _coef_text(c: Coef, digits: int) -> str:
    if isinstance(c, Fraction):
        return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"
    return format(float(c), f".{digits}g")


def format_formula(coefs: Sequence[Coef], basis: MonomialBasis, names=None, digits: int = 6) -> str:
    """``6*O3 - 5*NO + ...`` in basis order, zero terms omitted.

    Entries may be floats or ``Fraction``; fractions print exactly.
    """
    if len(coefs) != basis.size:
        raise ValueError(f"expected {basis.size} coefficients, got {len(coefs)}")
    labels = basis.labels(names)
    mags = [abs(float(c)) for c in coefs]
    cut = ZERO_REL * max(mags, default=0.0)
    parts = []
    for c, lab, m in zip(coefs, labels, mags):
        if m == 0.0 or m <= cut:
            continue
        neg = float(c) < 0
        a = -c if neg else c
        txt = lab if a == 1 else f"{_coef_text(a, digits)}*{lab}"
        if not parts:
            parts.append(f"-{txt}" if neg else txt)
        else:
            parts.append(f"{'-' if neg else '+'} {txt}")
    return " ".join(parts) if parts else "0"


_NUM = r"(?:\d+/\d+|\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)"
_TERM = re.compile(rf"^(?:(?P<coef>{_NUM})\*)?(?P<mono>.+)$")


def parse_formula(text: str, basis: MonomialBasis, names=None) -> list:
    """Inverse of :func:`format_formula`: a coefficient per basis term.

    Integer and ``a/b`` coefficients come back as ``Fraction``, decimals as
    float.
    """
    index = {lab: i for i, lab in enumerate(basis.labels(names))}
    out: list = [Fraction(0)] * basis.size
    text = text.strip()
    if text == "0":
        return out
    pieces = re.split(r"\s+([+-])\s+", text)
    signs = ["+"] + pieces[1::2]
    for sign, term in zip(signs, pieces[0::2]):
        if term.startswith("-"):
            sign = "-" if sign == "+" else "+"
            term = term[1:]
        m = _TERM.match(term)
        if m is None or m.group("mono") not in index:
            raise ValueError(f"cannot parse term {term!r}")
        raw = m.group("coef")
        if raw is None:
            c: Coef = Fraction(1)
        elif re.fullmatch(r"\d+(?:/\d+)?", raw):
            c = Fraction(raw)
        else:
            c = float(raw)
        out[index[m.group("mono")]] = -c if sign == "-" else c
    return out


def project_onto_nullspace(theta_known, theta1: Union[CoefficientSet, np.ndarray]) -> float:
    """Relative distance of ``theta_known`` from the span of stage-1 columns."""
    Q = theta1.theta if isinstance(theta1, CoefficientSet) else np.asarray(theta1, dtype=float)
    t = np.asarray(theta_known, dtype=float)
    if t.shape[0] != Q.shape[0]:
        raise ValueError("coefficient length does not match the basis")
    n = np.linalg.norm(t)
    if n == 0:
        return 0.0
    return float(np.linalg.norm(t - Q @ (Q.T @ t)) / n)


def invariant_formulas(report: DiscoveryReport, snap: bool = True, G=None, **snap_kw) -> list[str]:
    """One formula per stage-3 invariant, optionally snapped."""
    out = []
    for m in range(report.c):
        col = report.stage3.theta[:, m]
        if snap:
            coefs = snap_rational(col, G=G, **snap_kw).coefficients
        else:
            coefs = list(col)
        out.append(format_formula(coefs, report.basis, report.var_names))
    return out


# ---------------------------------------------------------------------------
# export / import


def report_to_dict(report: DiscoveryReport) -> dict:
    """Everything except wall-clock timings, which live in a separate file."""
    return {
        "system": report.system,
        "basis": report.basis.to_dict(),
        "var_names": list(report.var_names),
        "options": asdict(report.options),
        "P": int(report.P),
        "M": report.M,
        "c": report.c,
        "spectrum_g": report.spectrum_g.to_dict(),
        "spectrum_a": report.spectrum_a.to_dict(),
        "stage1": report.stage1.to_dict(),
        "stage2": report.stage2.to_dict(),
        "stage3": report.stage3.to_dict(),
        "selected": [int(i) for i in report.selected],
        "null_residual": float(report.null_residual),
        "l1_history": [float(x) for x in report.l1_history],
    }


def _spectrum(d: dict) -> SingularSpectrum:
    return SingularSpectrum(np.array(d["values"], dtype=float), d["threshold"], d["mode"], d["count"])


def _coefset(d: dict, K: int) -> CoefficientSet:
    theta = np.array(d["theta"], dtype=float).reshape(K, -1)
    ent = None if d["entropy"] is None else np.array(d["entropy"], dtype=float)
    return CoefficientSet(d["stage"], theta, ent, list(d["labels"]))


def report_from_dict(d: dict) -> DiscoveryReport:
    basis = MonomialBasis.from_dict(d["basis"])
    opts = dict(d["options"])
    opts["sparsify"] = SparsifyOptions(**opts["sparsify"])
    return DiscoveryReport(
        system=d["system"],
        basis=basis,
        var_names=list(d["var_names"]),
        options=DiscoverOptions(**opts),
        P=d["P"],
        spectrum_g=_spectrum(d["spectrum_g"]),
        spectrum_a=_spectrum(d["spectrum_a"]),
        stage1=_coefset(d["stage1"], basis.size),
        stage2=_coefset(d["stage2"], basis.size),
        stage3=_coefset(d["stage3"], basis.size),
        selected=list(d["selected"]),
        null_residual=d["null_residual"],
        l1_history=list(d["l1_history"]),
    )


def dumps_report(report: DiscoveryReport) -> str:
    return json.dumps(report_to_dict(report), sort_keys=True, indent=1) + "\n"


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ReportIOError(path, exc) from exc


def _write_csv(path: Path, header, rows) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise ReportIOError(path, exc) from exc


def export(report: DiscoveryReport, path, fmt: str = "json") -> list[Path]:
    """Write the report; returns the files created.

    ``json``: ``path`` is the document; timings go to ``<stem>.meta.json``.
    ``csv``: ``path`` is a directory receiving ``spectrum_g.csv``,
    ``spectrum_a.csv`` and ``theta_stage{1,2,3}.csv``.
    """
    path = Path(path)
    if fmt == "json":
        meta = path.with_name(path.stem + ".meta.json")
        _write(path, dumps_report(report))
        _write(meta, json.dumps({"timings": report.timings}, sort_keys=True, indent=1) + "\n")
        return [path, meta]
    if fmt != "csv":
        raise ValueError(f"unknown export format {fmt!r}")
    files = []
    for name, spec in (("spectrum_g", report.spectrum_g), ("spectrum_a", report.spectrum_a)):
        f = path / f"{name}.csv"
        _write_csv(f, ["index", "sigma"], [[i, repr(float(s))] for i, s in enumerate(spec.values)])
        files.append(f)
    labels = report.basis.labels(report.var_names)
    for cs in (report.stage1, report.stage2, report.stage3):
        f = path / f"theta_stage{cs.stage}.csv"
        header = ["term"] + [f"H{m + 1}" for m in range(cs.M)]
        rows = [[labels[k]] + [repr(float(x)) for x in cs.theta[k]] for k in range(report.basis.size)]
        _write_csv(f, header, rows)
        files.append(f)
    return files


def load_report(path) -> DiscoveryReport:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ReportIOError(path, exc) from exc
    rep = report_from_dict(d)
    meta = path.with_name(path.stem + ".meta.json")
    if meta.exists():
        rep.timings = json.loads(meta.read_text(encoding="utf-8")).get("timings", {})
    return rep
