"""Trajectory integration and conservation statistics for candidate invariants."""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import ode
from .polybasis import MonomialBasis
from .systems import DynamicalSystem, fluid

ABS_MEAN = 1e-12  # below this |mean| the CV is replaced by the absolute std


@dataclass
class IntegrationControl:
    method: str = "rk45"  # or "rk4"
    rtol: float = 1e-8
    atol: float = 1e-12
    dt: float = 1e-3  # rk4 step
    n_out: int = 201  # output samples including t=0

    def __post_init__(self):
        if self.method not in ("rk45", "rk4"):
            raise ValueError(f"unknown integrator {self.method!r}")
        if self.rtol <= 0 or self.atol <= 0 or self.dt <= 0 or self.n_out < 2:
            raise ValueError("integration tolerances, step and sample count must be positive")


@dataclass
class Trajectory:
    t: np.ndarray
    states: np.ndarray  # (T, d)
    system: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.states.shape[0] != self.t.shape[0]:
            raise ValueError("state count does not match time grid")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("trajectory contains non-finite values")

    def to_csv(self, path, var_names=None) -> Path:
        path = Path(path)
        d = self.states.shape[1]
        names = list(var_names) if var_names is not None else [f"x{i + 1}" for i in range(d)]
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + names)
            for ti, x in zip(self.t, self.states):
                w.writerow([repr(float(ti))] + [repr(float(v)) for v in x])
        return path


def integrate(system: DynamicalSystem, x0, t_end: float, control: Optional[IntegrationControl] = None) -> Trajectory:
    """Integrate ``system`` from ``x0`` to ``t_end``.

    Chemistry systems use their simulation field (O and OH in pseudo-steady
    state), clipping at zero and an admissibility guard on trial steps.
    """
    control = control or IntegrationControl()
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (system.dim,):
        raise ValueError(f"initial state must have shape ({system.dim},)")
    f = system.integration_field
    t = np.linspace(0.0, t_end, control.n_out)
    if control.method == "rk4":
        n = max(1, int(np.ceil(t_end / control.dt)))
        fine = np.linspace(0.0, t_end, n + 1)
        states = ode.rk4(f, x0, fine, project=system.project)
        idx = np.unique(np.linspace(0, n, control.n_out).round().astype(int))
        states, t = states[idx], fine[idx]
        meta = {"method": "rk4", "dt": float(t_end / n)}
    else:
        states, info = ode.dopri45(
            f, x0, t, rtol=control.rtol, atol=control.atol,
            project=system.project, admissible=system.admissible,
            reject_on=system.step_errors,
        )
        meta = {"method": "rk45", "rtol": control.rtol, "atol": control.atol, **info}
    return Trajectory(t=t, states=states, system=system.name, meta=meta)


@dataclass
class ConservationStats:
    """Per-case, per-invariant statistics of H(x(t)) along trajectories."""

    labels: list[str]
    mean: np.ndarray  # (cases, m)
    std: np.ndarray
    cv: np.ndarray  # std/|mean|, or std where ``absolute``
    absolute: np.ndarray  # bool, |mean| < ABS_MEAN
    threshold: Optional[float] = None
    failures: list = field(default_factory=list)  # (case index, message)

    @property
    def n_cases(self) -> int:
        return int(self.cv.shape[0])

    @property
    def passed(self) -> np.ndarray:
        if self.threshold is None:
            raise ValueError("no CV threshold set")
        return self.cv < self.threshold

    @property
    def pass_fraction(self) -> np.ndarray:
        """Fraction of completed cases passing, per invariant."""
        if self.n_cases == 0:
            return np.zeros(len(self.labels))
        return self.passed.mean(axis=0)

    @property
    def max_cv(self) -> np.ndarray:
        return self.cv.max(axis=0) if self.n_cases else np.full(len(self.labels), np.nan)

    def to_dict(self) -> dict:
        out = {
            "labels": list(self.labels),
            "n_cases": self.n_cases,
            "n_failed": len(self.failures),
            "threshold": self.threshold,
            "max_cv": self.max_cv.tolist(),
            "failures": [[int(i), str(m)] for i, m in self.failures],
        }
        if self.threshold is not None:
            out["pass_fraction"] = self.pass_fraction.tolist()
        return out


def _as_columns(thetas) -> np.ndarray:
    T = np.asarray(thetas, dtype=float)
    return T[:, None] if T.ndim == 1 else T


def conservation_stats(traj: Trajectory, thetas, basis: MonomialBasis, labels=None, cv_threshold=None) -> ConservationStats:
    """CV of each invariant ``theta . b(x_t)`` along one trajectory."""
    T = _as_columns(thetas)
    if basis.d != traj.states.shape[1] or T.shape[0] != basis.size:
        raise ValueError("basis does not match trajectory or coefficients")
    H = basis.evaluate(traj.states) @ T  # (time, m)
    mean = H.mean(axis=0)
    std = H.std(axis=0)
    absolute = np.abs(mean) < ABS_MEAN
    cv = np.where(absolute, std, std / np.where(absolute, 1.0, np.abs(mean)))
    labels = list(labels) if labels is not None else [f"H{i + 1}" for i in range(T.shape[1])]
    return ConservationStats(labels, mean[None], std[None], cv[None], absolute[None], cv_threshold)


def _threads(threads: Optional[int]) -> int:
    if threads is None:
        threads = int(os.environ.get("SID_THREADS", "1") or 1)
    return max(1, threads)


def monte_carlo_validate(
    system: DynamicalSystem,
    thetas,
    basis: MonomialBasis,
    n_cases: int = 100,
    seed: int = 0,
    cv_threshold: float = 1e-3,
    t_end: Optional[float] = None,
    control: Optional[IntegrationControl] = None,
    labels=None,
    threads: Optional[int] = None,
) -> ConservationStats:
    """Conservation statistics over ``n_cases`` random initial conditions.

    Case ``i`` draws its initial state from ``default_rng([seed, i])``, so
    results do not depend on ordering or the number of worker threads.
    Integration failures are recorded and left out of the aggregate.
    """
    if n_cases < 1:
        raise ValueError("n_cases must be at least 1")
    T = _as_columns(thetas)
    t_end = system.horizon if t_end is None else t_end

    def run(i):
        rng = np.random.default_rng([seed, i])
        try:
            traj = integrate(system, system.initial_state(rng), t_end, control)
            return conservation_stats(traj, T, basis)
        except Exception as exc:  # recorded per case
            return exc

    workers = _threads(threads)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, range(n_cases)))
    else:
        results = [run(i) for i in range(n_cases)]

    ok = [r for r in results if isinstance(r, ConservationStats)]
    failures = [(i, repr(r)) for i, r in enumerate(results) if not isinstance(r, ConservationStats)]
    m = T.shape[1]
    stack = lambda name, dt=float: (  # noqa: E731
        np.concatenate([getattr(r, name) for r in ok]) if ok else np.zeros((0, m), dtype=dt)
    )
    labels = list(labels) if labels is not None else [f"H{i + 1}" for i in range(m)]
    return ConservationStats(
        labels, stack("mean"), stack("std"), stack("cv"), stack("absolute", bool), cv_threshold, failures
    )


def per_case_rows(stats: ConservationStats) -> list[list]:
    """Rows ``case, label, mean, std, cv, absolute, passed`` for CSV output."""
    rows = []
    passed = stats.passed if stats.threshold is not None else None
    for i in range(stats.n_cases):
        for j, lab in enumerate(stats.labels):
            rows.append([
                i, lab, repr(float(stats.mean[i, j])), repr(float(stats.std[i, j])),
                repr(float(stats.cv[i, j])), bool(stats.absolute[i, j]),
                None if passed is None else bool(passed[i, j]),
            ])
    return rows


# ---------------------------------------------------------------------------
# fluid dependency identities


def _relative(res, *scales):
    scale = sum(np.abs(s) for s in scales) + 1e-300
    return float(np.max(np.abs(res) / scale))


def fluid_identity_check(n_states: int = 1000, seed: int = 0) -> dict:
    """Maximum relative residuals of the fluid dependency identities.

    Keys
    ----
    ``identity2d``: I K + E A - L omega - D G, i.e. I K = -(E A - L omega - D G)
    ``identity2d_as_printed``: I K - (E A - L omega - D G)
    ``circulation3d``: C1 + C2 + C3 + C4
    ``com3d``: u_cm Lcm_x + v_cm Lcm_y + w_cm Lcm_z

    Each residual is divided by the sum of magnitudes of its terms.
    """
    rng = np.random.default_rng(seed)
    X2 = rng.standard_normal((n_states, 12))
    q = fluid.quantities2d([X2[:, i] for i in range(12)])
    ik, ea, lw, dg = q["IK"], q["E"] * q["A"], q["L"] * q["omega"], q["D"] * q["G"]
    X3 = rng.standard_normal((n_states, 24))
    r = fluid.quantities3d([X3[:, i] for i in range(24)])
    circ = [r[f"C{i}"] for i in range(1, 5)]
    com = [r["u_cm"] * r["Lcm_x"], r["v_cm"] * r["Lcm_y"], r["w_cm"] * r["Lcm_z"]]
    return {
        "identity2d": _relative(ik + ea - lw - dg, ik, ea, lw, dg),
        "identity2d_as_printed": _relative(ik - (ea - lw - dg), ik, ea, lw, dg),
        "circulation3d": _relative(sum(circ), *circ),
        "com3d": _relative(sum(com), *com),
    }
