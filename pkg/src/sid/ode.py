"""Explicit Runge-Kutta integrators used by the samplers and the validator.

Both integrators accept batched states of shape ``(..., d)`` so that many
initial conditions can share one step-size sequence.
"""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

Field = Callable[[np.ndarray], np.ndarray]
Projector = Callable[[np.ndarray], np.ndarray]


class IntegrationError(RuntimeError):
    """Step size underflow, non-finite state, or too many steps."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (t={t:.6g})")
        self.t = t


def rk4(f: Field, x0, t_grid, project: Optional[Projector] = None) -> np.ndarray:
    """Classic fixed-step RK4 on the supplied time grid."""
    t_grid = np.asarray(t_grid, dtype=float)
    x = np.array(x0, dtype=float)
    out = np.empty((len(t_grid),) + x.shape)
    out[0] = x
    for i in range(1, len(t_grid)):
        h = t_grid[i] - t_grid[i - 1]
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if project is not None:
            x = project(x)
        if not np.all(np.isfinite(x)):
            raise IntegrationError("non-finite state", float(t_grid[i]))
        out[i] = x
    return out


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def dopri45(
    f: Field,
    x0,
    t_eval,
    rtol: float = 1e-8,
    atol: float = 1e-12,
    h0: Optional[float] = None,
    h_min: float = 1e-14,
    max_steps: int = 1_000_000,
    project: Optional[Projector] = None,
    admissible: Optional[Callable[[np.ndarray], bool]] = None,
    reject_on: tuple = (),
) -> tuple[np.ndarray, dict]:
    """Adaptive Dormand-Prince integration, returning states at ``t_eval``.

    Steps are clipped so that every output time is hit exactly.  ``project``
    is applied to each accepted state (e.g. clipping or algebraic closures);
    ``admissible`` may veto a trial state, which shrinks the step, and so
    does any exception of a type in ``reject_on`` raised while evaluating
    ``f`` at a stage (e.g. a domain error at slightly negative stage values).

    Returns
    -------
    states : ndarray, shape ``(len(t_eval),) + x0.shape``
    info : dict with accepted/rejected step counts
    """
    t_eval = np.asarray(t_eval, dtype=float)
    if t_eval.ndim != 1 or len(t_eval) < 1 or np.any(np.diff(t_eval) <= 0):
        raise ValueError("t_eval must be strictly increasing")
    x = np.array(x0, dtype=float)
    if project is not None:
        x = project(x)
    out = np.empty((len(t_eval),) + x.shape)
    out[0] = x
    t = float(t_eval[0])
    span = float(t_eval[-1] - t)
    k1 = f(x)
    if h0 is None:
        scale = atol + rtol * np.abs(x)
        d0 = np.sqrt(np.mean((x / scale) ** 2))
        d1 = np.sqrt(np.mean((k1 / scale) ** 2))
        h = 0.01 * d0 / d1 if d0 > 1e-5 and d1 > 1e-5 else 1e-6
        h = min(h, span if span > 0 else 1.0)
    else:
        h = h0
    accepted = rejected = 0
    nxt = 1
    while nxt < len(t_eval):
        if accepted + rejected > max_steps:
            raise IntegrationError("maximum step count exceeded", t)
        target = t_eval[nxt]
        hit = t + h >= target - 1e-12 * max(1.0, abs(target))
        step = target - t if hit else h
        ks = [k1]
        # overflow in a trial step only means the step is rejected
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                for i in range(1, 7):
                    xi = x + step * sum(a * k for a, k in zip(_A[i], ks) if a != 0.0)
                    ks.append(f(xi))
            except reject_on:
                ks = None
            if ks is None:
                ok, err = False, float("inf")
            else:
                x_new = x + step * sum(b * k for b, k in zip(_B5, ks) if b != 0.0)
                err_vec = step * sum(e * k for e, k in zip(_E, ks))
                scale = atol + rtol * np.maximum(np.abs(x), np.abs(x_new))
                err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
                ok = np.isfinite(err) and err <= 1.0
        if ok and admissible is not None and not admissible(x_new):
            ok = False
            err = max(err, 10.0) if np.isfinite(err) else err
        if ok:
            accepted += 1
            t = float(target) if hit else t + step
            x = project(x_new) if project is not None else x_new
            if not np.all(np.isfinite(x)):
                raise IntegrationError("non-finite state", t)
            k1 = ks[6] if project is None else f(x)
            if hit:
                out[nxt] = x
                nxt += 1
            fac = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            h = max(step, h) * fac if hit else step * fac
        else:
            rejected += 1
            fac = 0.2 if not np.isfinite(err) else max(0.1, 0.9 * err ** -0.25)
            h = step * fac
            if h < h_min * max(1.0, abs(t)):
                raise IntegrationError("step size underflow", t)
    return out, {"accepted": accepted, "rejected": rejected}
