"""Null-space extraction, sparsifying rotation and independence selection."""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .polybasis import MonomialBasis
from .systems import DynamicalSystem, sample_states

log = logging.getLogger(__name__)

THRESHOLD_MODES = ("absolute", "relative", "gap")


class FieldEvaluationError(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"vector field failed at sample point {index}: {cause}")
        self.index = index


class SelectionError(RuntimeError):
    """Greedy selection could not reach the independent count."""


@dataclass
class SingularSpectrum:
    values: np.ndarray
    threshold: float
    mode: str
    count: int  # values below (null space) or above (rank) the threshold

    def to_dict(self) -> dict:
        return {
            "values": self.values.tolist(),
            "threshold": self.threshold,
            "mode": self.mode,
            "count": self.count,
        }


@dataclass
class CoefficientSet:
    stage: int
    theta: np.ndarray  # (K, M), one invariant per column
    entropy: Optional[np.ndarray] = None
    labels: list[str] = field(default_factory=list)

    @property
    def M(self) -> int:
        return int(self.theta.shape[1])

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "theta": self.theta.tolist(),
            "entropy": None if self.entropy is None else self.entropy.tolist(),
            "labels": list(self.labels),
        }


@dataclass
class SparsifyOptions:
    max_sweeps: int = 100
    tol: float = 1e-8
    restarts: int = 4
    grid: int = 512
    seed: int = 0


@dataclass
class DiscoverOptions:
    P: Optional[int] = None
    seed: int = 0
    eps: float = 1e-8
    threshold_mode: str = "absolute"
    rank_eps: float = 1e-8
    rank_points: int = 128
    sparsify: SparsifyOptions = field(default_factory=SparsifyOptions)


@dataclass
class DiscoveryReport:
    system: str
    basis: MonomialBasis
    var_names: list[str]
    options: DiscoverOptions
    P: int
    spectrum_g: SingularSpectrum
    spectrum_a: SingularSpectrum
    stage1: CoefficientSet
    stage2: CoefficientSet
    stage3: CoefficientSet
    selected: list[int]
    null_residual: float
    l1_history: list[float]
    timings: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.stage1.M

    @property
    def c(self) -> int:
        return self.stage3.M


# ---------------------------------------------------------------------------
# G matrix and null space


def default_sample_count(system: DynamicalSystem, basis: MonomialBasis) -> int:
    if system.chemistry is not None:
        return 2000
    return max(2 * basis.size, 100)


def evaluate_field(system: DynamicalSystem, points: np.ndarray) -> np.ndarray:
    try:
        return system.field(points)
    except Exception as exc:  # locate the offending row
        for i, x in enumerate(points):
            try:
                system.field(x)
            except Exception as row_exc:
                raise FieldEvaluationError(i, row_exc) from row_exc
        raise FieldEvaluationError(-1, exc) from exc


def build_g_matrix(system: DynamicalSystem, basis: MonomialBasis, points) -> np.ndarray:
    """Rows ``g(x_p) = (grad b(x_p)) f(x_p)`` for every sample point."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != basis.d:
        raise ValueError("points must be (P, d) with d matching the basis")
    if points.shape[0] < basis.size:
        warnings.warn(
            f"P={points.shape[0]} < K={basis.size}: the null space will be inflated",
            stacklevel=2,
        )
    F = evaluate_field(system, points)
    return basis.directional(points, F)


def _null_count(s: np.ndarray, eps: float, mode: str) -> tuple[int, float]:
    if mode == "absolute":
        return int(np.sum(s < eps)), eps
    if mode == "relative":
        thr = eps * (s[0] if len(s) else 0.0)
        return int(np.sum(s < thr)), thr
    if mode == "gap":
        if len(s) < 2:
            return 0, 0.0
        logs = np.log10(np.maximum(s, 1e-300))
        drops = logs[:-1] - logs[1:]
        j = int(np.argmax(drops))
        thr = float(np.sqrt(s[j] * max(s[j + 1], 1e-300)))
        return len(s) - (j + 1), thr
    raise ValueError(f"threshold mode must be one of {THRESHOLD_MODES}")


def nullspace(G, eps: float = 1e-8, mode: str = "absolute") -> tuple[SingularSpectrum, CoefficientSet, float]:
    """Right singular vectors of G whose singular values count as zero.

    Returns the spectrum, the stage-1 coefficient set and the residual
    ``max |G theta|`` over the returned columns.
    """
    G = np.asarray(G, dtype=float)
    if not np.all(np.isfinite(G)):
        raise ValueError("G contains non-finite entries")
    P, K = G.shape
    _, s, Vt = np.linalg.svd(G, full_matrices=P < K)
    n_small, thr = _null_count(s, eps, mode)
    missing = K - len(s)  # directions with no singular value at all (P < K)
    M = n_small + missing
    theta = Vt[K - M :].T[:, ::-1].copy() if M else np.zeros((K, 0))
    residual = float(np.abs(G @ theta).max()) if M else 0.0
    spec = SingularSpectrum(values=s, threshold=thr, mode=mode, count=M)
    return spec, CoefficientSet(stage=1, theta=theta), residual


# ---------------------------------------------------------------------------
# sparsification


def entropy_score(theta) -> float:
    """Shannon entropy of |theta| normalized to a probability vector."""
    a = np.abs(np.asarray(theta, dtype=float))
    total = a.sum()
    if total == 0:
        raise ValueError("entropy of a zero vector is undefined")
    p = a[a > 0] / total
    return float(-(p * np.log(p)).sum())


def _round_robin(M: int) -> list[list[tuple[int, int]]]:
    """Rounds of disjoint column pairs covering every pair once (circle method)."""
    idx = list(range(M)) + ([-1] if M % 2 else [])
    n = len(idx)
    rounds = []
    for _ in range(n - 1):
        pairs = []
        for i in range(n // 2):
            a, b = idx[i], idx[n - 1 - i]
            if a >= 0 and b >= 0:
                pairs.append((min(a, b), max(a, b)))
        rounds.append(pairs)
        idx = [idx[0]] + [idx[-1]] + idx[1:-1]
    return rounds


NEGLIGIBLE = 1e-13


def _grid_values(rc, rs, Pc, Ps, Tc, Ts, bs, grid):
    """Pair objective on a uniform angle grid, using the sorted prefix sums."""
    n = rc.shape[0]
    g = np.linspace(0.0, np.pi / 2, grid, endpoint=False)
    offs = (np.arange(n) * 4.0)[:, None]
    pos = np.searchsorted((bs + offs).ravel(), (g[None, :] + offs).ravel(), side="right")
    pos = pos.reshape(n, grid) - (np.arange(n) * bs.shape[1])[:, None]
    zero = np.zeros((n, 1))
    pc = np.take_along_axis(np.concatenate([zero, Pc], axis=1), pos, axis=1)
    ps = np.take_along_axis(np.concatenate([zero, Ps], axis=1), pos, axis=1)
    return g, np.cos(g) * (Tc + Ts - 2 * ps) + np.sin(g) * (Ts - Tc + 2 * pc)


def _best_angles(A: np.ndarray, B: np.ndarray, grid: int = 512) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Minimize sum_k |c a_k + s b_k| + |-s a_k + c b_k| over the angle, per row.

    Writing (a_k, b_k) = r_k (cos t_k, sin t_k) and folding t_k to
    beta_k in [0, pi/2), the objective is sum r_k (|cos(phi - beta_k)| +
    |sin(phi - beta_k)|): pi/2-periodic and concave between consecutive
    breakpoints beta_k, so its minimum sits at a breakpoint.  All of them are
    evaluated with prefix sums after one sort.  A uniform grid of ``grid``
    angles is the fallback for rows where no breakpoint value is usable.

    Entries below ``NEGLIGIBLE`` times the row maximum are ignored; they move
    the objective by no more than that fraction.
    """
    aa, ab = np.abs(A), np.abs(B)
    tot = aa + ab
    current = tot.sum(axis=1)
    live = tot > NEGLIGIBLE * tot.max(axis=1, keepdims=True)
    # sort key sin(beta)/(sin(beta) + cos(beta)), monotone in beta; dead rows last
    with np.errstate(invalid="ignore", divide="ignore"):
        q = ab / tot
    key = q + (A * B < 0) * (1.0 - 2.0 * q) + 3.0 * ~live
    L = max(int(live.sum(axis=1).max()), 1)
    order = np.argsort(key, axis=1)[:, :L]
    ok = np.take_along_axis(live, order, axis=1)
    a = np.take_along_axis(A, order, axis=1) * ok
    b = np.take_along_axis(B, order, axis=1) * ok
    # must agree with the sort key on zeros, or the order is not by beta
    same = ~(a * b < 0)
    # (r cos beta, r sin beta) without trigonometry
    rc = np.where(same, np.abs(a), np.abs(b))
    rs = np.where(same, np.abs(b), np.abs(a))
    Pc, Ps = np.cumsum(rc, axis=1), np.cumsum(rs, axis=1)
    Tc, Ts = Pc[:, -1:], Ps[:, -1:]
    hs = np.where(ok, np.hypot(rc, rs), 1.0)
    cb, sb = np.where(ok, rc / hs, 1.0), rs / hs
    vals = np.where(ok, cb * (Tc + Ts - 2 * Ps) + sb * (Ts - Tc + 2 * Pc), np.inf)
    j = np.argmin(vals, axis=1)
    rows = np.arange(A.shape[0])
    best = vals[rows, j]
    phi = np.arctan2(rs[rows, j], rc[rows, j])
    phi[phi >= np.pi / 2] = 0.0
    bad = ~np.isfinite(best)
    if grid and np.any(bad):
        bs = np.where(ok, np.arctan2(rs, rc), np.pi)[bad]
        g, gv = _grid_values(rc[bad], rs[bad], Pc[bad], Ps[bad], Tc[bad], Ts[bad], bs, grid)
        k = np.argmin(gv, axis=1)
        phi[bad] = g[k]
        best[bad] = gv[np.arange(len(k)), k]
    # entries left out can grow by at most a factor sqrt(2) under rotation
    dead = current - Tc[:, 0] - Ts[:, 0]
    best = np.where(np.isfinite(best), best + np.sqrt(2.0) * np.maximum(dead, 0.0), current)
    return phi, best, current


def _jacobi_l1(theta: np.ndarray, opts: SparsifyOptions) -> tuple[np.ndarray, np.ndarray, list[float]]:
    K, M = theta.shape
    # rows that vanish in every column stay zero under any rotation
    scale = np.abs(theta).max() if theta.size else 0.0
    keep = np.linalg.norm(theta, axis=1) > NEGLIGIBLE * max(scale, 1e-300)
    Tt = np.ascontiguousarray(theta[keep].T)  # one row per column of theta
    Rt = np.eye(M)
    history = [float(np.abs(theta).sum())]
    rounds = [(np.array([p[0] for p in pr]), np.array([p[1] for p in pr])) for pr in _round_robin(M)]

    def support(rows):
        mag = np.abs(Tt[rows])
        return mag > NEGLIGIBLE * mag.max(axis=1, keepdims=True)

    supp = support(np.arange(M))
    # a pair left unrotated is skipped until one of its columns changes;
    # pairs with disjoint supports are already optimal at angle zero
    version = np.zeros(M, dtype=np.int64)
    seen = np.full((M, M, 2), -1, dtype=np.int64)
    for _ in range(opts.max_sweeps):
        for ia, ib in rounds:
            todo = (seen[ia, ib, 0] != version[ia]) | (seen[ia, ib, 1] != version[ib])
            todo &= (supp[ia] & supp[ib]).any(axis=1)
            if not np.any(todo):
                continue
            ia, ib = ia[todo], ib[todo]
            phi, best, cur = _best_angles(Tt[ia], Tt[ib], opts.grid)
            move = best < cur * (1 - 1e-14)
            still = ~move
            seen[ia[still], ib[still]] = np.stack([version[ia[still]], version[ib[still]]], axis=1)
            if not np.any(move):
                continue
            ia, ib, phi = ia[move], ib[move], phi[move]
            c, s = np.cos(phi)[:, None], np.sin(phi)[:, None]
            Ta, Tb = Tt[ia], Tt[ib]
            Tt[ia], Tt[ib] = c * Ta + s * Tb, -s * Ta + c * Tb
            Ra, Rb = Rt[ia], Rt[ib]
            Rt[ia], Rt[ib] = c * Ra + s * Rb, -s * Ra + c * Rb
            version[ia] += 1
            version[ib] += 1
            moved = np.concatenate([ia, ib])
            supp[moved] = support(moved)
        prev = history[-1]
        total = float(np.abs(Tt).sum())
        history.append(total)
        if prev - total <= opts.tol * prev:
            break
    R = Rt.T.copy()
    return theta @ R, R, history


def _echelon_rotation(theta: np.ndarray, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Orthogonal start close to the column-echelon basis of ``theta``.

    ``theta @ inv(theta[piv])`` is the identity on M pivot rows chosen by
    pivoted QR and is usually sparse elsewhere; the polar factor of
    ``inv(theta[piv])`` is the nearest rotation to that change of basis.
    Row ``weights`` perturb the pivot choice for randomized restarts.
    """
    M = theta.shape[1]
    W = theta if weights is None else theta * weights[:, None]
    _, _, piv = scipy.linalg.qr(W.T, mode="economic", pivoting=True)
    U, _, Vt = np.linalg.svd(np.linalg.inv(theta[piv[:M]]))
    return U @ Vt


def normalize_columns(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sign-fix (largest entry positive) and sort columns by entropy."""
    theta = theta.copy()
    M = theta.shape[1]
    signs = np.ones(M)
    for m in range(M):
        j = int(np.argmax(np.abs(theta[:, m])))
        if theta[j, m] < 0:
            signs[m] = -1.0
    theta *= signs
    ent = np.array([entropy_score(theta[:, m]) for m in range(M)])
    order = np.lexsort((np.arange(M), ent))
    return theta[:, order], ent[order], (order, signs)


def sparsify(theta1: CoefficientSet, opts: Optional[SparsifyOptions] = None):
    """Orthogonal rotation of the null-space basis that minimizes its L1 norm.

    Returns ``(stage2, R, history)`` with ``stage2.theta == theta1.theta @ R``
    (up to floating point), columns sign-normalized and sorted by entropy.
    """
    opts = opts or SparsifyOptions()
    theta = np.asarray(theta1.theta, dtype=float)
    K, M = theta.shape
    if M <= 1:
        T, R, hist = theta.copy(), np.eye(M), [float(np.abs(theta).sum())]
    else:
        rng = np.random.default_rng(opts.seed)
        # dense starts (identity, Haar-random) converge far more slowly and to
        # worse optima once M is large, so every start is echelon-based
        starts = [_echelon_rotation(theta)]
        for _ in range(opts.restarts):
            starts.append(_echelon_rotation(theta, np.exp(rng.uniform(-1.0, 1.0, K))))
        # theta1 itself is the fallback, so the L1 norm can never increase
        l1 = float(np.abs(theta).sum())
        best = (theta.copy(), np.eye(M), [l1])
        for R0 in starts:
            T, R, hist = _jacobi_l1(theta @ R0, opts)
            if hist[-1] < best[2][-1] - 1e-12 * hist[-1]:
                best = (T, R0 @ R, hist)
        T, R, hist = best
    T, ent, (order, signs) = normalize_columns(T)
    R = (R * signs)[:, order]
    return CoefficientSet(stage=2, theta=T, entropy=ent), R, hist


# ---------------------------------------------------------------------------
# functional independence


def invariant_gradients(theta: np.ndarray, basis: MonomialBasis, points) -> np.ndarray:
    """Gradients of H_theta at each point, shape (P, d, M)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty((points.shape[0], basis.d, theta.shape[1]))
    step = max(1, 2_000_000 // (basis.size * basis.d))
    for start in range(0, points.shape[0], step):
        J = basis.gradient(points[start : start + step])  # (p, K, d)
        out[start : start + step] = np.einsum("pkd,km->pdm", J, theta)
    return out


def _ranks(grads: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    s = np.linalg.svd(grads, compute_uv=False)
    return (s > eps).sum(axis=1), s


def rank_points(points, n: int) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if len(points) <= n:
        return points
    idx = np.linspace(0, len(points) - 1, n).round().astype(int)
    return points[idx]


def independence_spectrum(theta: CoefficientSet, basis: MonomialBasis, points, eps: float = 1e-8):
    """Generic rank of the invariant-gradient matrix and its spectrum.

    The rank of ``[grad H_1, ..., grad H_M]`` is computed separately at every
    point; the generic rank is the maximum over points.  Functional
    dependence only forces pointwise linear dependence (grad H^2 = 2H grad H),
    so gradients must not be stacked across points.
    """
    M = theta.theta.shape[1]
    if M == 0:
        return SingularSpectrum(np.zeros(0), eps, "absolute", 0)
    grads = invariant_gradients(theta.theta, basis, points)
    ranks, s = _ranks(grads, eps)
    p = int(np.argmax(ranks))
    return SingularSpectrum(values=s[p], threshold=eps, mode="absolute", count=int(ranks[p]))


def count_independent(theta: CoefficientSet, basis: MonomialBasis, points, eps: float = 1e-8) -> int:
    return independence_spectrum(theta, basis, points, eps).count


def select_independent(theta2: CoefficientSet, c: int, basis: MonomialBasis, points, eps: float = 1e-8):
    """Greedy entropy-ordered selection of ``c`` functionally independent columns."""
    T = theta2.theta
    M = T.shape[1]
    ent = theta2.entropy if theta2.entropy is not None else np.array(
        [entropy_score(T[:, m]) for m in range(M)]
    )
    order = np.lexsort((np.arange(M), ent))
    grads = invariant_gradients(T, basis, points) if M else None
    chosen: list[int] = []
    rank = 0
    for m in order:
        if len(chosen) == c:
            break
        trial = chosen + [int(m)]
        r = int(_ranks(grads[:, :, trial], eps)[0].max())
        if r > rank:
            chosen, rank = trial, r
    if len(chosen) != c:
        raise SelectionError(f"selected {len(chosen)} of {c} independent invariants; check eps")
    stage3 = CoefficientSet(stage=3, theta=T[:, chosen].copy(), entropy=ent[chosen].copy())
    return stage3, chosen


# ---------------------------------------------------------------------------
# pipeline


def discover(system: DynamicalSystem, basis: MonomialBasis, opts: Optional[DiscoverOptions] = None) -> DiscoveryReport:
    opts = opts or DiscoverOptions()
    timings = {}
    t0 = time.perf_counter()
    P = opts.P or default_sample_count(system, basis)
    points = sample_states(system, P, opts.seed)
    timings["sample"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    G = build_g_matrix(system, basis, points)
    timings["g_matrix"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    spec_g, stage1, residual = nullspace(G, opts.eps, opts.threshold_mode)
    timings["svd"] = time.perf_counter() - t0
    log.info("%s: K=%d P=%d M=%d", system.name, basis.size, P, stage1.M)

    t0 = time.perf_counter()
    sp = opts.sparsify
    stage2, _, history = sparsify(stage1, sp)
    timings["sparsify"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    rpts = rank_points(points, opts.rank_points)
    spec_a = independence_spectrum(stage2, basis, rpts, opts.rank_eps)
    stage3, chosen = select_independent(stage2, spec_a.count, basis, rpts, opts.rank_eps)
    timings["independence"] = time.perf_counter() - t0
    return DiscoveryReport(
        system=system.name,
        basis=basis,
        var_names=list(system.var_names),
        options=opts,
        P=P,
        spectrum_g=spec_g,
        spectrum_a=spec_a,
        stage1=stage1,
        stage2=stage2,
        stage3=stage3,
        selected=chosen,
        null_residual=residual,
        l1_history=history,
        timings=timings,
    )
