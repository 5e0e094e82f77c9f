"""Incompressible fluid elements: a triangle (2D) or tetrahedron (3D) of unit
point masses whose area/volume is held fixed by a Lagrange multiplier.

State layout is per vertex: ``(x, y, u, v)`` in 2D and ``(x, y, z, u, v, w)``
in 3D, vertices 1..3 (or 1..4) in order.

The quantity helpers below only use ``+``, ``-``, ``*`` and division by
integers, so they work on numpy arrays and on sympy symbols alike.
"""
from __future__ import annotations

import numpy as np

DEGENERATE_TOL = 1e-10

NAMES_2D = [f"{c}{i}" for i in (1, 2, 3) for c in ("x", "y", "u", "v")]
NAMES_3D = [f"{c}{i}" for i in (1, 2, 3, 4) for c in ("x", "y", "z", "u", "v", "w")]


class DegenerateConfigurationError(ValueError):
    """The multiplier denominator vanishes (collinear/coplanar vertices)."""


# ---------------------------------------------------------------------------
# 2D


def _split2d(s):
    x = [s[4 * i] for i in range(3)]
    y = [s[4 * i + 1] for i in range(3)]
    u = [s[4 * i + 2] for i in range(3)]
    v = [s[4 * i + 3] for i in range(3)]
    return x, y, u, v


def area_gradient2d(x, y):
    """Partial derivatives of the (doubled, signed) area w.r.t. x_i and y_i."""
    gx = [y[1] - y[2], y[2] - y[0], y[0] - y[1]]
    gy = [x[2] - x[1], x[0] - x[2], x[1] - x[0]]
    return gx, gy


def lambda_parts2d(s):
    x, y, u, v = _split2d(s)
    num = u[0] * v[1] - u[0] * v[2] - u[1] * v[0] + u[1] * v[2] + u[2] * v[0] - u[2] * v[1]
    den = (
        -x[0] ** 2 + x[0] * x[1] + x[0] * x[2] - x[1] ** 2 + x[1] * x[2] - x[2] ** 2
        - y[0] ** 2 + y[0] * y[1] + y[0] * y[2] - y[1] ** 2 + y[1] * y[2] - y[2] ** 2
    )
    return num, den


def fluid2d_field(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != 12:
        raise ValueError("fluid2d state must have 12 components")
    s = [X[..., i] for i in range(12)]
    x, y, u, v = _split2d(s)
    num, den = lambda_parts2d(s)
    if np.any(np.abs(den) <= DEGENERATE_TOL):
        raise DegenerateConfigurationError("triangle multiplier denominator below threshold")
    lam = num / den
    gx, gy = area_gradient2d(x, y)
    out = np.empty_like(X)
    for i in range(3):
        out[..., 4 * i] = u[i]
        out[..., 4 * i + 1] = v[i]
        out[..., 4 * i + 2] = lam * gx[i]
        out[..., 4 * i + 3] = lam * gy[i]
    return out


def quantities2d(s) -> dict:
    """Named 2D quantities (center of mass, energy, area, vorticity, ...)."""
    x, y, u, v = _split2d(s)
    xcm, ycm = sum(x) / 3, sum(y) / 3
    ucm, vcm = sum(u) / 3, sum(v) / 3
    xb = [a - xcm for a in x]
    yb = [a - ycm for a in y]
    ub = [a - ucm for a in u]
    vb = [a - vcm for a in v]
    q = {}
    q["u_cm"], q["v_cm"] = ucm, vcm
    q["L_cm"] = xcm * vcm - ycm * ucm
    q["L"] = sum(vb[i] * xb[i] - ub[i] * yb[i] for i in range(3))
    q["E"] = sum(ub[i] ** 2 + vb[i] ** 2 for i in range(3))
    q["I"] = sum(xb[i] ** 2 + yb[i] ** 2 for i in range(3))
    q["K"] = u[0] * v[1] - u[0] * v[2] - u[1] * v[0] + u[1] * v[2] + u[2] * v[0] - u[2] * v[1]
    q["A"] = x[0] * y[1] - x[0] * y[2] - x[1] * y[0] + x[1] * y[2] + x[2] * y[0] - x[2] * y[1]
    q["D"] = (
        u[0] * (y[1] - y[2]) + v[0] * (x[2] - x[1]) + u[1] * (y[2] - y[0])
        + v[1] * (x[0] - x[2]) + u[2] * (y[0] - y[1]) + v[2] * (x[1] - x[0])
    )
    q["omega"] = (
        u[0] * (x[1] - x[2]) + u[1] * (x[2] - x[0]) + u[2] * (x[0] - x[1])
        + v[0] * (y[1] - y[2]) + v[1] * (y[2] - y[0]) + v[2] * (y[0] - y[1])
    )
    q["G"] = sum(ub[i] * xb[i] + vb[i] * yb[i] for i in range(3))
    q["IK"] = q["I"] * q["K"]
    return q


CATALOG_2D = ["u_cm", "v_cm", "L_cm", "L", "E", "A", "D", "omega", "IK"]


def project_constraint2d(X) -> np.ndarray:
    """Remove the velocity component along the area gradient, so dA/dt = 0."""
    X = np.array(X, dtype=float)
    s = [X[..., i] for i in range(12)]
    x, y, u, v = _split2d(s)
    gx, gy = area_gradient2d(x, y)
    dot = sum(gx[i] * u[i] + gy[i] * v[i] for i in range(3))
    nrm = sum(gx[i] ** 2 + gy[i] ** 2 for i in range(3))
    c = dot / nrm
    for i in range(3):
        X[..., 4 * i + 2] -= c * gx[i]
        X[..., 4 * i + 3] -= c * gy[i]
    return X


def degenerate2d(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    _, den = lambda_parts2d([X[..., i] for i in range(12)])
    return np.abs(den) <= DEGENERATE_TOL


# ---------------------------------------------------------------------------
# 3D


def _split3d(s):
    comps = [[s[6 * i + c] for i in range(4)] for c in range(6)]
    return comps  # x, y, z, u, v, w


def _tri(a, b, j, k, l):
    return a[j] * b[k] - a[k] * b[j] + a[k] * b[l] - a[l] * b[k] + a[l] * b[j] - a[j] * b[l]


_OTHERS = [(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)]
_SIGN = [-1, 1, -1, 1]


def face_vectors(x, y, z):
    """Per-vertex volume-gradient components (A^x_i, A^y_i, A^z_i)."""
    ax, ay, az = [], [], []
    for i in range(4):
        j, k, l = _OTHERS[i]
        sg = _SIGN[i]
        ax.append(sg * _tri(y, z, j, k, l))
        ay.append(-sg * _tri(x, z, j, k, l))
        az.append(sg * _tri(x, y, j, k, l))
    return ax, ay, az


def lambda_parts3d(s):
    x, y, z, u, v, w = _split3d(s)
    ax, ay, az = face_vectors(x, y, z)
    bx, by, bz = face_vectors(u, v, w)
    p = sum(x[i] * bx[i] + y[i] * by[i] + z[i] * bz[i] for i in range(4))
    q = sum(ax[i] ** 2 + ay[i] ** 2 + az[i] ** 2 for i in range(4))
    return p, q, (ax, ay, az)


def fluid3d_field(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != 24:
        raise ValueError("fluid3d state must have 24 components")
    s = [X[..., i] for i in range(24)]
    p, q, (ax, ay, az) = lambda_parts3d(s)
    if np.any(q <= DEGENERATE_TOL):
        raise DegenerateConfigurationError("tetrahedron multiplier denominator below threshold")
    lam = -2.0 * p / q
    out = np.empty_like(X)
    for i in range(4):
        out[..., 6 * i : 6 * i + 3] = X[..., 6 * i + 3 : 6 * i + 6]
        out[..., 6 * i + 3] = lam * ax[i]
        out[..., 6 * i + 4] = lam * ay[i]
        out[..., 6 * i + 5] = lam * az[i]
    return out


def quantities3d(s) -> dict:
    x, y, z, u, v, w = _split3d(s)
    cm = [sum(c) / 4 for c in (x, y, z, u, v, w)]
    xb, yb, zb, ub, vb, wb = [[c[i] - m for i in range(4)] for c, m in zip((x, y, z, u, v, w), cm)]
    xcm, ycm, zcm, ucm, vcm, wcm = cm
    ax, ay, az = face_vectors(x, y, z)
    bx, by, bz = face_vectors(u, v, w)
    q = {"u_cm": ucm, "v_cm": vcm, "w_cm": wcm}
    q["Lcm_x"] = wcm * ycm - vcm * zcm
    q["Lcm_y"] = ucm * zcm - wcm * xcm
    q["Lcm_z"] = vcm * xcm - ucm * ycm
    q["L_x"] = sum(wb[i] * yb[i] - vb[i] * zb[i] for i in range(4))
    q["L_y"] = sum(ub[i] * zb[i] - wb[i] * xb[i] for i in range(4))
    q["L_z"] = sum(vb[i] * xb[i] - ub[i] * yb[i] for i in range(4))
    q["E"] = sum(ub[i] ** 2 + vb[i] ** 2 + wb[i] ** 2 for i in range(4))
    q["V"] = sum(x[i] * ax[i] + y[i] * ay[i] + z[i] * az[i] for i in range(4)) / 3
    q["D"] = sum(u[i] * ax[i] + v[i] * ay[i] + w[i] * az[i] for i in range(4))
    q["G"] = sum(ub[i] * xb[i] + vb[i] * yb[i] + wb[i] * zb[i] for i in range(4))
    q["K"] = sum(x[i] * bx[i] + y[i] * by[i] + z[i] * bz[i] for i in range(4))

    def circ(j, k, l):
        return _tri(u, x, j, k, l) + _tri(v, y, j, k, l) + _tri(w, z, j, k, l)

    # C_i is the circulation around the face opposite vertex i
    q["C1"] = circ(1, 2, 3)
    q["C2"] = -circ(0, 2, 3)
    q["C3"] = circ(0, 1, 3)
    q["C4"] = -circ(0, 1, 2)
    return q


CATALOG_3D = [
    "u_cm", "v_cm", "w_cm", "Lcm_x", "Lcm_y", "Lcm_z", "L_x", "L_y", "L_z",
    "E", "V", "D", "C1", "C2", "C3", "C4",
]


def project_constraint3d(X) -> np.ndarray:
    X = np.array(X, dtype=float)
    s = [X[..., i] for i in range(24)]
    x, y, z = _split3d(s)[:3]
    ax, ay, az = face_vectors(x, y, z)
    grads = (ax, ay, az)
    dot = sum(grads[c][i] * X[..., 6 * i + 3 + c] for i in range(4) for c in range(3))
    nrm = sum(grads[c][i] ** 2 for i in range(4) for c in range(3))
    coef = dot / nrm
    for i in range(4):
        for c in range(3):
            X[..., 6 * i + 3 + c] -= coef * grads[c][i]
    return X


def degenerate3d(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    _, q, _ = lambda_parts3d([X[..., i] for i in range(24)])
    return q <= DEGENERATE_TOL
