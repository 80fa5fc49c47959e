"""Force closure of a set of frictional pad contacts on a rigid payload."""
from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

from .geometry import Pose, quat_to_matrix


def _frame_axes(frame):
    """(point, inward normal, tangent1, tangent2) for a Pose or a (point, normal) pair."""
    if isinstance(frame, Pose):
        R = quat_to_matrix(frame.orientation)
        return frame.position, R[:, 0], R[:, 1], R[:, 2]
    p, n = frame
    p = np.asarray(p, float)
    n = np.asarray(n, float)
    n = n / np.linalg.norm(n)
    # second tangent as close to world up as the normal allows
    up = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    t1 = np.cross(up, n)
    t1 /= np.linalg.norm(t1)
    return p, n, t1, np.cross(n, t1)


def contact_wrenches(frames, mu: float, pad_half_size: float = 0.03, n_edges: int = 8) -> np.ndarray:
    """Primitive wrenches of the discretized friction cones, shape ``(6, m)``.

    Every pad contributes its four corners (a square patch) and each corner a
    pyramid of ``n_edges`` unit-normal-force edges. Torques are divided by the
    grasp's characteristic length so both halves have comparable scale.
    """
    if mu < 0:
        raise ValueError("friction coefficient must be >= 0")
    ang = 2 * np.pi * np.arange(n_edges) / n_edges
    geo = [_frame_axes(f) for f in frames]
    pts = []
    forces = []
    for p, n, t1, t2 in geo:
        for sy in (-1.0, 1.0):
            for sz in (-1.0, 1.0):
                c = p + pad_half_size * (sy * t1 + sz * t2)
                for a in ang:
                    pts.append(c)
                    forces.append(n + mu * (np.cos(a) * t1 + np.sin(a) * t2))
    pts = np.array(pts)
    forces = np.array(forces)
    centre = np.mean([g[0] for g in geo], axis=0)
    arm = pts - centre
    scale = max(np.max(np.linalg.norm(arm, axis=1)), 1e-9)
    torques = np.cross(arm, forces) / scale
    return np.vstack([forces.T, torques.T])


def force_closure_margin(frames, mu: float, pad_half_size: float = 0.03, n_edges: int = 8) -> float:
    """Largest ``t`` such that ``W @ lam = 0`` with ``sum(lam) = 1`` and ``lam >= t``.

    Positive iff the origin lies strictly inside the wrench hull (given full
    rank). Returns 0 for rank-deficient wrench sets.
    """
    W = contact_wrenches(frames, mu, pad_half_size, n_edges)
    if np.linalg.matrix_rank(W, tol=1e-9) < 6:
        return 0.0
    m = W.shape[1]
    # variables: lam (m), t ; maximize t
    c = np.zeros(m + 1)
    c[-1] = -1.0
    A_eq = np.zeros((7, m + 1))
    A_eq[:6, :m] = W
    A_eq[6, :m] = 1.0
    b_eq = np.zeros(7)
    b_eq[6] = 1.0
    A_ub = np.hstack([-np.eye(m), np.ones((m, 1))])
    b_ub = np.zeros(m)
    bounds = [(0, None)] * m + [(None, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        return 0.0
    return max(float(-res.fun), 0.0)


def force_closure_check(frames, mu: float, pad_half_size: float = 0.03, n_edges: int = 8,
                        tol: float = 1e-7) -> bool:
    """True iff the contacts can resist any external wrench on the payload."""
    if len(frames) < 2:
        raise ValueError("force closure needs at least two contact frames")
    return force_closure_margin(frames, mu, pad_half_size, n_edges) > tol
