"""Reference implementations that share no code path with the package.

* rotation_group_perms: every proper rotation mapping the point set onto
  itself, found by solving R S = T for all ordered target triples of a fixed
  source triple (plain linear algebra, no frame construction);
* numeric_gradient: central finite differences of any scalar loss;
* longhand_objective: the product-of-probabilities objective written as
  explicit loops.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def _match(points: np.ndarray, moved: np.ndarray, tol: float) -> np.ndarray | None:
    d = np.linalg.norm(moved[:, None, :] - points[None, :, :], axis=2)
    perm = d.argmin(axis=1)
    if d[np.arange(len(points)), perm].max() > tol or len(set(perm.tolist())) != len(points):
        return None
    return perm


def rotation_group_perms(points: np.ndarray, proper: bool = True, tol: float = 1e-6) -> set[tuple[int, ...]]:
    """Permutations induced by all isometries (rotations if ``proper``) of a point set."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    src = None
    for a, b, c in itertools.combinations(range(n), 3):
        S = pts[[a, b, c]].T
        if abs(np.linalg.det(S)) > 1e-3:
            src = (a, b, c)
            break
    S = pts[list(src)].T
    S_inv = np.linalg.inv(S)
    gram = S.T @ S
    found = set()
    for tgt in itertools.permutations(range(n), 3):
        T = pts[list(tgt)].T
        if np.abs(T.T @ T - gram).max() > tol:
            continue
        R = T @ S_inv
        if np.abs(R.T @ R - np.eye(3)).max() > tol:
            continue
        if proper and np.linalg.det(R) < 0:
            continue
        perm = _match(pts, pts @ R.T, tol)
        if perm is not None:
            found.add(tuple(int(v) for v in perm))
    return found


def random_rotation_search(points: np.ndarray, n_samples: int, rng: np.random.Generator,
                           tol: float = 1e-6) -> set[tuple[int, ...]]:
    """Random rotations snapped to the nearest symmetry by orthogonal Procrustes.

    Each random rotation proposes a nearest-point matching; the best rotation
    for that matching (SVD) is kept only if it maps the set onto itself."""
    from scipy.spatial.transform import Rotation

    pts = np.asarray(points, dtype=float)
    found = set()
    for R0 in Rotation.random(n_samples, random_state=rng).as_matrix():
        moved = pts @ R0.T
        d = np.linalg.norm(moved[:, None] - pts[None], axis=2)
        guess = d.argmin(axis=1)
        if len(set(guess.tolist())) != len(pts):
            continue
        U, _, Vt = np.linalg.svd(pts[guess].T @ pts)
        D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
        R = U @ D @ Vt
        perm = _match(pts, pts @ R.T, tol)
        if perm is not None and np.linalg.det(R) > 0:
            found.add(tuple(int(v) for v in perm))
    return found


def numeric_gradient(f, params: dict[str, np.ndarray], h: float = 1e-5) -> dict[str, np.ndarray]:
    # h near the cube root of machine epsilon balances truncation against roundoff
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            up = f()
            flat[k] = old - h
            down = f()
            flat[k] = old
            gflat[k] = (up - down) / (2 * h)
        out[name] = g
    return out


def longhand_objective(P_list, perm, y: int) -> float:
    """log of  prod_i ( P_i[v_i, y] * prod_{j != v_i} P_i[j, N] )  with v_i = perm[i]."""
    total = 0.0
    M = len(P_list)
    for i in range(M):
        P = P_list[i]
        rows, cols = len(P), len(P[0])
        N = cols - 1
        for j in range(rows):
            p = P[j][y] if j == perm[i] else P[j][N]
            total += math.log(max(float(p), 1e-12))
    return total


def longhand_best(P_list, perms, y: int, tol: float = 1e-9) -> tuple[int, list[int]]:
    """Argmax of the longhand objective and the set of candidates tied with it."""
    vals = [longhand_objective(P_list, p, y) for p in perms]
    best = max(vals)
    ties = [k for k, v in enumerate(vals) if v >= best - tol]
    return ties[0], ties
