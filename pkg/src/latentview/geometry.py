"""Discrete viewpoint rigs and the rotation candidates that act on them.

Three rigs are supported:

* ``I``   -- a ring of ``M = 360/theta`` cameras at a fixed elevation (turntable).
* ``II``  -- the 20 vertices of a regular dodecahedron (no upright axis).
* ``III`` -- ``M_a`` azimuths times ``M_e = 180/phi + 1`` elevations, poles included.

All indices are 0-based.  A candidate is stored as ``perm`` where
``perm[i]`` is the viewpoint assigned to the i-th captured image, together
with the rotation ``R`` satisfying ``positions[perm[i]] == R @ positions[i]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

CASES = ("I", "II", "III")
GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0
TOL = 1e-9


def rot_x(deg: float) -> np.ndarray:
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg: float) -> np.ndarray:
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(deg: float) -> np.ndarray:
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def look_at_frame(direction: np.ndarray, up_hint: np.ndarray | None = None) -> np.ndarray:
    """Camera frame for a camera sitting at ``direction`` and looking at the origin.

    Returns a 3x3 matrix whose columns are (right, up, back), with ``back``
    equal to the normalized direction.  The world z-axis is the default up
    hint; x is used when the camera sits on the z-axis.
    """
    back = np.asarray(direction, dtype=float)
    n = np.linalg.norm(back)
    if n < 1e-12:
        raise ValueError("view direction must be non-zero")
    back = back / n
    if up_hint is None:
        up_hint = np.array([0.0, 0.0, 1.0])
        if abs(back[2]) > 1.0 - 1e-9:
            up_hint = np.array([1.0, 0.0, 0.0])
    right = np.cross(up_hint, back)
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        raise ValueError("up hint is parallel to the view direction")
    right /= rn
    up = np.cross(back, right)
    return np.stack([right, up, back], axis=1)


def _azimuth_frame(azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    # right vector follows azimuth so frames stay defined (and equivariant) at the poles
    a, e = np.deg2rad(azimuth_deg), np.deg2rad(elevation_deg)
    back = np.array([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)])
    right = np.array([-np.sin(a), np.cos(a), 0.0])
    up = np.cross(back, right)
    return np.stack([right, up, back], axis=1)


@dataclass(frozen=True, eq=False)
class ViewpointSetup:
    case_kind: str
    M: int
    M_a: int
    M_e: int
    theta: float
    phi: float
    positions: np.ndarray
    frames: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def to_dict(self) -> dict:
        return {
            "case": self.case_kind,
            "M": self.M,
            "M_a": self.M_a,
            "M_e": self.M_e,
            "theta": None if self.case_kind == "II" else self.theta,
            "phi": None if self.case_kind == "II" else self.phi,
            "orientation": self.orientation.tolist(),
            "positions": self.positions.tolist(),
        }


@dataclass(frozen=True, eq=False)
class RotationCandidate:
    id: int
    perm: np.ndarray
    rotation: np.ndarray

    def __repr__(self) -> str:
        return f"RotationCandidate(id={self.id}, perm={self.perm.tolist()})"


def _check_divides(total: float, step: float, name: str) -> int:
    if step <= 0:
        raise ValueError(f"{name} must be positive, got {step}")
    q = total / step
    k = int(round(q))
    if k < 1 or abs(q - k) > 1e-9:
        raise ValueError(f"{name}={step} does not divide {total:g} degrees")
    return k


def dodecahedron_vertices() -> np.ndarray:
    """The 20 unit-normalized dodecahedron vertices in lexicographic order."""
    g, ig = GOLDEN, 1.0 / GOLDEN
    pts = [(x, y, z) for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)]
    for s1 in (-1, 1):
        for s2 in (-1, 1):
            pts.append((0.0, s1 * ig, s2 * g))
            pts.append((s1 * ig, s2 * g, 0.0))
            pts.append((s1 * g, 0.0, s2 * ig))
    v = np.asarray(pts, dtype=float)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = np.round(v, 12)
    order = np.lexsort((r[:, 2], r[:, 1], r[:, 0]))
    return v[order]


def build_setup(case_kind: str, theta_deg: float = 30.0, phi_deg: float = 30.0) -> ViewpointSetup:
    """Construct a viewpoint rig.

    Position order: case I by increasing azimuth; case II lexicographic by
    coordinates; case III elevation-major (from -90 to +90), azimuth-minor.
    ``phi_deg`` is the elevation for case I and the elevation interval for
    case III.  Case II ignores both angles.
    """
    case_kind = str(case_kind).upper()
    if case_kind == "I":
        M = _check_divides(360.0, theta_deg, "theta")
        az = np.arange(M) * theta_deg
        frames = np.stack([_azimuth_frame(a, phi_deg) for a in az])
        return ViewpointSetup("I", M, M, 1, float(theta_deg), float(phi_deg),
                              frames[:, :, 2].copy(), frames)
    if case_kind == "II":
        pos = dodecahedron_vertices()
        frames = np.stack([look_at_frame(p) for p in pos])
        return ViewpointSetup("II", 20, 0, 0, 0.0, 0.0, pos, frames)
    if case_kind == "III":
        M_a = _check_divides(360.0, theta_deg, "theta")
        M_e = _check_divides(180.0, phi_deg, "phi") + 1
        frames = np.stack([
            _azimuth_frame(a * theta_deg, -90.0 + e * phi_deg)
            for e in range(M_e) for a in range(M_a)
        ])
        return ViewpointSetup("III", M_a * M_e, M_a, M_e, float(theta_deg), float(phi_deg),
                              frames[:, :, 2].copy(), frames)
    raise ValueError(f"case_kind must be one of {CASES}, got {case_kind!r}")


def _canonical(setup: ViewpointSetup) -> ViewpointSetup:
    return build_setup(setup.case_kind, setup.theta, setup.phi)


def perm_from_rotation(positions: np.ndarray, R: np.ndarray, tol: float = TOL) -> np.ndarray | None:
    """Vertex permutation induced by ``R``, or None if R does not map the set onto itself."""
    moved = positions @ R.T
    d = np.linalg.norm(moved[:, None, :] - positions[None, :, :], axis=2)
    perm = d.argmin(axis=1)
    if d[np.arange(len(perm)), perm].max() > tol or len(set(perm.tolist())) != len(perm):
        return None
    return perm


def _frame_from_pair(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    e1 = a / np.linalg.norm(a)
    e2 = b - (b @ e1) * e1
    e2 /= np.linalg.norm(e2)
    return np.stack([e1, e2, np.cross(e1, e2)], axis=1)


def _dodecahedron_candidates(positions: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    # a proper symmetry is fixed by where it sends vertex 0 and one of its neighbours:
    # 20 targets x 3 neighbour choices = 60 rotations
    gram = positions @ positions.T
    np.fill_diagonal(gram, -np.inf)
    nearest = gram.max()
    nbrs = [np.flatnonzero(np.abs(row - nearest) < 1e-9) for row in gram]
    base = _frame_from_pair(positions[0], positions[nbrs[0][0]])
    out = []
    for a in range(len(positions)):
        for b in nbrs[a]:
            R = _frame_from_pair(positions[a], positions[b]) @ base.T
            perm = perm_from_rotation(positions, R)
            if perm is None:  # pragma: no cover - geometry guarantees a match
                raise RuntimeError("dodecahedron candidate failed to close")
            out.append((perm, R))
    return out


def enumerate_candidates(setup: ViewpointSetup) -> list[RotationCandidate]:
    """All admissible global image-to-viewpoint assignments for ``setup``.

    Returned sorted lexicographically by permutation, so candidate 0 is the
    identity.  Rotations are expressed in the (possibly swept) rig frame.
    """
    canon = _canonical(setup)
    raw: list[tuple[np.ndarray, np.ndarray]] = []
    if setup.case_kind == "I":
        M = setup.M
        for k in range(M):
            raw.append(((np.arange(M) + k) % M, rot_z(k * setup.theta)))
    elif setup.case_kind == "II":
        raw = _dodecahedron_candidates(canon.positions)
    else:
        M_a, M_e = setup.M_a, setup.M_e
        idx = np.arange(setup.M).reshape(M_e, M_a)
        for k in range(M_a):
            perm = np.roll(idx, -k, axis=1).reshape(-1)
            raw.append((perm, rot_z(k * setup.theta)))
    raw.sort(key=lambda pr: tuple(pr[0].tolist()))
    O = setup.orientation
    return [
        RotationCandidate(i, np.asarray(p, dtype=np.int64), O @ R @ O.T)
        for i, (p, R) in enumerate(raw)
    ]


def orientation_sweep(setup: ViewpointSetup, trial_index: int) -> ViewpointSetup:
    """Rigidly rotate the whole rig for one of 11 camera-system orientations.

    Trial 1 is the unrotated rig.  Trial ``t >= 2`` rotates by 36 degrees about
    x and then by ``(t - 2) * 36`` degrees about y.  Viewpoint indices keep
    their pre-rotation meaning.
    """
    if not 1 <= int(trial_index) <= 11:
        raise ValueError(f"trial_index must be in 1..11, got {trial_index}")
    if trial_index == 1:
        O = np.eye(3)
    else:
        O = rot_y((trial_index - 2) * 36.0) @ rot_x(36.0)
    new_orientation = O @ setup.orientation
    return replace(
        setup,
        positions=setup.positions @ O.T,
        frames=np.einsum("ij,mjk->mik", O, setup.frames),
        orientation=new_orientation,
    )


def _check_rotation(R: np.ndarray, name: str) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError(f"{name} must be 3x3, got shape {R.shape}")
    if np.abs(R.T @ R - np.eye(3)).max() > 1e-6 or np.linalg.det(R) <= 0:
        raise ValueError(f"{name} is not a proper rotation")
    return R


def angular_error(rotation_a: np.ndarray, rotation_b: np.ndarray) -> float:
    """Geodesic distance between two rotations, in degrees."""
    a = _check_rotation(rotation_a, "rotation_a")
    b = _check_rotation(rotation_b, "rotation_b")
    c = (np.trace(a.T @ b) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def compose(p: Sequence[int], q: Sequence[int]) -> np.ndarray:
    """Permutation composition ``(p o q)[i] = p[q[i]]``."""
    return np.asarray(p)[np.asarray(q)]


def adjacency(positions: np.ndarray, tol: float = 1e-9) -> set[tuple[int, int]]:
    """Edges between viewpoints at the minimum pairwise angular separation."""
    gram = np.clip(positions @ positions.T, -1.0, 1.0)
    np.fill_diagonal(gram, -np.inf)
    best = gram.max()
    ii, jj = np.nonzero(np.abs(gram - best) < tol)
    return {(int(i), int(j)) for i, j in zip(ii, jj) if i < j}


def setup_to_json(setup: ViewpointSetup, candidates: list[RotationCandidate] | None = None) -> str:
    doc = setup.to_dict()
    doc["index_base"] = 0
    if candidates is not None:
        doc["candidates"] = [c.perm.tolist() for c in candidates]
    return json.dumps(doc, indent=1)
