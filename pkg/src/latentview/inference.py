"""Aggregating partial multi-view predictions into a class and a pose.

Observed images carry known capture offsets (their index in the rig's
capture order).  A candidate restricted to the observed offsets fixes the
viewpoint of every observed image, so the joint score of (class y,
candidate c) is

    S[y, c] = sum over observed i of  log P_i[perm_c[o_i], y] - log P_i[perm_c[o_i], N].

Scores are always accumulated in ascending offset order, which makes the
batch and incremental paths agree bit for bit regardless of arrival order.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .alignment import select_assignment
from .data import MultiViewSample, perturbed_views
from .geometry import RotationCandidate, ViewpointSetup, angular_error
from .model import TIE_TOL, Network, first_argmax, forward, safe_log

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Prediction:
    y_hat: int
    candidate: RotationCandidate
    offsets: np.ndarray
    v_hats: np.ndarray
    log_score: float
    per_class_scores: np.ndarray


def view_terms(P, n_classes: int | None = None) -> np.ndarray:
    """``T[j, y] = log P[j, y] - log P[j, N]`` for one prediction matrix."""
    P = np.asarray(P, dtype=np.float64)
    N = P.shape[-1] - 1 if n_classes is None else n_classes
    return safe_log(P[:, :N]) - safe_log(P[:, N:N + 1])


def _perms(candidates: Sequence[RotationCandidate]) -> np.ndarray:
    return np.stack([np.asarray(c.perm) for c in candidates])


def _decide(scores: np.ndarray, candidates, offsets) -> Prediction:
    # scores is (N, C); flat argmax in class-major order gives the documented tie-break
    N, C = scores.shape
    k = first_argmax(scores)
    y, c = divmod(k, C)
    cand = candidates[c]
    offsets = np.asarray(offsets, dtype=np.int64)
    return Prediction(y, cand, offsets, np.asarray(cand.perm)[offsets],
                      float(scores[y, c]), scores.max(axis=1))


def predict(P_list_partial, candidates: Sequence[RotationCandidate], offsets) -> Prediction:
    """Joint arg-max over class and candidate for the observed images.

    Ties go to the smallest class, then the smallest candidate id.
    """
    offsets = [int(o) for o in offsets]
    if len(P_list_partial) == 0:
        raise ValueError("no observations")
    if len(P_list_partial) != len(offsets):
        raise ValueError("need one offset per prediction matrix")
    if len(set(offsets)) != len(offsets):
        raise ValueError("offsets must be distinct")
    perms = _perms(candidates)
    scores = None
    for k in np.argsort(offsets, kind="stable"):
        T = view_terms(P_list_partial[k])
        term = T[perms[:, offsets[k]], :].T
        scores = term.copy() if scores is None else scores + term
    return _decide(scores, candidates, offsets)


@dataclass
class SequentialState:
    """Running evidence for one tracked object, one (N, C) term per seen view."""
    candidates: Sequence[RotationCandidate]
    terms: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def offsets(self) -> list[int]:
        return sorted(self.terms)

    @property
    def scores(self) -> np.ndarray:
        total = None
        for o in self.offsets:
            total = self.terms[o].copy() if total is None else total + self.terms[o]
        return total

    def prediction(self) -> Prediction:
        if not self.terms:
            raise ValueError("no observations yet")
        return _decide(self.scores, self.candidates, self.offsets)


def sequential_update(state: SequentialState, new_P, new_offset: int) -> SequentialState:
    """Fold one more view into ``state``; returns a new state."""
    new_offset = int(new_offset)
    if new_offset in state.terms:
        raise ValueError(f"offset {new_offset} already observed")
    perms = _perms(state.candidates)
    term = view_terms(new_P)[perms[:, new_offset], :].T
    return SequentialState(state.candidates, {**state.terms, new_offset: term})


# ---------------------------------------------------------------- pose decoding

def _pose_key(R: np.ndarray) -> tuple:
    return tuple(np.round(R, 6).ravel().tolist())


@dataclass
class PoseTable:
    """Per predicted viewpoint: the ground-truth poses (object orientation in
    the camera frame) and true viewpoint ids of training images assigned to it.

    With ``per_class`` the key is (class, viewpoint), which tolerates classes
    that self-align to different frames."""
    per_class: bool = False
    poses: list[np.ndarray] = field(default_factory=list)
    pose_buckets: dict = field(default_factory=dict)
    view_buckets: dict = field(default_factory=dict)
    _index: dict = field(default_factory=dict)

    def key(self, y: int, v: int):
        return (int(y), int(v)) if self.per_class else int(v)

    def add(self, y: int, v: int, pose: np.ndarray, true_view: int | None = None) -> None:
        pk = _pose_key(pose)
        if pk not in self._index:
            self._index[pk] = len(self.poses)
            self.poses.append(np.asarray(pose, dtype=float))
        k = self.key(y, v)
        self.pose_buckets.setdefault(k, []).append(self._index[pk])
        if true_view is not None:
            self.view_buckets.setdefault(k, []).append(int(true_view))

    @staticmethod
    def _mode(values: list[int]) -> int:
        counts = Counter(values)
        best = max(counts.values())
        return min(v for v, n in counts.items() if n == best)

    def modal_pose(self, y: int, v: int) -> np.ndarray | None:
        b = self.pose_buckets.get(self.key(y, v))
        return None if not b else self.poses[self._mode(b)]

    def modal_view(self, y: int, v: int) -> int | None:
        b = self.view_buckets.get(self.key(y, v))
        return None if not b else self._mode(b)


def build_pose_table(samples: Sequence[MultiViewSample], net: Network,
                     candidates: Sequence[RotationCandidate], setup: ViewpointSetup,
                     per_class: bool = False) -> PoseTable:
    """Fill a pose table from the training split using the trained network's assignments."""
    table = PoseTable(per_class=per_class)
    for s in samples:
        perm = select_assignment(forward(net, s.images), s.y, candidates).per_image_rows
        for i in range(len(perm)):
            table.add(s.y, perm[i], setup.frames[i].T @ s.gt_pose, s.gt_view_of_image[i])
    return table


def decode_pose(prediction: Prediction, setup: ViewpointSetup, train_pose_table: PoseTable | None) -> np.ndarray:
    """Object pose estimate from the first observed image's predicted viewpoint.

    Looks up the most frequent training pose for that viewpoint (ties to the
    earliest-seen pose) and maps it back through the observing camera.  An
    empty bucket falls back to the candidate's own rotation.
    """
    o0, v0 = int(prediction.offsets[0]), int(prediction.v_hats[0])
    Q = None if train_pose_table is None else train_pose_table.modal_pose(prediction.y_hat, v0)
    if Q is None:
        log.info("no training pose for viewpoint %d; using candidate %d rotation",
                 v0, prediction.candidate.id)
        return prediction.candidate.rotation.T.copy()
    return setup.frames[o0] @ Q


# ---------------------------------------------------------------- evaluation

@dataclass
class Metrics:
    views: int
    trials: int
    class_acc: float
    view_acc: float
    pose_med_deg: float
    pose_ave_deg: float
    pose_med_c_deg: float
    pose_ave_c_deg: float

    def to_dict(self) -> dict:
        return asdict(self)


METRIC_FIELDS = list(Metrics.__dataclass_fields__)


def random_subsets(M: int, views: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean masks (trials, M) each selecting ``views`` distinct images."""
    keys = rng.random((trials, M))
    idx = np.argsort(keys, axis=1)[:, :views]
    mask = np.zeros((trials, M), dtype=bool)
    np.put_along_axis(mask, idx, True, axis=1)
    return mask


def _stats(errors: list[float]) -> tuple[float, float]:
    if not errors:
        return float("nan"), float("nan")
    return float(np.median(errors)), float(np.mean(errors))


def evaluate_stacks(P_stacks: Sequence[np.ndarray], labels: Sequence[int],
                    gt_views: Sequence[np.ndarray], gt_poses: Sequence[np.ndarray],
                    setup: ViewpointSetup, candidates: Sequence[RotationCandidate],
                    views_per_trial: int, trials: int = 120, seed: int = 0,
                    pose_table: PoseTable | None = None) -> Metrics:
    """Metrics over random view subsets of precomputed prediction stacks.

    Viewpoint accuracy compares predicted viewpoints with the true ones after
    mapping through ``pose_table`` (the learned frame is only defined up to
    the candidate group); without a table predictions are compared directly.
    """
    perms = _perms(candidates)
    C = len(candidates)
    rng = np.random.default_rng(seed)
    class_hits = view_hits = view_total = 0
    errs, errs_c = [], []
    for P, y, gt, G in zip(P_stacks, labels, gt_views, gt_poses):
        P = np.asarray(P, dtype=np.float64)
        M, _, K = P.shape
        N = K - 1
        T = safe_log(P[:, :, :N]) - safe_log(P[:, :, N:])            # (M, rows, N)
        Gc = T[np.arange(M)[None, :], perms, :]                        # (C, M, N)
        mask = random_subsets(M, views_per_trial, trials, rng)
        S = np.einsum("tm,cmn->tnc", mask.astype(float), Gc)           # (trials, N, C)
        flat_scores = S.reshape(trials, -1)
        best = flat_scores.max(axis=1, keepdims=True)
        flat = (flat_scores >= best - TIE_TOL * np.maximum(1.0, np.abs(best))).argmax(axis=1)
        y_hat, c_hat = np.divmod(flat, C)
        for t in range(trials):
            obs = np.flatnonzero(mask[t])
            yh, ch = int(y_hat[t]), int(c_hat[t])
            correct = yh == y
            class_hits += correct
            vh = perms[ch, obs]
            if pose_table is None:
                mapped = vh
            else:
                mapped = np.array([pose_table.modal_view(yh, v) if pose_table.modal_view(yh, v) is not None
                                   else -1 for v in vh])
            view_hits += int((mapped == np.asarray(gt)[obs]).sum())
            view_total += len(obs)
            pred = Prediction(yh, candidates[ch], obs, vh, float(S[t, yh, ch]), S[t].max(axis=1))
            e = angular_error(decode_pose(pred, setup, pose_table), G)
            errs.append(e)
            if correct:
                errs_c.append(e)
    n = len(labels) * trials
    med, ave = _stats(errs)
    med_c, ave_c = _stats(errs_c)
    return Metrics(views_per_trial, trials, class_hits / n, view_hits / max(view_total, 1),
                   med, ave, med_c, ave_c)


def evaluate(samples: Sequence[MultiViewSample], net: Network, setup: ViewpointSetup,
             candidates: Sequence[RotationCandidate], views_per_trial=None, trials: int = 120,
             seed: int = 0, pose_table: PoseTable | None = None) -> list[Metrics]:
    """Evaluate a trained network on a split for one or several view counts."""
    M = setup.M
    if views_per_trial is None:
        views_per_trial = [M]
    elif np.isscalar(views_per_trial):
        views_per_trial = [int(views_per_trial)]
    for v in views_per_trial:
        if not 1 <= v <= M:
            raise ValueError(f"views_per_trial must be in 1..{M}, got {v}")
    stacks = [forward(net, s.images) for s in samples]
    labels = [s.y for s in samples]
    gts = [s.gt_view_of_image for s in samples]
    poses = [s.gt_pose for s in samples]
    return [evaluate_stacks(stacks, labels, gts, poses, setup, candidates, v, trials,
                            seed + 1000 * v, pose_table) for v in views_per_trial]


def write_metrics_csv(metrics: Sequence[Metrics], path, extra_cols: dict | None = None) -> None:
    extra_cols = extra_cols or {}
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(list(extra_cols) + METRIC_FIELDS)
        for m in metrics:
            w.writerow(list(extra_cols.values()) + [getattr(m, k) for k in METRIC_FIELDS])


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return [{k: float(v) if k in METRIC_FIELDS else v for k, v in row.items()}
                for row in csv.DictReader(f)]


def metrics_summary(metrics: Sequence[Metrics]) -> str:
    return json.dumps({"rows": [m.to_dict() for m in metrics]}, indent=1)


def evaluate_perturbed(samples: Sequence[MultiViewSample], net: Network, setup: ViewpointSetup,
                       candidates: Sequence[RotationCandidate], data_config, max_trials: int,
                       seed: int = 0, mode: str = "azimuth") -> list[float]:
    """Class accuracy when test objects are re-rendered off the view grid.

    Entry ``n - 1`` scores each object by the maximum class score over its
    first ``n`` random rotations (all views observed).  Rotation draws are
    nested, so every entry sees a superset of the previous one's trials.
    """
    best = np.full((len(samples), max_trials, data_config.n_classes), -np.inf)
    for k, s in enumerate(samples):
        views = perturbed_views(s, setup, data_config, max_trials, seed + k, mode)
        for t, images in enumerate(views):
            pred = predict(list(forward(net, images)), candidates, range(setup.M))
            best[k, t] = pred.per_class_scores
    running = np.maximum.accumulate(best, axis=1)
    labels = np.array([s.y for s in samples])
    return [float((running[:, n].argmax(axis=1) == labels).mean()) for n in range(max_trials)]
