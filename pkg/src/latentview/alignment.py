"""Latent viewpoint assignment and the alternating training loop.

For one object with label ``y`` and per-image prediction matrices ``P_i``,
each candidate assignment is scored by

    sum_i  log P_i[perm[i], y] - log P_i[perm[i], N]

(the full cross-entropy objective minus a term that does not depend on the
assignment).  Training alternates between picking the best candidate with
the network frozen and taking one gradient step with the assignment frozen.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import MultiViewSample
from .geometry import RotationCandidate
from .model import Network, add_grads, backward, first_argmax, forward, safe_log, sgd_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AssignmentResult:
    candidate: RotationCandidate
    log_score: float
    per_image_rows: np.ndarray


def _perm(c) -> np.ndarray:
    return np.asarray(getattr(c, "perm", c))


def log_ratio(P_list, y: int) -> np.ndarray:
    """``L[i, j] = log P_i[j, y] - log P_i[j, N]`` for every image i and row j."""
    P = np.asarray(P_list, dtype=np.float64)
    return safe_log(P[:, :, y]) - safe_log(P[:, :, -1])


def score_candidate(P_list, candidate, y: int) -> float:
    L = log_ratio(P_list, y)
    perm = _perm(candidate)
    if len(perm) != len(L):
        raise ValueError(f"candidate covers {len(perm)} images, got {len(L)}")
    return float(L[np.arange(len(perm)), perm].sum())


def candidate_scores(P_list, candidates: Sequence[RotationCandidate], y: int) -> np.ndarray:
    L = log_ratio(P_list, y)
    perms = np.stack([_perm(c) for c in candidates])
    return L[np.arange(L.shape[0])[None, :], perms].sum(axis=1)


def select_assignment(P_list, y: int, candidates: Sequence[RotationCandidate]) -> AssignmentResult:
    """Best-scoring candidate; ties go to the earliest candidate in the list."""
    if len(candidates) == 0:
        raise ValueError("candidate list is empty")
    scores = candidate_scores(P_list, candidates, y)
    k = first_argmax(scores)
    c = candidates[k]
    return AssignmentResult(c, float(scores[k]), _perm(c).copy())


def target_rows(perm, y: int, N: int) -> np.ndarray:
    """Per-row class labels: row ``perm[i]`` of image i is ``y``, the rest are ``N``."""
    perm = _perm(perm)
    M = len(perm)
    t = np.full((M, M), N, dtype=np.int64)
    t[np.arange(M), perm] = y
    return t


def build_targets(candidate, y: int, M: int, N: int) -> np.ndarray:
    """One-hot target matrices, shape ``(M, M, N + 1)``."""
    perm = _perm(candidate)
    if len(perm) != M:
        raise ValueError("candidate length does not match M")
    if not 0 <= y < N:
        raise ValueError(f"class label {y} out of range for {N} classes")
    rows = target_rows(perm, y, N)
    T = np.zeros((M, M, N + 1))
    ii, jj = np.meshgrid(np.arange(M), np.arange(M), indexing="ij")
    T[ii, jj, rows] = 1.0
    return T


# ---------------------------------------------------------------- training

@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 0.0005
    momentum: float = 0.9
    batch_objects: int = 1
    seed: int = 0
    variance_every: int = 50
    max_iterations: int | None = None
    assignment: str = "latent"  # "latent" or "fixed" (ground-truth views)


@dataclass
class History:
    iterations: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    selected: list[list[int]] = field(default_factory=list)
    variance_iterations: list[int] = field(default_factory=list)
    mean_variance: list[float] = field(default_factory=list)
    class_variance: list[dict[int, float]] = field(default_factory=list)
    skipped_steps: int = 0
    wall_time_s: float = 0.0

    def variance_at(self, iteration: int) -> float:
        return self.mean_variance[self.variance_iterations.index(iteration)]

    def to_csv(self, path) -> None:
        """iteration, loss, mean_alignment_variance, then one column per class.

        Rows exist for every iteration; variance columns are empty except on
        iterations where the diagnostic was computed."""
        classes = sorted({c for d in self.class_variance for c in d})
        var_by_it = dict(zip(self.variance_iterations, zip(self.mean_variance, self.class_variance)))
        loss_by_it = dict(zip(self.iterations, self.loss))
        its = sorted(set(self.iterations) | set(self.variance_iterations))
        lines = [",".join(["iteration", "loss", "mean_alignment_variance"]
                          + [f"class_{c}_variance" for c in classes])]
        for it in its:
            loss = loss_by_it.get(it)
            mv, cv = var_by_it.get(it, (None, {}))
            row = [str(it), "" if loss is None else repr(loss), "" if mv is None else repr(mv)]
            row += ["" if c not in cv else repr(cv[c]) for c in classes]
            lines.append(",".join(row))
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")


def _check_samples(samples: Sequence[MultiViewSample], M: int) -> None:
    for k, s in enumerate(samples):
        if len(s.images) != M:
            raise ValueError(f"sample {k} has {len(s.images)} images, expected {M}")


def object_step_grads(net: Network, sample: MultiViewSample, candidates, N: int,
                      fixed: bool = False):
    """Assignment + gradients for one object: returns (grads, loss, candidate id)."""
    if fixed:
        perm, cid = sample.gt_view_of_image, sample.gt_candidate
    else:
        res = select_assignment(forward(net, sample.images), sample.y, candidates)
        perm, cid = res.per_image_rows, res.candidate.id
    grads, loss = backward(net, sample.images, target_rows(perm, sample.y, N))
    return grads, loss, cid


def train(samples: Sequence[MultiViewSample], candidates: Sequence[RotationCandidate],
          net: Network, cfg: TrainConfig | None = None,
          n_classes: int | None = None) -> tuple[Network, History]:
    """Alternating optimization of the network and the latent viewpoints.

    One optimizer step per ``cfg.batch_objects`` objects; within a step each
    object's assignment is chosen with the network frozen, then the summed
    gradients of all its M images are applied at once.
    """
    cfg = cfg or TrainConfig()
    M = net.config.rows
    N = net.config.cols - 1 if n_classes is None else n_classes
    _check_samples(samples, M)
    if cfg.assignment not in ("latent", "fixed"):
        raise ValueError(f"unknown assignment mode {cfg.assignment!r}")
    fixed = cfg.assignment == "fixed"
    rng = np.random.default_rng(cfg.seed)
    hist = History()
    t0 = time.perf_counter()

    def diag(it):
        if cfg.variance_every and it % cfg.variance_every == 0:
            per_class, mean = alignment_variance(samples, net, candidates)
            hist.variance_iterations.append(it)
            hist.mean_variance.append(mean)
            hist.class_variance.append(per_class)

    it = 0
    diag(it)
    for _ in range(cfg.epochs):
        order = rng.permutation(len(samples))
        for start in range(0, len(order), cfg.batch_objects):
            acc, total, chosen = None, 0.0, []
            for k in order[start:start + cfg.batch_objects]:
                g, loss, cid = object_step_grads(net, samples[k], candidates, N, fixed)
                acc = add_grads(acc, g)
                total += loss
                chosen.append(cid)
            if not all(np.isfinite(v).all() for v in acc.values()):
                hist.skipped_steps += 1
            sgd_step(net, acc, cfg.lr, cfg.momentum)
            it += 1
            hist.iterations.append(it)
            hist.loss.append(total)
            hist.selected.append(chosen)
            diag(it)
            if cfg.max_iterations is not None and it >= cfg.max_iterations:
                hist.wall_time_s = time.perf_counter() - t0
                return net, hist
    hist.wall_time_s = time.perf_counter() - t0
    return net, hist


# ---------------------------------------------------------------- diagnostics

def aligned_stacks(samples: Sequence[MultiViewSample], net: Network,
                   candidates: Sequence[RotationCandidate]) -> dict[int, np.ndarray]:
    """Per class, each instance's images reordered so that slot j holds the
    image assigned to viewpoint j.  Returns class -> (instances, M, H, W)."""
    out: dict[int, list[np.ndarray]] = {}
    for s in samples:
        perm = select_assignment(forward(net, s.images), s.y, candidates).per_image_rows
        stack = np.empty_like(s.images)
        stack[perm] = s.images
        out.setdefault(s.y, []).append(stack)
    return {c: np.stack(v) for c, v in sorted(out.items())}


def alignment_variance(samples: Sequence[MultiViewSample], net: Network,
                       candidates: Sequence[RotationCandidate]) -> tuple[dict[int, float], float]:
    """Mean pixel variance of viewpoint-aligned image stacks about their class average.

    Classes with fewer than two instances are skipped (logged).
    """
    per_class = {}
    for c, stacks in aligned_stacks(samples, net, candidates).items():
        if len(stacks) < 2:
            log.info("class %d has %d instance(s); alignment variance undefined, skipped", c, len(stacks))
            continue
        avg = stacks.mean(axis=0)
        per_class[c] = float(((stacks - avg) ** 2).mean())
    mean = float(np.mean(list(per_class.values()))) if per_class else float("nan")
    return per_class, mean
