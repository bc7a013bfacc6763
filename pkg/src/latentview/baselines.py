"""Comparison methods sharing the latent-viewpoint model's backbone and optimizer.

* late pooling: a plain N-way classifier per image, object score = mean of
  the per-view softmax outputs;
* fine-grained: a flat classifier over N*M joint (class, view) labels,
  supervised with the true views.

Plus the camera-system orientation sweep and the comparison report.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .alignment import TrainConfig, train
from .data import Dataset, MultiViewSample
from .geometry import ViewpointSetup, angular_error, enumerate_candidates
from .inference import Metrics, build_pose_table, evaluate, random_subsets
from .model import NetConfig, Network, add_grads, backward, forward, init_network, sgd_step

BASELINE_KINDS = ("LatePoolAverage", "FineGrained")
REPORT_FIELDS = ["method", "views_used", "class_acc", "view_acc", "pose_med_deg",
                 "pose_ave_deg", "wall_time_s"]


def late_pool_predict(per_view_class_scores) -> int:
    """Class with the highest mean score across views (ties: smallest class)."""
    s = np.asarray(per_view_class_scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("no views to pool")
    if s.ndim == 1:
        s = s[None]
    return int(np.argmax(s.mean(axis=0)))


def train_image_classifier(samples: Sequence[MultiViewSample], net: Network,
                           labels: Callable[[MultiViewSample], np.ndarray],
                           cfg: TrainConfig, on_epoch: Callable[[int, Network], None] | None = None):
    """Single-head training: each image has one label, one optimizer step per
    ``cfg.batch_objects`` objects.  Returns (net, per-step losses)."""
    rng = np.random.default_rng(cfg.seed)
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(samples))
        for start in range(0, len(order), cfg.batch_objects):
            acc, total = None, 0.0
            for k in order[start:start + cfg.batch_objects]:
                s = samples[k]
                g, loss = backward(net, s.images, np.asarray(labels(s))[:, None])
                acc = add_grads(acc, g)
                total += loss
            sgd_step(net, acc, cfg.lr, cfg.momentum)
            losses.append(total)
            if cfg.max_iterations is not None and len(losses) >= cfg.max_iterations:
                return net, losses
        if on_epoch is not None:
            on_epoch(epoch + 1, net)
    return net, losses


def _backbone(net_config: NetConfig, rows: int, cols: int) -> NetConfig:
    return replace(net_config, rows=rows, cols=cols)


# ---------------------------------------------------------------- late pooling

def train_late_pool(dataset: Dataset, net_config: NetConfig, cfg: TrainConfig) -> Network:
    N = dataset.config.n_classes
    net = init_network(_backbone(net_config, 1, N))
    net, _ = train_image_classifier(dataset.train, net, lambda s: np.full(len(s.images), s.y), cfg)
    return net


def evaluate_late_pool(samples: Sequence[MultiViewSample], net: Network, views_per_trial: int,
                       trials: int = 120, seed: int = 0) -> Metrics:
    rng = np.random.default_rng(seed)
    hits = 0
    for s in samples:
        probs = forward(net, s.images)[:, 0, :]
        mask = random_subsets(len(s.images), views_per_trial, trials, rng)
        pooled = (mask[:, :, None] * probs[None]).sum(axis=1) / views_per_trial
        hits += int((pooled.argmax(axis=1) == s.y).sum())
    nan = float("nan")
    return Metrics(views_per_trial, trials, hits / (len(samples) * trials), nan, nan, nan, nan, nan)


# ---------------------------------------------------------------- fine-grained

def fine_grained_scores(probs: np.ndarray, N: int, M: int, marginal: str = "max") -> np.ndarray:
    """Per-image class scores from joint (class, view) probabilities, shape (images, N)."""
    joint = probs.reshape(len(probs), N, M)
    if marginal == "max":
        return joint.max(axis=2)
    if marginal == "sum":
        return joint.sum(axis=2)
    raise ValueError(f"marginal must be 'max' or 'sum', got {marginal!r}")


@dataclass
class FineGrainedHistory:
    epochs: list[int] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)
    class_acc: list[float] = field(default_factory=list)
    view_acc: list[float] = field(default_factory=list)

    def tradeoff(self) -> dict:
        """View accuracy gain and class accuracy drop from its peak, first to last record."""
        ca, va = np.asarray(self.class_acc), np.asarray(self.view_acc)
        peak = int(np.argmax(ca))
        return {
            "view_first": float(va[0]), "view_last": float(va[-1]),
            "class_peak": float(ca[peak]), "class_peak_epoch": self.epochs[peak],
            "class_last": float(ca[-1]),
            "view_up": bool(va[-1] > va[0]),
            "class_down_from_peak": bool(ca[-1] < ca[peak]),
        }


def evaluate_fine_grained(samples: Sequence[MultiViewSample], net: Network, setup: ViewpointSetup,
                          N: int, views_per_trial: int, trials: int = 120, seed: int = 0,
                          marginal: str = "max") -> Metrics:
    M = setup.M
    rng = np.random.default_rng(seed)
    hits = vhits = vtot = 0
    errs, errs_c = [], []
    for s in samples:
        probs = forward(net, s.images)[:, 0, :]
        cls = fine_grained_scores(probs, N, M, marginal)
        joint = probs.reshape(len(probs), N, M)
        mask = random_subsets(M, views_per_trial, trials, rng)
        for t in range(trials):
            obs = np.flatnonzero(mask[t])
            yh = int(np.argmax(cls[obs].sum(axis=0)))
            vh = joint[obs, yh, :].argmax(axis=1)
            ok = yh == s.y
            hits += ok
            vhits += int((vh == s.gt_view_of_image[obs]).sum())
            vtot += len(obs)
            # camera o0 saw canonical viewpoint vh[0]:  G^T C_o0 = C_vh0
            G_hat = setup.frames[obs[0]] @ setup.frames[vh[0]].T
            e = angular_error(G_hat, s.gt_pose)
            errs.append(e)
            if ok:
                errs_c.append(e)
    n = len(samples) * trials
    nan = float("nan")
    med, ave = (float(np.median(errs)), float(np.mean(errs))) if errs else (nan, nan)
    med_c, ave_c = (float(np.median(errs_c)), float(np.mean(errs_c))) if errs_c else (nan, nan)
    return Metrics(views_per_trial, trials, hits / n, vhits / max(vtot, 1), med, ave, med_c, ave_c)


def fine_grained_image_accuracy(samples: Sequence[MultiViewSample], net: Network, N: int, M: int,
                                marginal: str = "max") -> tuple[float, float]:
    """Single-image class and view accuracy over every test image (no sampling)."""
    hits = vhits = total = 0
    for s in samples:
        probs = forward(net, s.images)[:, 0, :]
        yh = fine_grained_scores(probs, N, M, marginal).argmax(axis=1)
        vh = probs.reshape(len(probs), N, M)[np.arange(len(probs)), yh].argmax(axis=1)
        hits += int((yh == s.y).sum())
        vhits += int((vh == s.gt_view_of_image).sum())
        total += len(probs)
    return hits / total, vhits / total


def train_fine_grained(dataset: Dataset, net_config: NetConfig, cfg: TrainConfig,
                       eval_views: int | None = None, eval_trials: int = 20,
                       marginal: str = "max") -> tuple[Network, FineGrainedHistory]:
    """Pose-supervised N*M-way classifier; records test class/view accuracy after every epoch.

    With ``eval_views=None`` the record is exhaustive single-image accuracy;
    otherwise ``eval_trials`` random subsets of ``eval_views`` images per object.
    """
    setup = dataset.setup
    N, M = dataset.config.n_classes, setup.M
    net = init_network(_backbone(net_config, 1, N * M))
    hist = FineGrainedHistory()
    steps_per_epoch = -(-len(dataset.train) // cfg.batch_objects)

    def record(epoch, n):
        if eval_views is None:
            ca, va = fine_grained_image_accuracy(dataset.test, n, N, M, marginal)
        else:
            m = evaluate_fine_grained(dataset.test, n, setup, N, eval_views, eval_trials, 0, marginal)
            ca, va = m.class_acc, m.view_acc
        hist.epochs.append(epoch)
        hist.iterations.append(epoch * steps_per_epoch)
        hist.class_acc.append(ca)
        hist.view_acc.append(va)

    net, _ = train_image_classifier(
        dataset.train, net, lambda s: s.y * M + np.asarray(s.gt_view_of_image), cfg, record)
    return net, hist


# ---------------------------------------------------------------- experiments

def train_latent(dataset: Dataset, net_config: NetConfig, cfg: TrainConfig):
    setup = dataset.setup
    cands = enumerate_candidates(setup)
    N = dataset.config.n_classes
    net = init_network(_backbone(net_config, setup.M, N + 1))
    net, hist = train(dataset.train, cands, net, cfg)
    return net, hist, cands


def orientation_experiment(dataset_factory: Callable[[int], Dataset], net_config: NetConfig,
                           cfg: TrainConfig, trials: int = 11, views: int | None = None,
                           eval_trials: int = 1) -> dict:
    """Train one model per camera-system orientation with identical seeds.

    ``dataset_factory(t)`` must return the dataset rendered under orientation
    trial ``t`` (1..trials).  Returns per-orientation accuracy plus mean/std.
    """
    rows = []
    for t in range(1, trials + 1):
        ds = dataset_factory(t)
        net, _, cands = train_latent(ds, net_config, cfg)
        m = evaluate(ds.test, net, ds.setup, cands, views or ds.setup.M, eval_trials, 0)[0]
        rows.append({"orientation": t, "class_acc": m.class_acc})
    acc = np.array([r["class_acc"] for r in rows])
    return {"rows": rows, "mean": float(acc.mean()), "std": float(acc.std())}


def write_orientation_csv(result: dict, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["orientation", "class_acc"])
        for r in result["rows"]:
            w.writerow([r["orientation"], r["class_acc"]])
        w.writerow(["mean", result["mean"]])
        w.writerow(["std", result["std"]])


def compare_methods(dataset: Dataset, net_config: NetConfig, cfg: TrainConfig,
                    views: Sequence[int] | None = None, trials: int = 120,
                    per_class_table: bool = True, marginal: str = "max") -> list[dict]:
    """Train every method on ``dataset`` under the same backbone and budget;
    one report row per (method, views_used)."""
    setup = dataset.setup
    N, M = dataset.config.n_classes, setup.M
    views = list(views or [M])
    rows = []

    t0 = time.perf_counter()
    net, _, cands = train_latent(dataset, net_config, cfg)
    table = build_pose_table(dataset.train, net, cands, setup, per_class=per_class_table)
    ms = evaluate(dataset.test, net, setup, cands, views, trials, 0, table)
    wall = time.perf_counter() - t0
    rows += [_report_row("latent_viewpoint", m, wall) for m in ms]

    t0 = time.perf_counter()
    lp = train_late_pool(dataset, net_config, cfg)
    ms = [evaluate_late_pool(dataset.test, lp, v, trials, 1000 * v) for v in views]
    wall = time.perf_counter() - t0
    rows += [_report_row("late_pool_average", m, wall) for m in ms]

    t0 = time.perf_counter()
    fg, _ = train_fine_grained(dataset, net_config, cfg, marginal=marginal, eval_trials=1)
    ms = [evaluate_fine_grained(dataset.test, fg, setup, N, v, trials, 1000 * v, marginal) for v in views]
    wall = time.perf_counter() - t0
    rows += [_report_row("fine_grained", m, wall) for m in ms]
    return rows


def _report_row(method: str, m: Metrics, wall: float) -> dict:
    return {"method": method, "views_used": m.views, "class_acc": m.class_acc,
            "view_acc": m.view_acc, "pose_med_deg": m.pose_med_deg,
            "pose_ave_deg": m.pose_ave_deg, "wall_time_s": wall}


def write_report_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=REPORT_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow(r)
