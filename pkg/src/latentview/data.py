"""Synthetic multi-view objects, an orthographic ray-cast renderer, and the
dataset container format.

Objects are unions of ellipsoids and axis-aligned boxes in a canonical frame.
Each instance gets a random discrete pose drawn from the rig's rotation
candidates, so training objects are unaligned and the true viewpoint of every
image is known only to the evaluator.

Dataset container layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"LVDS"
    4       4     uint32 format version
    8       8     uint64 header length L
    16      L     UTF-8 JSON header: config, seed, image_shape [M, H, W],
                  dtype "<f8", and one metadata record per sample
                  (split, y, instance_id, gt_candidate, gt_view_of_image,
                  gt_pose, object)
    16+L    ...   per sample, in header order: M*H*W float64 pixels (C order)
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import (RotationCandidate, ViewpointSetup, build_setup, enumerate_candidates,
                       look_at_frame, orientation_sweep, rot_z)

MAGIC = b"LVDS"
FORMAT_VERSION = 1
CAMERA_DISTANCE = 3.0
VARIANTS = ("default", "confusable", "spheres")


@dataclass(frozen=True)
class Primitive:
    kind: str  # "ellipsoid" (size = radii) or "box" (size = half extents)
    center: tuple[float, float, float]
    size: tuple[float, float, float]


@dataclass(frozen=True)
class Decal:
    """A view-dependent mark, drawn only when the camera is within
    ``halfwidth_deg`` of ``direction`` (object frame)."""
    direction: tuple[float, float, float]
    pattern: int
    halfwidth_deg: float = 10.0


@dataclass
class SyntheticObject:
    class_id: int
    instance_id: int
    parts: list[Primitive]
    decals: list[Decal] = field(default_factory=list)
    pose: np.ndarray = field(default_factory=lambda: np.eye(3))

    def rotated(self, R: np.ndarray) -> "SyntheticObject":
        return replace(self, pose=np.asarray(R) @ self.pose)

    def to_dict(self) -> dict:
        return {
            "class_id": self.class_id,
            "instance_id": self.instance_id,
            "parts": [asdict(p) for p in self.parts],
            "decals": [asdict(d) for d in self.decals],
            "pose": self.pose.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticObject":
        return cls(
            d["class_id"], d["instance_id"],
            [Primitive(p["kind"], tuple(p["center"]), tuple(p["size"])) for p in d["parts"]],
            [Decal(tuple(x["direction"]), x["pattern"], x["halfwidth_deg"]) for x in d["decals"]],
            np.asarray(d["pose"], dtype=float),
        )


@dataclass
class MultiViewSample:
    images: np.ndarray            # (M, H, W), canonical capture order
    y: int
    gt_pose: np.ndarray           # object rotation applied before rendering
    gt_view_of_image: np.ndarray  # true viewpoint of each image (hidden from training)
    gt_candidate: int
    obj: SyntheticObject


@dataclass(frozen=True)
class DataConfig:
    n_classes: int = 4
    n_train: int = 20
    n_test: int = 10
    case: str = "I"
    theta: float = 30.0
    phi: float = 30.0
    image_size: int = 16
    jitter: float = 0.2
    core_jitter: float | None = None  # jitter of the shared core; None means ``jitter``
    pose: str = "random"  # "random" or "identity"
    variant: str = "default"
    n_parts: int = 2
    supersample: int = 2
    extent: float = 1.0
    orientation_trial: int = 1

    def validate(self) -> None:
        if self.n_classes < 1 or self.n_train < 0 or self.n_test < 0:
            raise ValueError("n_classes must be >= 1 and split sizes >= 0")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.pose not in ("random", "identity"):
            raise ValueError(f"pose must be 'random' or 'identity', got {self.pose!r}")
        if self.variant == "confusable" and (self.n_classes % 2 or self.case == "II"):
            raise ValueError("confusable variant needs an even class count and an upright rig")
        if self.image_size < 4 or self.supersample < 1 or self.jitter < 0:
            raise ValueError("invalid image_size / supersample / jitter")
        self.setup()

    def setup(self) -> ViewpointSetup:
        s = build_setup(self.case, self.theta, self.phi)
        return orientation_sweep(s, self.orientation_trial)


@dataclass
class Dataset:
    config: DataConfig
    seed: int
    train: list[MultiViewSample]
    test: list[MultiViewSample]

    @property
    def setup(self) -> ViewpointSetup:
        return self.config.setup()

    @property
    def M(self) -> int:
        return self.train[0].images.shape[0] if self.train else self.setup.M


# ---------------------------------------------------------------- rendering

def _hit_ellipsoid(o: np.ndarray, d: np.ndarray, prim: Primitive) -> np.ndarray:
    r = np.asarray(prim.size)
    oo = (o - np.asarray(prim.center)) / r
    dd = d / r
    a = dd @ dd
    b = 2.0 * oo @ dd
    c = (oo * oo).sum(axis=1) - 1.0
    disc = b * b - 4.0 * a * c
    t = np.full(len(o), np.inf)
    ok = disc >= 0
    t[ok] = (-b[ok] - np.sqrt(disc[ok])) / (2.0 * a)
    return t


def _hit_box(o: np.ndarray, d: np.ndarray, prim: Primitive) -> np.ndarray:
    c, h = np.asarray(prim.center), np.asarray(prim.size)
    d = np.where(np.abs(d) < 1e-15, 1e-15, d)
    t1 = (c - h - o) / d
    t2 = (c + h - o) / d
    tmin = np.minimum(t1, t2).max(axis=1)
    tmax = np.maximum(t1, t2).min(axis=1)
    return np.where(tmax >= tmin, tmin, np.inf)


def _pattern(kind: int, n: int) -> np.ndarray:
    r, c = np.mgrid[0:n, 0:n]
    if kind == 0:
        return (r // 2) % 2 == 0
    if kind == 1:
        return (c // 2) % 2 == 0
    return ((r // 2) + (c // 2)) % 2 == 0


def render_frame(obj: SyntheticObject, frame: np.ndarray, size: int = 16,
                 supersample: int = 2, extent: float = 1.0) -> np.ndarray:
    """Render ``obj`` seen by a camera with world frame ``frame`` (columns
    right, up, back).  Orthographic projection, depth shading, values in [0, 1]."""
    F = obj.pose.T @ np.asarray(frame, dtype=float)  # camera frame in object coordinates
    right, up, back = F[:, 0], F[:, 1], F[:, 2]
    S = size * supersample
    coords = (np.arange(S) + 0.5) / S * 2.0 * extent - extent
    vv, uu = np.meshgrid(coords[::-1], coords, indexing="ij")
    origins = (CAMERA_DISTANCE * back[None, :]
               + uu.reshape(-1, 1) * right[None, :] + vv.reshape(-1, 1) * up[None, :])
    direction = -back
    depth = np.full(S * S, np.inf)
    for prim in obj.parts:
        hit = _hit_ellipsoid if prim.kind == "ellipsoid" else _hit_box
        depth = np.minimum(depth, hit(origins, direction, prim))
    shade = np.where(np.isfinite(depth),
                     0.25 + 0.75 * np.clip((CAMERA_DISTANCE + extent - depth) / (2 * extent), 0, 1),
                     0.0)
    img = shade.reshape(size, supersample, size, supersample).mean(axis=(1, 3))
    if obj.decals:
        mask = img > 0
        for dec in obj.decals:
            u = np.asarray(dec.direction, dtype=float)
            cosang = np.clip(back @ u / np.linalg.norm(u), -1, 1)
            if np.degrees(np.arccos(cosang)) < dec.halfwidth_deg:
                img = np.where(mask & _pattern(dec.pattern, size), img * 0.25, img)
    return img


def render_view(obj: SyntheticObject, view_direction, up=None, size: int = 16,
                supersample: int = 2, extent: float = 1.0) -> np.ndarray:
    """Render from a camera placed along ``view_direction`` looking at the origin."""
    frame = look_at_frame(np.asarray(view_direction, dtype=float),
                          None if up is None else np.asarray(up, dtype=float))
    return render_frame(obj, frame, size, supersample, extent)


def render_sample_images(obj: SyntheticObject, setup: ViewpointSetup, cfg: DataConfig) -> np.ndarray:
    return np.stack([render_frame(obj, f, cfg.image_size, cfg.supersample, cfg.extent)
                     for f in setup.frames])


# ---------------------------------------------------------------- generation

def _class_rng(seed: int, class_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 0, class_id]))


def _instance_rng(seed: int, class_id: int, instance_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 1, class_id, instance_id]))


SHARED_CORE = (
    Primitive("ellipsoid", (0.0, 0.0, 0.0), (0.62, 0.3, 0.26)),
    Primitive("ellipsoid", (0.55, 0.0, 0.12), (0.18, 0.14, 0.14)),
)


def class_template(cfg: DataConfig, seed: int, class_id: int, setup: ViewpointSetup) -> tuple[list[Primitive], list[Decal]]:
    """Canonical parts and decals shared by every instance of a class."""
    if cfg.variant == "spheres":
        r = 0.4 + 0.5 * (class_id + 1) / (cfg.n_classes + 1)
        return [Primitive("ellipsoid", (0.0, 0.0, 0.0), (r, r, r))], []
    if cfg.variant == "confusable":
        # pairs share a body of revolution about the up axis; they differ only by which
        # of two decals appears at designated views 0 and M_a // 4
        rng = _class_rng(seed, class_id // 2)
        parts = [Primitive("ellipsoid", (0.0, 0.0, 0.0), (0.6, 0.6, 0.45))]
        for _ in range(cfg.n_parts):
            z = rng.uniform(-0.5, 0.6)
            r = rng.uniform(0.2, 0.45)
            parts.append(Primitive("ellipsoid", (0.0, 0.0, z), (r, r, rng.uniform(0.12, 0.3))))
        q = max(1, setup.M_a // 4)
        first, second = (0, 1) if class_id % 2 == 0 else (1, 0)
        decals = [Decal(tuple(setup.positions[0]), first), Decal(tuple(setup.positions[q]), second)]
        return parts, decals
    rng = _class_rng(seed, class_id)
    parts = list(SHARED_CORE)
    for _ in range(cfg.n_parts):
        kind = "ellipsoid" if rng.random() < 0.5 else "box"
        center = (rng.uniform(-0.55, 0.55), rng.uniform(-0.5, 0.5), rng.uniform(-0.35, 0.5))
        size = tuple(rng.uniform(0.1, 0.32, size=3))
        parts.append(Primitive(kind, center, size))
    return parts, []


def _jitter_parts(parts: Sequence[Primitive], jitter: float, rng: np.random.Generator,
                  keep_axis: bool) -> list[Primitive]:
    out = []
    for p in parts:
        c = np.asarray(p.center) + jitter * rng.uniform(-1, 1, 3) * 0.5
        s = np.asarray(p.size) * (1.0 + jitter * rng.uniform(-1, 1, 3))
        if keep_axis:
            c[:2] = 0.0
            s[1] = s[0]
        out.append(Primitive(p.kind, tuple(float(v) for v in c), tuple(float(v) for v in s)))
    return out


def _make_sample(args) -> MultiViewSample:
    cfg, seed, class_id, instance_id = args
    setup = cfg.setup()
    cands = enumerate_candidates(setup)
    parts, decals = class_template(cfg, seed, class_id, setup)
    rng = _instance_rng(seed, class_id, instance_id)
    if cfg.variant == "default":
        n_core = len(SHARED_CORE)
        core_j = cfg.jitter if cfg.core_jitter is None else cfg.core_jitter
        parts = (_jitter_parts(parts[:n_core], core_j, rng, keep_axis=False)
                 + _jitter_parts(parts[n_core:], cfg.jitter, rng, keep_axis=False))
    elif cfg.variant == "confusable":
        parts = _jitter_parts(parts, cfg.jitter, rng, keep_axis=True)
    k = int(rng.integers(len(cands))) if cfg.pose == "random" else 0
    cand = cands[k]
    pose = cand.rotation.T
    obj = SyntheticObject(class_id, instance_id, parts, decals, pose)
    images = render_sample_images(obj, setup, cfg)
    return MultiViewSample(images, class_id, pose, cand.perm.copy(), k, obj)


def generate_dataset(config: DataConfig, seed: int = 0, jobs: int = 1) -> Dataset:
    """Reproducible train/test splits.  Per-instance seeds derive from
    (seed, class, instance), so ``jobs > 1`` yields identical bytes."""
    config.validate()
    per_class = config.n_train + config.n_test
    work = [(config, seed, c, i) for c in range(config.n_classes) for i in range(per_class)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            samples = list(ex.map(_make_sample, work, chunksize=8))
    else:
        samples = [_make_sample(w) for w in work]
    train = [s for s in samples if s.obj.instance_id < config.n_train]
    test = [s for s in samples if s.obj.instance_id >= config.n_train]
    return Dataset(config, seed, train, test)


def rerender(dataset: Dataset, config: DataConfig) -> Dataset:
    """Regenerate ``dataset`` under a different rig configuration (same seed)."""
    return generate_dataset(config, dataset.seed)


def perturbed_views(sample: MultiViewSample, setup: ViewpointSetup, cfg: DataConfig,
                    n_trials: int, seed: int = 0, mode: str = "azimuth",
                    rotations: Sequence[np.ndarray] | None = None) -> list[np.ndarray]:
    """Re-render ``sample`` after ``n_trials`` random global rotations.

    ``mode="azimuth"`` rotates about the rig's up axis by a uniform angle
    (off-grid for upright rigs); ``mode="full"`` draws uniform rotations.
    Explicit ``rotations`` override the random draw.  The same seed gives
    the same rotations, and trial k is shared by every ``n_trials > k``.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if rotations is None:
        rng = np.random.default_rng(seed)
        if mode == "azimuth":
            O = setup.orientation
            rotations = [O @ rot_z(a) @ O.T for a in rng.uniform(0.0, 360.0, n_trials)]
        elif mode == "full":
            rotations = list(Rotation.random(n_trials, random_state=rng).as_matrix())
        else:
            raise ValueError(f"unknown mode {mode!r}")
    return [render_sample_images(sample.obj.rotated(R), setup, cfg) for R in rotations[:n_trials]]


# ---------------------------------------------------------------- container

def save_dataset(dataset: Dataset, path) -> None:
    samples = [("train", s) for s in dataset.train] + [("test", s) for s in dataset.test]
    M, H, W = samples[0][1].images.shape if samples else (0, 0, 0)
    header = {
        "format_version": FORMAT_VERSION,
        "config": asdict(dataset.config),
        "seed": dataset.seed,
        "image_shape": [M, H, W],
        "dtype": "<f8",
        "samples": [
            {"split": split, "y": s.y, "instance_id": s.obj.instance_id,
             "gt_candidate": s.gt_candidate, "gt_view_of_image": s.gt_view_of_image.tolist(),
             "gt_pose": s.gt_pose.tolist(), "object": s.obj.to_dict()}
            for split, s in samples
        ],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        f.write(blob)
        for _, s in samples:
            f.write(np.ascontiguousarray(s.images, dtype="<f8").tobytes())


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a dataset container")
    version, hlen = struct.unpack("<IQ", raw[4:16])
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    cfg = DataConfig(**header["config"])
    M, H, W = header["image_shape"]
    n = M * H * W
    pixels = np.frombuffer(raw, dtype="<f8", offset=16 + hlen).astype(np.float64)
    train, test = [], []
    for k, meta in enumerate(header["samples"]):
        s = MultiViewSample(
            pixels[k * n:(k + 1) * n].reshape(M, H, W).copy(),
            meta["y"],
            np.asarray(meta["gt_pose"], dtype=float),
            np.asarray(meta["gt_view_of_image"], dtype=np.int64),
            meta["gt_candidate"],
            SyntheticObject.from_dict(meta["object"]),
        )
        (train if meta["split"] == "train" else test).append(s)
    return Dataset(cfg, header["seed"], train, test)


def candidate_for(sample: MultiViewSample, candidates: Sequence[RotationCandidate]) -> RotationCandidate:
    return candidates[sample.gt_candidate]
