"""A small numpy network with a grouped-softmax head.

The network maps one image to a ``rows x cols`` matrix of scores and applies
softmax independently to every row.  For the latent-viewpoint classifier
``rows = M`` (one head per viewpoint) and ``cols = N + 1`` (the last column
is the "incorrect view" class).  The same backbone with ``rows = 1`` serves
the single-head baselines.

Everything runs in float64 so that finite-difference checks stay tight.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
TIE_TOL = 1e-9  # scores this close (relative) count as tied
CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class NetConfig:
    image_shape: tuple[int, int] = (16, 16)
    rows: int = 12
    cols: int = 5
    hidden: tuple[int, ...] = (64, 64)
    conv_channels: int = 0
    seed: int = 42

    def __post_init__(self):
        object.__setattr__(self, "image_shape", tuple(int(v) for v in self.image_shape))
        object.__setattr__(self, "hidden", tuple(int(v) for v in self.hidden))

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Network:
    config: NetConfig
    params: dict[str, np.ndarray]
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "Network":
        return Network(self.config,
                       {k: v.copy() for k, v in self.params.items()},
                       {k: v.copy() for k, v in self.velocity.items()})


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


def init_network(config: NetConfig) -> Network:
    """Glorot-uniform weights, zero biases, seeded by ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    H, W = config.image_shape
    params: dict[str, np.ndarray] = {}
    if config.conv_channels:
        C = config.conv_channels
        params["conv_w"] = _glorot(rng, 9, 9 * C, (C, 3, 3))
        params["conv_b"] = np.zeros(C)
        width = C * (H - 2) * (W - 2)
    else:
        width = H * W
    sizes = [width, *config.hidden, config.rows * config.cols]
    for li, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        params[f"w{li}"] = _glorot(rng, a, b, (a, b))
        params[f"b{li}"] = np.zeros(b)
    return Network(config, params, {k: np.zeros_like(v) for k, v in params.items()})


def _n_dense(net: Network) -> int:
    return len(net.config.hidden) + 1


def _as_batch(net: Network, images) -> tuple[np.ndarray, bool]:
    x = np.asarray(images, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != net.config.image_shape:
        raise ValueError(f"expected images of shape {net.config.image_shape}, got {x.shape}")
    return x, single


def _im2col(x: np.ndarray) -> np.ndarray:
    B, H, W = x.shape
    cols = np.empty((B, H - 2, W - 2, 9))
    for di in range(3):
        for dj in range(3):
            cols[..., di * 3 + dj] = x[:, di:di + H - 2, dj:dj + W - 2]
    return cols


def _forward_cache(net: Network, x: np.ndarray):
    p = net.params
    cache = {}
    if net.config.conv_channels:
        cols = _im2col(x)
        z = cols @ p["conv_w"].reshape(len(p["conv_b"]), 9).T + p["conv_b"]
        cache["cols"], cache["conv_z"] = cols, z
        h = np.maximum(z, 0.0).reshape(len(x), -1)
    else:
        h = x.reshape(len(x), -1)
    acts = [h]
    L = _n_dense(net)
    for li in range(L):
        h = h @ p[f"w{li}"] + p[f"b{li}"]
        if li < L - 1:
            h = np.maximum(h, 0.0)
        acts.append(h)
    cache["acts"] = acts
    logits = acts[-1].reshape(len(x), net.config.rows, net.config.cols)
    return logits, cache


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def forward(net: Network, image) -> np.ndarray:
    """Prediction matrix (or a stack of them for a batch of images).

    A 2-D image gives a ``rows x cols`` matrix; a ``(B, H, W)`` batch gives
    ``(B, rows, cols)``.  Every row is a probability distribution.
    """
    x, single = _as_batch(net, image)
    P = softmax_rows(_forward_cache(net, x)[0])
    return P[0] if single else P


def safe_log(p) -> np.ndarray:
    return np.log(np.maximum(p, PROB_FLOOR))


def first_argmax(scores) -> int:
    """Index of the first entry within ``TIE_TOL`` of the maximum.

    Plain argmax lets summation-order rounding pick among mathematically
    equal scores; this makes the earliest one win."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    best = s.max()
    return int(np.flatnonzero(s >= best - TIE_TOL * max(1.0, abs(best)))[0])


def loss_fixed_assignment(P_list, perm, y: int) -> float:
    """Negated log-likelihood of one object under a fixed viewpoint assignment.

    For image i the assigned row ``perm[i]`` should predict class ``y`` and
    every other row should predict the incorrect-view class (last column).
    ``perm`` may be a candidate object or a plain index array.
    """
    P = np.asarray(P_list, dtype=np.float64)
    perm = np.asarray(getattr(perm, "perm", perm))
    M, rows, cols = P.shape
    if not 0 <= y < cols - 1:
        raise ValueError(f"class label {y} out of range for {cols - 1} classes")
    if len(perm) != M:
        raise ValueError(f"need {len(perm)} prediction matrices, got {M}")
    logp = safe_log(P)
    idx = np.arange(M)
    incorrect = logp[:, :, -1].sum(axis=1) - logp[idx, perm, -1]
    return float(-(logp[idx, perm, y] + incorrect).sum())


def _check_targets(net: Network, targets, n: int) -> np.ndarray:
    t = np.asarray(targets, dtype=np.int64)
    if t.ndim == 1:
        t = t[None]
    if t.shape != (n, net.config.rows):
        raise ValueError(f"targets must have shape ({n}, {net.config.rows}), got {t.shape}")
    if t.min() < 0 or t.max() >= net.config.cols:
        raise ValueError("target class index out of range")
    return t


def backward(net: Network, image, target_row_labels) -> tuple[dict[str, np.ndarray], float]:
    """Gradients of the summed per-row cross-entropy, and the loss itself.

    ``target_row_labels`` holds one class index per softmax row (per image
    when a batch is given).  Gradients are summed over the batch.
    """
    x, _ = _as_batch(net, image)
    t = _check_targets(net, target_row_labels, len(x))
    logits, cache = _forward_cache(net, x)
    B, R, K = logits.shape
    logp = log_softmax_rows(logits)
    bi, ri = np.meshgrid(np.arange(B), np.arange(R), indexing="ij")
    loss = float(-logp[bi, ri, t].sum())

    delta = np.exp(logp)
    delta[bi, ri, t] -= 1.0
    delta = delta.reshape(B, R * K)

    p = net.params
    grads: dict[str, np.ndarray] = {}
    acts = cache["acts"]
    for li in reversed(range(_n_dense(net))):
        grads[f"w{li}"] = acts[li].T @ delta
        grads[f"b{li}"] = delta.sum(axis=0)
        delta = delta @ p[f"w{li}"].T
        if li > 0:
            delta = delta * (acts[li] > 0)
    if net.config.conv_channels:
        C = len(p["conv_b"])
        z = cache["conv_z"]
        dz = delta.reshape(z.shape) * (z > 0)
        grads["conv_w"] = np.einsum("bhwk,bhwc->ck", cache["cols"], dz).reshape(C, 3, 3)
        grads["conv_b"] = dz.sum(axis=(0, 1, 2))
    return grads, loss


def add_grads(acc: dict[str, np.ndarray] | None, g: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    if acc is None:
        return {k: v.copy() for k, v in g.items()}
    for k, v in g.items():
        acc[k] += v
    return acc


def sgd_step(net: Network, gradients: dict[str, np.ndarray],
             lr: float = 0.0005, momentum: float = 0.9) -> Network:
    """Classical momentum update, in place.

    ``v <- momentum * v - lr * g``; ``w <- w + v``.  A step with any
    non-finite gradient is refused (parameters and velocity untouched) and
    a warning is logged.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must be in [0, 1)")
    if not all(np.isfinite(g).all() for g in gradients.values()):
        log.warning("non-finite gradient; sgd step refused")
        return net
    for k, g in gradients.items():
        v = net.velocity.setdefault(k, np.zeros_like(net.params[k]))
        v *= momentum
        v -= lr * g
        net.params[k] += v
    return net


def save_checkpoint(net: Network, path, extra: dict | None = None) -> None:
    """JSON checkpoint: config, its hash, parameter/velocity shapes and flat values."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(net.config),
        "config_hash": net.config.config_hash(),
        "seed": net.config.seed,
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                   for k, v in sorted(net.params.items())},
        "velocity": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                     for k, v in sorted(net.velocity.items())},
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


class CheckpointMismatch(ValueError):
    pass


def load_checkpoint(path, expected: NetConfig | None = None) -> tuple[Network, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointMismatch(f"unsupported checkpoint format {doc.get('format')}")
    config = NetConfig(**doc["config"])
    if config.config_hash() != doc["config_hash"]:
        raise CheckpointMismatch("checkpoint config hash does not match its config")
    if expected is not None and expected.config_hash() != doc["config_hash"]:
        raise CheckpointMismatch(
            f"config hash mismatch: checkpoint {doc['config_hash']}, expected {expected.config_hash()}")

    def unpack(block):
        return {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in block.items()}

    return Network(config, unpack(doc["params"]), unpack(doc["velocity"])), doc.get("extra", {})
