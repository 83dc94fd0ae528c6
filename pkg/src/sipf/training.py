"""Toy trainer: epoch-wise shadow relocation with a learned rotation distribution.

Training protocol per epoch: draw one global rotation from the current
Bingham distribution, keep it fixed for every mini-batch of the epoch, run
forward / loss / backward / SGD on the layer stack and the concentration
seed jointly, then resample at the epoch boundary.  The joint objective is

    total = task + delta * |bingham - 0.1 * task|

with the Bingham term given by the distribution entropy (or, behind a
config switch, the negative log density at the mode).

The synthetic wing-tip dataset pairs two congruent patches related by an
exact half-turn and connects them with a thin strip.  Every point has a
partner with bitwise-equal local geometry, so descriptors that see only
local structure cannot do better than chance on the left/right labels.
The shape is lifted off the half-turn's invariant plane; configurations
inside that plane relate partners by point negation, which would leave even
shadow-relative distances pairwise equal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import bingham
from .descriptors import (
    DESCRIPTOR_MASKS,
    MASK_SIPF,
    detect_axis_alignment,
    detect_local_coincidence,
    shadow_of,
    sipf_field,
)
from .errors import InvalidArgumentError, NumericError
from .geometry import (
    PointCloud,
    Rotation3,
    UnitQuaternion,
    knn_graph,
    quat_to_matrix,
)
from .lrf import FRAME_MODE_BARYCENTER, FRAME_MODE_NORMAL, build_all_lrfs, input_descriptor
from .riattn import RIAttnLayer, backward, layer_forward, total_loss, total_loss_gradients

__all__ = [
    "ToyTaskConfig",
    "WingTipDataset",
    "ClassifierHead",
    "TrainResult",
    "make_wingtip_dataset",
    "train_toy",
    "metrics_to_jsonl",
]

# Trainer-internal defaults for the wing-tip demonstration.
DEFAULT_HIDDEN_DIM = 16
DEFAULT_N_CLOUDS = 4
DEFAULT_POINTS_PER_CLOUD = 64
WING_FRACTION = 0.75
WING_Z_OFFSET = 1.0
# Concentration-seed init: start sharp so the epoch-wise resample refines the
# anchor instead of resetting it; the entropy term then adapts it.
_Z2_INIT_LOC = np.array([600.0, 20.0, 20.0])
_Z2_INIT_SCALE = 0.25
_IDENTITY_GUARD_TOL = 1e-9
_IDENTITY_PERTURB = 1e-3


@dataclass
class ToyTaskConfig:
    """Knobs of the toy training run; defaults mirror the demo configuration.

    ``lr_schedule`` offers the cosine decay used by full-scale training as an
    option; the toy default stays constant so determinism bugs are easier to
    bisect.  ``dropout`` is a placeholder and only 0.0 is accepted.
    """

    epochs: int = 200
    learning_rate: float = 0.15
    batch_size: int = 2
    k: int = 20
    delta: float = 0.8
    descriptor_mask: str = MASK_SIPF
    seed: int = 0
    hidden_dim: int = DEFAULT_HIDDEN_DIM
    bingham_loss_kind: str = bingham.LOSS_ENTROPY
    quadrature_order: int = bingham.DEFAULT_QUADRATURE_ORDER
    lr_schedule: str = "constant"
    dropout: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidArgumentError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidArgumentError("learning_rate must be positive")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        if self.k < 1:
            raise InvalidArgumentError("k must be >= 1")
        if self.delta < 0:
            raise InvalidArgumentError("delta must be >= 0")
        if self.descriptor_mask not in DESCRIPTOR_MASKS:
            raise InvalidArgumentError(f"unknown descriptor mask {self.descriptor_mask!r}")
        if self.hidden_dim < 1:
            raise InvalidArgumentError("hidden_dim must be >= 1")
        if self.bingham_loss_kind not in bingham.BINGHAM_LOSS_KINDS:
            raise InvalidArgumentError(f"unknown bingham loss kind {self.bingham_loss_kind!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise InvalidArgumentError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.dropout != 0.0:
            raise InvalidArgumentError("dropout is a placeholder; only 0.0 is supported")

    def epoch_learning_rate(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch under the configured schedule."""
        if self.lr_schedule == "constant":
            return self.learning_rate
        return self.learning_rate * 0.5 * (1.0 + np.cos(np.pi * (epoch - 1) / self.epochs))


@dataclass(frozen=True)
class WingTipDataset:
    """Labeled clouds plus the half-turn that generated the mirrored halves."""

    clouds: list
    labels: list
    symmetry: Rotation3

    def __len__(self):
        return len(self.clouds)


def make_wingtip_dataset(
    n_clouds: int,
    points_per_cloud: int,
    noise_sigma: float,
    seed: int,
) -> WingTipDataset:
    """Mirror-symmetric wing-tip clouds with per-point left/right labels.

    Each half is one compact wing-tip blob plus its share of the connecting
    strip; the other half is the exact image under a half-turn about the
    vertical axis.  Noise (if any) is applied after mirroring, independently
    per point, so the two patches stay congruent up to the noise level.
    """
    if n_clouds < 1:
        raise InvalidArgumentError("n_clouds must be >= 1")
    if points_per_cloud < 32 or points_per_cloud % 2 != 0:
        raise InvalidArgumentError("points_per_cloud must be even and >= 32")
    if noise_sigma < 0:
        raise InvalidArgumentError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    symmetry = quat_to_matrix(UnitQuaternion(0.0, 0.0, 0.0, 1.0))  # half-turn about z
    z0 = WING_Z_OFFSET
    clouds = []
    labels = []
    for _ in range(n_clouds):
        half = points_per_cloud // 2
        n_wing = int(round(half * WING_FRACTION))
        n_strip = half - n_wing
        wing = np.stack(
            [
                rng.uniform(-1.25, -1.05, n_wing),
                rng.uniform(-0.10, 0.10, n_wing),
                rng.uniform(z0 - 0.05, z0 + 0.05, n_wing),
            ],
            axis=1,
        )
        strip = np.stack(
            [
                rng.uniform(-1.03, -0.004, n_strip),
                rng.uniform(-0.05, 0.05, n_strip),
                rng.uniform(z0 - 0.05, z0 + 0.05, n_strip),
            ],
            axis=1,
        )
        left = np.vstack([wing, strip])
        right = left @ symmetry.matrix
        pts = np.vstack([left, right])
        if noise_sigma > 0:
            pts = pts + rng.normal(0.0, noise_sigma, pts.shape)
        clouds.append(PointCloud(points=pts))
        labels.append(np.concatenate([np.zeros(half, dtype=np.int64), np.ones(half, dtype=np.int64)]))
    return WingTipDataset(clouds=clouds, labels=labels, symmetry=symmetry)


@dataclass
class ClassifierHead:
    """Per-point linear map to two logits."""

    weight: np.ndarray
    bias: np.ndarray

    @classmethod
    def init(cls, c_in: int, rng: np.random.Generator) -> "ClassifierHead":
        return cls(weight=rng.standard_normal((c_in, 2)) / np.sqrt(c_in), bias=np.zeros(2))


def _cross_entropy(head: ClassifierHead, feats: np.ndarray, labels: np.ndarray):
    logits = feats @ head.weight + head.bias
    m = logits.max(axis=1, keepdims=True)
    log_z = m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
    log_p = logits - log_z
    n = len(labels)
    loss = float(-log_p[np.arange(n), labels].mean())
    probs = np.exp(log_p)
    d_logits = probs
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n
    g_w = feats.T @ d_logits
    g_b = d_logits.sum(axis=0)
    d_feats = d_logits @ head.weight.T
    accuracy = float((logits.argmax(axis=1) == labels).mean())
    return loss, accuracy, g_w, g_b, d_feats


@dataclass
class TrainResult:
    layers: list
    head: ClassifierHead
    seed_params: bingham.BinghamSeed
    metrics: list = field(default_factory=list)
    b1_max_score: float = 0.0
    b2_min_distance_rad: float = float("inf")


def _normalize_labels(labels, n_points):
    lab = np.asarray(labels)
    if lab.ndim == 0:
        return np.full(n_points, int(lab), dtype=np.int64)
    if lab.shape != (n_points,):
        raise InvalidArgumentError(f"labels shape {lab.shape} does not match cloud size {n_points}")
    return lab.astype(np.int64)


def _forward_cloud(layers, head, pose, feats, idx, labels):
    acts = []
    x = feats
    for layer in layers:
        x, act = layer_forward(layer, pose, x, idx)
        acts.append(act)
    loss, acc, g_w, g_b, d_feats = _cross_entropy(head, x, labels)
    return loss, acc, acts, g_w, g_b, d_feats


def _sample_rotation(seed_z1, seed_z2, rng):
    params = bingham.BinghamParams(V=bingham.birdal_V(seed_z1), lambdas=bingham.lambda_from(seed_z2))
    q = bingham.sample(params, rng, 1)[0]
    return UnitQuaternion.from_array(q).canonical()


def train_toy(dataset, config: ToyTaskConfig) -> TrainResult:
    """Epoch-wise training with a fixed within-epoch global rotation.

    Emits one metrics dict per epoch: task loss, Bingham loss, total loss,
    full-dataset accuracy, and the epoch's rotation quaternion.  All
    randomness comes from one seeded generator, so runs are reproducible.
    """
    clouds = dataset.clouds
    if not clouds:
        raise InvalidArgumentError("dataset is empty")
    labels = [_normalize_labels(lab, len(c)) for c, lab in zip(clouds, dataset.labels)]
    symmetry = getattr(dataset, "symmetry", None)
    rng = np.random.default_rng(config.seed)

    graphs = [knn_graph(c, config.k) for c in clouds]
    mode_name = FRAME_MODE_NORMAL if clouds[0].normals is not None else FRAME_MODE_BARYCENTER
    frames = [build_all_lrfs(c, g, mode_name) for c, g in zip(clouds, graphs)]
    feats0 = [input_descriptor(c, f) for c, f in zip(clouds, frames)]

    c_in = 3
    hid = config.hidden_dim
    layers = [RIAttnLayer.init(c_in, hid, rng), RIAttnLayer.init(hid, hid, rng)]
    head = ClassifierHead.init(hid, rng)

    z1 = rng.standard_normal(4)
    z2 = _Z2_INIT_LOC + _Z2_INIT_SCALE * rng.standard_normal(3)
    q_g = _sample_rotation(z1, z2, rng)

    result = TrainResult(layers=layers, head=head, seed_params=bingham.BinghamSeed(z1, z2))
    order = list(range(len(clouds)))

    for epoch in range(1, config.epochs + 1):
        # Identity guard: an identity anchor would collapse every shadow onto
        # its source point, so perturb the quaternion seed and redraw.
        while 2.0 * np.arccos(np.clip(abs(q_g.w), 0.0, 1.0)) < _IDENTITY_GUARD_TOL:
            z1 = z1 + _IDENTITY_PERTURB * rng.standard_normal(4)
            q_g = _sample_rotation(z1, z2, rng)
        rot = quat_to_matrix(q_g)
        shadows = [shadow_of(c, f, rot) for c, f in zip(clouds, frames)]
        fields = [
            sipf_field(c, f, g, s, mask=config.descriptor_mask)
            for c, f, g, s in zip(clouds, frames, graphs, shadows)
        ]

        for start in range(0, len(clouds), config.batch_size):
            batch = order[start : start + config.batch_size]
            batch_loss = 0.0
            batch_points = 0
            grad_sum = None
            for ci in batch:
                loss, _, acts, g_w, g_b, d_feats = _forward_cloud(
                    layers, head, fields[ci], feats0[ci], graphs[ci].indices, labels[ci]
                )
                weight = len(labels[ci])
                batch_loss += loss * weight
                batch_points += weight
                layer_grads = []
                d_x = d_feats
                for layer, act in zip(reversed(layers), reversed(acts)):
                    grads, d_x = backward(layer, d_x, act)
                    layer_grads.append(grads)
                layer_grads.reverse()
                flat = [g_w, g_b]
                for grads in layer_grads:
                    flat.extend(grads.as_dict().values())
                flat = [g * weight for g in flat]
                grad_sum = flat if grad_sum is None else [a + b for a, b in zip(grad_sum, flat)]
            task_loss = batch_loss / batch_points
            if not np.isfinite(task_loss):
                raise NumericError(f"non-finite task loss at epoch {epoch}, batch {start}")
            grad_sum = [g / batch_points for g in grad_sum]

            seed_now = bingham.BinghamSeed(z1, z2)
            b_loss, _, d_z2 = bingham.bingham_loss_and_seed_gradient(
                seed_now, config.bingham_loss_kind, config.quadrature_order
            )
            d_task, d_bingham = total_loss_gradients(task_loss, b_loss, config.delta)

            lr = config.epoch_learning_rate(epoch)
            head.weight -= lr * d_task * grad_sum[0]
            head.bias -= lr * d_task * grad_sum[1]
            pos = 2
            for layer in layers:
                params = layer.parameters()
                for name in params:
                    params[name] -= lr * d_task * grad_sum[pos]
                    pos += 1
            z2 = z2 - lr * d_bingham * d_z2

        # Epoch metrics on the full dataset with the epoch's rotation.
        total_correct = 0.0
        total_points = 0
        eval_loss = 0.0
        for ci in range(len(clouds)):
            loss, acc, _, _, _, _ = _forward_cloud(
                layers, head, fields[ci], feats0[ci], graphs[ci].indices, labels[ci]
            )
            n_pts = len(labels[ci])
            total_correct += acc * n_pts
            total_points += n_pts
            eval_loss += loss * n_pts
        accuracy = total_correct / total_points
        eval_loss /= total_points
        b_loss, _, _ = bingham.bingham_loss_and_seed_gradient(
            bingham.BinghamSeed(z1, z2), config.bingham_loss_kind, config.quadrature_order
        )
        result.metrics.append(
            {
                "epoch": epoch,
                "task_loss": float(eval_loss),
                "bingham_loss": float(b_loss),
                "total_loss": total_loss(eval_loss, b_loss, config.delta),
                "accuracy": float(accuracy),
                "rg_quaternion": [q_g.w, q_g.x, q_g.y, q_g.z],
            }
        )

        # Degeneracy audit for the epoch's rotation.
        for ci in range(len(clouds)):
            sh = shadows[ci]
            scores = [
                detect_axis_alignment(
                    clouds[ci].points[i], frames[ci][i], sh.points[i], sh.frames[i]
                )
                for i in range(len(clouds[ci]))
            ]
            result.b1_max_score = max(result.b1_max_score, max(scores))
        if symmetry is not None:
            dist = detect_local_coincidence(rot, symmetry)
            result.b2_min_distance_rad = min(result.b2_min_distance_rad, dist)

        q_g = _sample_rotation(z1, z2, rng)

    result.seed_params = bingham.BinghamSeed(z1, z2)
    return result


def metrics_to_jsonl(metrics) -> str:
    """One JSON object per line; float formatting is repr-based and stable."""
    return "".join(json.dumps(entry) + "\n" for entry in metrics)
