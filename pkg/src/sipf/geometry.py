"""Point-cloud containers, quaternion/rotation algebra, and kNN graphs.

Conventions used across the package:

* points are row vectors and rotations act by right multiplication,
  ``p' = p @ R``;
* quaternions are scalar-first ``(w, x, y, z)``, with ``q`` and ``-q``
  identified;
* all arithmetic is 64-bit.

``quat_to_matrix`` returns the standard matrix whose *column* action
``R @ v`` rotates ``v`` by the quaternion; under the row convention the same
matrix applied as ``p @ R`` therefore realizes the inverse rotation.  Nothing
downstream depends on which of the two is called "forward": every derived
feature is tested for invariance over all of SO(3).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidArgumentError, InvalidInputError

__all__ = [
    "PointCloud",
    "UnitQuaternion",
    "Rotation3",
    "NeighborGraph",
    "knn_graph",
    "quat_to_matrix",
    "matrix_to_quat",
    "apply_rotation",
    "random_rotation",
    "rotation_from_axis_angle",
    "quaternion_distance",
]

_NORMAL_NORM_TOL = 1e-6
_QUAT_NORM_TOL = 1e-6
_ROTATION_TOL = 1e-10
_MATRIX_INPUT_TOL = 1e-6


def _as_float_array(values, name):
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class PointCloud:
    """N x 3 positions with optional unit normals.

    Normals are accepted if within 1e-6 of unit length and stored
    re-normalized so the unit invariant holds to machine precision.
    """

    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        pts = _as_float_array(self.points, "points")
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidInputError(f"points must be (N, 3), got {pts.shape}")
        if len(pts) < 2:
            raise InvalidInputError("a point cloud needs at least 2 points")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = _as_float_array(self.normals, "normals")
            if nrm.shape != pts.shape:
                raise InvalidInputError(
                    f"normals shape {nrm.shape} does not match points {pts.shape}"
                )
            lengths = np.linalg.norm(nrm, axis=1)
            if np.any(np.abs(lengths - 1.0) > _NORMAL_NORM_TOL):
                worst = int(np.argmax(np.abs(lengths - 1.0)))
                raise InvalidInputError(
                    f"normal {worst} has norm {lengths[worst]:.9f}, expected 1"
                )
            nrm = nrm / lengths[:, None]
            nrm.setflags(write=False)
            object.__setattr__(self, "normals", nrm)

    def __len__(self):
        return len(self.points)

    @property
    def centroid(self):
        return self.points.mean(axis=0)


@dataclass(frozen=True)
class UnitQuaternion:
    """Scalar-first unit quaternion; q and -q describe the same rotation."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        v = np.array([self.w, self.x, self.y, self.z], dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("quaternion has non-finite components")
        n = np.linalg.norm(v)
        if abs(n - 1.0) > _QUAT_NORM_TOL:
            raise InvalidInputError(f"quaternion norm {n:.9f} deviates from 1")
        v /= n
        object.__setattr__(self, "w", float(v[0]))
        object.__setattr__(self, "x", float(v[1]))
        object.__setattr__(self, "y", float(v[2]))
        object.__setattr__(self, "z", float(v[3]))

    @classmethod
    def from_array(cls, values) -> "UnitQuaternion":
        w, x, y, z = np.asarray(values, dtype=np.float64)
        return cls(w, x, y, z)

    @property
    def array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def __neg__(self) -> "UnitQuaternion":
        return UnitQuaternion(-self.w, -self.x, -self.y, -self.z)

    def canonical(self) -> "UnitQuaternion":
        """Antipodal representative with w >= 0 (first nonzero positive on the w = 0 slice)."""
        v = self.array
        nz = np.nonzero(v)[0]
        if len(nz) and v[nz[0]] < 0:
            v = -v
        return UnitQuaternion.from_array(v)


@dataclass(frozen=True)
class Rotation3:
    """Proper rotation matrix, validated to 1e-10."""

    matrix: np.ndarray

    def __post_init__(self):
        m = _as_float_array(self.matrix, "rotation matrix")
        if m.shape != (3, 3):
            raise InvalidInputError(f"rotation matrix must be 3x3, got {m.shape}")
        err = np.abs(m.T @ m - np.eye(3)).max()
        if err > _ROTATION_TOL:
            raise InvalidInputError(f"matrix is not orthogonal (deviation {err:.3e})")
        det = np.linalg.det(m)
        if abs(det - 1.0) > _ROTATION_TOL:
            raise InvalidInputError(f"matrix determinant {det:.12f} is not +1")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Rotation3":
        return cls(np.eye(3))


@dataclass(frozen=True)
class NeighborGraph:
    """Row i holds the k nearest neighbors of point i, self excluded.

    Rows are sorted by ascending distance, ties broken by ascending index.
    """

    k: int
    indices: np.ndarray = field(repr=False)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 2 or idx.shape[1] != self.k:
            raise InvalidInputError(f"indices must be (N, {self.k}), got {idx.shape}")
        idx = idx.copy()
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)


def _row_distances(points, i):
    d = np.sqrt(((points - points[i]) ** 2).sum(axis=1))
    d[i] = np.inf
    return d


def knn_graph(cloud: PointCloud, k: int) -> NeighborGraph:
    """Exact k-nearest-neighbor graph via a kd-tree.

    Deterministic under the (distance, index) tie-break regardless of how the
    kd-tree orders equidistant candidates: candidate windows are re-sorted
    lexicographically, and any row whose k-th distance ties with the window
    edge falls back to a full scan so hidden ties beyond the window cannot
    change membership.
    """
    n = len(cloud)
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool):
        raise InvalidArgumentError(f"k must be an integer, got {k!r}")
    if not 1 <= k <= n - 1:
        raise InvalidArgumentError(f"k={k} out of range [1, {n - 1}]")
    pts = cloud.points
    pad = min(n, k + 8)
    tree = cKDTree(pts)
    dist, idx = tree.query(pts, k=pad)
    rows = np.repeat(np.arange(n), pad)
    # Self entries sort last; ties sort by ascending point index.
    self_mask = idx == np.arange(n)[:, None]
    dist = np.where(self_mask, np.inf, dist)
    order = np.lexsort((idx.ravel(), dist.ravel(), rows))
    dist_sorted = dist.ravel()[order].reshape(n, pad)
    idx_sorted = idx.ravel()[order].reshape(n, pad)
    out = idx_sorted[:, :k].copy()
    if pad < n:
        # A tie at the window edge may hide equal-distance candidates outside
        # the window; resolve those rows exactly.  The last slot is the
        # masked self entry, so the true edge is the slot before it.
        unsure = dist_sorted[:, k - 1] >= dist_sorted[:, pad - 2]
        for i in np.nonzero(unsure)[0]:
            d = _row_distances(pts, i)
            full = np.lexsort((np.arange(n), d))
            out[i] = full[:k]
    return NeighborGraph(k=k, indices=out)


def _quat_array(q) -> np.ndarray:
    if isinstance(q, UnitQuaternion):
        return q.array
    v = np.asarray(q, dtype=np.float64)
    if v.shape != (4,):
        raise InvalidInputError(f"quaternion must have 4 components, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("quaternion has non-finite components")
    n = np.linalg.norm(v)
    if abs(n - 1.0) > _QUAT_NORM_TOL:
        raise InvalidInputError(f"quaternion norm {n:.9f} deviates from 1")
    return v / n


def quat_to_matrix(q) -> Rotation3:
    """Standard scalar-first quaternion-to-matrix map; identical for q and -q."""
    w, x, y, z = _quat_array(q)
    m = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
    return Rotation3(m)


def matrix_to_quat(rotation) -> UnitQuaternion:
    """Rotation matrix to the w >= 0 quaternion via Shepperd's branch rule.

    Accepts a :class:`Rotation3` or a raw 3x3 array; raw input is rejected if
    it deviates from orthogonality / unit determinant by more than 1e-6.
    """
    if isinstance(rotation, Rotation3):
        m = rotation.matrix
    else:
        m = _as_float_array(rotation, "rotation matrix")
        if m.shape != (3, 3):
            raise InvalidInputError(f"rotation matrix must be 3x3, got {m.shape}")
        err = np.abs(m.T @ m - np.eye(3)).max()
        if err > _MATRIX_INPUT_TOL:
            raise InvalidInputError(f"matrix is not orthogonal (deviation {err:.3e})")
        if abs(np.linalg.det(m) - 1.0) > _MATRIX_INPUT_TOL:
            raise InvalidInputError("matrix determinant is not +1")
    t = np.trace(m)
    # Branch on the largest of (trace, m00, m11, m22) for stability.
    choices = np.array([t, m[0, 0], m[1, 1], m[2, 2]])
    branch = int(np.argmax(choices))
    if branch == 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif branch == 1:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif branch == 2:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    q /= np.linalg.norm(q)
    return UnitQuaternion.from_array(q).canonical()


def apply_rotation(cloud: PointCloud, rotation: Rotation3) -> PointCloud:
    """Right-multiply every point (and normal) by the rotation matrix."""
    m = rotation.matrix
    normals = None if cloud.normals is None else cloud.normals @ m
    return PointCloud(points=cloud.points @ m, normals=normals)


def random_rotation(rng: np.random.Generator) -> Rotation3:
    """Uniform SO(3) sample from a normalized 4-component Gaussian quaternion."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    return quat_to_matrix(q)


def rotation_from_axis_angle(axis, angle: float) -> Rotation3:
    """Rotation by `angle` radians about `axis` (need not be unit length)."""
    a = _as_float_array(axis, "axis")
    n = np.linalg.norm(a)
    if n == 0.0:
        raise InvalidArgumentError("rotation axis must be nonzero")
    x, y, z = a / n
    kmat = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    m = np.eye(3) + np.sin(angle) * kmat + (1.0 - np.cos(angle)) * (kmat @ kmat)
    return Rotation3(m)


def quaternion_distance(q1, q2) -> float:
    """Arc distance on the quaternion sphere with antipodal identification, in [0, pi/2]."""
    a = _quat_array(q1)
    b = _quat_array(q2)
    return float(np.arccos(np.clip(abs(float(a @ b)), 0.0, 1.0)))
