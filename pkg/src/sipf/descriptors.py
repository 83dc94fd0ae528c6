"""Pairwise pose descriptors and their shadow-informed extension.

The plain pair feature for two oriented points is

    (|d|, cos(a1, d), cos(aj, d), cos(a1, aj)),    d = p_j - p_r,

where a1/aj are the primary frame axes.  The shadow-informed block compares
both endpoints against a shared reference copy of the point ("shadow"):

    (pair(p_r, p_r') - pair(p_j, p_r')) / |...|_2,

an L2-normalized difference that degenerates to the exact zero vector when
the difference norm falls below 1e-12.  Concatenating the two blocks gives
the 8-dimensional descriptor used by the attention layer.

Two scored degeneracy detectors cover the known failure geometries: shadow
displacement along the primary axis with coinciding axes, and coincidence of
the global shadow rotation with a local patch rotation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CoincidentPointError, InvalidArgumentError, InvalidInputError
from .geometry import NeighborGraph, PointCloud, Rotation3
from .lrf import frame_axes

__all__ = [
    "MASK_SIPF",
    "MASK_PPF",
    "MASK_SIPF_NO_DIRECTION",
    "DESCRIPTOR_MASKS",
    "B1_SCORE_THRESHOLD",
    "B2_DISTANCE_THRESHOLD_RAD",
    "COINCIDENT_DISTANCE_FLOOR",
    "ShadowCloud",
    "ppf",
    "shadow_of",
    "sippf",
    "sipf",
    "sipf_stack",
    "sipf_field",
    "detect_axis_alignment",
    "detect_local_coincidence",
]

MASK_SIPF = "sipf"
MASK_PPF = "ppf"
MASK_SIPF_NO_DIRECTION = "sipf-no-direction"
DESCRIPTOR_MASKS = (MASK_SIPF, MASK_PPF, MASK_SIPF_NO_DIRECTION)

# Default audit thresholds for the two degeneracy scores.
B1_SCORE_THRESHOLD = 0.99
B2_DISTANCE_THRESHOLD_RAD = 0.1

_ZERO_DIFF_TOL = 1e-12
# Pairs closer than this are treated as coincident everywhere in the module.
COINCIDENT_DISTANCE_FLOOR = 1e-15
_COINCIDENT_TOL = COINCIDENT_DISTANCE_FLOOR


@dataclass(frozen=True)
class ShadowCloud:
    """Reference copy of a cloud under one shared rotation.

    Frames are transported (right-multiplied) rather than recomputed; by
    frame equivariance the two are identical and transport avoids a second
    neighbor pass.
    """

    points: np.ndarray
    frames: np.ndarray
    rotation: Rotation3

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        frm = np.asarray(self.frames, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidInputError(f"shadow points must be (N, 3), got {pts.shape}")
        if frm.shape != (len(pts), 3, 3):
            raise InvalidInputError(f"shadow frames must be (N, 3, 3), got {frm.shape}")
        pts = pts.copy()
        pts.setflags(write=False)
        frm = frm.copy()
        frm.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "frames", frm)


def shadow_of(cloud: PointCloud, frames: np.ndarray, rotation: Rotation3) -> ShadowCloud:
    """Shadow points p' = p @ R_g with transported frames L' = L @ R_g."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape != (len(cloud), 3, 3):
        raise InvalidArgumentError(
            f"frames shape {frames.shape} does not match cloud of {len(cloud)} points"
        )
    m = rotation.matrix
    return ShadowCloud(points=cloud.points @ m, frames=frames @ m, rotation=rotation)


def ppf(p_r, frame_r, p_j, frame_j) -> np.ndarray:
    """4-vector (distance, three angle cosines) for one directed pair."""
    p_r = np.asarray(p_r, dtype=np.float64)
    p_j = np.asarray(p_j, dtype=np.float64)
    a_r = frame_axes(frame_r)[0]
    a_j = frame_axes(frame_j)[0]
    d = p_j - p_r
    norm = np.linalg.norm(d)
    if norm < _COINCIDENT_TOL:
        raise CoincidentPointError(f"pair distance {norm:.3e} below tolerance")
    dhat = d / norm
    return np.array(
        [
            norm,
            np.clip(a_r @ dhat, -1.0, 1.0),
            np.clip(a_j @ dhat, -1.0, 1.0),
            np.clip(a_r @ a_j, -1.0, 1.0),
        ]
    )


def sippf(p_r, frame_r, p_j, frame_j, shadow_point, shadow_frame) -> np.ndarray:
    """Unit direction of the pair-feature difference against the shadow.

    Returns the exact zero vector when the difference norm is below 1e-12;
    this configuration is reachable (shadow on the primary axis) and carries
    no directional information.
    """
    diff = ppf(p_r, frame_r, shadow_point, shadow_frame) - ppf(
        p_j, frame_j, shadow_point, shadow_frame
    )
    norm = np.linalg.norm(diff)
    if norm < _ZERO_DIFF_TOL:
        return np.zeros(4)
    return diff / norm


def sipf(p_r, frame_r, p_j, frame_j, shadow_point, shadow_frame) -> np.ndarray:
    """8-vector: plain pair block followed by the shadow-informed block."""
    return np.concatenate(
        [
            ppf(p_r, frame_r, p_j, frame_j),
            sippf(p_r, frame_r, p_j, frame_j, shadow_point, shadow_frame),
        ]
    )


def sipf_stack(
    cloud: PointCloud,
    frames: np.ndarray,
    graph: NeighborGraph,
    shadow: ShadowCloud,
    r: int,
) -> np.ndarray:
    """k x 8 descriptor stack for reference point r, rows in graph order."""
    if not 0 <= r < len(cloud):
        raise InvalidArgumentError(f"reference index {r} out of range")
    frames = np.asarray(frames, dtype=np.float64)
    rows = []
    for j in graph.indices[r]:
        try:
            rows.append(
                sipf(
                    cloud.points[r],
                    frames[r],
                    cloud.points[j],
                    frames[j],
                    shadow.points[r],
                    shadow.frames[r],
                )
            )
        except CoincidentPointError as exc:
            raise CoincidentPointError(f"pair ({r}, {int(j)}): {exc}") from exc
    return np.stack(rows)


def _ppf_rows(p_r, a_r, p_j, a_j):
    """Vectorized pair features over matching leading dimensions."""
    d = p_j - p_r
    norm = np.linalg.norm(d, axis=-1)
    if np.any(norm < _COINCIDENT_TOL):
        bad = np.unravel_index(int(np.argmin(norm)), norm.shape)
        raise CoincidentPointError(f"coincident pair at index {bad}")
    dhat = d / norm[..., None]
    c1 = np.clip(np.einsum("...d,...d->...", a_r, dhat), -1.0, 1.0)
    c2 = np.clip(np.einsum("...d,...d->...", a_j, dhat), -1.0, 1.0)
    c3 = np.clip(np.einsum("...d,...d->...", a_r, a_j), -1.0, 1.0)
    return np.stack([norm, c1, c2, c3], axis=-1)


def sipf_field(
    cloud: PointCloud,
    frames: np.ndarray,
    graph: NeighborGraph,
    shadow: ShadowCloud,
    mask: str = MASK_SIPF,
    valid: np.ndarray | None = None,
) -> np.ndarray:
    """All descriptor stacks at once as an (N, k, 8) array.

    ``mask`` selects the descriptor variant: the full 8-dim descriptor, the
    plain pair feature with a zeroed shadow block, or the direction-free
    variant that keeps only the difference norm in slot 4.  Reference rows
    flagged invalid in ``valid`` are skipped and left zero; their values must
    not be consumed.
    """
    if mask not in DESCRIPTOR_MASKS:
        raise InvalidArgumentError(f"unknown descriptor mask {mask!r}")
    frames = np.asarray(frames, dtype=np.float64)
    pts = cloud.points
    idx = graph.indices
    n, k = idx.shape
    rows = np.arange(n)
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != (n,):
            raise InvalidArgumentError(f"valid mask must have shape ({n},), got {valid.shape}")
        rows = rows[valid]
    idx = idx[rows]
    m = len(rows)
    a1 = frames[:, 0, :]
    p_r = np.broadcast_to(pts[rows][:, None, :], (m, k, 3))
    a_r = np.broadcast_to(a1[rows][:, None, :], (m, k, 3))
    p_j = pts[idx]
    a_j = a1[idx]
    out = np.zeros((n, k, 8))
    out[rows, :, :4] = _ppf_rows(p_r, a_r, p_j, a_j)
    if mask == MASK_PPF:
        return out
    s_p = np.broadcast_to(shadow.points[rows][:, None, :], (m, k, 3))
    s_a = np.broadcast_to(shadow.frames[rows][:, 0, :][:, None, :], (m, k, 3))
    diff = _ppf_rows(p_r, a_r, s_p, s_a) - _ppf_rows(p_j, a_j, s_p, s_a)
    norm = np.linalg.norm(diff, axis=-1)
    if mask == MASK_SIPF_NO_DIRECTION:
        out[rows, :, 4] = norm
        return out
    safe = np.where(norm > 0.0, norm, 1.0)
    out[rows, :, 4:] = np.where(norm[..., None] >= _ZERO_DIFF_TOL, diff / safe[..., None], 0.0)
    return out


def detect_axis_alignment(p_r, frame_r, shadow_point, shadow_frame) -> float:
    """Score in [0, 1] for the shadow-on-primary-axis degeneracy.

    Product of |cos| between the shadow displacement and the primary axis and
    |cos| between the two primary axes; 1 means fully degenerate.
    """
    p_r = np.asarray(p_r, dtype=np.float64)
    shadow_point = np.asarray(shadow_point, dtype=np.float64)
    a_r = frame_axes(frame_r)[0]
    a_s = frame_axes(shadow_frame)[0]
    d = shadow_point - p_r
    norm = np.linalg.norm(d)
    if norm < _COINCIDENT_TOL:
        raise CoincidentPointError("shadow coincides with the point")
    c_disp = abs(float(a_r @ d)) / norm
    c_axes = abs(float(a_r @ a_s))
    return float(min(1.0, c_disp) * min(1.0, c_axes))


def detect_local_coincidence(r_g: Rotation3, r_j: Rotation3) -> float:
    """Geodesic distance in radians between the two rotations; 0 flags coincidence."""
    rel = r_g.matrix.T @ r_j.matrix
    cos_angle = (np.trace(rel) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos_angle, -1.0, 1.0)))
