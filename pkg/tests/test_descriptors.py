import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sipf.descriptors import (
    MASK_PPF,
    MASK_SIPF,
    MASK_SIPF_NO_DIRECTION,
    detect_axis_alignment,
    detect_local_coincidence,
    ppf,
    shadow_of,
    sipf,
    sipf_field,
    sipf_stack,
    sippf,
)
from sipf.errors import CoincidentPointError, InvalidArgumentError
from sipf.geometry import (
    PointCloud,
    Rotation3,
    UnitQuaternion,
    knn_graph,
    matrix_to_quat,
    quat_to_matrix,
    random_rotation,
    rotation_from_axis_angle,
)
from sipf.lrf import FRAME_MODE_BARYCENTER, build_all_lrfs, build_lrf
from sipf.training import make_wingtip_dataset

from conftest import mirrored_blob_cloud, random_cloud, random_frames


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def circle_ambiguous_pair(azimuth=1.1):
    """Reference point with two neighbors on a circle around its primary axis.

    The second neighbor (and its frame) is the first rotated about the axis
    line through the reference point, which leaves the plain pair feature
    unchanged by construction.
    """
    p_r = np.array([0.3, -0.2, 0.5])
    axis = _unit([0.2, 0.4, 0.9])
    frame_r = build_lrf(axis, [1.0, 0.0, 0.0]).axes
    side = _unit(np.cross(axis, [1.0, 0.0, 0.0]))
    p_j = p_r + 0.8 * side + 0.3 * axis
    frame_j = build_lrf(axis + 0.7 * side, [0.1, 0.9, -0.3]).axes
    # Row-convention transport: x -> p_r + (x - p_r) @ m rotates about the axis.
    m = rotation_from_axis_angle(axis, azimuth).matrix.T
    p_j2 = p_r + (p_j - p_r) @ m
    frame_j2 = frame_j @ m
    return p_r, frame_r, p_j, frame_j, p_j2, frame_j2, axis


def transcription_sippf(p_r, a_r, p_j, a_j, p_s, a_s):
    """Independent component-by-component transcription of the defining formula."""

    def pair(pa, aa, pb, ab):
        d = pb - pa
        n = np.linalg.norm(d)
        return np.array([n, aa @ d / n, ab @ d / n, aa @ ab])

    diff = pair(p_r, a_r, p_s, a_s) - pair(p_j, a_j, p_s, a_s)
    norm = np.linalg.norm(diff)
    return np.zeros(4) if norm < 1e-12 else diff / norm


class TestPpf:
    def test_all_aligned(self):
        f_r = build_lrf([1, 0, 0], [0, 1, 0]).axes
        out = ppf([0, 0, 0], f_r, [2, 0, 0], f_r)
        assert np.allclose(out, [2, 1, 1, 1], atol=1e-15)

    def test_orthogonal_axes(self):
        f_r = build_lrf([1, 0, 0], [0, 1, 0]).axes
        f_j = build_lrf([0, 1, 0], [0, 0, 1]).axes
        out = ppf([0, 0, 0], f_r, [2, 0, 0], f_j)
        assert np.allclose(out, [2, 1, 0, 0], atol=1e-15)

    def test_coincident_points(self):
        f = np.eye(3)
        with pytest.raises(CoincidentPointError):
            ppf([1, 2, 3], f, [1, 2, 3], f)

    def test_circle_ambiguity(self):
        p_r, f_r, p_j, f_j, p_j2, f_j2, _ = circle_ambiguous_pair()
        a = ppf(p_r, f_r, p_j, f_j)
        b = ppf(p_r, f_r, p_j2, f_j2)
        assert not np.allclose(p_j, p_j2)
        assert np.abs(a - b).max() < 1e-12

    def test_rotation_invariance(self, rng):
        for _ in range(200):
            p_r, p_j = rng.standard_normal(3), rng.standard_normal(3)
            f_r, f_j = random_frames(rng, 2)
            rot = random_rotation(rng).matrix
            a = ppf(p_r, f_r, p_j, f_j)
            b = ppf(p_r @ rot, f_r @ rot, p_j @ rot, f_j @ rot)
            assert np.abs(a - b).max() < 1e-12


class TestShadowOf:
    def test_identity_rotation_keeps_cloud(self, rng):
        cloud = random_cloud(rng, 12)
        frames = random_frames(rng, 12)
        shadow = shadow_of(cloud, frames, quat_to_matrix(UnitQuaternion(1, 0, 0, 0)))
        assert np.array_equal(shadow.points, cloud.points)
        assert np.array_equal(shadow.frames, frames)

    def test_half_turn_about_z(self):
        cloud = PointCloud(points=[[1, 0, 0], [0, 0, 1]])
        frames = np.tile(np.eye(3), (2, 1, 1))
        rot = rotation_from_axis_angle([0, 0, 1], np.pi)
        shadow = shadow_of(cloud, frames, rot)
        assert np.abs(shadow.points[0] - np.array([-1, 0, 0])).max() < 1e-15

    def test_norms_preserved(self, rng):
        cloud = random_cloud(rng, 30)
        frames = random_frames(rng, 30)
        shadow = shadow_of(cloud, frames, random_rotation(rng))
        n0 = np.linalg.norm(cloud.points, axis=1)
        n1 = np.linalg.norm(shadow.points, axis=1)
        assert (np.abs(n0 - n1) / np.maximum(n0, 1e-30)).max() < 1e-12


class TestSippf:
    def test_zero_for_symmetric_configuration(self):
        frame = build_lrf([0, 1, 0], [0, 0, 1]).axes
        out = sippf([1, 0, 0], frame, [-1, 0, 0], frame, [0, 1, 0], frame)
        assert np.array_equal(out, np.zeros(4))

    def test_norm_is_zero_or_one(self, rng):
        for _ in range(300):
            pts = rng.standard_normal((3, 3))
            f = random_frames(rng, 3)
            out = sippf(pts[0], f[0], pts[1], f[1], pts[2], f[2])
            n = np.linalg.norm(out)
            assert n == 0.0 or abs(n - 1.0) < 1e-9

    def test_matches_transcription_oracle(self, rng):
        for _ in range(200):
            pts = rng.standard_normal((3, 3))
            f = random_frames(rng, 3)
            ours = sippf(pts[0], f[0], pts[1], f[1], pts[2], f[2])
            ref = transcription_sippf(pts[0], f[0][0], pts[1], f[1][0], pts[2], f[2][0])
            assert np.abs(ours - ref).max() < 1e-12

    def test_coincident_shadow(self):
        f = np.eye(3)
        with pytest.raises(CoincidentPointError):
            sippf([1, 0, 0], f, [0, 1, 0], f, [1, 0, 0], f)


class TestSipf:
    def test_concatenation(self, rng):
        pts = rng.standard_normal((3, 3))
        f = random_frames(rng, 3)
        full = sipf(pts[0], f[0], pts[1], f[1], pts[2], f[2])
        assert np.array_equal(full[:4], ppf(pts[0], f[0], pts[1], f[1]))
        assert np.array_equal(full[4:], sippf(pts[0], f[0], pts[1], f[1], pts[2], f[2]))

    def test_joint_rotation_invariance(self, rng):
        worst = 0.0
        for _ in range(300):
            pts = rng.standard_normal((3, 3))
            f = random_frames(rng, 3)
            base = sipf(pts[0], f[0], pts[1], f[1], pts[2], f[2])
            rot = random_rotation(rng).matrix
            moved = sipf(
                pts[0] @ rot, f[0] @ rot, pts[1] @ rot, f[1] @ rot, pts[2] @ rot, f[2] @ rot
            )
            worst = max(worst, np.abs(base - moved).max())
        assert worst < 1e-9

    def test_circle_pair_resolved_by_generic_shadow(self):
        p_r, f_r, p_j, f_j, p_j2, f_j2, _ = circle_ambiguous_pair()
        shadow_p = p_r + np.array([0.4, -0.7, 0.25])
        shadow_f = build_lrf([-0.3, 0.8, 0.52], [1, 0, 0]).axes
        a = sipf(p_r, f_r, p_j, f_j, shadow_p, shadow_f)
        b = sipf(p_r, f_r, p_j2, f_j2, shadow_p, shadow_f)
        assert np.abs(a[:4] - b[:4]).max() < 1e-12  # plain block still ambiguous
        assert np.abs(a[4:] - b[4:]).max() > 1e-3   # shadow block separates

    def test_axis_aligned_shadow_degenerates_to_plain_pair(self):
        # Shadow displaced along the primary axis with coinciding primary
        # axes: the shadow block is identical for both ambiguous neighbors.
        p_r, f_r, p_j, f_j, p_j2, f_j2, axis = circle_ambiguous_pair()
        shadow_p = p_r + 0.6 * axis
        a = sipf(p_r, f_r, p_j, f_j, shadow_p, f_r)
        b = sipf(p_r, f_r, p_j2, f_j2, shadow_p, f_r)
        assert np.abs(a[4:] - b[4:]).max() < 1e-6


class TestSipfStack:
    def test_k1_equals_single_call(self, rng):
        cloud = random_cloud(rng, 6)
        graph = knn_graph(cloud, 1)
        frames = random_frames(rng, 6)
        shadow = shadow_of(cloud, frames, random_rotation(rng))
        stack = sipf_stack(cloud, frames, graph, shadow, 2)
        j = graph.indices[2][0]
        direct = sipf(
            cloud.points[2], frames[2], cloud.points[j], frames[j], shadow.points[2], shadow.frames[2]
        )
        assert np.array_equal(stack, direct[None, :])

    def test_rows_follow_graph_order(self, rng):
        cloud = random_cloud(rng, 12)
        graph = knn_graph(cloud, 4)
        frames = random_frames(rng, 12)
        shadow = shadow_of(cloud, frames, random_rotation(rng))
        stack = sipf_stack(cloud, frames, graph, shadow, 0)
        for row, j in zip(stack, graph.indices[0]):
            direct = sipf(
                cloud.points[0], frames[0], cloud.points[j], frames[j],
                shadow.points[0], shadow.frames[0],
            )
            assert np.array_equal(row, direct)

    def test_error_carries_pair_context(self, rng):
        cloud = random_cloud(rng, 6)
        graph = knn_graph(cloud, 2)
        frames = random_frames(rng, 6)
        # Identity-rotation shadow coincides with every source point.
        shadow = shadow_of(cloud, frames, quat_to_matrix(UnitQuaternion(1, 0, 0, 0)))
        with pytest.raises(CoincidentPointError) as excinfo:
            sipf_stack(cloud, frames, graph, shadow, 3)
        assert "(3," in str(excinfo.value)

    def test_field_matches_per_pair_loop(self, rng):
        cloud = random_cloud(rng, 16)
        graph = knn_graph(cloud, 5)
        frames = random_frames(rng, 16)
        shadow = shadow_of(cloud, frames, random_rotation(rng))
        field = sipf_field(cloud, frames, graph, shadow, mask=MASK_SIPF)
        for r in range(len(cloud)):
            assert np.abs(field[r] - sipf_stack(cloud, frames, graph, shadow, r)).max() < 1e-12

    def test_masks(self, rng):
        cloud = random_cloud(rng, 16)
        graph = knn_graph(cloud, 5)
        frames = random_frames(rng, 16)
        shadow = shadow_of(cloud, frames, random_rotation(rng))
        full = sipf_field(cloud, frames, graph, shadow, mask=MASK_SIPF)
        plain = sipf_field(cloud, frames, graph, shadow, mask=MASK_PPF)
        nod = sipf_field(cloud, frames, graph, shadow, mask=MASK_SIPF_NO_DIRECTION)
        assert np.array_equal(full[..., :4], plain[..., :4])
        assert np.array_equal(plain[..., 4:], np.zeros_like(plain[..., 4:]))
        assert np.array_equal(nod[..., 5:], np.zeros_like(nod[..., 5:]))
        assert (nod[..., 4] >= 0).all()
        with pytest.raises(InvalidArgumentError):
            sipf_field(cloud, frames, graph, shadow, mask="bogus")


class TestDegeneracyDetectors:
    def test_axis_alignment_extremes(self):
        frame = build_lrf([1, 0, 0], [0, 1, 0]).axes
        p = np.array([0.0, 0.0, 0.0])
        assert detect_axis_alignment(p, frame, p + np.array([2.0, 0, 0]), frame) == pytest.approx(1.0)
        assert detect_axis_alignment(p, frame, p + np.array([0.0, 3.0, 0]), frame) == pytest.approx(0.0, abs=1e-15)

    def test_axis_alignment_transcription(self, rng):
        for _ in range(100):
            p = rng.standard_normal(3)
            f_r, f_s = random_frames(rng, 2)
            s = p + rng.standard_normal(3)
            d = s - p
            expected = abs(f_r[0] @ d) / np.linalg.norm(d) * abs(f_r[0] @ f_s[0])
            got = detect_axis_alignment(p, f_r, s, f_s)
            assert abs(got - min(1.0, expected)) < 1e-12

    def test_local_coincidence_zero_and_pi(self, rng):
        rot = random_rotation(rng)
        assert detect_local_coincidence(rot, rot) == pytest.approx(0.0, abs=1e-7)
        axis = rng.standard_normal(3)
        flipped = rotation_from_axis_angle(axis, np.pi)
        combined = type(rot)(rot.matrix @ flipped.matrix)
        assert detect_local_coincidence(rot, combined) == pytest.approx(np.pi, abs=1e-7)

    def test_local_coincidence_quaternion_oracle(self, rng):
        for _ in range(100):
            r1, r2 = random_rotation(rng), random_rotation(rng)
            q1, q2 = matrix_to_quat(r1).array, matrix_to_quat(r2).array
            expected = 2.0 * np.arccos(np.clip(abs(q1 @ q2), 0.0, 1.0))
            assert abs(detect_local_coincidence(r1, r2) - expected) < 1e-7


class TestB1Regression:
    def test_separation_grows_from_axis_to_orthogonal(self):
        p_r, f_r, p_j, f_j, p_j2, f_j2, axis = circle_ambiguous_pair()
        side = _unit(np.cross(axis, [1.0, 0.0, 0.0]))
        seps = []
        for beta in np.linspace(0.0, np.pi / 2, 12):
            shadow_p = p_r + 0.6 * (np.cos(beta) * axis + np.sin(beta) * side)
            a = sippf(p_r, f_r, p_j, f_j, shadow_p, f_r)
            b = sippf(p_r, f_r, p_j2, f_j2, shadow_p, f_r)
            seps.append(np.linalg.norm(a - b))
        assert seps[0] < 1e-6
        assert all(seps[i] <= seps[i + 1] + 1e-9 for i in range(len(seps) - 1))
        assert seps[-1] >= 10 * max(seps[0], 1e-12)

    def test_detector_tracks_the_sweep(self):
        p_r, f_r, _, _, _, _, axis = circle_ambiguous_pair()
        side = _unit(np.cross(axis, [1.0, 0.0, 0.0]))
        scores = [
            detect_axis_alignment(p_r, f_r, p_r + 0.6 * (np.cos(b) * axis + np.sin(b) * side), f_r)
            for b in np.linspace(0.0, np.pi / 2, 12)
        ]
        assert all(scores[i] >= scores[i + 1] - 1e-12 for i in range(len(scores) - 1))
        assert scores[0] == pytest.approx(1.0)


class TestWingTipCollapse:
    def test_plain_block_collapses_and_shadow_rescues(self):
        dataset = make_wingtip_dataset(1, 64, 0.0, seed=7)
        cloud, labels = dataset.clouds[0], dataset.labels[0]
        graph = knn_graph(cloud, 12)
        frames = build_all_lrfs(cloud, graph, FRAME_MODE_BARYCENTER)
        half = len(cloud) // 2
        rng = np.random.default_rng(5)
        generic = random_rotation(rng)
        # Generic rotation is far from both failure geometries.
        assert detect_local_coincidence(generic, dataset.symmetry) > 0.1
        shadow = shadow_of(cloud, frames, generic)
        plain = sipf_field(cloud, frames, graph, shadow, mask=MASK_PPF)
        full = sipf_field(cloud, frames, graph, shadow, mask=MASK_SIPF)
        assert np.abs(plain[:half] - plain[half:]).max() < 1e-9
        assert max(np.abs(full[i] - full[i + half]).max() for i in range(half)) > 1e-3

    def test_shadow_equal_to_patch_rotation_keeps_collapse(self):
        # Shared rotation equal to the patch-swapping rotation: the shadow
        # block goes blind to the swap and mirrored stacks stay identical.
        rng = np.random.default_rng(11)
        cloud, half_turn = mirrored_blob_cloud(rng)
        graph = knn_graph(cloud, 6)
        frames = build_all_lrfs(cloud, graph, FRAME_MODE_BARYCENTER)
        half = len(cloud) // 2
        shadow = shadow_of(cloud, frames, Rotation3(half_turn))
        full = sipf_field(cloud, frames, graph, shadow, mask=MASK_SIPF)
        assert np.abs(full[:half] - full[half:]).max() < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_sippf_norm_never_intermediate(seed):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((3, 3)) * rng.uniform(0.1, 10)
    frames = random_frames(rng, 3)
    out = sippf(pts[0], frames[0], pts[1], frames[1], pts[2], frames[2])
    n = np.linalg.norm(out)
    assert n == 0.0 or abs(n - 1.0) < 1e-9
