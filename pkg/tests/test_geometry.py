"""Geometry tests; the independent oracle is 4x4 homogeneous matrix algebra
built through scipy.spatial.transform.Rotation, never through the code under
test."""

import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from vr2robot.geometry import (
    FrameTag,
    Pose,
    compose,
    decode_rot6d,
    encode_rot6d,
    inverse,
    pose_delta,
    quat_angle,
    quat_from_axis_angle,
    relative,
    slerp,
)

ATOL = 1e-9


def random_pose(rng, frame=FrameTag.CAMERA):
    q = rng.normal(size=4)
    return Pose(rng.normal(size=3), q / np.linalg.norm(q), frame)


def oracle_matrix(pose: Pose) -> np.ndarray:
    """4x4 matrix via scipy (scipy uses xyzw quaternion order)."""
    m = np.eye(4)
    w, x, y, z = pose.quat
    m[:3, :3] = Rotation.from_quat([x, y, z, w]).as_matrix()
    m[:3, 3] = pose.position
    return m


def assert_pose_matches_matrix(pose: Pose, m: np.ndarray, atol=ATOL):
    np.testing.assert_allclose(oracle_matrix(pose), m, atol=atol)


class TestPose:
    def test_quaternion_canonicalized(self):
        p = Pose([0, 0, 0], [-1, 0, 0, 0])
        assert p.quat[0] == 1.0

    def test_norm_enforced(self):
        p = Pose([0, 0, 0], [2.0, 0, 0, 0])
        assert abs(np.linalg.norm(p.quat) - 1.0) < ATOL

    def test_zero_quaternion_rejected(self):
        with pytest.raises(ValueError):
            Pose([0, 0, 0], [0, 0, 0, 0])

    def test_nonfinite_position_rejected(self):
        with pytest.raises(ValueError):
            Pose([np.nan, 0, 0], [1, 0, 0, 0])


class TestCompose:
    def test_identity_left(self):
        rng = np.random.default_rng(0)
        p = random_pose(rng)
        out = compose(Pose.identity(), p)
        assert pose_delta(out, p) == (pytest.approx(0, abs=ATOL), pytest.approx(0, abs=ATOL))

    def test_inverse_gives_identity(self):
        rng = np.random.default_rng(1)
        p = random_pose(rng)
        out = compose(p, inverse(p))
        dp, da = pose_delta(out, Pose.identity())
        assert dp < ATOL and da < ATOL

    def test_translation_chain(self):
        # Tz(+1m) then Tx(+1m) lands at (1, 0, 1), identity rotation
        tz = Pose([0, 0, 1], [1, 0, 0, 0])
        tx = Pose([1, 0, 0], [1, 0, 0, 0])
        out = compose(tz, tx)
        np.testing.assert_allclose(out.position, [1, 0, 1], atol=ATOL)
        np.testing.assert_allclose(out.quat, [1, 0, 0, 0], atol=ATOL)

    def test_matches_matrix_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            a, b = random_pose(rng), random_pose(rng)
            assert_pose_matches_matrix(compose(a, b), oracle_matrix(a) @ oracle_matrix(b))

    def test_associative(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            a, b, c = (random_pose(rng) for _ in range(3))
            dp, da = pose_delta(compose(compose(a, b), c), compose(a, compose(b, c)))
            assert dp < ATOL and da < ATOL


class TestInverse:
    def test_identity(self):
        out = inverse(Pose.identity())
        assert pose_delta(out, Pose.identity()) == (0, 0)

    def test_pure_translation(self):
        out = inverse(Pose([1, -2, 3], [1, 0, 0, 0]))
        np.testing.assert_allclose(out.position, [-1, 2, -3], atol=ATOL)

    def test_matches_matrix_inverse(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            p = random_pose(rng)
            assert_pose_matches_matrix(inverse(p), np.linalg.inv(oracle_matrix(p)))


class TestRelative:
    def test_self_is_identity(self):
        rng = np.random.default_rng(5)
        p = random_pose(rng)
        dp, da = pose_delta(relative(p, p), Pose.identity(FrameTag.WRIST))
        assert dp < ATOL and da < ATOL

    def test_from_identity(self):
        rng = np.random.default_rng(6)
        p = random_pose(rng)
        dp, da = pose_delta(relative(Pose.identity(), p), p)
        assert dp < ATOL and da < ATOL

    def test_pure_translation(self):
        base = Pose([1, 0, 0], [1, 0, 0, 0])
        target = Pose([2, 0, 0], [1, 0, 0, 0])
        out = relative(base, target)
        np.testing.assert_allclose(out.position, [1, 0, 0], atol=ATOL)

    def test_frame_mismatch_raises(self):
        with pytest.raises(ValueError, match="frame mismatch"):
            relative(Pose.identity(FrameTag.CAMERA), Pose.identity(FrameTag.VR))

    def test_compose_round_trip_bulk(self):
        # spec-level property: compose(base, relative(base, target)) == target
        rng = np.random.default_rng(7)
        worst_p = worst_a = 0.0
        for _ in range(100_000):
            base, target = random_pose(rng), random_pose(rng)
            rel = relative(base, target)
            rel.frame = FrameTag.CAMERA
            back = compose(base, rel)
            dp, da = pose_delta(back, target)
            worst_p = max(worst_p, dp)
            worst_a = max(worst_a, da)
        assert worst_p < ATOL and worst_a < ATOL


class TestSlerp:
    def test_endpoints_exact(self):
        rng = np.random.default_rng(8)
        a, b = random_pose(rng), random_pose(rng)
        s0, s1 = slerp(a, b, 0.0), slerp(a, b, 1.0)
        assert np.array_equal(s0.position, a.position) and np.array_equal(s0.quat, a.quat)
        assert np.array_equal(s1.position, b.position) and np.array_equal(s1.quat, b.quat)

    def test_halfway_z_rotation(self):
        # axis-angle oracle: halfway between identity and 90 deg about z is 45 deg
        a = Pose.identity()
        b = Pose([0, 0, 0], quat_from_axis_angle([0, 0, 1], math.pi / 2))
        mid = slerp(a, b, 0.5)
        expect = quat_from_axis_angle([0, 0, 1], math.pi / 4)
        assert quat_angle(mid.quat, expect) < ATOL

    def test_angle_proportional(self):
        rng = np.random.default_rng(9)
        for _ in range(500):
            a, b = random_pose(rng), random_pose(rng)
            t = rng.uniform()
            total = quat_angle(a.quat, b.quat)
            part = quat_angle(a.quat, slerp(a, b, t).quat)
            assert abs(part - t * total) < 1e-9 * max(1.0, total)

    def test_antipodal_inputs_match(self):
        rng = np.random.default_rng(10)
        a = random_pose(rng)
        b_neg = Pose(a.position, -np.asarray(a.quat))  # canonicalizes back; same rotation
        out = slerp(a, b_neg, 0.37)
        assert quat_angle(out.quat, a.quat) < ATOL

    def test_out_of_range_t(self):
        a = Pose.identity()
        with pytest.raises(ValueError):
            slerp(a, a, 1.5)
        with pytest.raises(ValueError):
            slerp(a, a, -0.1)


class TestRot6D:
    def test_identity_encoding(self):
        np.testing.assert_allclose(encode_rot6d([1, 0, 0, 0]).values, [1, 0, 0, 0, 1, 0], atol=ATOL)

    def test_z90_encoding(self):
        # rotation-matrix oracle: Rz(90) rows are (0,-1,0) and (1,0,0)
        q = quat_from_axis_angle([0, 0, 1], math.pi / 2)
        np.testing.assert_allclose(encode_rot6d(q).values, [0, -1, 0, 1, 0, 0], atol=ATOL)

    def test_round_trip_bulk(self):
        rng = np.random.default_rng(11)
        qs = rng.normal(size=(100_000, 4))
        qs /= np.linalg.norm(qs, axis=1, keepdims=True)
        worst = 0.0
        for q in qs:
            back = decode_rot6d(encode_rot6d(q))
            # compare as rotations via Frobenius norm of the matrix difference
            w, x, y, z = q if q[0] >= 0 else -q
            m_in = Rotation.from_quat([x, y, z, w]).as_matrix()
            w, x, y, z = back
            m_out = Rotation.from_quat([x, y, z, w]).as_matrix()
            worst = max(worst, float(np.linalg.norm(m_in - m_out)))
        assert worst < ATOL

    def test_decode_orthonormalizes_perturbed_rows(self):
        # Gram-Schmidt oracle: perturbed rows still decode to a proper rotation
        rng = np.random.default_rng(12)
        for _ in range(200):
            v = rng.normal(size=6)
            w, x, y, z = decode_rot6d(v)
            m = Rotation.from_quat([x, y, z, w]).as_matrix()
            np.testing.assert_allclose(m @ m.T, np.eye(3), atol=ATOL)
            assert np.linalg.det(m) > 0

    def test_degenerate_rows_rejected(self):
        with pytest.raises(ValueError):
            decode_rot6d([0, 0, 0, 0, 1, 0])
        with pytest.raises(ValueError):
            decode_rot6d([1, 0, 0, 2, 0, 0])
