import math

import numpy as np
import pytest

from vr2robot.dataset import Domain, Episode, Frame
from vr2robot.geometry import (
    FrameTag,
    Pose,
    compose,
    decode_rot6d,
    pose_delta,
    quat_angle,
    quat_from_axis_angle,
)
from vr2robot.synthetic import synthetic_joint_path, synthetic_wrist_path
from vr2robot.kinematics import default_hand_model
from vr2robot.transform import (
    ChunkSpec,
    EpisodeChunker,
    PoseMode,
    apply_crop_resize,
    bilinear_resize,
    crop_resize_spec,
    make_samples,
    read_samples,
    round_half_up,
    slow_down,
    slowdown_frame_count,
    transform_episodes,
    write_samples,
)


def human_episode(seed=0, n=30, fps=10.0):
    rng = np.random.default_rng(seed)
    model = default_hand_model()
    wrists = synthetic_wrist_path(rng, n, 1.0 / fps)
    joints = synthetic_joint_path(rng, model, n, 1.0 / fps)
    frames = [
        Frame(k / fps, f"images/f{k:05d}.pgm", wrists[k], joints[k]) for k in range(n)
    ]
    return Episode("h0", Domain.HUMAN, "task", "do it", "scene", fps, frames)


def static_episode(n=6, domain=Domain.HUMAN):
    pose = Pose([0.1, -0.05, 0.4], quat_from_axis_angle([0, 0, 1], 0.7), FrameTag.CAMERA)
    joints = np.full(6, 0.3)
    frames = [Frame(0.1 * k, f"images/f{k:05d}.pgm", pose, joints) for k in range(n)]
    return Episode("s0", domain, "task", "do it", "scene", 10.0, frames)


def linear_episode(n=25, step=0.01):
    frames = [
        Frame(0.1 * k, f"images/f{k:05d}.pgm",
              Pose([step * k, 0, 0.4], [1, 0, 0, 0], FrameTag.CAMERA), np.full(6, 0.2))
        for k in range(n)
    ]
    return Episode("l0", Domain.HUMAN, "task", "do it", "scene", 10.0, frames)


def max_speed(ep):
    p = np.stack([f.wrist_pose.position for f in ep.frames])
    t = np.asarray([f.timestamp for f in ep.frames])
    return (np.linalg.norm(np.diff(p, axis=0), axis=1) / np.diff(t)).max()


class TestSlowDown:
    def test_identity_factor(self):
        ep = human_episode()
        assert slow_down(ep, 1.0) is ep

    def test_count_formula(self):
        assert slowdown_frame_count(9, 2.25) == 19  # round(8 * 2.25) + 1
        assert slowdown_frame_count(3, 2.25) == 6   # half rounds up: round(4.5) -> 5
        assert round_half_up(4.5) == 5
        ep = human_episode(n=9)
        assert len(slow_down(ep, 2.25).frames) == 19

    def test_two_frame_rotation_midpoint(self):
        q0 = np.array([1.0, 0, 0, 0])
        q1 = quat_from_axis_angle([0, 0, 1], math.pi / 2)
        frames = [
            Frame(0.0, "images/a.pgm", Pose([0, 0, 0.4], q0, FrameTag.CAMERA), np.zeros(6)),
            Frame(0.1, "images/b.pgm", Pose([0, 0, 0.4], q1, FrameTag.CAMERA), np.zeros(6)),
        ]
        ep = Episode("e", Domain.HUMAN, "t", "i", "s", 10.0, frames)
        out = slow_down(ep, 2.0)
        assert len(out.frames) == 3
        expect = quat_from_axis_angle([0, 0, 1], math.pi / 4)
        assert quat_angle(out.frames[1].wrist_pose.quat, expect) < 1e-9

    def test_endpoints_exact(self):
        ep = human_episode(seed=3)
        out = slow_down(ep, 2.25)
        for src, dst in ((ep.frames[0], out.frames[0]), (ep.frames[-1], out.frames[-1])):
            assert np.array_equal(src.wrist_pose.position, dst.wrist_pose.position)
            assert np.array_equal(src.wrist_pose.quat, dst.wrist_pose.quat)
            assert np.array_equal(src.hand_joints, dst.hand_joints)

    def test_speed_ratio(self):
        for seed in range(5):
            ep = human_episode(seed=seed, n=36)
            out = slow_down(ep, 2.25)
            ratio = max_speed(ep) / max_speed(out)
            assert abs(ratio - 2.25) / 2.25 < 0.01

    def test_duration_stretched(self):
        ep = human_episode(n=30)
        out = slow_down(ep, 2.25)
        assert out.duration == pytest.approx(ep.duration * 2.25, rel=1e-12)
        assert out.provenance["slowdown_factor"] == 2.25

    def test_robot_episode_rejected(self):
        ep = static_episode(domain=Domain.ROBOT)
        with pytest.raises(ValueError, match="human"):
            slow_down(ep, 2.25)


class TestMakeSamples:
    def test_static_relative_rows(self):
        ep = static_episode()
        samples = make_samples(ep, ChunkSpec(t_a=4))
        assert len(samples) == len(ep.frames)
        for s in samples:
            for k in range(4):
                np.testing.assert_allclose(s.action[k, 0:3], 0.0, atol=1e-12)
                np.testing.assert_allclose(s.action[k, 3:9], [1, 0, 0, 0, 1, 0], atol=1e-12)
                np.testing.assert_allclose(s.action[k, 9:15], 0.3, atol=1e-12)

    def test_constant_velocity_closed_form(self):
        ep = linear_episode(step=0.01)
        samples = make_samples(ep, ChunkSpec(t_a=6))
        s = samples[5]
        for k in range(1, 7):
            np.testing.assert_allclose(s.action[k - 1, 0:3], [0.01 * k, 0, 0], atol=1e-12)
            np.testing.assert_allclose(s.action[k - 1, 3:9], [1, 0, 0, 0, 1, 0], atol=1e-12)

    def test_absolute_mode(self):
        ep = linear_episode(step=0.01)
        samples = make_samples(ep, ChunkSpec(t_a=4, pose_mode=PoseMode.ABSOLUTE))
        s = samples[3]
        for k in range(1, 5):
            np.testing.assert_allclose(s.action[k - 1, 0:3], [0.01 * (3 + k), 0, 0.4], atol=1e-12)

    def test_history_edge_replication(self):
        ep = linear_episode()
        s0 = make_samples(ep, ChunkSpec(t_p=2, t_a=2))[0]
        np.testing.assert_array_equal(s0.proprio[0], s0.proprio[1])

    def test_tail_padding_mask(self):
        ep = linear_episode(n=10)
        samples = make_samples(ep, ChunkSpec(t_a=16))
        last = samples[-1]
        assert last.action_padding.all()
        first = samples[0]
        assert not first.action_padding[: 9 - 0].any()
        assert first.action_padding[9:].all()

    def test_replayability(self):
        # composing the current pose with each relative action row must land
        # on the source pose within 1e-9; the executable replay claim
        ep = human_episode(seed=7, n=24)
        samples = make_samples(ep, ChunkSpec(t_a=8))
        worst = 0.0
        for s in samples:
            cur = Pose(s.proprio[-1, 0:3], decode_rot6d(s.proprio[-1, 3:9]), FrameTag.CAMERA)
            for k in range(8):
                if s.action_padding[k]:
                    continue
                rel = Pose(s.action[k, 0:3], decode_rot6d(s.action[k, 3:9]), FrameTag.CAMERA)
                back = compose(cur, rel)
                dp, da = pose_delta(back, ep.frames[s.frame_index + k + 1].wrist_pose)
                worst = max(worst, dp, da)
        assert worst < 1e-9

    def test_sample_count_per_episode(self):
        ep = human_episode(n=17)
        assert len(make_samples(ep, ChunkSpec())) == 17

    def test_transform_episodes_slows_human_only(self):
        h = human_episode(n=9)
        r = static_episode(n=9, domain=Domain.ROBOT)
        samples = transform_episodes([h, r], ChunkSpec())
        n_h = sum(1 for s in samples if s.domain is Domain.HUMAN)
        n_r = sum(1 for s in samples if s.domain is Domain.ROBOT)
        assert n_h == 19 and n_r == 9

    def test_chunker_estimator(self):
        ep = linear_episode()
        chunker = EpisodeChunker(t_a=4, slowdown=1.0)
        params = chunker.get_params()
        assert params["t_a"] == 4
        out = chunker.transform([ep])
        ref = transform_episodes([ep], ChunkSpec(t_a=4, slowdown=1.0))
        assert len(out) == len(ref)
        np.testing.assert_array_equal(out[2].action, ref[2].action)


class TestCropResize:
    def test_center_crop_1280x720(self):
        spec = crop_resize_spec((1280, 720))
        assert (spec.crop_x, spec.crop_y) == (320, 120)
        assert (spec.crop_w, spec.crop_h) == (640, 480)
        assert (spec.out_w, spec.out_h) == (224, 224)

    def test_exact_size_crop(self):
        spec = crop_resize_spec((640, 480))
        assert (spec.crop_x, spec.crop_y) == (0, 0)

    def test_too_small_rejected(self):
        with pytest.raises(ValueError, match="smaller than crop"):
            crop_resize_spec((600, 480))

    def test_bilinear_checkerboard_oracle(self):
        img = np.array([[0.0, 1.0], [1.0, 0.0]])
        out = bilinear_resize(img, (4, 4))
        # closed form of the 2x2 checkerboard: f(x, y) = x + y - 2xy on the
        # clamped pixel-center grid [0, 0.25, 0.75, 1]
        grid = np.array([0.0, 0.25, 0.75, 1.0])
        expect = grid[:, None] + grid[None, :] - 2 * grid[:, None] * grid[None, :]
        np.testing.assert_allclose(out, expect, atol=1e-12)

    def test_apply_matches_manual(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(size=(720, 1280, 3))
        spec = crop_resize_spec((1280, 720))
        out = apply_crop_resize(img, spec)
        manual = bilinear_resize(img[120:600, 320:960], (224, 224))
        np.testing.assert_array_equal(out, manual)
        assert out.shape == (224, 224, 3)


class TestShards:
    def test_round_trip(self, tmp_path):
        eps = [human_episode(seed=1, n=9), static_episode(n=5, domain=Domain.ROBOT)]
        spec = ChunkSpec(t_a=6)
        samples = transform_episodes(eps, spec)
        doc = write_samples(samples, tmp_path, spec, shard_size=7)
        assert doc["n_samples"] == len(samples)
        assert len(doc["shards"]) == math.ceil(len(samples) / 7)
        doc2, back = read_samples(tmp_path)
        assert doc2 == doc
        assert len(back) == len(samples)
        for a, b in zip(samples, back):
            assert a.episode_id == b.episode_id
            assert a.frame_index == b.frame_index
            assert a.domain is b.domain
            assert a.pose_mode is b.pose_mode
            np.testing.assert_array_equal(a.proprio, b.proprio)
            np.testing.assert_array_equal(a.action, b.action)
            np.testing.assert_array_equal(a.action_padding, b.action_padding)

    def test_checksum_guard(self, tmp_path):
        spec = ChunkSpec(t_a=4)
        samples = transform_episodes([static_episode()], spec)
        doc = write_samples(samples, tmp_path, spec)
        shard = tmp_path / doc["shards"][0]["file"]
        blob = bytearray(shard.read_bytes())
        blob[-3] ^= 0x55
        shard.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="checksum"):
            read_samples(tmp_path)

    def test_convention_recorded(self, tmp_path):
        spec = ChunkSpec(t_a=4)
        samples = transform_episodes([static_episode()], spec)
        doc = write_samples(samples, tmp_path, spec)
        assert "base_inverse_times_target" in doc["relative_frame_convention"]


class TestChunkSpecValidation:
    def test_bounds(self):
        with pytest.raises(ValueError):
            ChunkSpec(t_p=0)
        with pytest.raises(ValueError):
            ChunkSpec(t_a=0)
        with pytest.raises(ValueError):
            ChunkSpec(slowdown=0.5)
        with pytest.raises(ValueError):
            ChunkSpec(fps=0)
