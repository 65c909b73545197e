"""Seeded synthetic recordings for tests, demos and the acceptance suite.

Generates raw human and robot sessions in the repo's normative JSONL schema,
plus a matching calibration session, a camera extrinsic file, and stub image
files. Trajectories are smooth sinusoid mixes with human-plausible speeds;
hand keypoints are manufactured from the bundled hand model's forward
kinematics so retargeting has a consistent ground truth. Everything is
deterministic in the seed.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .calibration import CalibrationResult, calibrate_session
from .geometry import (
    FrameTag,
    Pose,
    compose,
    inverse,
    quat_from_axis_angle,
    quat_from_matrix,
    quat_multiply,
)
from .kinematics import HandModel, default_hand_model, forward_kinematics
from .retarget import FINGERTIP_KEYPOINTS

BOARD_NX, BOARD_NY, BOARD_SPACING = 24, 17, 0.011
FX, FY, CX, CY = 600.0, 600.0, 320.0, 240.0


def _dump_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def board_points() -> np.ndarray:
    xs, ys = np.meshgrid(np.arange(BOARD_NX) * BOARD_SPACING, np.arange(BOARD_NY) * BOARD_SPACING)
    pts = np.stack([xs.ravel(), ys.ravel(), np.zeros(BOARD_NX * BOARD_NY)], axis=1)
    pts[:, :2] -= pts[:, :2].mean(axis=0)
    return pts


def lookat_pose(dist: float, elev: float, azim: float, aim=(0.0, 0.0, 0.0)) -> Pose:
    aim = np.asarray(aim, dtype=float)
    c = aim + dist * np.array(
        [math.sin(elev) * math.cos(azim), math.sin(elev) * math.sin(azim), math.cos(elev)]
    )
    z = aim - c
    z /= np.linalg.norm(z)
    x = np.cross(z, [0, 0, 1.0])
    n = np.linalg.norm(x)
    x = np.array([1.0, 0, 0]) if n < 1e-6 else x / n
    y = np.cross(z, x)
    return Pose(c, quat_from_matrix(np.stack([x, y, z], axis=1)), FrameTag.CHESSBOARD)


def ground_truth_rig(seed: int = 0) -> tuple[Pose, Pose, Pose]:
    """(t_cam, t_vr, vr_to_cam) for a plausible desk rig."""
    rng = np.random.default_rng(seed)
    t_cam = lookat_pose(rng.uniform(0.55, 0.65), rng.uniform(0.9, 1.1), rng.uniform(0, 2 * math.pi))
    t_vr = lookat_pose(rng.uniform(0.5, 0.6), rng.uniform(0.7, 0.9), rng.uniform(0, 2 * math.pi))
    t_vr.frame = FrameTag.CHESSBOARD
    return t_cam, t_vr, compose(inverse(t_cam), t_vr)


def write_calibration_session(path: Path, t_cam: Pose, t_vr: Pose, pixel_noise: float = 0.0,
                              seed: int = 0) -> None:
    """Session document whose solve reproduces (t_cam, t_vr)."""
    pts = board_points()
    m = np.linalg.inv(t_cam.matrix())
    cam = pts @ m[:3, :3].T + m[:3, 3]
    z = cam[:, 2]
    if np.any(z <= 0):
        raise ValueError("ground-truth camera must face the board")
    px = np.stack([FX * cam[:, 0] / z + CX, FY * cam[:, 1] / z + CY], axis=1)
    if pixel_noise > 0:
        px = px + np.random.default_rng(seed).normal(scale=pixel_noise, size=px.shape)
    anchor = inverse(t_vr)
    anchor.frame = FrameTag.VR
    # desktop plane sampled around the board, expressed in VR coordinates
    rng = np.random.default_rng(seed + 1)
    plane_pts = [
        anchor.apply(np.array([xy[0], xy[1], 0.0]))
        for xy in rng.uniform(-0.3, 0.3, size=(40, 2))
    ]
    _dump_json(path, {
        "schema": "mt-calib-session v1",
        "intrinsics": {"fx": FX, "fy": FY, "cx": CX, "cy": CY},
        "board_points": pts.tolist(),
        "detections": [[i, px[i].tolist()] for i in range(len(px))],
        "plane_points": np.asarray(plane_pts).tolist(),
        "anchor_reading": {
            "position": [float(v) for v in anchor.position],
            "quat_wxyz": [float(v) for v in anchor.quat],
            "frame": "vr",
        },
    })


def write_stub_image(path: Path, token: int) -> None:
    """Tiny valid binary PGM with a deterministic byte pattern."""
    w, h = 8, 6
    body = bytes((token * 31 + i * 7) % 256 for i in range(w * h))
    path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + body)


def _sinusoid_path(rng, n, dt, center, amplitude, max_hz=0.7):
    """Smooth (n, 3) path: per-axis two-tone sinusoids."""
    t = np.arange(n) * dt
    out = np.tile(np.asarray(center, dtype=float), (n, 1))
    for axis in range(3):
        for _ in range(2):
            a = rng.uniform(0.3, 1.0) * amplitude[axis]
            hz = rng.uniform(0.15, max_hz)
            ph = rng.uniform(0, 2 * math.pi)
            out[:, axis] += a * np.sin(2 * math.pi * hz * t + ph)
    return out


def synthetic_wrist_path(rng, n, dt) -> list[Pose]:
    """Camera-frame wrist poses: in front of the camera, human-speed motion."""
    pos = _sinusoid_path(
        rng, n, dt, center=[rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), 0.45],
        amplitude=[0.08, 0.06, 0.05],
    )
    q0 = quat_from_axis_angle(rng.normal(size=3), rng.uniform(0.0, math.pi))
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    hz = rng.uniform(0.15, 0.5)
    ph = rng.uniform(0, 2 * math.pi)
    amp = rng.uniform(0.2, 0.5)
    t = np.arange(n) * dt
    poses = []
    for k in range(n):
        ang = amp * math.sin(2 * math.pi * hz * t[k] + ph)
        poses.append(Pose(pos[k], quat_multiply(q0, quat_from_axis_angle(axis, ang)), FrameTag.CAMERA))
    return poses


def synthetic_joint_path(rng, model: HandModel, n, dt) -> np.ndarray:
    lo, hi = model.actuated_lo, model.actuated_hi
    mid, span = 0.5 * (lo + hi), hi - lo
    t = np.arange(n) * dt
    q = np.tile(mid, (n, 1))
    for j in range(model.n_actuated):
        amp = rng.uniform(0.15, 0.35) * span[j]
        hz = rng.uniform(0.15, 0.5)
        ph = rng.uniform(0, 2 * math.pi)
        q[:, j] += amp * np.sin(2 * math.pi * hz * t + ph)
    return np.clip(q, lo, hi)


def keypoints_from_joints(model: HandModel, q: np.ndarray) -> np.ndarray:
    """Wrist-frame 21-keypoint layout with FK fingertips and on-segment landmarks."""
    tips = forward_kinematics(model, q)
    kps = np.zeros((21, 3))
    for finger, tip_idx in enumerate(FINGERTIP_KEYPOINTS):
        kps[tip_idx] = tips[finger]
        for step in range(1, 4):
            kps[tip_idx - 4 + step] = tips[finger] * (step / 4.0)
    return kps


def write_human_session(
    out_dir: str | Path,
    vr_to_cam: Pose,
    task_id: str,
    instruction: str,
    seed: int,
    n_episodes: int = 2,
    n_frames: int = 36,
    fps: float = 10.0,
    model: HandModel | None = None,
    scene_tag: str = "desk",
) -> Path:
    """One raw human session in VR coordinates; inverse of the calibration map."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = model or default_hand_model()
    cam_to_vr = inverse(vr_to_cam)
    root = np.random.SeedSequence(seed)
    names = [f"ep{k:03d}" for k in range(n_episodes)]
    for name, child in zip(names, root.spawn(n_episodes)):
        rng = np.random.default_rng(child)
        ep_dir = out / name
        (ep_dir / "images").mkdir(parents=True, exist_ok=True)
        dt = 1.0 / fps
        wrists_cam = synthetic_wrist_path(rng, n_frames, dt)
        joints = synthetic_joint_path(rng, model, n_frames, dt)
        lines = []
        for k in range(n_frames):
            kps_local = keypoints_from_joints(model, joints[k])
            kps_cam = wrists_cam[k].apply(kps_local)
            kps_vr = cam_to_vr.apply(kps_cam)
            wrist_vr = compose(cam_to_vr, wrists_cam[k])
            image = f"images/f{k:05d}.pgm"
            write_stub_image(ep_dir / image, seed * 1000 + k)
            lines.append(json.dumps({
                "t": k * dt,
                "wrist": {
                    "position": [float(v) for v in wrist_vr.position],
                    "quat_wxyz": [float(v) for v in wrist_vr.quat],
                },
                "keypoints": [[float(v) for v in row] for row in kps_vr],
                "image": image,
            }, sort_keys=True))
        (ep_dir / "frames.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _dump_json(out / "session.json", {
        "schema": "mt-human-session v1",
        "task_id": task_id,
        "instruction": instruction,
        "scene_tag": scene_tag,
        "fps": fps,
        "episodes": names,
    })
    return out


def write_robot_session(
    out_dir: str | Path,
    extrinsic: Pose,
    task_id: str,
    instruction: str,
    seed: int,
    n_episodes: int = 2,
    n_frames: int = 36,
    fps: float = 10.0,
    model: HandModel | None = None,
    scene_tag: str = "green-table",
) -> Path:
    """One raw robot teleoperation session, wrist poses in the base frame."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = model or default_hand_model()
    cam_to_base = inverse(extrinsic)
    root = np.random.SeedSequence(seed)
    names = [f"ep{k:03d}" for k in range(n_episodes)]
    for name, child in zip(names, root.spawn(n_episodes)):
        rng = np.random.default_rng(child)
        ep_dir = out / name
        (ep_dir / "images").mkdir(parents=True, exist_ok=True)
        dt = 1.0 / fps
        wrists_cam = synthetic_wrist_path(rng, n_frames, dt)
        joints = synthetic_joint_path(rng, model, n_frames, dt)
        lines = []
        for k in range(n_frames):
            wrist_base = compose(cam_to_base, wrists_cam[k])
            image = f"images/f{k:05d}.pgm"
            write_stub_image(ep_dir / image, seed * 1000 + 500 + k)
            lines.append(json.dumps({
                "t": k * dt,
                "wrist": {
                    "position": [float(v) for v in wrist_base.position],
                    "quat_wxyz": [float(v) for v in wrist_base.quat],
                },
                "joints": [float(v) for v in joints[k]],
                "image": image,
            }, sort_keys=True))
        (ep_dir / "frames.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _dump_json(out / "session.json", {
        "schema": "mt-robot-session v1",
        "task_id": task_id,
        "instruction": instruction,
        "scene_tag": scene_tag,
        "fps": fps,
        "episodes": names,
    })
    return out


HUMAN_TASKS = [
    ("orange_bucket", "put orange to the green bucket"),
    ("bread_bucket", "drop bread to the green bucket"),
    ("press_stapler", "press the stapler"),
    ("wipe_towel", "wipe blue towel on the table"),
    ("close_laptop", "close silver laptop"),
]
ROBOT_TASKS = [
    ("bread_pad", "put bread to the red pad"),
    ("bread_platform", "put bread to the high black platform"),
    ("push_cube", "push orange cube to the bulky bottle"),
    ("pour_cola", "pour cola to the red cup"),
    ("press_mouse", "press the pink mouse"),
]


def make_corpus(
    out_dir: str | Path,
    n_human_sessions: int = 5,
    n_robot_sessions: int = 5,
    episodes_per_session: int = 2,
    n_frames: int = 36,
    seed: int = 0,
) -> dict:
    """A full raw corpus: calibration session, extrinsic, human+robot sessions.

    Returns a manifest of written paths plus the ground-truth rig (handy for
    oracle assertions in tests).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t_cam, t_vr, vr_to_cam = ground_truth_rig(seed)
    write_calibration_session(out / "calib_session.json", t_cam, t_vr)
    extrinsic = Pose(
        [0.1, -0.05, 0.4], quat_from_axis_angle([0.1, 1.0, 0.2], 2.3), FrameTag.CAMERA
    )
    _dump_json(out / "extrinsic.json", {
        "schema": "mt-extrinsic v1",
        "position": [float(v) for v in extrinsic.position],
        "quat_wxyz": [float(v) for v in extrinsic.quat],
    })
    human_dirs, robot_dirs = [], []
    for s in range(n_human_sessions):
        task, instruction = HUMAN_TASKS[s % len(HUMAN_TASKS)]
        human_dirs.append(write_human_session(
            out / "human" / f"human{s:03d}", vr_to_cam, task, instruction,
            seed=seed * 1009 + 17 + s, n_episodes=episodes_per_session, n_frames=n_frames,
        ))
    for s in range(n_robot_sessions):
        task, instruction = ROBOT_TASKS[s % len(ROBOT_TASKS)]
        robot_dirs.append(write_robot_session(
            out / "robot" / f"robot{s:03d}", extrinsic, task, instruction,
            seed=seed * 2003 + 29 + s, n_episodes=episodes_per_session, n_frames=n_frames,
        ))
    return {
        "root": out,
        "calib_session": out / "calib_session.json",
        "extrinsic": out / "extrinsic.json",
        "human_sessions": human_dirs,
        "robot_sessions": robot_dirs,
        "truth": {"t_cam": t_cam, "t_vr": t_vr, "vr_to_cam": vr_to_cam},
    }


def solve_corpus_calibration(manifest: dict) -> CalibrationResult:
    from .calibration import load_session

    return calibrate_session(load_session(manifest["calib_session"]))


def stub_index_with_counts(n_human: int, n_robot: int):
    """An index with the requested domain counts and placeholder entries;
    used for weight computations that only need the counts."""
    from .dataset import DatasetIndex, Domain, IndexEntry

    entries = [
        IndexEntry(f"human{i:05d}", Domain.HUMAN, "human_task", 2, f"episodes/h{i}", 21)
        for i in range(n_human)
    ] + [
        IndexEntry(f"robot{i:05d}", Domain.ROBOT, "robot_task", 2, f"episodes/r{i}", 21)
        for i in range(n_robot)
    ]
    return DatasetIndex(entries, {"human_task": [], "robot_task": []}, n_human, n_robot)
