"""Human-to-robot data transformation: temporal slowdown, image crop/resize
bookkeeping, proprioception stacking and action-chunk construction.

The policy-facing unit is a 15-dimensional row [position(3), rotation-6d(6),
joints(6)]. Proprioception stacks the last ``t_p`` absolute rows; the action
chunk holds the next ``t_a`` rows where the wrist part is, by default, the
future pose expressed in the current wrist's local frame (``relative(pose_t,
pose_{t+k})``); hand joints stay absolute. Chunks that run past the episode
end repeat the final frame and carry a padding mask.

Human episodes are slowed down before chunking (they move faster than the
robot can track); robot episodes pass through unchanged.
"""

from __future__ import annotations

import binascii
import enum
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .dataset import Domain, Episode, Frame
from .geometry import FrameTag, Pose, encode_rot6d, relative, slerp
from .validation import check_positive

ROW_DIM = 15
SAMPLES_MAGIC = b"MTSMP1"
SAMPLES_HEADER = struct.Struct("<6sIIIBxxxI")  # magic, t_p, t_a, n_records, pose_mode, crc32
RELATIVE_FRAME_CONVENTION = "base_inverse_times_target:current-wrist-local-frame"


class PoseMode(str, enum.Enum):
    RELATIVE = "relative"
    ABSOLUTE = "absolute"


@dataclass
class ChunkSpec:
    t_p: int = 2
    t_a: int = 16
    fps: float = 10.0
    pose_mode: PoseMode = PoseMode.RELATIVE
    slowdown: float = 2.25

    def __post_init__(self) -> None:
        if self.t_p < 1 or self.t_a < 1:
            raise ValueError("t_p and t_a must be >= 1")
        check_positive(self.fps, "fps")
        if self.slowdown < 1.0:
            raise ValueError("slowdown must be >= 1")
        self.pose_mode = PoseMode(self.pose_mode)


@dataclass
class TrainingSample:
    image_ref: str
    proprio: np.ndarray          # (t_p, 15), absolute rows, oldest -> current
    action: np.ndarray           # (t_a, 15), rows t+1 .. t+t_a
    action_padding: np.ndarray   # (t_a,) bool, True where the row repeats the final frame
    task_id: str
    domain: Domain
    instruction: str
    episode_id: str
    frame_index: int
    pose_mode: PoseMode


def round_half_up(x: float) -> int:
    """Deterministic count rounding (0.5 always rounds up)."""
    return int(math.floor(x + 0.5))


def slowdown_frame_count(n: int, factor: float) -> int:
    return round_half_up((n - 1) * factor) + 1


def slow_down(episode: Episode, factor: float) -> Episode:
    """Stretch an episode ``factor``-times longer at the same nominal fps.

    Output frames sit uniformly on the stretched time grid; positions, joints
    and keypoints interpolate linearly, orientations along the shorter arc.
    First and last frames are preserved exactly. Image refs snap to the
    nearest source frame.
    """
    if episode.domain is not Domain.HUMAN:
        raise ValueError("slow_down applies to human episodes")
    if factor < 1.0:
        raise ValueError("slowdown factor must be >= 1")
    if factor == 1.0:
        return episode
    n = len(episode.frames)
    src_t = np.asarray([f.timestamp for f in episode.frames])
    t0 = src_t[0]
    stretched = t0 + (src_t - t0) * factor
    n_out = slowdown_frame_count(n, factor)
    out_t = np.linspace(stretched[0], stretched[-1], n_out)

    frames = []
    for k, t in enumerate(out_t):
        if k == 0:
            src = episode.frames[0]
            frames.append(Frame(t, src.image_ref, src.wrist_pose, src.hand_joints,
                                src.raw_keypoints))
            continue
        if k == n_out - 1:
            src = episode.frames[-1]
            frames.append(Frame(t, src.image_ref, src.wrist_pose, src.hand_joints,
                                src.raw_keypoints))
            continue
        j = int(np.searchsorted(stretched, t, side="right") - 1)
        j = min(max(j, 0), n - 2)
        a, b = episode.frames[j], episode.frames[j + 1]
        u = (t - stretched[j]) / (stretched[j + 1] - stretched[j])
        pose = slerp(a.wrist_pose, b.wrist_pose, float(u))
        joints = (1 - u) * a.hand_joints + u * b.hand_joints
        kp = None
        if a.raw_keypoints is not None:
            kp = (1 - u) * a.raw_keypoints + u * b.raw_keypoints
        image_ref = a.image_ref if u < 0.5 else b.image_ref
        frames.append(Frame(t, image_ref, pose, joints, kp))

    return Episode(
        episode.id, episode.domain, episode.task_id, episode.instruction,
        episode.scene_tag, episode.fps, frames,
        {**episode.provenance, "slowdown_factor": factor},
        image_root=episode.image_root,
    )


def _pose_row(pose: Pose, joints: np.ndarray) -> np.ndarray:
    row = np.empty(ROW_DIM)
    row[0:3] = pose.position
    row[3:9] = encode_rot6d(pose.quat).values
    row[9:15] = joints
    return row


def make_samples(episode: Episode, spec: ChunkSpec) -> list[TrainingSample]:
    """One TrainingSample per frame, history edge-replicated, tail padded."""
    for f in episode.frames:
        if f.wrist_pose.frame is not FrameTag.CAMERA:
            raise ValueError(
                f"episode {episode.id!r} is unprocessed: frame tag "
                f"{f.wrist_pose.frame.value!r} (expected camera)"
            )
    n = len(episode.frames)
    abs_rows = np.stack([_pose_row(f.wrist_pose, f.hand_joints) for f in episode.frames])
    samples = []
    for t in range(n):
        proprio = np.stack([abs_rows[max(0, t - self_k)] for self_k in range(spec.t_p - 1, -1, -1)])
        action = np.empty((spec.t_a, ROW_DIM))
        padding = np.zeros(spec.t_a, dtype=bool)
        base = episode.frames[t].wrist_pose
        for k in range(1, spec.t_a + 1):
            src_idx = t + k
            if src_idx > n - 1:
                src_idx = n - 1
                padding[k - 1] = True
            src = episode.frames[src_idx]
            if spec.pose_mode is PoseMode.RELATIVE:
                rel = relative(base, src.wrist_pose)
                action[k - 1] = _pose_row(rel, src.hand_joints)
            else:
                action[k - 1] = abs_rows[src_idx]
        samples.append(TrainingSample(
            image_ref=episode.frames[t].image_ref,
            proprio=proprio,
            action=action,
            action_padding=padding,
            task_id=episode.task_id,
            domain=episode.domain,
            instruction=episode.instruction,
            episode_id=episode.id,
            frame_index=t,
            pose_mode=spec.pose_mode,
        ))
    return samples


def transform_episodes(episodes: list[Episode], spec: ChunkSpec) -> list[TrainingSample]:
    """Pipeline stage: slow human episodes down, then chunk every episode."""
    out = []
    for ep in episodes:
        if ep.domain is Domain.HUMAN and spec.slowdown > 1.0:
            ep = slow_down(ep, spec.slowdown)
        out.extend(make_samples(ep, spec))
    return out


class EpisodeChunker(BaseEstimator):
    """Estimator-style wrapper around the slowdown + chunking stage."""

    def __init__(self, t_p: int = 2, t_a: int = 16, fps: float = 10.0,
                 pose_mode: str = "relative", slowdown: float = 2.25):
        self.t_p = t_p
        self.t_a = t_a
        self.fps = fps
        self.pose_mode = pose_mode
        self.slowdown = slowdown

    def _spec(self) -> ChunkSpec:
        return ChunkSpec(self.t_p, self.t_a, self.fps, PoseMode(self.pose_mode), self.slowdown)

    def fit(self, X=None, y=None):
        return self

    def transform(self, X: list[Episode]) -> list[TrainingSample]:
        return transform_episodes(X, self._spec())


# ---------------------------------------------------------------------------
# image crop / resize bookkeeping
# ---------------------------------------------------------------------------

@dataclass
class CropResizeSpec:
    src_w: int
    src_h: int
    crop_x: int
    crop_y: int
    crop_w: int = 640
    crop_h: int = 480
    out_w: int = 224
    out_h: int = 224
    method: str = "bilinear"
    align_corners: bool = False


def crop_resize_spec(src: tuple[int, int], crop=(640, 480), out=(224, 224)) -> CropResizeSpec:
    """Center-crop rectangle and resize target for a source (width, height)."""
    w, h = int(src[0]), int(src[1])
    cw, ch = crop
    if w < cw or h < ch:
        raise ValueError(f"source {w}x{h} smaller than crop {cw}x{ch}")
    return CropResizeSpec(w, h, (w - cw) // 2, (h - ch) // 2, cw, ch, out[0], out[1])


def bilinear_resize(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resample with the align_corners=False pixel-center convention:
    output center (i + 0.5) maps to input coordinate (i + 0.5) * scale - 0.5,
    clamped at the borders."""
    img = np.asarray(img, dtype=np.float64)
    in_h, in_w = img.shape[:2]
    out_h, out_w = out_hw
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0, in_h - 1)
    xs = np.clip(xs, 0, in_w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0).reshape(-1, 1)
    wx = (xs - x0).reshape(1, -1)
    if img.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def apply_crop_resize(img: np.ndarray, spec: CropResizeSpec) -> np.ndarray:
    img = np.asarray(img)
    if img.shape[0] != spec.src_h or img.shape[1] != spec.src_w:
        raise ValueError(
            f"image {img.shape[1]}x{img.shape[0]} does not match spec source "
            f"{spec.src_w}x{spec.src_h}"
        )
    crop = img[spec.crop_y: spec.crop_y + spec.crop_h, spec.crop_x: spec.crop_x + spec.crop_w]
    return bilinear_resize(crop, (spec.out_h, spec.out_w))


# ---------------------------------------------------------------------------
# sample shards
# ---------------------------------------------------------------------------

def _pack_record(s: TrainingSample, t_p: int, t_a: int) -> bytes:
    eid = s.episode_id.encode()
    img = s.image_ref.encode()
    task = s.task_id.encode()
    instr = s.instruction.encode()
    head = struct.pack(
        "<IBxHHHH", s.frame_index,
        0 if s.domain is Domain.HUMAN else 1,
        len(eid), len(img), len(task), len(instr),
    )
    return b"".join([
        head, eid, img, task, instr,
        s.action_padding.astype(np.uint8).tobytes(),
        np.ascontiguousarray(s.proprio, dtype="<f8").tobytes(),
        np.ascontiguousarray(s.action, dtype="<f8").tobytes(),
    ])


def _unpack_record(buf: memoryview, off: int, t_p: int, t_a: int, pose_mode: PoseMode):
    frame_index, domain_code, l_eid, l_img, l_task, l_instr = struct.unpack_from("<IBxHHHH", buf, off)
    off += struct.calcsize("<IBxHHHH")
    def take(n):
        nonlocal off
        out = bytes(buf[off: off + n])
        off += n
        return out
    eid = take(l_eid).decode()
    img = take(l_img).decode()
    task = take(l_task).decode()
    instr = take(l_instr).decode()
    padding = np.frombuffer(take(t_a), dtype=np.uint8).astype(bool)
    proprio = np.frombuffer(take(t_p * ROW_DIM * 8), dtype="<f8").reshape(t_p, ROW_DIM).copy()
    action = np.frombuffer(take(t_a * ROW_DIM * 8), dtype="<f8").reshape(t_a, ROW_DIM).copy()
    sample = TrainingSample(
        img, proprio, action, padding, task,
        Domain.HUMAN if domain_code == 0 else Domain.ROBOT,
        instr, eid, frame_index, pose_mode,
    )
    return sample, off


def write_samples(samples: list[TrainingSample], out_dir: str | Path, spec: ChunkSpec,
                  shard_size: int = 4096) -> dict:
    """Shard the samples under ``out_dir``; returns the written index document."""
    if not samples:
        raise ValueError("no samples to write")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    shards = []
    for si in range(0, len(samples), shard_size):
        chunk = samples[si: si + shard_size]
        payload = b"".join(_pack_record(s, spec.t_p, spec.t_a) for s in chunk)
        header = SAMPLES_HEADER.pack(
            SAMPLES_MAGIC, spec.t_p, spec.t_a, len(chunk),
            0 if spec.pose_mode is PoseMode.RELATIVE else 1,
            binascii.crc32(payload),
        )
        name = f"samples-{si // shard_size:05d}.bin"
        (out / name).write_bytes(header + payload)
        shards.append({"file": name, "n_records": len(chunk)})
    doc = {
        "schema": "mt-samples v1",
        "t_p": spec.t_p,
        "t_a": spec.t_a,
        "fps": spec.fps,
        "pose_mode": spec.pose_mode.value,
        "slowdown": spec.slowdown,
        "relative_frame_convention": RELATIVE_FRAME_CONVENTION,
        "row_layout": "position[3], rotation6d[6], joints[6]",
        "counts": {
            "human": sum(1 for s in samples if s.domain is Domain.HUMAN),
            "robot": sum(1 for s in samples if s.domain is Domain.ROBOT),
        },
        "n_samples": len(samples),
        "shards": shards,
    }
    (out / "index.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n",
                                    encoding="utf-8")
    return doc


def read_samples(samples_dir: str | Path) -> tuple[dict, list[TrainingSample]]:
    root = Path(samples_dir)
    doc = json.loads((root / "index.json").read_text(encoding="utf-8"))
    if doc.get("schema") != "mt-samples v1":
        raise ValueError(f"unsupported samples schema {doc.get('schema')!r}")
    pose_mode = PoseMode(doc["pose_mode"])
    t_p, t_a = doc["t_p"], doc["t_a"]
    samples = []
    for shard in doc["shards"]:
        blob = (root / shard["file"]).read_bytes()
        magic, h_tp, h_ta, n_records, mode_code, crc = SAMPLES_HEADER.unpack_from(blob)
        if magic != SAMPLES_MAGIC:
            raise ValueError(f"{shard['file']}: bad magic {magic!r}")
        if (h_tp, h_ta) != (t_p, t_a):
            raise ValueError(f"{shard['file']}: chunk shape disagrees with index")
        payload = blob[SAMPLES_HEADER.size:]
        if binascii.crc32(payload) != crc:
            raise ValueError(f"{shard['file']}: checksum failure")
        buf = memoryview(payload)
        off = 0
        for _ in range(n_records):
            sample, off = _unpack_record(buf, off, t_p, t_a, pose_mode)
            samples.append(sample)
        if off != len(payload):
            raise ValueError(f"{shard['file']}: trailing bytes after records")
    if len(samples) != doc["n_samples"]:
        raise ValueError("sample count disagrees with index")
    return doc, samples
