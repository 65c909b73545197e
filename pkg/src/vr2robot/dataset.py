"""Data model and bit-exact on-disk formats for recordings and datasets.

A dataset directory holds one subdirectory per episode plus an index::

    dataset/
      index.json                     # episode table, task table, domain counts
      episodes/<id>/meta.json        # id, domain, task, instruction, fps, provenance
      episodes/<id>/frames.bin       # MTEP1 binary frame rows
      episodes/<id>/images/...       # referenced image files

``frames.bin`` layout (little endian): 5-byte magic ``MTEP1``, u32 row stride
in float64 words (14, or 77 with raw keypoints), u64 row count, u32 CRC32 of
the payload, then rows of float64: timestamp, position[3], quat wxyz[4],
joints[6], optionally keypoints[63]. Numeric values round-trip bit exactly.

Raw recordings use a JSONL schema declared normative for this repo (the
original recorder's wire format is not published): one ``session.json`` plus
per-episode ``frames.jsonl`` with per-frame wrist pose, 21 hand keypoints
(human) or joint values (robot), timestamps, and image references.
"""

from __future__ import annotations

import binascii
import enum
import json
import shutil
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibration import CalibrationResult, apply_calibration
from .geometry import FrameTag, Pose, compose
from .kinematics import HandModel, default_hand_model
from .retarget import HumanHand, RetargetConfig, retarget_episode
from .validation import check_array, check_monotonic

EPISODE_MAGIC = b"MTEP1"
EPISODE_HEADER = struct.Struct("<5sIQI")  # magic, stride (f64 words), rows, crc32
STRIDE_BASE = 14          # timestamp, pos 3, quat 4, joints 6
STRIDE_WITH_KEYPOINTS = STRIDE_BASE + 63
N_JOINTS = 6
MAX_DROP_FRACTION = 0.20


class Domain(str, enum.Enum):
    HUMAN = "human"
    ROBOT = "robot"


@dataclass
class Frame:
    timestamp: float
    image_ref: str
    wrist_pose: Pose
    hand_joints: np.ndarray
    raw_keypoints: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.timestamp = float(self.timestamp)
        self.hand_joints = check_array(self.hand_joints, (N_JOINTS,), "hand joints")
        if self.raw_keypoints is not None:
            self.raw_keypoints = check_array(self.raw_keypoints, (21, 3), "raw keypoints")


@dataclass
class Episode:
    id: str
    domain: Domain
    task_id: str
    instruction: str
    scene_tag: str
    fps: float
    frames: list[Frame]
    provenance: dict = field(default_factory=dict)
    image_root: Path | None = None  # where image_refs resolve; not serialized

    def __post_init__(self) -> None:
        self.domain = Domain(self.domain)
        if self.fps <= 0:
            raise ValueError("fps must be > 0")
        if len(self.frames) < 2:
            raise ValueError(f"episode {self.id!r} needs at least 2 frames")
        check_monotonic([f.timestamp for f in self.frames], f"episode {self.id!r} timestamps")
        has_kp = [f.raw_keypoints is not None for f in self.frames]
        if any(has_kp) and not all(has_kp):
            raise ValueError(f"episode {self.id!r} mixes frames with and without keypoints")
        for f in self.frames:
            if f.wrist_pose.frame is not FrameTag.CAMERA:
                raise ValueError(
                    f"episode {self.id!r}: wrist poses must be camera-frame, got "
                    f"{f.wrist_pose.frame.value!r}"
                )

    @property
    def duration(self) -> float:
        return self.frames[-1].timestamp - self.frames[0].timestamp


@dataclass
class IndexEntry:
    id: str
    domain: Domain
    task_id: str
    n_frames: int
    path: str          # episode directory relative to the dataset root
    offset: int        # byte offset of the first row inside frames.bin


@dataclass
class DatasetIndex:
    episodes: list[IndexEntry]
    task_table: dict[str, list[str]]
    n_human: int
    n_robot: int

    def __post_init__(self) -> None:
        h = sum(1 for e in self.episodes if e.domain is Domain.HUMAN)
        r = sum(1 for e in self.episodes if e.domain is Domain.ROBOT)
        if (h, r) != (self.n_human, self.n_robot):
            raise ValueError(
                f"index counts ({self.n_human}, {self.n_robot}) disagree with episodes ({h}, {r})"
            )

    @staticmethod
    def from_episodes(episodes: list[Episode]) -> "DatasetIndex":
        ids = [ep.id for ep in episodes]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate episode ids: {dup}")
        entries, tasks = [], {}
        for ep in episodes:
            entries.append(
                IndexEntry(ep.id, ep.domain, ep.task_id, len(ep.frames),
                           f"episodes/{ep.id}", EPISODE_HEADER.size)
            )
            tasks.setdefault(ep.task_id, [])
            if ep.instruction not in tasks[ep.task_id]:
                tasks[ep.task_id].append(ep.instruction)
        h = sum(1 for e in entries if e.domain is Domain.HUMAN)
        r = sum(1 for e in entries if e.domain is Domain.ROBOT)
        return DatasetIndex(entries, tasks, h, r)


# ---------------------------------------------------------------------------
# frames.bin
# ---------------------------------------------------------------------------

def write_frames_bin(path: Path, frames: list[Frame]) -> None:
    with_kp = frames[0].raw_keypoints is not None
    stride = STRIDE_WITH_KEYPOINTS if with_kp else STRIDE_BASE
    rows = np.empty((len(frames), stride), dtype="<f8")
    for i, f in enumerate(frames):
        rows[i, 0] = f.timestamp
        rows[i, 1:4] = f.wrist_pose.position
        rows[i, 4:8] = f.wrist_pose.quat
        rows[i, 8:14] = f.hand_joints
        if with_kp:
            rows[i, 14:] = f.raw_keypoints.reshape(63)
    payload = rows.tobytes()
    header = EPISODE_HEADER.pack(EPISODE_MAGIC, stride, len(frames), binascii.crc32(payload))
    path.write_bytes(header + payload)


def read_frames_bin(path: Path, image_refs: list[str]) -> list[Frame]:
    blob = Path(path).read_bytes()
    if len(blob) < EPISODE_HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, stride, n_rows, crc = EPISODE_HEADER.unpack_from(blob)
    if magic != EPISODE_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {EPISODE_MAGIC!r}")
    if stride not in (STRIDE_BASE, STRIDE_WITH_KEYPOINTS):
        raise ValueError(f"{path}: unsupported row stride {stride}")
    payload = blob[EPISODE_HEADER.size:]
    expect = n_rows * stride * 8
    if len(payload) != expect:
        raise ValueError(f"{path}: truncated payload ({len(payload)} bytes, expected {expect})")
    if binascii.crc32(payload) != crc:
        raise ValueError(f"{path}: checksum failure")
    if len(image_refs) != n_rows:
        raise ValueError(f"{path}: {len(image_refs)} image refs for {n_rows} rows")
    rows = np.frombuffer(payload, dtype="<f8").reshape(n_rows, stride)
    frames = []
    for i in range(n_rows):
        kp = rows[i, 14:].reshape(21, 3).copy() if stride == STRIDE_WITH_KEYPOINTS else None
        frames.append(
            Frame(
                rows[i, 0],
                image_refs[i],
                Pose(rows[i, 1:4].copy(), rows[i, 4:8].copy(), FrameTag.CAMERA),
                rows[i, 8:14].copy(),
                kp,
            )
        )
    return frames


# ---------------------------------------------------------------------------
# dataset write / read
# ---------------------------------------------------------------------------

def _dump_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def write_dataset(episodes: list[Episode], out_dir: str | Path) -> DatasetIndex:
    """Serialize episodes under ``out_dir`` and return the written index."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = DatasetIndex.from_episodes(episodes)
    for ep in episodes:
        ep_dir = out / "episodes" / ep.id
        ep_dir.mkdir(parents=True, exist_ok=True)
        write_frames_bin(ep_dir / "frames.bin", ep.frames)
        meta = {
            "schema": "mt-episode v1",
            "id": ep.id,
            "domain": ep.domain.value,
            "task_id": ep.task_id,
            "instruction": ep.instruction,
            "scene_tag": ep.scene_tag,
            "fps": ep.fps,
            "provenance": ep.provenance,
            "image_refs": [f.image_ref for f in ep.frames],
        }
        _dump_json(ep_dir / "meta.json", meta)
        img_dir = ep_dir / "images"
        img_dir.mkdir(exist_ok=True)
        if ep.image_root is not None:
            for f in ep.frames:
                src = Path(ep.image_root) / f.image_ref
                dst = ep_dir / f.image_ref
                if src.resolve() != dst.resolve():
                    dst.parent.mkdir(parents=True, exist_ok=True)
                    shutil.copyfile(src, dst)
        for f in ep.frames:
            if not (ep_dir / f.image_ref).exists():
                raise FileNotFoundError(f"episode {ep.id!r}: missing image {f.image_ref}")
    _dump_json(out / "index.json", {
        "schema": "mt-dataset v1",
        "episodes": [
            {"id": e.id, "domain": e.domain.value, "task_id": e.task_id,
             "n_frames": e.n_frames, "path": e.path, "offset": e.offset}
            for e in index.episodes
        ],
        "task_table": index.task_table,
        "counts": {"human": index.n_human, "robot": index.n_robot},
    })
    return index


def read_index(dataset_dir: str | Path) -> DatasetIndex:
    doc = json.loads((Path(dataset_dir) / "index.json").read_text(encoding="utf-8"))
    if doc.get("schema") != "mt-dataset v1":
        raise ValueError(f"unsupported dataset schema {doc.get('schema')!r}")
    entries = [
        IndexEntry(e["id"], Domain(e["domain"]), e["task_id"], e["n_frames"], e["path"], e["offset"])
        for e in doc["episodes"]
    ]
    index = DatasetIndex(entries, doc["task_table"], doc["counts"]["human"], doc["counts"]["robot"])
    return index


class EpisodeLoader:
    """Lazy per-episode access for a dataset directory."""

    def __init__(self, root: Path, index: DatasetIndex):
        self.root = Path(root)
        self.index = index
        self._by_id = {e.id: e for e in index.episodes}

    def __len__(self) -> int:
        return len(self.index.episodes)

    def __iter__(self):
        for entry in self.index.episodes:
            yield self.load(entry.id)

    def load(self, episode_id: str) -> Episode:
        entry = self._by_id[episode_id]
        ep_dir = self.root / entry.path
        meta = json.loads((ep_dir / "meta.json").read_text(encoding="utf-8"))
        if meta.get("schema") != "mt-episode v1":
            raise ValueError(f"unsupported episode schema {meta.get('schema')!r}")
        frames = read_frames_bin(ep_dir / "frames.bin", meta["image_refs"])
        return Episode(
            meta["id"], Domain(meta["domain"]), meta["task_id"], meta["instruction"],
            meta["scene_tag"], meta["fps"], frames, meta["provenance"], image_root=ep_dir,
        )


def read_dataset(dataset_dir: str | Path) -> tuple[DatasetIndex, EpisodeLoader]:
    """Open a dataset: validates index consistency and referenced files."""
    root = Path(dataset_dir)
    index = read_index(root)
    for entry in index.episodes:
        ep_dir = root / entry.path
        for name in ("meta.json", "frames.bin"):
            if not (ep_dir / name).exists():
                raise FileNotFoundError(f"episode {entry.id!r}: missing {name}")
        meta = json.loads((ep_dir / "meta.json").read_text(encoding="utf-8"))
        if len(meta["image_refs"]) != entry.n_frames:
            raise ValueError(f"episode {entry.id!r}: index n_frames disagrees with meta")
        for ref in meta["image_refs"]:
            if not (ep_dir / ref).exists():
                raise FileNotFoundError(f"episode {entry.id!r}: missing image {ref}")
    return index, EpisodeLoader(root, index)


# ---------------------------------------------------------------------------
# raw-session ingestion
# ---------------------------------------------------------------------------

@dataclass
class IngestReport:
    accepted: list[str] = field(default_factory=list)
    rejected: dict[str, str] = field(default_factory=dict)
    dropped_frames: dict[str, int] = field(default_factory=dict)


@dataclass
class IngestResult:
    episodes: list[Episode]
    report: IngestReport


def _load_session_doc(session_dir: Path, schema: str) -> dict:
    doc_path = session_dir / "session.json"
    if not doc_path.exists():
        raise FileNotFoundError(f"{session_dir}: no session.json")
    doc = json.loads(doc_path.read_text(encoding="utf-8"))
    if doc.get("schema") != schema:
        raise ValueError(f"unsupported session schema {doc.get('schema')!r}, expected {schema!r}")
    return doc


def _read_jsonl(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line]


def ingest_human_raw(
    session_dir: str | Path,
    calibration: CalibrationResult,
    model: HandModel | None = None,
    retarget_cfg: RetargetConfig | None = None,
) -> IngestResult:
    """VR-frame human recordings -> camera-frame episodes with robot joints.

    Per frame: drop if hand tracking is missing or non-finite, transform the
    wrist pose and keypoints into the camera frame, then retarget keypoints to
    robot joint values (retargeting runs on the raw time grid; any slowdown
    interpolation happens later and works on joint values). Episodes losing
    more than 20% of their frames are rejected and reported.
    """
    if calibration is None:
        raise ValueError("human ingestion requires a calibration result")
    session_dir = Path(session_dir)
    doc = _load_session_doc(session_dir, "mt-human-session v1")
    model = model or default_hand_model()
    retarget_cfg = retarget_cfg or RetargetConfig()
    cal_id = _calibration_id(calibration)

    report = IngestReport()
    episodes = []
    for name in doc["episodes"]:
        ep_dir = session_dir / name
        records = _read_jsonl(ep_dir / "frames.jsonl")
        kept, dropped = [], 0
        for rec in records:
            kp = rec.get("keypoints")
            if kp is None or not np.all(np.isfinite(np.asarray(kp, dtype=np.float64))):
                dropped += 1
                continue
            kept.append(rec)
        report.dropped_frames[name] = dropped
        if not records or dropped / len(records) > MAX_DROP_FRACTION:
            report.rejected[name] = (
                f"dropped {dropped}/{len(records)} frames (> {MAX_DROP_FRACTION:.0%})"
            )
            continue
        if len(kept) < 2:
            report.rejected[name] = "fewer than 2 valid frames"
            continue

        wrists_vr = [
            Pose(r["wrist"]["position"], r["wrist"]["quat_wxyz"], FrameTag.VR) for r in kept
        ]
        kps_vr = np.asarray([r["keypoints"] for r in kept], dtype=np.float64)
        wrists_cam, kps_cam = apply_calibration(calibration, poses=wrists_vr, keypoints=kps_vr)

        hands = [HumanHand(kps_cam[i], wrists_cam[i]) for i in range(len(kept))]
        joint_results = retarget_episode(model, hands, retarget_cfg)

        frames = [
            Frame(
                rec["t"], rec["image"], wrists_cam[i],
                joint_results[i].joints.values, kps_cam[i],
            )
            for i, rec in enumerate(kept)
        ]
        episode = Episode(
            id=f"{session_dir.name}-{name}",
            domain=Domain.HUMAN,
            task_id=doc["task_id"],
            instruction=doc["instruction"],
            scene_tag=doc.get("scene_tag", ""),
            fps=float(doc["fps"]),
            frames=frames,
            provenance={
                "source_session": session_dir.name,
                "source_episode": name,
                "calibration_id": cal_id,
                "retarget_config": retarget_cfg.config_hash(),
                "ordering": "retarget-then-interpolate",
                "dropped_frames": dropped,
            },
            image_root=ep_dir,
        )
        episodes.append(episode)
        report.accepted.append(name)
    return IngestResult(episodes, report)


def ingest_robot_raw(session_dir: str | Path, extrinsic: Pose) -> IngestResult:
    """Teleoperation recordings: wrist poses re-expressed base -> camera frame."""
    if extrinsic is None:
        raise ValueError("robot ingestion requires the base->camera extrinsic")
    session_dir = Path(session_dir)
    doc = _load_session_doc(session_dir, "mt-robot-session v1")
    report = IngestReport()
    episodes = []
    for name in doc["episodes"]:
        ep_dir = session_dir / name
        records = _read_jsonl(ep_dir / "frames.jsonl")
        frames = []
        for rec in records:
            wrist_base = Pose(
                rec["wrist"]["position"], rec["wrist"]["quat_wxyz"], FrameTag.ROBOT_BASE
            )
            wrist_cam = compose(extrinsic, wrist_base)
            wrist_cam.frame = FrameTag.CAMERA
            frames.append(Frame(rec["t"], rec["image"], wrist_cam, rec["joints"]))
        episodes.append(
            Episode(
                id=f"{session_dir.name}-{name}",
                domain=Domain.ROBOT,
                task_id=doc["task_id"],
                instruction=doc["instruction"],
                scene_tag=doc.get("scene_tag", ""),
                fps=float(doc["fps"]),
                frames=frames,
                provenance={"source_session": session_dir.name, "source_episode": name},
                image_root=ep_dir,
            )
        )
        report.accepted.append(name)
    return IngestResult(episodes, report)


def _calibration_id(cal: CalibrationResult) -> str:
    import hashlib

    doc = json.dumps(
        {
            "t_cam": [list(map(float, cal.t_cam.position)), list(map(float, cal.t_cam.quat))],
            "t_vr": [list(map(float, cal.t_vr.position)), list(map(float, cal.t_vr.quat))],
        },
        sort_keys=True,
    )
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


def load_extrinsic(path: str | Path) -> Pose:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema") != "mt-extrinsic v1":
        raise ValueError(f"unsupported extrinsic schema {doc.get('schema')!r}")
    return Pose(doc["position"], doc["quat_wxyz"], FrameTag.CAMERA)
