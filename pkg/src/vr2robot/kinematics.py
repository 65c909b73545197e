"""Forward kinematics and Jacobians for a serial-chain robot hand.

The hand is described by a declarative ``mt-hand v1`` text file: one serial
chain per finger, each revolute joint driven by one of six actuated values
through a fixed coupling coefficient (underactuated distal joints use
coefficient 1.0 on the same actuated value as the proximal joint). The exact
published geometry of the target hardware is not available, so the bundled
model is a plausible 6-DoF approximation; all downstream math is
model-agnostic.

File grammar (UTF-8, '#' comments, whitespace-separated fields)::

    mt-hand v1
    hand <name>
    actuated <n>
    chain <name>
      base  px py pz  qw qx qy qz
      joint ax ay az  lo hi  px py pz  qw qx qy qz  dof <k> coeff <c>
      tip   px py pz  qw qx qy qz

``joint`` lines give the rotation axis (unit vector, chain-local), limits in
radians, the link offset applied after the rotation, and the actuated index
``k`` with coupling coefficient ``c > 0``. Every joint maps to exactly one
actuated value, which keeps actuated-space box limits exact.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Pose, quat_multiply, quat_rotate, quat_from_axis_angle, FrameTag
from .validation import check_array, check_unit

FORMAT_HEADER = "mt-hand v1"


@dataclass
class Joint:
    axis: np.ndarray          # unit, chain-local at the joint
    lo: float
    hi: float
    offset: Pose              # link transform applied after the rotation
    dof: int                  # actuated value index
    coeff: float              # joint angle = coeff * actuated value

    def __post_init__(self) -> None:
        self.axis = check_unit(self.axis, "joint axis")
        if not self.lo < self.hi:
            raise ValueError(f"joint limits must satisfy lo < hi, got [{self.lo}, {self.hi}]")
        if self.coeff <= 0:
            raise ValueError("coupling coefficient must be > 0")


@dataclass
class Chain:
    name: str
    base: Pose                # chain root in the wrist frame
    joints: list[Joint]
    tip: Pose                 # fingertip offset after the last link


@dataclass
class HandModel:
    name: str
    n_actuated: int
    chains: list[Chain]

    def __post_init__(self) -> None:
        used = {j.dof for c in self.chains for j in c.joints}
        if any(d < 0 or d >= self.n_actuated for d in used):
            raise ValueError("dof index outside actuated range")
        if used != set(range(self.n_actuated)):
            missing = sorted(set(range(self.n_actuated)) - used)
            raise ValueError(f"dof map must cover every actuated value, missing {missing}")
        lo = np.full(self.n_actuated, -np.inf)
        hi = np.full(self.n_actuated, np.inf)
        for c in self.chains:
            for j in c.joints:
                lo[j.dof] = max(lo[j.dof], j.lo / j.coeff)
                hi[j.dof] = min(hi[j.dof], j.hi / j.coeff)
        if np.any(lo >= hi):
            raise ValueError("empty actuated limit interval after coupling")
        self.actuated_lo = lo
        self.actuated_hi = hi

    @property
    def n_fingertips(self) -> int:
        return len(self.chains)

    def mid_range(self) -> np.ndarray:
        return 0.5 * (self.actuated_lo + self.actuated_hi)

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.actuated_lo, self.actuated_hi)


@dataclass
class JointState:
    """Actuated joint values in radians (six on the pipeline's robot hand;
    the dataset layer enforces that count at serialization time)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = check_array(self.values, name="joint values").reshape(-1)


def _check_dof(model: HandModel, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q.values if isinstance(q, JointState) else q, dtype=np.float64).reshape(-1)
    if q.shape[0] != model.n_actuated:
        raise ValueError(f"model expects {model.n_actuated} actuated values, got {q.shape[0]}")
    return q


def forward_kinematics(model: HandModel, q: JointState | np.ndarray) -> np.ndarray:
    """Fingertip positions, one row per chain, in the wrist frame (meters)."""
    return fk_with_jacobian(model, q, want_jacobian=False)[0]


def fingertip_jacobian(model: HandModel, q: JointState | np.ndarray) -> np.ndarray:
    """Analytic d(fingertips)/d(actuated values), shape (3 * n_fingertips, n_actuated)."""
    return fk_with_jacobian(model, q)[1]


def fk_with_jacobian(
    model: HandModel, q: JointState | np.ndarray, want_jacobian: bool = True
) -> tuple[np.ndarray, np.ndarray | None]:
    """One pass computing fingertip positions and, optionally, the Jacobian.

    Revolute-joint geometric Jacobian: a column gets coeff * axis x (tip -
    joint origin) for every joint the actuated value drives.
    """
    q = _check_dof(model, q)
    tips = np.zeros((model.n_fingertips, 3))
    jac = np.zeros((3 * model.n_fingertips, model.n_actuated)) if want_jacobian else None
    for ci, chain in enumerate(model.chains):
        pos = chain.base.position.copy()
        rot = chain.base.quat.copy()
        axes = []  # (world axis, world origin, dof, coeff) at each joint
        for j in chain.joints:
            world_axis = quat_rotate(rot, j.axis)
            if want_jacobian:
                axes.append((world_axis, pos.copy(), j.dof, j.coeff))
            rot = quat_multiply(rot, quat_from_axis_angle(j.axis, j.coeff * q[j.dof]))
            pos = pos + quat_rotate(rot, j.offset.position)
            rot = quat_multiply(rot, j.offset.quat)
        tip = pos + quat_rotate(rot, chain.tip.position)
        tips[ci] = tip
        if want_jacobian:
            for world_axis, origin, dof, coeff in axes:
                jac[3 * ci : 3 * ci + 3, dof] += coeff * np.cross(world_axis, tip - origin)
    return tips, jac


# ---------------------------------------------------------------------------
# model file parsing
# ---------------------------------------------------------------------------

def _parse_pose(fields: list[str], what: str) -> Pose:
    if len(fields) != 7:
        raise ValueError(f"{what}: expected 7 numbers (px py pz qw qx qy qz), got {len(fields)}")
    vals = [float(f) for f in fields]
    return Pose(vals[:3], vals[3:], FrameTag.WRIST)


def parse_hand_model(text: str) -> HandModel:
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines or lines[0] != FORMAT_HEADER:
        got = lines[0] if lines else "<empty>"
        raise ValueError(f"unsupported hand model header {got!r}, expected {FORMAT_HEADER!r}")

    name = "hand"
    n_actuated = None
    chains: list[Chain] = []
    cur_name = None
    cur_base: Pose | None = None
    cur_joints: list[Joint] = []
    cur_tip: Pose | None = None

    def flush() -> None:
        nonlocal cur_name, cur_base, cur_joints, cur_tip
        if cur_name is None:
            return
        if cur_base is None or cur_tip is None:
            raise ValueError(f"chain {cur_name!r} missing base or tip line")
        chains.append(Chain(cur_name, cur_base, cur_joints, cur_tip))
        cur_name, cur_base, cur_joints, cur_tip = None, None, [], None

    for ln in lines[1:]:
        fields = ln.split()
        key = fields[0]
        if key == "hand":
            name = " ".join(fields[1:])
        elif key == "actuated":
            n_actuated = int(fields[1])
        elif key == "chain":
            flush()
            cur_name = " ".join(fields[1:])
        elif key == "base":
            cur_base = _parse_pose(fields[1:], f"chain {cur_name!r} base")
        elif key == "tip":
            cur_tip = _parse_pose(fields[1:], f"chain {cur_name!r} tip")
        elif key == "joint":
            if len(fields) != 1 + 3 + 2 + 7 + 4:
                raise ValueError(f"malformed joint line: {ln!r}")
            axis = [float(v) for v in fields[1:4]]
            lo, hi = float(fields[4]), float(fields[5])
            offset = _parse_pose(fields[6:13], "joint offset")
            if fields[13] != "dof" or fields[15] != "coeff":
                raise ValueError(f"malformed joint line (expected 'dof k coeff c'): {ln!r}")
            cur_joints.append(Joint(axis, lo, hi, offset, int(fields[14]), float(fields[16])))
        else:
            raise ValueError(f"unknown hand model directive {key!r}")
    flush()

    if n_actuated is None:
        raise ValueError("hand model missing 'actuated' line")
    return HandModel(name, n_actuated, chains)


def load_hand_model(path: str | Path) -> HandModel:
    return parse_hand_model(Path(path).read_text(encoding="utf-8"))


def default_hand_model() -> HandModel:
    """The bundled 6-DoF five-finger approximation."""
    text = (
        importlib.resources.files("vr2robot.resources")
        .joinpath("hand_6dof.txt")
        .read_text(encoding="utf-8")
    )
    return parse_hand_model(text)
