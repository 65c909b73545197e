"""Optimization-based retargeting of human hand keypoints to robot joint values.

Per frame we match scaled wrist-to-fingertip task vectors of the human hand
against the robot hand's forward kinematics, with a smoothness anchor on the
previous frame's solution:

    minimize_q  sum_i w_i ||s * v_i(human) - v_i(FK(q))||^2 + beta * ||q - q_prev||^2

solved by damped Gauss-Newton (Levenberg-Marquardt) with projection onto the
actuated joint box. Episodes are retargeted sequentially so each frame warm
starts from the last; frame 0 anchors at mid-range joint values.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator

from .geometry import Pose, inverse
from .kinematics import HandModel, JointState, default_hand_model, fk_with_jacobian
from .validation import check_array

# wrist + 4 landmarks per finger, thumb to pinky; tips at 4, 8, 12, 16, 20
N_KEYPOINTS = 21
FINGERTIP_KEYPOINTS = (4, 8, 12, 16, 20)
MAX_HAND_SPAN_M = 0.30

DAMPING_MIN = 1e-7
DAMPING_MAX = 1e3


@dataclass
class HumanHand:
    """One frame of tracked hand data: 21 keypoints plus the wrist pose.

    Keypoints are stored in the same frame the wrist pose is expressed in
    (camera frame after calibration); ``local_keypoints`` re-expresses them
    in the wrist frame for retargeting.
    """

    keypoints: np.ndarray
    wrist_pose: Pose

    def __post_init__(self) -> None:
        self.keypoints = check_array(self.keypoints, (N_KEYPOINTS, 3), "hand keypoints")
        span = np.linalg.norm(self.keypoints - self.keypoints[0], axis=1).max()
        if span >= MAX_HAND_SPAN_M:
            raise ValueError(
                f"fingertip-to-wrist distance {span:.3f} m exceeds {MAX_HAND_SPAN_M} m sanity bound"
            )

    def local_keypoints(self) -> np.ndarray:
        return inverse(self.wrist_pose).apply(self.keypoints)


@dataclass
class RetargetConfig:
    # (human keypoint index pair, robot fingertip index)
    task_vectors: tuple = tuple(((0, tip), i) for i, tip in enumerate(FINGERTIP_KEYPOINTS))
    scale: float = 1.0
    smoothness: float = 0.05
    weights: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)
    max_iters: int = 100
    step_tol: float = 1e-8
    damping_init: float = 1e-3

    def __post_init__(self) -> None:
        if self.scale <= 0:
            raise ValueError("scale must be > 0")
        if self.smoothness < 0:
            raise ValueError("smoothness must be >= 0")
        if len(self.weights) != len(self.task_vectors):
            raise ValueError("one weight per task vector required")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be >= 0")

    def config_hash(self) -> str:
        doc = {
            "task_vectors": [[list(pair), tip] for pair, tip in self.task_vectors],
            "scale": self.scale,
            "smoothness": self.smoothness,
            "weights": list(self.weights),
            "max_iters": self.max_iters,
            "step_tol": self.step_tol,
            "damping_init": self.damping_init,
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class RetargetFrameResult:
    joints: JointState
    converged: bool
    objective: float
    iterations: int
    objective_trace: list[float] = field(default_factory=list)


def _human_vectors(kps_local: np.ndarray, cfg: RetargetConfig) -> np.ndarray:
    return np.stack([kps_local[j] - kps_local[i] for (i, j), _ in cfg.task_vectors])


def retarget_objective(
    model: HandModel,
    kps_local: np.ndarray,
    q: np.ndarray,
    q_prev: np.ndarray,
    cfg: RetargetConfig,
) -> float:
    """The retargeting cost at q; exposed for tests and monotonicity checks."""
    tips, _ = fk_with_jacobian(model, q, want_jacobian=False)
    vh = cfg.scale * _human_vectors(kps_local, cfg)
    obj = 0.0
    for k, (_, tip_idx) in enumerate(cfg.task_vectors):
        d = vh[k] - tips[tip_idx]
        obj += cfg.weights[k] * float(d @ d)
    dq = q - q_prev
    return obj + cfg.smoothness * float(dq @ dq)


def retarget_frame(
    model: HandModel,
    kps_local: np.ndarray,
    q_prev: JointState | np.ndarray,
    cfg: RetargetConfig | None = None,
) -> RetargetFrameResult:
    """Solve one frame. ``kps_local`` are the 21 keypoints in the wrist frame.

    Deterministic: fixed iteration order, no randomness. Returns the best
    iterate with ``converged=False`` if the iteration budget runs out.
    """
    cfg = cfg or RetargetConfig()
    kps_local = check_array(kps_local, (N_KEYPOINTS, 3), "hand keypoints")
    q_prev = np.asarray(
        q_prev.values if isinstance(q_prev, JointState) else q_prev, dtype=np.float64
    ).reshape(model.n_actuated)
    vh = cfg.scale * _human_vectors(kps_local, cfg)
    sw = np.sqrt(np.asarray(cfg.weights, dtype=np.float64))
    sb = np.sqrt(cfg.smoothness)
    n = model.n_actuated
    n_res = 3 * len(cfg.task_vectors) + n

    def residual_jacobian(q):
        tips, jac_fk = fk_with_jacobian(model, q)
        r = np.empty(n_res)
        jac = np.zeros((n_res, n))
        for k, (_, tip_idx) in enumerate(cfg.task_vectors):
            r[3 * k : 3 * k + 3] = sw[k] * (vh[k] - tips[tip_idx])
            jac[3 * k : 3 * k + 3] = -sw[k] * jac_fk[3 * tip_idx : 3 * tip_idx + 3]
        r[-n:] = sb * (q - q_prev)
        jac[-n:, :] = sb * np.eye(n)
        return r, jac

    q = model.clamp(q_prev.copy())
    r, jac = residual_jacobian(q)
    obj = float(r @ r)
    trace = [obj]
    lam = cfg.damping_init
    converged = False
    iters = 0
    for iters in range(1, cfg.max_iters + 1):
        jtj = jac.T @ jac
        g = jac.T @ r
        accepted = False
        for _ in range(25):
            delta = np.linalg.solve(jtj + lam * np.eye(n), -g)
            q_cand = model.clamp(q + delta)
            r_cand, jac_cand = residual_jacobian(q_cand)
            obj_cand = float(r_cand @ r_cand)
            if obj_cand <= obj:
                step = float(np.linalg.norm(q_cand - q))
                q, r, jac, obj = q_cand, r_cand, jac_cand, obj_cand
                lam = max(lam * 0.5, DAMPING_MIN)
                accepted = True
                trace.append(obj)
                break
            lam = lam * 2.0
            if lam > DAMPING_MAX:
                break
        if not accepted:
            # no descent direction even at max damping: local minimum (often
            # the joint-limit boundary)
            converged = True
            break
        if step < cfg.step_tol:
            converged = True
            break
        lam = min(lam, DAMPING_MAX)
    return RetargetFrameResult(JointState(q), converged, obj, iters, trace)


def retarget_episode(
    model: HandModel,
    hands: list[HumanHand],
    cfg: RetargetConfig | None = None,
) -> list[RetargetFrameResult]:
    """Sequential retargeting with warm starts.

    Frame 0 starts from mid-range joint values with the smoothness anchor
    disabled (an anchored first frame would bias every solution toward
    mid-range and break the constant-input fixed point); later frames anchor
    at the previous frame's solution.
    """
    if not hands:
        raise ValueError("empty hand sequence")
    cfg = cfg or RetargetConfig()
    first_cfg = replace(cfg, smoothness=0.0)
    q_prev = model.mid_range()
    out = []
    for idx, hand in enumerate(hands):
        try:
            res = retarget_frame(model, hand.local_keypoints(), q_prev, cfg if idx else first_cfg)
        except ValueError as e:
            raise ValueError(f"frame {idx}: {e}") from e
        out.append(res)
        q_prev = res.joints.values
    return out


class HandRetargeter(BaseEstimator):
    """Estimator-style wrapper: transform sequences of HumanHand into joint values.

    Stateless between calls apart from its parameters; fit is a no-op
    provided for pipeline compatibility.
    """

    def __init__(
        self,
        model: HandModel | None = None,
        scale: float = 1.0,
        smoothness: float = 0.05,
        max_iters: int = 100,
        step_tol: float = 1e-8,
        damping_init: float = 1e-3,
    ):
        self.model = model
        self.scale = scale
        self.smoothness = smoothness
        self.max_iters = max_iters
        self.step_tol = step_tol
        self.damping_init = damping_init

    def _config(self) -> RetargetConfig:
        return RetargetConfig(
            scale=self.scale,
            smoothness=self.smoothness,
            max_iters=self.max_iters,
            step_tol=self.step_tol,
            damping_init=self.damping_init,
        )

    def _model(self) -> HandModel:
        return self.model if self.model is not None else default_hand_model()

    def fit(self, X=None, y=None):
        return self

    def transform(self, X: list[HumanHand]) -> np.ndarray:
        """Joint values for a hand sequence, shape (n_frames, n_actuated)."""
        results = retarget_episode(self._model(), X, self._config())
        return np.stack([r.joints.values for r in results])
