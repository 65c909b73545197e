"""Chain calibration between the VR headset and the egocentric RGB camera.

Two poses are solved against a planar target placed on the desk: the camera
pose from pixel detections of the board points (homography initialization,
then damped Gauss-Newton on reprojection error), and the VR-device pose from
the headset's reading of an anchor block at the board origin, with the
anchor height snapped onto a plane fitted to the desktop depth points. Their
composition ``inverse(t_cam) * t_vr`` maps VR-frame hand data into the
camera frame, which is the unified frame for the rest of the pipeline.

The module consumes (point id, pixel) correspondences from a session file;
marker detection in images is out of scope by design.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import FrameTag, Pose, compose, inverse, quat_from_matrix, quat_to_matrix
from .validation import check_array, check_frame

ANCHOR_PLANE_WARN_M = 0.05
RANSAC_THRESHOLD_M = 0.005
RANSAC_ITERS = 200
GN_STEP_TOL = 1e-10
GN_MAX_ITERS = 100


@dataclass
class PlanarTarget:
    """Board geometry (points on the z=0 plane) plus pinhole intrinsics."""

    points_3d: np.ndarray          # (n, 3), z exactly 0
    fx: float
    fy: float
    cx: float
    cy: float
    point_ids: np.ndarray | None = None  # defaults to 0..n-1

    def __post_init__(self) -> None:
        self.points_3d = check_array(self.points_3d, name="board points").reshape(-1, 3)
        if self.points_3d.shape[0] < 4:
            raise ValueError("planar target needs at least 4 points")
        if np.any(self.points_3d[:, 2] != 0.0):
            raise ValueError("board points must lie exactly on the z=0 plane")
        if self.point_ids is None:
            self.point_ids = np.arange(self.points_3d.shape[0])
        else:
            self.point_ids = np.asarray(self.point_ids, dtype=np.int64)
        d = self.points_3d - self.points_3d.mean(axis=0)
        if np.linalg.matrix_rank(d[:, :2], tol=1e-10) < 2:
            raise ValueError("board points are collinear")

    def by_id(self, pid: int) -> np.ndarray:
        idx = np.nonzero(self.point_ids == pid)[0]
        if idx.size != 1:
            raise ValueError(f"unknown or duplicate board point id {pid}")
        return self.points_3d[idx[0]]


@dataclass
class CalibrationResult:
    t_cam: Pose                    # camera pose in the chessboard frame
    t_vr: Pose                     # VR device pose in the chessboard frame
    vr_to_cam: Pose                # inverse(t_cam) * t_vr
    residual_px: float
    anchor_plane_distance_m: float = 0.0
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        expect = compose(inverse(self.t_cam), self.t_vr)
        if (
            np.max(np.abs(expect.position - self.vr_to_cam.position)) > 1e-12
            or np.max(np.abs(expect.quat - self.vr_to_cam.quat)) > 1e-12
        ):
            raise ValueError("vr_to_cam is not the composition of t_cam^-1 and t_vr")

    @staticmethod
    def assemble(t_cam: Pose, t_vr: Pose, residual_px: float, **kw) -> "CalibrationResult":
        return CalibrationResult(t_cam, t_vr, compose(inverse(t_cam), t_vr), residual_px, **kw)


def _project(rc: np.ndarray, tc: np.ndarray, pts: np.ndarray, target: PlanarTarget) -> np.ndarray:
    """Pinhole projection of board points through world->camera (R, t)."""
    cam = pts @ rc.T + tc
    z = cam[:, 2]
    if np.any(z <= 1e-9):
        raise ValueError("degenerate configuration: board points at or behind zero depth")
    u = target.fx * cam[:, 0] / z + target.cx
    v = target.fy * cam[:, 1] / z + target.cy
    return np.stack([u, v], axis=1)


def _homography_init(xy: np.ndarray, px_norm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """DLT homography from board (x, y) to normalized image coords, decomposed
    into an initial world->camera rotation and translation."""
    n = xy.shape[0]

    def normalizer(p):
        c = p.mean(axis=0)
        s = math.sqrt(2.0) / max(np.mean(np.linalg.norm(p - c, axis=1)), 1e-12)
        m = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1]])
        return m

    t1, t2 = normalizer(xy), normalizer(px_norm)
    a = []
    for i in range(n):
        x, y, _ = t1 @ [xy[i, 0], xy[i, 1], 1.0]
        u, v, _ = t2 @ [px_norm[i, 0], px_norm[i, 1], 1.0]
        a.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        a.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    _, s, vt = np.linalg.svd(np.asarray(a))
    if s[-2] < 1e-12:
        raise ValueError("degenerate configuration: homography rank deficient")
    h = np.linalg.inv(t2) @ vt[-1].reshape(3, 3) @ t1
    # scale so the first two columns are rotation columns; enforce cheirality
    # via positive depth of the board centroid
    norm12 = (np.linalg.norm(h[:, 0]) + np.linalg.norm(h[:, 1])) / 2.0
    if norm12 < 1e-12:
        raise ValueError("degenerate configuration: homography scale underflow")
    h = h / norm12
    centroid = np.append(xy.mean(axis=0), 1.0)
    if (h @ centroid)[2] < 0:
        h = -h
    r1 = h[:, 0] / np.linalg.norm(h[:, 0])
    r2 = h[:, 1] - (r1 @ h[:, 1]) * r1
    r2 = r2 / np.linalg.norm(r2)
    r = np.stack([r1, r2, np.cross(r1, r2)], axis=1)
    # nearest proper rotation
    u_, _, vt_ = np.linalg.svd(r)
    r = u_ @ np.diag([1.0, 1.0, np.linalg.det(u_ @ vt_)]) @ vt_
    return r, h[:, 2]


def _so3_exp(w: np.ndarray) -> np.ndarray:
    th = float(np.linalg.norm(w))
    k = np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])
    if th < 1e-12:
        return np.eye(3) + k + 0.5 * (k @ k)
    return np.eye(3) + (math.sin(th) / th) * k + ((1 - math.cos(th)) / th**2) * (k @ k)


def estimate_planar_pose(
    target: PlanarTarget, detections: list[tuple[int, np.ndarray]]
) -> tuple[Pose, float]:
    """Camera pose in the board frame from (point id, pixel) matches.

    Returns (pose, reprojection RMS in pixels). Raises on degenerate inputs:
    fewer than 4 points, collinear points, or points at non-positive depth.
    """
    if len(detections) < 4:
        raise ValueError("need at least 4 detections")
    pts = np.stack([target.by_id(pid) for pid, _ in detections])
    px = np.stack([check_array(p, (2,), "pixel") for _, p in detections])
    d = pts - pts.mean(axis=0)
    if np.linalg.matrix_rank(d[:, :2], tol=1e-10) < 2:
        raise ValueError("degenerate configuration: detected points are collinear")

    px_norm = np.stack([(px[:, 0] - target.cx) / target.fx, (px[:, 1] - target.cy) / target.fy], axis=1)
    rc, tc = _homography_init(pts[:, :2], px_norm)

    def residual(rc, tc):
        return (_project(rc, tc, pts, target) - px).ravel()

    def cost(rc, tc):
        r = residual(rc, tc)
        return float(r @ r)

    # damped Gauss-Newton on (rotation left-increment, translation)
    lam = 1e-6
    c = cost(rc, tc)
    for _ in range(GN_MAX_ITERS):
        cam = pts @ rc.T + tc
        z = cam[:, 2]
        r = residual(rc, tc)
        jac = np.zeros((2 * len(pts), 6))
        for i, (xc, yc, zc) in enumerate(cam):
            # d(pixel)/d(camera point)
            dpi = np.array(
                [[target.fx / zc, 0.0, -target.fx * xc / zc**2],
                 [0.0, target.fy / zc, -target.fy * yc / zc**2]]
            )
            dxw = np.array([[0, zc, -yc], [-zc, 0, xc], [yc, -xc, 0]])  # -[cam]x
            jac[2 * i : 2 * i + 2, :3] = dpi @ dxw
            jac[2 * i : 2 * i + 2, 3:] = dpi
        jtj = jac.T @ jac
        g = jac.T @ r
        stepped = False
        delta = np.zeros(6)
        for _ in range(20):
            try:
                delta = np.linalg.solve(jtj + lam * np.eye(6), -g)
            except np.linalg.LinAlgError:
                lam = min(lam * 10.0, 1e6)
                continue
            rc_new = _so3_exp(delta[:3]) @ rc
            tc_new = tc + delta[3:]
            try:
                c_new = cost(rc_new, tc_new)
            except ValueError:
                c_new = math.inf
            if c_new <= c:
                rc, tc, c = rc_new, tc_new, c_new
                lam = max(lam * 0.5, 1e-12)
                stepped = True
                break
            lam = min(lam * 10.0, 1e6)
        if not stepped or float(np.linalg.norm(delta)) < GN_STEP_TOL:
            break

    rms = math.sqrt(c / len(pts))
    # returned pose is the camera expressed in the board frame
    r_wc = rc.T
    return Pose(-r_wc @ tc, quat_from_matrix(r_wc), FrameTag.CHESSBOARD), rms


def fit_plane(
    points: np.ndarray, ransac: bool = False, seed: int = 0
) -> tuple[np.ndarray, float, float]:
    """Least-squares plane n.x = offset via the covariance smallest eigenvector.

    With ``ransac`` set, a seeded 200-iteration RANSAC (5 mm inlier band)
    guards against outliers before the final least-squares refit. The normal
    is oriented into the +z hemisphere. Returns (normal, offset, inlier RMS).
    """
    pts = check_array(points, name="plane points").reshape(-1, 3)
    if pts.shape[0] < 3:
        raise ValueError("plane fit needs at least 3 points")

    def ls_fit(p):
        c = p.mean(axis=0)
        d = p - c
        cov = d.T @ d
        w, v = np.linalg.eigh(cov)
        if w[1] < 1e-18 * max(1.0, w[2]):
            raise ValueError("rank-deficient point set for plane fit")
        n = v[:, 0]
        if n[2] < 0 or (n[2] == 0 and (n[0] < 0 or (n[0] == 0 and n[1] < 0))):
            n = -n
        return n, float(n @ c)

    if not ransac:
        n, off = ls_fit(pts)
        rms = math.sqrt(float(np.mean((pts @ n - off) ** 2)))
        return n, off, rms

    rng = np.random.default_rng(seed)
    best_mask = None
    best_count = -1
    for _ in range(RANSAC_ITERS):
        idx = rng.choice(pts.shape[0], size=3, replace=False)
        tri = pts[idx]
        n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
        nn = np.linalg.norm(n)
        if nn < 1e-12:
            continue
        n = n / nn
        off = float(n @ tri[0])
        mask = np.abs(pts @ n - off) < RANSAC_THRESHOLD_M
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask = count, mask
    if best_mask is None or best_count < 3:
        raise ValueError("RANSAC failed to find a plane consensus")
    n, off = ls_fit(pts[best_mask])
    rms = math.sqrt(float(np.mean((pts[best_mask] @ n - off) ** 2)))
    return n, off, rms


def solve_vr_anchor(
    anchor_in_vr: Pose, plane: tuple[np.ndarray, float, float]
) -> tuple[Pose, float, list[str]]:
    """VR-device pose in the board frame from the headset's anchor reading.

    The anchor sits at the board origin; the user only slides it in-plane, so
    its height is snapped onto the fitted desktop plane before inverting the
    reading. Returns (t_vr, anchor-to-plane distance, warnings).
    """
    check_frame(anchor_in_vr, FrameTag.VR, "anchor reading")
    normal, offset = np.asarray(plane[0], dtype=np.float64), float(plane[1])
    dist = float(normal @ anchor_in_vr.position - offset)
    warnings = []
    if abs(dist) > ANCHOR_PLANE_WARN_M:
        warnings.append(
            f"anchor reading {abs(dist) * 100:.1f} cm off the fitted desktop plane "
            f"(threshold {ANCHOR_PLANE_WARN_M * 100:.0f} cm)"
        )
    projected = Pose(anchor_in_vr.position - dist * normal, anchor_in_vr.quat, FrameTag.VR)
    t_vr = inverse(projected)
    t_vr.frame = FrameTag.CHESSBOARD
    return t_vr, abs(dist), warnings


def apply_calibration(cal: CalibrationResult, poses=None, keypoints=None):
    """Re-express VR-frame poses / 3-D keypoints in the camera frame.

    ``poses`` is an iterable of VR-frame Pose (each becomes
    ``compose(vr_to_cam, p)`` tagged camera); ``keypoints`` an (..., 3) array
    of points. Either output (or both as a tuple) is returned depending on
    what was passed.
    """
    out_poses = None
    if poses is not None:
        out_poses = []
        for p in poses:
            check_frame(p, FrameTag.VR, "pose")
            q = compose(cal.vr_to_cam, p)
            q.frame = FrameTag.CAMERA
            out_poses.append(q)
    out_pts = None
    if keypoints is not None:
        pts = np.asarray(keypoints, dtype=np.float64)
        out_pts = cal.vr_to_cam.apply(pts.reshape(-1, 3)).reshape(pts.shape)
    if out_poses is not None and out_pts is not None:
        return out_poses, out_pts
    return out_poses if out_poses is not None else out_pts


# ---------------------------------------------------------------------------
# session / result files
# ---------------------------------------------------------------------------

def _pose_to_json(p: Pose) -> dict:
    return {
        "position": [float(v) for v in p.position],
        "quat_wxyz": [float(v) for v in p.quat],
        "frame": p.frame.value,
    }


def _pose_from_json(d: dict) -> Pose:
    return Pose(d["position"], d["quat_wxyz"], FrameTag(d["frame"]))


def calibrate_session(session: dict) -> CalibrationResult:
    """Run the full chain on one parsed session document."""
    intr = session["intrinsics"]
    target = PlanarTarget(
        np.asarray(session["board_points"], dtype=np.float64),
        intr["fx"], intr["fy"], intr["cx"], intr["cy"],
        point_ids=session.get("board_point_ids"),
    )
    detections = [(int(pid), np.asarray(uv, dtype=np.float64)) for pid, uv in session["detections"]]
    t_cam, rms = estimate_planar_pose(target, detections)

    plane = fit_plane(
        np.asarray(session["plane_points"], dtype=np.float64),
        ransac=bool(session.get("plane_ransac", False)),
        seed=int(session.get("plane_seed", 0)),
    )
    anchor = _pose_from_json(session["anchor_reading"])
    t_vr, dist, warnings = solve_vr_anchor(anchor, plane)
    return CalibrationResult.assemble(
        t_cam, t_vr, rms, anchor_plane_distance_m=dist, warnings=warnings
    )


def load_session(path: str | Path) -> dict:
    session = json.loads(Path(path).read_text(encoding="utf-8"))
    schema = session.get("schema")
    if schema != "mt-calib-session v1":
        raise ValueError(f"unsupported calibration session schema {schema!r}")
    return session


def save_result(result: CalibrationResult, path: str | Path) -> None:
    doc = {
        "schema": "mt-calib-result v1",
        "t_cam": _pose_to_json(result.t_cam),
        "t_vr": _pose_to_json(result.t_vr),
        "vr_to_cam": _pose_to_json(result.vr_to_cam),
        "residual_px": result.residual_px,
        "anchor_plane_distance_m": result.anchor_plane_distance_m,
        "warnings": result.warnings,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_result(path: str | Path) -> CalibrationResult:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema") != "mt-calib-result v1":
        raise ValueError(f"unsupported calibration result schema {doc.get('schema')!r}")
    return CalibrationResult(
        _pose_from_json(doc["t_cam"]),
        _pose_from_json(doc["t_vr"]),
        _pose_from_json(doc["vr_to_cam"]),
        float(doc["residual_px"]),
        float(doc["anchor_plane_distance_m"]),
        list(doc["warnings"]),
    )
