"""Analytic surrogate robots and the three demonstration task families.

The manipulator is a planar serial arm driven in joint space; the mobile robot
is a pose-controlled differential drive whose state is ``(x, y, heading)``.
Task families:

``same_path``
    Both robots trace one corridor path with a cosine bump around an obstacle.
``divergent_path``
    Cup retrieval. The arm hooks the cup from behind and pulls it toward its
    base; the mobile robot drives around behind the cup and pushes it. Both
    deliver the cup to the same goal along different paths.
``radial_push``
    The cup stays put and is moved toward goals at different angles. The arm
    shares one approach for every goal; the mobile approach arc depends on it.

All geometry (coordinates, ranges, curve shapes) is a surrogate chosen for a
desk-scale workspace. Positions are meters, angles radians unless noted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cnmp import ChannelNorm, DemonstrationPair, Trajectory, fit_normalization

ARM = "arm"
MOBILE = "mobile"
ROBOTS = (ARM, MOBILE)

FAMILIES = ("same_path", "divergent_path", "radial_push")
FAMILY_RANGES = {
    "same_path": (0.2, 0.9),  # bump height, m
    "divergent_path": (-0.8, 0.8),  # cup x, m
    "radial_push": (-75.0, 75.0),  # goal angle, deg
}
DEFAULT_T = 128
REACH_MARGIN = 0.05
MAX_JOINT_STEP = 0.2
MAX_MOBILE_STEP = 0.1


class IKError(ValueError):
    """Inverse kinematics failed at path point ``index``."""

    def __init__(self, message: str, index: int):
        super().__init__(f"{message} (path index {index})")
        self.index = index


class UnreachableError(IKError):
    pass


def wrap_angle(a):
    """Wrap angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=np.float64), 2.0 * np.pi)


@dataclass(frozen=True)
class MobilePose:
    x: float
    y: float
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "heading", float(wrap_angle(self.heading)))


@dataclass(frozen=True)
class ArmSpec:
    link_lengths: tuple[float, ...] = (1.0, 0.8, 0.5)
    base_position: tuple[float, float] = (0.0, 0.0)
    joint_limits: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if len(self.link_lengths) == 0 or any(l <= 0 for l in self.link_lengths):
            raise ValueError("link lengths must be positive")
        if self.joint_limits is None:
            object.__setattr__(self, "joint_limits", tuple((-np.pi, np.pi) for _ in self.link_lengths))
        if len(self.joint_limits) != len(self.link_lengths):
            raise ValueError("need one joint limit pair per link")

    @property
    def n_joints(self) -> int:
        return len(self.link_lengths)

    @property
    def reach(self) -> tuple[float, float]:
        """Inner and outer radius of the reachable annulus."""
        lengths = np.asarray(self.link_lengths)
        outer = float(lengths.sum())
        return max(0.0, 2.0 * float(lengths.max()) - outer), outer

    def to_dict(self) -> dict:
        return {
            "link_lengths": list(self.link_lengths),
            "base_position": list(self.base_position),
            "joint_limits": [list(lim) for lim in self.joint_limits],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArmSpec":
        return cls(tuple(d["link_lengths"]), tuple(d["base_position"]),
                   tuple(tuple(lim) for lim in d["joint_limits"]))


@dataclass
class ArmConfig:
    joint_angles: np.ndarray

    def __post_init__(self):
        self.joint_angles = np.asarray(self.joint_angles, dtype=np.float64)


DEFAULT_ARM = ArmSpec()
# elbow-down posture the demonstrations start from; keeps the base joint clear of its limits
HOME_CONFIG = np.array([0.9, 0.9, 0.9])


def fk_planar(spec: ArmSpec, config) -> np.ndarray:
    """End-effector position for one configuration ``(d,)`` or a batch ``(T, d)``."""
    q = np.asarray(getattr(config, "joint_angles", config), dtype=np.float64)
    if q.shape[-1] != spec.n_joints:
        raise ValueError(f"expected {spec.n_joints} joint angles, got {q.shape[-1]}")
    phi = np.cumsum(q, axis=-1)
    lengths = np.asarray(spec.link_lengths)
    x = spec.base_position[0] + np.sum(lengths * np.cos(phi), axis=-1)
    y = spec.base_position[1] + np.sum(lengths * np.sin(phi), axis=-1)
    return np.stack((x, y), axis=-1)


def jacobian_planar(spec: ArmSpec, q: np.ndarray) -> np.ndarray:
    phi = np.cumsum(q)
    lengths = np.asarray(spec.link_lengths)
    # column j sums the link contributions from joint j outward
    sx = np.cumsum((lengths * np.sin(phi))[::-1])[::-1]
    cx = np.cumsum((lengths * np.cos(phi))[::-1])[::-1]
    return np.vstack((-sx, cx))


def ik_track(spec: ArmSpec, cartesian_path, seed_config, tol: float = 1e-9,
             damping: float = 1e-3, max_iter: int = 200,
             max_joint_step: float = MAX_JOINT_STEP) -> np.ndarray:
    """Walk damped-least-squares IK along ``cartesian_path`` starting at ``seed_config``.

    Each point is solved starting from the previous solution, so the joint path
    stays on one branch of the redundant arm. Returns ``(N, n_joints)``.
    """
    path = np.atleast_2d(np.asarray(cartesian_path, dtype=np.float64))
    q = np.array(getattr(seed_config, "joint_angles", seed_config), dtype=np.float64)
    if q.shape != (spec.n_joints,):
        raise ValueError(f"seed has {q.size} joints, arm has {spec.n_joints}")
    inner, outer = spec.reach
    base = np.asarray(spec.base_position)
    lo = np.array([lim[0] for lim in spec.joint_limits])
    hi = np.array([lim[1] for lim in spec.joint_limits])
    radii = np.linalg.norm(path - base, axis=1)
    bad = np.flatnonzero((radii >= outer) | (radii <= inner))
    if bad.size:
        raise UnreachableError(f"point at radius {radii[bad[0]]:.4f} m outside ({inner}, {outer})",
                               int(bad[0]))
    out = np.empty((path.shape[0], spec.n_joints))
    lam2 = damping * damping
    for k, target in enumerate(path):
        prev = q.copy()
        err = target - fk_planar(spec, q)
        for _ in range(max_iter):
            if np.linalg.norm(err) < tol:
                break
            J = jacobian_planar(spec, q)
            q = np.clip(q + J.T @ np.linalg.solve(J @ J.T + lam2 * np.eye(2), err), lo, hi)
            err = target - fk_planar(spec, q)
        if np.linalg.norm(err) >= max(tol, 1e-6):
            raise IKError(f"IK did not converge, residual {np.linalg.norm(err):.2e} m", k)
        if k > 0 and np.max(np.abs(q - prev)) >= max_joint_step:
            raise IKError(f"joint jump {np.max(np.abs(q - prev)):.3f} rad", k)
        out[k] = q
    return out


def resample_by_arclength(points, T: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Resample a polyline to ``T`` points equally spaced in arc length.

    Returns the points, the arc-length positions of the input vertices and the
    target arc-length positions.
    """
    pts = np.asarray(points, dtype=np.float64)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate(([0.0], np.cumsum(seg)))
    if s[-1] <= 0.0:
        raise ValueError("all waypoints coincide")
    keep = np.concatenate(([True], seg > 0.0))
    pts, s = pts[keep], s[keep]
    s_new = np.linspace(0.0, s[-1], T)
    out = np.column_stack([np.interp(s_new, s, pts[:, j]) for j in range(pts.shape[1])])
    return out, s, s_new


def diffdrive_path(waypoint_path, T: int) -> np.ndarray:
    """Poses ``(T, 3)`` of a pose-controlled drive following ``waypoint_path``.

    Positions are equally spaced in arc length. Heading is the path tangent,
    estimated at the waypoints and interpolated (unwrapped) along arc length,
    then wrapped to (-pi, pi].
    """
    if T < 2:
        raise ValueError("T must be at least 2")
    pts = np.asarray(waypoint_path, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValueError("need at least two waypoints")
    xy, s, s_new = resample_by_arclength(pts, T)
    keep = np.concatenate(([True], np.linalg.norm(np.diff(pts, axis=0), axis=1) > 0.0))
    pts = pts[keep]
    if pts.shape[0] == 2:
        heading = np.full(T, np.arctan2(*(pts[1] - pts[0])[::-1]))
    else:
        dx = np.gradient(pts[:, 0], s)
        dy = np.gradient(pts[:, 1], s)
        heading = np.interp(s_new, s, np.unwrap(np.arctan2(dy, dx)))
    return np.column_stack((xy, wrap_angle(heading)))


def _cosine_bump(x, center: float, half_width: float) -> np.ndarray:
    u = np.clip((np.asarray(x) - center) / half_width, -1.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * u))


def _ease(n: int) -> np.ndarray:
    """Clamped cosine time scaling from 0 to 1 over ``n`` samples."""
    return 0.5 * (1.0 - np.cos(np.pi * np.linspace(0.0, 1.0, n)))


def _bezier(p0, p1, p2, p3, n: int = 400) -> np.ndarray:
    u = np.linspace(0.0, 1.0, n)[:, None]
    p0, p1, p2, p3 = (np.asarray(p, dtype=np.float64) for p in (p0, p1, p2, p3))
    return ((1 - u) ** 3) * p0 + 3 * ((1 - u) ** 2) * u * p1 + 3 * (1 - u) * u * u * p2 + u ** 3 * p3


def _line(a, b, n: int = 200) -> np.ndarray:
    u = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - u) * np.asarray(a, dtype=np.float64) + u * np.asarray(b, dtype=np.float64)


def _join(*segments: np.ndarray) -> np.ndarray:
    return np.vstack([segments[0]] + [seg[1:] for seg in segments[1:]])


def _seed_for(spec: ArmSpec, start, home=None) -> np.ndarray:
    """Configuration at ``start`` reached by walking IK from the home posture."""
    home = np.resize(HOME_CONFIG if home is None else np.asarray(home, dtype=np.float64), spec.n_joints)
    approach = _line(fk_planar(spec, home), start, 100)
    return ik_track(spec, approach, home)[-1]


def _check_range(family: str, value: float) -> None:
    lo, hi = FAMILY_RANGES[family]
    if not (lo - 1e-12 <= value <= hi + 1e-12):
        raise ValueError(f"{family} parameter {value} outside [{lo}, {hi}]")


def _times(T: int) -> np.ndarray:
    if T < 2:
        raise ValueError("T must be at least 2")
    return np.linspace(0.0, 1.0, T)


def _pair(task_id: str, parameter: float, arm_q: np.ndarray, mobile: np.ndarray) -> DemonstrationPair:
    t = _times(arm_q.shape[0])
    return DemonstrationPair(task_id, {ARM: Trajectory(ARM, t, arm_q), MOBILE: Trajectory(MOBILE, t, mobile)},
                             float(parameter))


SAME_PATH_Y = 0.9
SAME_PATH_X = (-1.4, 1.4)
SAME_PATH_HALF_WIDTH = 1.4  # bump spans the whole path


def same_path_waypoints(offset: float, n: int = 2001) -> np.ndarray:
    x = np.linspace(*SAME_PATH_X, n)
    return np.column_stack((x, SAME_PATH_Y + offset * _cosine_bump(x, 0.0, SAME_PATH_HALF_WIDTH)))


def gen_same_path(offset: float, T: int = DEFAULT_T, spec: ArmSpec = DEFAULT_ARM) -> DemonstrationPair:
    _check_range("same_path", offset)
    mobile = diffdrive_path(same_path_waypoints(offset), T)
    path = arm_task_path("same_path", offset, T)
    _check_margin(spec, path)
    arm_q = ik_track(spec, path, _seed_for(spec, path[0]))
    return _pair(f"same_path:{offset:g}", offset, arm_q, mobile)


CUP_Y = 1.3
PULL_DISTANCE = 0.7
HOOK_DEPTH = 0.12
ARM_START = (0.0, 0.7)
MOBILE_START = (-1.8, 2.6)


def divergent_geometry(cup_x: float) -> dict[str, np.ndarray]:
    cup = np.array([cup_x, CUP_Y])
    u = cup / np.linalg.norm(cup)  # radially away from the arm base
    return {"cup": cup, "out": u, "goal": cup - PULL_DISTANCE * u, "hook": cup + HOOK_DEPTH * u,
            "behind": cup + 0.3 * u}


def divergent_waypoints(cup_x: float) -> tuple[np.ndarray, np.ndarray]:
    """Dense Cartesian paths ``(arm, mobile)`` for the cup retrieval task."""
    g = divergent_geometry(cup_x)
    side = np.array([g["out"][1], -g["out"][0]])
    start = np.asarray(ARM_START)
    arm = _join(
        _bezier(start, start + 0.5 * side + 0.3 * g["out"], g["hook"] + 0.3 * g["out"], g["hook"]),
        _line(g["hook"], g["goal"]),
    )
    m0 = np.asarray(MOBILE_START)
    mobile = _join(
        _bezier(m0, m0 + np.array([0.9, 0.0]), g["behind"] + 0.8 * g["out"], g["behind"]),
        _line(g["behind"], g["goal"]),
    )
    return arm, mobile


def gen_divergent_path(cup_x: float, T: int = DEFAULT_T, spec: ArmSpec = DEFAULT_ARM) -> DemonstrationPair:
    _check_range("divergent_path", cup_x)
    _, mobile_wp = divergent_waypoints(cup_x)
    arm_xy = arm_task_path("divergent_path", cup_x, T)
    _check_margin(spec, arm_xy)
    arm_q = ik_track(spec, arm_xy, _seed_for(spec, arm_xy[0]))
    mobile = diffdrive_path(mobile_wp, T)
    return _pair(f"divergent_path:{cup_x:g}", cup_x, arm_q, mobile)


RADIAL_CUP = (-1.2, 0.0)
RADIAL_PUSH = 0.5
RADIAL_ARM_START = (-0.3, 1.0)
RADIAL_MOBILE_START = (-2.8, 0.0)
APPROACH_FRACTION = 0.6


def radial_contact_index(T: int) -> int:
    """Sample index at which the arm reaches the cup; earlier samples are goal-independent."""
    return int(np.ceil(APPROACH_FRACTION * T))


def radial_goal(goal_angle: float) -> np.ndarray:
    a = np.deg2rad(goal_angle)
    return np.asarray(RADIAL_CUP) + RADIAL_PUSH * np.array([np.cos(a), np.sin(a)])


def radial_arm_path(goal_angle: float, T: int) -> np.ndarray:
    cup = np.asarray(RADIAL_CUP)
    start = np.asarray(RADIAL_ARM_START)
    k = radial_contact_index(T)
    approach = _bezier(start, start + np.array([-0.6, 0.2]), cup + np.array([0.0, 0.5]), cup)
    approach, _, _ = resample_by_arclength(approach, 400)
    # eased progress along the approach, then along the pull
    idx = _ease(k + 1) * (approach.shape[0] - 1)
    approach_xy = np.column_stack([np.interp(idx, np.arange(approach.shape[0]), approach[:, j]) for j in (0, 1)])
    pull = cup + _ease(T - k)[:, None] * (radial_goal(goal_angle) - cup)
    return np.vstack((approach_xy, pull[1:]))


def radial_mobile_waypoints(goal_angle: float) -> np.ndarray:
    a = np.deg2rad(goal_angle)
    d = np.array([np.cos(a), np.sin(a)])
    cup = np.asarray(RADIAL_CUP)
    s0 = np.asarray(RADIAL_MOBILE_START)
    return _join(
        _bezier(s0, s0 + np.array([0.6, 0.0]), cup - 0.6 * d, cup),
        _line(cup, radial_goal(goal_angle)),
    )


def gen_radial_push(goal_angle: float, T: int = DEFAULT_T, spec: ArmSpec = DEFAULT_ARM) -> DemonstrationPair:
    _check_range("radial_push", goal_angle)
    arm_xy = arm_task_path("radial_push", goal_angle, T)
    _check_margin(spec, arm_xy)
    arm_q = ik_track(spec, arm_xy, _seed_for(spec, arm_xy[0]))
    mobile = diffdrive_path(radial_mobile_waypoints(goal_angle), T)
    return _pair(f"radial_push:{goal_angle:g}", goal_angle, arm_q, mobile)


def arm_task_path(family: str, parameter: float, T: int = DEFAULT_T) -> np.ndarray:
    """End-effector path ``(T, 2)`` that the arm demonstration tracks with IK."""
    if family == "same_path":
        return diffdrive_path(same_path_waypoints(parameter), T)[:, :2]
    if family == "divergent_path":
        return resample_by_arclength(divergent_waypoints(parameter)[0], T)[0]
    if family == "radial_push":
        return radial_arm_path(parameter, T)
    raise ValueError(f"unknown family {family!r}")


def _check_margin(spec: ArmSpec, xy: np.ndarray) -> None:
    inner, outer = spec.reach
    r = np.linalg.norm(xy - np.asarray(spec.base_position), axis=1)
    if r.max() > outer - REACH_MARGIN or r.min() < inner + REACH_MARGIN:
        raise UnreachableError("task path leaves the arm's reach band", int(np.argmax(r)))


GENERATORS = {
    "same_path": gen_same_path,
    "divergent_path": gen_divergent_path,
    "radial_push": gen_radial_push,
}

CHANNELS = {
    MOBILE: (("x", "m"), ("y", "m"), ("heading", "rad")),
}


def channel_layout(spec: ArmSpec = DEFAULT_ARM) -> dict[str, list[tuple[str, str]]]:
    return {
        ARM: [(f"q{i + 1}", "rad") for i in range(spec.n_joints)],
        MOBILE: list(CHANNELS[MOBILE]),
    }


@dataclass
class Dataset:
    family: str
    pairs: list[DemonstrationPair]
    T: int = DEFAULT_T
    arm_spec: ArmSpec = DEFAULT_ARM
    normalization: dict[str, ChannelNorm] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.normalization is None and self.train:
            self.normalization = fit_normalization(self.train)

    @property
    def train(self) -> list[DemonstrationPair]:
        return [p for p in self.pairs if p.split == "train"]

    @property
    def test(self) -> list[DemonstrationPair]:
        return [p for p in self.pairs if p.split == "test"]

    @property
    def widths(self) -> dict[str, int]:
        return {ARM: self.arm_spec.n_joints, MOBILE: 3}

    def __len__(self) -> int:
        return len(self.pairs)


def interleaved_test_indices(count: int, n_train: int) -> list[int]:
    """Indices of test items spread evenly strictly inside a sorted parameter list."""
    n_test = count - n_train
    if n_test < 0:
        raise ValueError("more training items than parameters")
    if n_test == 0:
        return []
    if n_test > count - 2:
        raise ValueError("test items must lie strictly inside the training range")
    picks = np.round(np.linspace(0, count - 1, n_test + 2)[1:-1]).astype(int)
    return sorted(set(picks.tolist()))


def make_dataset(family: str, parameters: Sequence[float], T: int = DEFAULT_T,
                 split: Sequence[str] | None = None, spec: ArmSpec = DEFAULT_ARM) -> Dataset:
    """One demonstration pair per task parameter; ``split`` flags each as train or test."""
    if family not in GENERATORS:
        raise ValueError(f"unknown family {family!r}; choose from {FAMILIES}")
    params = [float(p) for p in parameters]
    if len(set(params)) != len(params):
        raise ValueError("task parameters must be distinct")
    if split is None:
        split = ["train"] * len(params)
    if len(split) != len(params) or any(s not in ("train", "test") for s in split):
        raise ValueError("split must flag every parameter as 'train' or 'test'")
    for p in params:
        _check_range(family, p)
    pairs = []
    for p, flag in zip(params, split):
        pair = GENERATORS[family](p, T, spec)
        pair.split = flag
        pairs.append(pair)
    return Dataset(family, pairs, T, spec)


def evenly_spaced(family: str, count: int) -> list[float]:
    lo, hi = FAMILY_RANGES[family]
    return [float(v) for v in np.round(np.linspace(lo, hi, count), 10)]


def make_split_dataset(family: str, train: Sequence[float], test: Sequence[float],
                       T: int = DEFAULT_T, spec: ArmSpec = DEFAULT_ARM) -> Dataset:
    """Dataset from explicit train and test parameter lists, sorted by parameter."""
    tagged = sorted([(float(p), "train") for p in train] + [(float(p), "test") for p in test])
    return make_dataset(family, [p for p, _ in tagged], T, [s for _, s in tagged], spec)


def make_interleaved_dataset(family: str, parameters: Sequence[float], n_train: int, T: int = DEFAULT_T,
                             spec: ArmSpec = DEFAULT_ARM) -> Dataset:
    """Sorted ``parameters`` with the test ones interleaved inside the range."""
    params = sorted(float(p) for p in parameters)
    test = set(interleaved_test_indices(len(params), n_train))
    return make_dataset(family, params, T, ["test" if i in test else "train" for i in range(len(params))], spec)


def make_count_dataset(family: str, count: int, n_train: int, T: int = DEFAULT_T,
                       spec: ArmSpec = DEFAULT_ARM) -> Dataset:
    """``count`` evenly spaced tasks with the test ones interleaved inside the range."""
    return make_interleaved_dataset(family, evenly_spaced(family, count), n_train, T, spec)
