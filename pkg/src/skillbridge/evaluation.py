"""Transfer metrics: reconstruction RMSE, final object position and push direction."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cnmp import ChannelNorm, CoupledModel, ObservationSet, Trajectory, query_trajectory
from .robots import ARM, DEFAULT_ARM, MOBILE, ArmSpec, Dataset, fk_planar, wrap_angle

# first, thirtieth, sixtieth and last sample of a 128-step demonstration
REFERENCE_OBS_INDICES = (0, 30, 60, 127)
REFERENCE_T = 128
PUSH_WINDOW = 10

TABLE_COLUMNS = ("test_case", "task_id", "source", "target", "parameter", "desired_angle", "outcome",
                 "directional_error", "pos_error", "rmse")


def _states(traj) -> np.ndarray:
    s = getattr(traj, "states", traj)
    s = np.asarray(s, dtype=np.float64)
    return s[:, None] if s.ndim == 1 else s


def reconstruction_rmse(generated, ground_truth, norm: ChannelNorm | None = None):
    """Per-channel RMSE over time and its mean over channels.

    With ``norm`` both inputs are mapped to normalized units first.
    """
    a, b = _states(generated), _states(ground_truth)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if norm is not None:
        a, b = norm.apply(a), norm.apply(b)
    per_channel = np.sqrt(np.mean((a - b) ** 2, axis=0))
    return per_channel, float(per_channel.mean())


def endpoint(traj, kind: str, arm_spec: ArmSpec = DEFAULT_ARM) -> np.ndarray:
    """Task-space position of the final sample: pose for the mobile robot, FK for the arm."""
    s = _states(traj)
    if kind == MOBILE:
        return s[-1, :2]
    if kind == ARM:
        return fk_planar(arm_spec, s[-1])
    raise ValueError(f"unknown robot kind {kind!r}")


def final_position_error(generated, ground_truth, kind: str, arm_spec: ArmSpec = DEFAULT_ARM) -> float:
    """Distance in meters between generated and desired final task-space positions."""
    return float(np.linalg.norm(endpoint(generated, kind, arm_spec) - endpoint(ground_truth, kind, arm_spec)))


def push_angle(mobile, window: int = PUSH_WINDOW) -> float:
    """Direction in degrees of the displacement over the last ``window`` poses."""
    s = _states(mobile)
    k = min(window, s.shape[0])
    d = s[-1, :2] - s[-k, :2]
    if not np.linalg.norm(d) > 1e-12:
        raise ValueError("final segment has no displacement; push direction undefined")
    return float(np.degrees(np.arctan2(d[1], d[0])))


def directional_error(generated_mobile, goal_angle: float, window: int = PUSH_WINDOW) -> float:
    """Absolute angle in degrees between the push direction and ``goal_angle``."""
    diff = np.radians(push_angle(generated_mobile, window) - goal_angle)
    return float(abs(np.degrees(wrap_angle(diff))))


def scaled_indices(indices: Sequence[int], T: int, reference_T: int = REFERENCE_T) -> list[int]:
    """Map sample indices defined on a ``reference_T`` grid onto a ``T`` grid."""
    if T == reference_T:
        return [int(i) for i in indices]
    return [int(round(i * (T - 1) / (reference_T - 1))) for i in indices]


@dataclass
class TransferResult:
    source: str
    target: str
    task_id: str
    parameter: float
    generated: Trajectory = field(repr=False)
    ground_truth: Trajectory = field(repr=False)
    channel_rmse: np.ndarray
    rmse: float
    final_position_error: float
    directional_error: float | None = None
    outcome_angle: float | None = None
    obs_indices: tuple[int, ...] = ()


def evaluate_transfer(model: CoupledModel, pair, source: str, target: str, obs_indices: Sequence[int],
                      family: str, arm_spec: ArmSpec = DEFAULT_ARM) -> TransferResult:
    obs = ObservationSet.from_indices(pair[source], obs_indices)
    gen = query_trajectory(model, obs, target, pair.times)
    truth = pair[target]
    per_ch, agg = reconstruction_rmse(gen, truth, model.normalization[target])
    dir_err = outcome = None
    if family == "radial_push" and target == MOBILE:
        outcome = push_angle(gen)
        dir_err = directional_error(gen, pair.parameter)
    return TransferResult(source, target, pair.task_id, pair.parameter, gen, truth, per_ch, agg,
                          final_position_error(gen, truth, target, arm_spec), dir_err, outcome,
                          tuple(int(i) for i in obs_indices))


def transfer_sweep(model: CoupledModel, dataset: Dataset, directions: Sequence[tuple[str, str]] | None = None,
                   obs_indices: Sequence[int] = REFERENCE_OBS_INDICES, obs_count: int | None = 3,
                   split: str = "test", obs_draws: int = 0, rng: np.random.Generator | None = None,
                   pairs: Sequence | None = None, rescale: bool = True):
    """Condition on observations of one robot and generate each robot, for every pair in ``split``.

    ``obs_indices`` refer to a 128-sample grid and are rescaled to the dataset's
    T unless ``rescale`` is false; ``obs_count`` keeps only the first ``obs_count`` of them (None keeps all). ``obs_draws``
    adds that many extra runs per case with ``obs_count`` (or as many as
    ``obs_indices``) random distinct indices drawn from ``rng``.
    ``pairs`` overrides the ``split`` selection.
    Returns ``(results, summary)``; self directions are included by default.
    """
    if pairs is None:
        pairs = dataset.test if split == "test" else dataset.train if split == "train" else dataset.pairs
    if not pairs:
        raise ValueError(f"no {split} pairs to evaluate")
    if directions is None:
        directions = [(s, t) for s in model.robots for t in model.robots]
    idx = scaled_indices(obs_indices, dataset.T) if rescale else [int(i) for i in obs_indices]
    if obs_count is not None:
        idx = idx[:obs_count]
    index_sets = [idx]
    if obs_draws:
        rng = rng if rng is not None else np.random.default_rng(0)
        index_sets += [sorted(rng.choice(dataset.T, size=len(idx), replace=False).tolist())
                       for _ in range(obs_draws)]
    results = []
    for pair in pairs:
        for source, target in directions:
            for ids in index_sets:
                results.append(evaluate_transfer(model, pair, source, target, ids, dataset.family,
                                                 dataset.arm_spec))
    return results, summarize(results)


def summarize(results: Sequence[TransferResult]) -> dict:
    out = {}
    for key in dict.fromkeys((r.source, r.target) for r in results):
        rows = [r for r in results if (r.source, r.target) == key]
        entry = {"n": len(rows)}
        for name in ("rmse", "final_position_error", "directional_error"):
            vals = [getattr(r, name) for r in rows if getattr(r, name) is not None]
            if vals:
                entry[name] = (float(np.mean(vals)), float(np.std(vals)))
        out[f"{key[0]}->{key[1]}"] = entry
    return out


def results_table(results: Sequence[TransferResult], delimiter: str = ",") -> str:
    """Delimited text table, one row per transfer, angle columns blank when not applicable."""
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for i, r in enumerate(results, 1):
        angle = r.directional_error is not None
        w.writerow([i, r.task_id, r.source, r.target, repr(float(r.parameter)),
                    repr(float(r.parameter)) if angle else "",
                    f"{r.outcome_angle:.3f}" if angle else "",
                    f"{r.directional_error:.3f}" if angle else "",
                    f"{r.final_position_error:.4f}", f"{r.rmse:.4f}"])
    return buf.getvalue()
