"""Coupled conditional neural movement primitives.

Each robot gets its own encoder and decoder. Observations of a robot are
encoded one by one, averaged into a per-robot latent, the per-robot latents are
mixed with convex blend weights, and every decoder reads the blended latent
together with a query time to predict a Gaussian over that robot's state.

The low-level operations (encoding, decoding, the loss) work in the model's
normalized channel units; :func:`query_trajectory` is the user-facing entry
point and takes and returns physical units.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .nn import Network, ShapeError, forward, backward, gaussian_nll, param_count, softplus

SIGMA_FLOOR = 1e-6
DEFAULT_OBS_MAX = 5


@dataclass
class Trajectory:
    """Time-indexed states of one robot; ``std`` is set for generated trajectories."""

    robot_id: str
    times: np.ndarray
    states: np.ndarray
    std: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if self.times.ndim != 1 or self.states.shape[0] != self.times.size:
            raise ShapeError(f"{self.times.size} times but {self.states.shape[0]} state rows")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0.0):
            raise ValueError("trajectory times must be strictly increasing")
        if self.times.size and (self.times[0] < 0.0 or self.times[-1] > 1.0):
            raise ValueError("trajectory times must lie in [0, 1]")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("trajectory states must be finite")

    def __len__(self) -> int:
        return self.times.size

    @property
    def width(self) -> int:
        return self.states.shape[1]


@dataclass
class DemonstrationPair:
    """Synchronized demonstrations of one task by every robot."""

    task_id: str
    trajectories: dict[str, Trajectory]
    parameter: float = float("nan")
    split: str = "train"

    def __post_init__(self):
        times = [traj.times for traj in self.trajectories.values()]
        if not times:
            raise ValueError("a demonstration needs at least one trajectory")
        for other in times[1:]:
            if other.shape != times[0].shape or np.any(other != times[0]):
                raise ValueError(f"task {self.task_id}: trajectories do not share one time base")
        for rid, traj in self.trajectories.items():
            if traj.robot_id != rid:
                raise ValueError(f"trajectory keyed {rid!r} belongs to {traj.robot_id!r}")

    @property
    def times(self) -> np.ndarray:
        return next(iter(self.trajectories.values())).times

    @property
    def T(self) -> int:
        return self.times.size

    def __getitem__(self, robot_id: str) -> Trajectory:
        return self.trajectories[robot_id]


@dataclass
class ObservationSet:
    """Conditioning points ``(t_i, state_i)`` of one robot."""

    robot_id: str
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim == 1:
            self.states = self.states[None, :]
        if self.states.shape[0] != self.times.size:
            raise ShapeError("observation times and states disagree in count")
        if np.any((self.times < 0.0) | (self.times > 1.0)):
            raise ValueError("observation times must lie in [0, 1]")

    @classmethod
    def from_indices(cls, traj: Trajectory, indices: Sequence[int]) -> "ObservationSet":
        idx = np.asarray(indices, dtype=np.int64)
        return cls(traj.robot_id, traj.times[idx], traj.states[idx])

    @property
    def pairs(self) -> list[tuple[float, np.ndarray]]:
        return list(zip(self.times.tolist(), self.states))

    def __len__(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class BlendWeights:
    """Convex weights, one per robot."""

    p: Mapping[str, float]

    def __post_init__(self):
        values = np.array(list(self.p.values()), dtype=np.float64)
        if values.size == 0:
            raise ValueError("blend weights are empty")
        if np.any(values < 0.0) or np.any(values > 1.0) or abs(values.sum() - 1.0) > 1e-9:
            raise ValueError(f"blend weights {dict(self.p)} are not on the simplex")

    @classmethod
    def one_hot(cls, robots: Sequence[str], chosen: str) -> "BlendWeights":
        if chosen not in robots:
            raise KeyError(chosen)
        return cls({r: (1.0 if r == chosen else 0.0) for r in robots})

    def __getitem__(self, robot_id: str) -> float:
        return self.p.get(robot_id, 0.0)


@dataclass
class GaussianPrediction:
    mean: np.ndarray
    std: np.ndarray
    query_time: float


@dataclass
class ChannelNorm:
    """Per-channel affine map to zero mean and unit variance."""

    mean: np.ndarray
    scale: np.ndarray

    def apply(self, states: np.ndarray) -> np.ndarray:
        return (states - self.mean) / self.scale

    def invert(self, states: np.ndarray) -> np.ndarray:
        return states * self.scale + self.mean

    @classmethod
    def identity(cls, width: int) -> "ChannelNorm":
        return cls(np.zeros(width), np.ones(width))

    @classmethod
    def fit(cls, states: np.ndarray) -> "ChannelNorm":
        states = np.asarray(states, dtype=np.float64)
        scale = states.std(axis=0)
        # constant channels keep unit scale
        scale = np.where(scale > 1e-9, scale, 1.0)
        return cls(states.mean(axis=0), scale)


def fit_normalization(pairs: Sequence[DemonstrationPair]) -> dict[str, ChannelNorm]:
    if not pairs:
        raise ValueError("cannot fit normalization on an empty dataset")
    robots = list(pairs[0].trajectories)
    return {r: ChannelNorm.fit(np.vstack([p[r].states for p in pairs])) for r in robots}


@dataclass
class CoupledModel:
    """Per-robot encoder/decoder pairs over one flat parameter vector.

    Encoders map ``(t, state)`` to a ``d_lat`` latent; decoders map
    ``(latent, t)`` to ``2 * width`` raw outputs (means, then pre-softplus stds).
    """

    robots: tuple[str, ...]
    widths: dict[str, int]
    d_lat: int
    encoder_hidden: tuple[int, ...]
    decoder_hidden: tuple[int, ...]
    activation: str
    params: np.ndarray = field(repr=False)
    encoders: dict[str, Network] = field(repr=False)
    decoders: dict[str, Network] = field(repr=False)
    normalization: dict[str, ChannelNorm] = field(repr=False)

    @classmethod
    def create(
        cls,
        widths: Mapping[str, int],
        d_lat: int = 128,
        encoder_hidden: Sequence[int] = (128, 128),
        decoder_hidden: Sequence[int] = (128, 128, 128),
        activation: str = "tanh",
        seed: int | None = 0,
        normalization: Mapping[str, ChannelNorm] | None = None,
        params: np.ndarray | None = None,
    ) -> "CoupledModel":
        robots = tuple(widths)
        layouts = _layouts(widths, d_lat, encoder_hidden, decoder_hidden, activation)
        total = sum(param_count(sizes) for _, sizes, _ in layouts)
        if params is None:
            params = np.zeros(total)
        else:
            params = np.array(params, dtype=np.float64)
            if params.shape != (total,):
                raise ShapeError(f"expected {total} parameters, got {params.shape}")
        rng = np.random.default_rng(seed) if seed is not None else None
        nets: dict[tuple[str, str], Network] = {}
        offset = 0
        for key, sizes, acts in layouts:
            n = param_count(sizes)
            nets[key] = Network.build(sizes, acts, rng=rng, params=params[offset:offset + n])
            offset += n
        if normalization is None:
            normalization = {r: ChannelNorm.identity(widths[r]) for r in robots}
        return cls(
            robots, dict(widths), d_lat, tuple(encoder_hidden), tuple(decoder_hidden), activation,
            params,
            {r: nets[(r, "encoder")] for r in robots},
            {r: nets[(r, "decoder")] for r in robots},
            {r: normalization[r] for r in robots},
        )

    def copy(self) -> "CoupledModel":
        return CoupledModel.create(
            self.widths, self.d_lat, self.encoder_hidden, self.decoder_hidden, self.activation,
            seed=None, normalization=self.normalization, params=self.params.copy(),
        )

    def slices(self) -> dict[tuple[str, str], slice]:
        """Location of every network inside ``params``."""
        out = {}
        offset = 0
        for key, sizes, _ in _layouts(self.widths, self.d_lat, self.encoder_hidden,
                                      self.decoder_hidden, self.activation):
            n = param_count(sizes)
            out[key] = slice(offset, offset + n)
            offset += n
        return out

    def normalize(self, robot_id: str, states: np.ndarray) -> np.ndarray:
        return self.normalization[robot_id].apply(states)

    def denormalize(self, robot_id: str, states: np.ndarray) -> np.ndarray:
        return self.normalization[robot_id].invert(states)

    def normalize_pair(self, pair: DemonstrationPair) -> DemonstrationPair:
        trajs = {
            r: Trajectory(r, t.times, self.normalize(r, t.states))
            for r, t in pair.trajectories.items()
        }
        return DemonstrationPair(pair.task_id, trajs, pair.parameter, pair.split)


def _layouts(widths, d_lat, encoder_hidden, decoder_hidden, activation):
    out = []
    for r, d in widths.items():
        enc = [1 + d, *encoder_hidden, d_lat]
        dec = [d_lat + 1, *decoder_hidden, 2 * d]
        out.append(((r, "encoder"), enc, [activation] * len(encoder_hidden) + ["identity"]))
        out.append(((r, "decoder"), dec, [activation] * len(decoder_hidden) + ["identity"]))
    return out


def _check_robot(model: CoupledModel, robot_id: str) -> None:
    if robot_id not in model.widths:
        raise KeyError(f"unknown robot {robot_id!r}")


def encode_observation(model: CoupledModel, robot_id: str, t: float, state) -> np.ndarray:
    _check_robot(model, robot_id)
    state = np.asarray(state, dtype=np.float64).reshape(-1)
    if state.size != model.widths[robot_id]:
        raise ShapeError(f"{robot_id} states have width {model.widths[robot_id]}, got {state.size}")
    return forward(model.encoders[robot_id], np.concatenate(([t], state)))


def aggregate_latent(latents: Sequence[np.ndarray]) -> np.ndarray:
    if len(latents) == 0:
        raise ValueError("cannot aggregate an empty set of latents")
    stack = np.vstack([np.asarray(v, dtype=np.float64) for v in latents])
    return stack.mean(axis=0)


def blend_latents(per_robot: Mapping[str, np.ndarray], weights: BlendWeights) -> np.ndarray:
    if not isinstance(weights, BlendWeights):
        weights = BlendWeights(weights)
    out = None
    for r, latent in per_robot.items():
        p = weights[r]
        if p == 0.0:
            continue
        term = latent if p == 1.0 else p * latent
        out = term.copy() if out is None else out + term
    missing = [r for r, p in weights.p.items() if p > 0.0 and r not in per_robot]
    if missing:
        raise KeyError(f"no latent for robots with nonzero weight: {missing}")
    if out is None:
        raise ValueError("blend weights select no available latent")
    widths = {np.shape(v) for v in per_robot.values()}
    if len(widths) != 1:
        raise ShapeError(f"latent widths differ: {widths}")
    return out


def _split_head(raw: np.ndarray, width: int) -> tuple[np.ndarray, np.ndarray]:
    return raw[..., :width], softplus(raw[..., width:]) + SIGMA_FLOOR


def decode_query(model: CoupledModel, robot_id: str, latent, t_target: float) -> GaussianPrediction:
    _check_robot(model, robot_id)
    latent = np.asarray(latent, dtype=np.float64)
    if latent.shape != (model.d_lat,):
        raise ShapeError(f"latent must have width {model.d_lat}, got {latent.shape}")
    raw = forward(model.decoders[robot_id], np.concatenate((latent, [t_target])))
    mean, std = _split_head(raw, model.widths[robot_id])
    return GaussianPrediction(mean, std, float(t_target))


@dataclass
class TrainingSample:
    """One batch element: a pair, its observation sets, blend weights and target indices."""

    pair: DemonstrationPair
    observations: dict[str, ObservationSet]
    weights: BlendWeights
    target_indices: np.ndarray

    @property
    def t_target(self) -> float:
        return float(self.pair.times[self.target_indices[0]])


def _target_index(pair: DemonstrationPair, t_target: float) -> int:
    i = int(np.argmin(np.abs(pair.times - t_target)))
    if abs(pair.times[i] - t_target) > 1e-12:
        raise ValueError(f"t_target={t_target} is not on the pair's time grid")
    return i


def coupled_loss(model: CoupledModel, pair: DemonstrationPair, obs: Mapping[str, ObservationSet],
                 weights: BlendWeights, t_target: float) -> float:
    """Sum over robots of the Gaussian NLL of each robot's state at ``t_target``."""
    sample = TrainingSample(pair, dict(obs), weights, np.array([_target_index(pair, t_target)]))
    return loss_and_grad(model, [sample], need_grad=False)[0]


def loss_and_grad(model: CoupledModel, samples: Sequence[TrainingSample], need_grad: bool = True,
                  out: np.ndarray | None = None):
    """Mean coupled loss over ``samples`` and its gradient w.r.t. ``model.params``.

    Returns ``(loss, grad, per_robot)`` where ``per_robot`` maps each robot to
    its share of the loss; ``grad`` is ``None`` when ``need_grad`` is false.
    Each sample's loss averages over its target indices. ``out`` is an optional
    buffer to write the gradient into.
    """
    B = len(samples)
    if B == 0:
        raise ValueError("empty batch")
    latent = np.zeros((B, model.d_lat))
    enc_state = {}
    for r in model.robots:
        rows, spans = [], []
        for b, s in enumerate(samples):
            p = s.weights[r]
            if p == 0.0:
                continue
            o = s.observations.get(r)
            if o is None or len(o) == 0:
                raise KeyError(f"robot {r!r} has blend weight {p} but no observations")
            rows.append(np.column_stack((o.times, o.states)))
            spans.append((b, len(o), p))
        if not rows:
            continue
        x = np.vstack(rows)
        h, cache = forward(model.encoders[r], x, keep_cache=True)
        # averaging and blending folded into one (B x M) matrix
        mix = np.zeros((B, x.shape[0]))
        start = 0
        for b, n, p in spans:
            mix[b, start:start + n] = p / n
            start += n
        latent += mix @ h
        enc_state[r] = (cache, mix)

    q_sample = np.concatenate([np.full(len(s.target_indices), b) for b, s in enumerate(samples)])
    q_times = np.concatenate([s.pair.times[s.target_indices] for s in samples])
    q_weight = np.concatenate([np.full(len(s.target_indices), 1.0 / (B * len(s.target_indices)))
                               for s in samples])
    dec_in = np.column_stack((latent[q_sample], q_times))

    total = 0.0
    per_robot = {}
    grad = None
    if need_grad:
        grad = np.zeros_like(model.params) if out is None else out
        grad.fill(0.0)
    slices = model.slices() if need_grad else None
    d_latent = np.zeros((B, model.d_lat)) if need_grad else None
    for r in model.robots:
        d = model.widths[r]
        target = np.vstack([s.pair[r].states[s.target_indices] for s in samples])
        raw, cache = forward(model.decoders[r], dec_in, keep_cache=True)
        mean, std = _split_head(raw, d)
        resid = (target - mean) / std
        nll_rows = np.sum(np.log(std) + 0.5 * resid * resid, axis=1) + 0.5 * d * np.log(2 * np.pi)
        per_robot[r] = float(q_weight @ nll_rows)
        total += per_robot[r]
        if not need_grad:
            continue
        w = q_weight[:, None]
        d_mean = -w * resid / std
        d_std = w * (1.0 - resid * resid) / std
        # softplus' = logistic(raw)
        d_raw_std = d_std * np.exp(raw[:, d:] - softplus(raw[:, d:]))
        d_raw = np.hstack((d_mean, d_raw_std))
        _, d_in = backward(model.decoders[r], cache, d_raw, grad[slices[(r, "decoder")]])
        np.add.at(d_latent, q_sample, d_in[:, :model.d_lat])
    if need_grad:
        for r, (cache, mix) in enc_state.items():
            backward(model.encoders[r], cache, mix.T @ d_latent, grad[slices[(r, "encoder")]])
    return total, grad, per_robot


def weight_scheme_mixed(robots: Sequence[str], rng: np.random.Generator) -> BlendWeights:
    """One-hot on each robot with probability 1/(n+1) each, else uniform on the simplex."""
    k = int(rng.integers(len(robots) + 1))
    if k < len(robots):
        return BlendWeights.one_hot(robots, robots[k])
    return _uniform_simplex(robots, rng)


def weight_scheme_uniform(robots: Sequence[str], rng: np.random.Generator) -> BlendWeights:
    return _uniform_simplex(robots, rng)


def weight_scheme_one_hot(robots: Sequence[str], rng: np.random.Generator) -> BlendWeights:
    return BlendWeights.one_hot(robots, robots[int(rng.integers(len(robots)))])


def _uniform_simplex(robots, rng) -> BlendWeights:
    p = rng.dirichlet(np.ones(len(robots)))
    # renormalize the last entry so the sum is exact
    p[-1] = max(0.0, 1.0 - p[:-1].sum())
    return BlendWeights(dict(zip(robots, p.tolist())))


WEIGHT_SCHEMES: dict[str, Callable[[Sequence[str], np.random.Generator], BlendWeights]] = {
    "mixed": weight_scheme_mixed,
    "uniform": weight_scheme_uniform,
    "one_hot": weight_scheme_one_hot,
}


def sample_training_batch(dataset: Sequence[DemonstrationPair], rng: np.random.Generator,
                          obs_max: int = DEFAULT_OBS_MAX, weight_scheme="mixed",
                          n_targets: int = 1) -> TrainingSample:
    """Draw one training element.

    Picks a demonstration uniformly, then for every robot a count
    ``n ~ U{1..obs_max}`` (capped at T) of distinct observation indices, then
    ``n_targets`` target indices, then the blend weights.
    """
    if len(dataset) == 0:
        raise ValueError("cannot sample from an empty dataset")
    if obs_max < 1:
        raise ValueError("obs_max must be at least 1")
    scheme = WEIGHT_SCHEMES[weight_scheme] if isinstance(weight_scheme, str) else weight_scheme
    pair = dataset[int(rng.integers(len(dataset)))]
    T = pair.T
    obs = {}
    for r, traj in pair.trajectories.items():
        n = int(rng.integers(1, min(obs_max, T) + 1))
        obs[r] = ObservationSet.from_indices(traj, rng.choice(T, size=n, replace=False))
    targets = rng.integers(T, size=n_targets)
    weights = scheme(tuple(pair.trajectories), rng)
    return TrainingSample(pair, obs, weights, targets)


def query_trajectory(model: CoupledModel, source_obs: ObservationSet, target_robot: str,
                     time_grid) -> Trajectory:
    """Generate ``target_robot``'s trajectory from observations of any one robot.

    The blend weight is one on the observed robot and zero on the others, so the
    blended latent equals the observed robot's latent. Observations are in
    physical units and so is the returned trajectory (``std`` included).
    """
    if not np.all(np.isfinite(model.params)):
        raise ValueError("model parameters contain NaN or inf")
    _check_robot(model, source_obs.robot_id)
    _check_robot(model, target_robot)
    if len(source_obs) == 0:
        raise ValueError("need at least one observation")
    if source_obs.states.shape[1] != model.widths[source_obs.robot_id]:
        raise ShapeError("observation width does not match the source robot")
    states = model.normalize(source_obs.robot_id, source_obs.states)
    h = forward(model.encoders[source_obs.robot_id], np.column_stack((source_obs.times, states)))
    latent = blend_latents({source_obs.robot_id: aggregate_latent(h)},
                           BlendWeights.one_hot(model.robots, source_obs.robot_id))
    grid = np.asarray(time_grid, dtype=np.float64)
    raw = forward(model.decoders[target_robot],
                  np.column_stack((np.broadcast_to(latent, (grid.size, model.d_lat)), grid)))
    mean, std = _split_head(raw, model.widths[target_robot])
    norm = model.normalization[target_robot]
    return Trajectory(target_robot, grid, norm.invert(mean), std=std * norm.scale)
