"""Seeded training loop and the binary checkpoint format.

Checkpoint layout (little endian)::

    b"SKB1" | uint64 header length | JSON header | float64 arrays

The header records the model layout, normalization statistics, optimizer
hyperparameters and step, the seed, the iteration count and the full RNG
state, so a resumed run continues exactly where the saved one stopped.
"""

from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .cnmp import WEIGHT_SCHEMES, ChannelNorm, CoupledModel, loss_and_grad, sample_training_batch
from .fileio import atomic_write
from .nn import OptimizerState, optimizer_step

log = logging.getLogger(__name__)

MAGIC = b"SKB1"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Raised for unreadable, truncated or foreign checkpoint files."""


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    iterations: int = 30000
    learning_rate: float = 1e-4
    lr_final: float | None = None  # geometric decay to this rate at the last iteration
    obs_max: int = 5
    seed: int = 0
    weight_scheme: str = "mixed"
    batch_size: int = 8  # samples accumulated per optimizer step
    n_targets: int = 1  # target tuples per sample
    checkpoint_interval: int = 0  # 0 disables periodic checkpoints
    log_interval: int = 100
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if self.obs_max < 1:
            raise ValueError("obs_max must be at least 1")
        if self.batch_size < 1 or self.n_targets < 1 or self.log_interval < 1:
            raise ValueError("batch_size, n_targets and log_interval must be positive")
        if self.lr_final is not None and not 0.0 < self.lr_final:
            raise ValueError("lr_final must be positive")
        if self.weight_scheme not in WEIGHT_SCHEMES:
            raise ValueError(f"unknown weight scheme {self.weight_scheme!r}")


@dataclass
class TrainReport:
    loss_curve: list[tuple[int, float]]
    wall_time: float
    checkpoint_path: str | None
    seed: int
    checkpoints: list[str] = field(default_factory=list)


@dataclass
class TrainState:
    """Everything besides the model that a resumed run needs."""

    optimizer: OptimizerState
    rng: np.random.Generator
    iteration: int = 0
    seed: int = 0


def new_state(model: CoupledModel, config: TrainConfig) -> TrainState:
    return TrainState(OptimizerState.for_params([model.params], lr=config.learning_rate),
                      np.random.default_rng(config.seed), 0, config.seed)


def train(model: CoupledModel, dataset, config: TrainConfig, state: TrainState | None = None,
          on_checkpoint: Callable[[int, CoupledModel], None] | None = None):
    """Train ``model`` in place for ``config.iterations`` optimizer steps.

    ``dataset`` is a :class:`~skillbridge.robots.Dataset` (its training split is
    used) or a sequence of demonstration pairs in physical units. Passing a
    ``state`` from :func:`load_checkpoint` resumes an earlier run; iteration
    numbering continues from it. Returns ``(model, report)``.
    """
    pairs = list(getattr(dataset, "train", dataset))
    if not pairs:
        raise ValueError("training needs at least one demonstration pair")
    for r in model.robots:
        if pairs[0][r].width != model.widths[r]:
            raise ValueError(f"dataset width for {r} is {pairs[0][r].width}, model expects {model.widths[r]}")
    normalized = [model.normalize_pair(p) for p in pairs]
    if state is None:
        state = new_state(model, config)

    def lr_at(iteration: int) -> float:
        if config.lr_final is None or config.iterations == 1:
            return config.learning_rate
        frac = iteration / (config.iterations - 1)
        return config.learning_rate * (config.lr_final / config.learning_rate) ** frac

    curve: list[tuple[int, float]] = []
    checkpoints: list[str] = []
    window = 0.0
    started = time.perf_counter()
    last_path = None
    grad_buf = np.empty_like(model.params)
    while state.iteration < config.iterations:
        batch = [sample_training_batch(normalized, state.rng, config.obs_max, config.weight_scheme,
                                       config.n_targets)
                 for _ in range(config.batch_size)]
        loss, grad, per_robot = loss_and_grad(model, batch, out=grad_buf)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            bad = [r for r, v in per_robot.items() if not np.isfinite(v)] or list(per_robot)
            raise TrainingDiverged(
                f"non-finite loss at iteration {state.iteration + 1} in the {', '.join(bad)} head"
            )
        state.optimizer.lr = lr_at(state.iteration)
        optimizer_step([model.params], [grad], state.optimizer)
        state.iteration += 1
        window += loss
        if state.iteration % config.log_interval == 0:
            curve.append((state.iteration, window / config.log_interval))
            window = 0.0
        if config.checkpoint_interval and state.iteration % config.checkpoint_interval == 0:
            if config.checkpoint_dir is not None:
                last_path = str(Path(config.checkpoint_dir) / f"ckpt_{state.iteration:07d}.skb")
                save_checkpoint(model, state, last_path)
                checkpoints.append(last_path)
            if on_checkpoint is not None:
                on_checkpoint(state.iteration, model)
    wall = time.perf_counter() - started
    if config.checkpoint_dir is not None and (last_path is None or not last_path.endswith(f"{state.iteration:07d}.skb")):
        last_path = str(Path(config.checkpoint_dir) / f"ckpt_{state.iteration:07d}.skb")
        save_checkpoint(model, state, last_path)
        checkpoints.append(last_path)
    log.info("trained to iteration %d in %.1fs", state.iteration, wall)
    return model, TrainReport(curve, wall, last_path, state.seed, checkpoints)


def write_loss_log(path, curve: Sequence[tuple[int, float]]) -> None:
    lines = "".join(f"{it},{loss!r}\n" for it, loss in curve)
    atomic_write(path, lines.encode())


def read_loss_log(path) -> list[tuple[int, float]]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            it, loss = line.split(",")
            out.append((int(it), float(loss)))
    return out


def model_header(model: CoupledModel) -> dict:
    return {
        "robots": list(model.robots),
        "widths": {r: model.widths[r] for r in model.robots},
        "d_lat": model.d_lat,
        "encoder_hidden": list(model.encoder_hidden),
        "decoder_hidden": list(model.decoder_hidden),
        "activation": model.activation,
        "layers": {r: {"encoder": model.encoders[r].sizes, "decoder": model.decoders[r].sizes}
                   for r in model.robots},
        "normalization": {r: {"mean": model.normalization[r].mean.tolist(),
                              "scale": model.normalization[r].scale.tolist()} for r in model.robots},
    }


def model_from_header(h: dict, params: np.ndarray) -> CoupledModel:
    norm = {r: ChannelNorm(np.array(v["mean"]), np.array(v["scale"])) for r, v in h["normalization"].items()}
    widths = {r: h["widths"][r] for r in h["robots"]}
    return CoupledModel.create(widths, h["d_lat"], h["encoder_hidden"], h["decoder_hidden"],
                               h["activation"], seed=None, normalization=norm, params=params)


def save_checkpoint(model: CoupledModel, state: TrainState | None, path) -> None:
    arrays = [("params", model.params)]
    header = {"version": CHECKPOINT_VERSION, "model": model_header(model), "optimizer": None,
              "seed": None, "iteration": 0, "rng_state": None}
    if state is not None:
        opt = state.optimizer
        header["optimizer"] = {"step": opt.step, "lr": opt.lr, "beta1": opt.beta1,
                               "beta2": opt.beta2, "eps": opt.eps}
        header.update(seed=state.seed, iteration=state.iteration,
                      rng_state=state.rng.bit_generator.state)
        arrays += [("adam_m", opt.m[0]), ("adam_v", opt.v[0])]
    header["arrays"] = [{"name": n, "size": int(a.size)} for n, a in arrays]
    blob = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    atomic_write(path, MAGIC + struct.pack("<Q", len(blob)) + blob + payload)


def load_checkpoint(path) -> tuple[CoupledModel, TrainState | None]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {data[:4]!r})")
    if len(data) < 12:
        raise CheckpointError(f"{path}: truncated header")
    (n,) = struct.unpack("<Q", data[4:12])
    try:
        header = json.loads(data[12:12 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    offset = 12 + n
    arrays = {}
    for spec in header["arrays"]:
        size = spec["size"] * 8
        if offset + size > len(data):
            raise CheckpointError(f"{path}: truncated payload")
        arrays[spec["name"]] = np.frombuffer(data[offset:offset + size], dtype="<f8").astype(np.float64)
        offset += size
    if offset != len(data):
        raise CheckpointError(f"{path}: trailing bytes after payload")
    model = model_from_header(header["model"], arrays["params"])
    state = None
    if header["optimizer"] is not None:
        o = header["optimizer"]
        opt = OptimizerState([arrays["adam_m"]], [arrays["adam_v"]], o["step"], o["lr"],
                             o["beta1"], o["beta2"], o["eps"])
        rng = np.random.default_rng()
        rng.bit_generator.state = header["rng_state"]
        state = TrainState(opt, rng, header["iteration"], header["seed"])
    return model, state


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
