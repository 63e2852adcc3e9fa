"""Command-line entry point: gen, train, transfer, eval and plot.

Run ``skillbridge <command> --help`` for the flags of each command.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .cnmp import CoupledModel, ObservationSet, query_trajectory
from .datafile import FormatError, channel_names, read_dataset, read_trajectories_csv, trajectories_csv, write_dataset
from .evaluation import REFERENCE_OBS_INDICES, results_table, scaled_indices, transfer_sweep
from .fileio import atomic_write
from .robots import (DEFAULT_ARM, DEFAULT_T, FAMILIES, ROBOTS, ArmSpec, IKError, evenly_spaced,
                     make_interleaved_dataset, make_split_dataset)
from .training import (CheckpointError, TrainConfig, TrainingDiverged, load_checkpoint, read_loss_log, train,
                       write_loss_log)

log = logging.getLogger("skillbridge")

# options whose values may start with a minus sign, e.g. "-75,-45"
_LIST_OPTIONS = ("--params", "--train-params", "--test-params", "--train-angles", "--test-angles",
                 "--obs-indices", "--links")

MODEL_KEYS = ("d_lat", "encoder_hidden", "decoder_hidden", "activation")
RUN_KEYS = ("dataset", "output_dir", "model", "train")
TRAIN_KEYS = tuple(f.name for f in dataclasses.fields(TrainConfig) if f.name != "checkpoint_dir")


class CLIError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _join_list_values(argv: Sequence[str]) -> list[str]:
    out: list[str] = []
    it = iter(argv)
    for tok in it:
        if tok in _LIST_OPTIONS:
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


# ---- run config ----------------------------------------------------------------

@dataclasses.dataclass
class RunConfig:
    dataset: Path
    output_dir: Path
    model: dict
    train: TrainConfig

    @classmethod
    def from_dict(cls, d: dict, base: Path = Path(".")) -> "RunConfig":
        unknown = set(d) - set(RUN_KEYS)
        if unknown:
            raise CLIError(f"unknown config keys: {sorted(unknown)}")
        model = dict(d.get("model", {}))
        bad = set(model) - set(MODEL_KEYS)
        if bad:
            raise CLIError(f"unknown model keys: {sorted(bad)}")
        tr = dict(d.get("train", {}))
        bad = set(tr) - set(TRAIN_KEYS)
        if bad:
            raise CLIError(f"unknown train keys: {sorted(bad)}")
        if "dataset" not in d:
            raise CLIError("config needs a 'dataset' path")
        dataset = (base / d["dataset"]).resolve()
        if not dataset.is_file():
            raise CLIError(f"dataset not found: {dataset}")
        out = (base / d.get("output_dir", "run")).resolve()
        try:
            config = TrainConfig(**tr)
        except (TypeError, ValueError) as exc:
            raise CLIError(f"bad train settings: {exc}") from exc
        return cls(dataset, out, model, config)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CLIError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(d, dict):
            raise CLIError(f"{path}: config must be a JSON object")
        return cls.from_dict(d, path.parent)

    def to_dict(self) -> dict:
        tr = dataclasses.asdict(self.train)
        tr.pop("checkpoint_dir")
        return {"dataset": str(self.dataset), "output_dir": str(self.output_dir), "model": self.model, "train": tr}


# ---- commands ------------------------------------------------------------------

def _arm_spec(args) -> ArmSpec:
    return ArmSpec(tuple(args.links)) if args.links else DEFAULT_ARM


def cmd_gen(args) -> int:
    spec = _arm_spec(args)
    train_p = args.train_params
    test_p = args.test_params or []
    if train_p is not None:
        if args.count is not None or args.params is not None:
            raise CLIError("give either --train-params/--test-params or --count/--params, not both")
        ds = make_split_dataset(args.family, train_p, test_p, args.T, spec)
    else:
        if args.params is not None:
            params = args.params
        elif args.count is not None:
            params = evenly_spaced(args.family, args.count)
        else:
            raise CLIError("give --count, --params or --train-params")
        n_train = len(params) if args.train is None else args.train
        ds = make_interleaved_dataset(args.family, params, n_train, args.T, spec)
    out = Path(args.out or f"{args.family}.json")
    write_dataset(out, ds)
    print(f"wrote {out}: family={ds.family} pairs={len(ds)} train={len(ds.train)} test={len(ds.test)} T={ds.T}")
    for r in ROBOTS:
        print(f"  {r}: {', '.join(channel_names(ds, r))}")
    return 0


def _check_layout(model: CoupledModel, ds) -> None:
    for r in model.robots:
        if r not in ds.widths:
            raise CLIError(f"checkpoint robot {r!r} is missing from the dataset")
        if model.widths[r] != ds.widths[r]:
            raise CLIError(f"channel layout mismatch for {r}: checkpoint has {model.widths[r]} channels, "
                           f"dataset has {ds.widths[r]}")


def cmd_train(args) -> int:
    if args.config:
        run = RunConfig.load(args.config)
    elif args.dataset:
        run = RunConfig.from_dict({"dataset": args.dataset, "output_dir": args.out or "run"}, Path("."))
    else:
        raise CLIError("give --config or --dataset")
    overrides = {k: v for k, v in (("seed", args.seed), ("iterations", args.iterations),
                                   ("learning_rate", args.lr)) if v is not None}
    if overrides:
        run.train = dataclasses.replace(run.train, **overrides)
    if args.out and args.config:
        run.output_dir = Path(args.out).resolve()
    ds = read_dataset(run.dataset)
    model = CoupledModel.create(ds.widths, seed=run.train.seed, normalization=ds.normalization, **run.model)
    out = run.output_dir
    out.mkdir(parents=True, exist_ok=True)
    cfg = dataclasses.replace(run.train, checkpoint_dir=str(out / "checkpoints"))
    atomic_write(out / "run.json", (json.dumps(run.to_dict(), indent=2, sort_keys=True) + "\n").encode())
    model, report = train(model, ds, cfg)
    final = out / "model.skb"
    atomic_write(final, Path(report.checkpoint_path).read_bytes())
    write_loss_log(out / "loss.csv", report.loss_curve)
    last = report.loss_curve[-1][1] if report.loss_curve else float("nan")
    print(f"trained {cfg.iterations} iterations in {report.wall_time:.1f}s, final loss {last:.4f}")
    print(f"checkpoint: {final}\nloss log: {out / 'loss.csv'}")
    return 0


def _load_pair_inputs(args):
    model, _ = load_checkpoint(args.checkpoint)
    ds = read_dataset(args.dataset)
    _check_layout(model, ds)
    pairs = {"test": ds.test, "train": ds.train, "all": ds.pairs}[args.split]
    if args.task:
        wanted = set(args.task)
        pairs = [p for p in ds.pairs if p.task_id in wanted]
        missing = wanted - {p.task_id for p in pairs}
        if missing:
            raise CLIError(f"unknown task ids: {sorted(missing)}")
    if not pairs:
        raise CLIError(f"no pairs selected from {args.dataset}")
    return model, ds, pairs


def _obs_indices(args, T: int) -> list[int]:
    if args.obs_count < 1:
        raise CLIError("--obs-count must be at least 1")
    idx = scaled_indices(args.obs_indices, T)[:args.obs_count]
    if not idx or min(idx) < 0 or max(idx) >= T:
        raise CLIError(f"observation indices must lie in [0, {T - 1}]")
    return idx


def cmd_transfer(args) -> int:
    model, ds, pairs = _load_pair_inputs(args)
    idx = _obs_indices(args, ds.T)
    rows = []
    for pair in pairs:
        obs = ObservationSet.from_indices(pair[args.source], idx)
        gen = query_trajectory(model, obs, args.target, pair.times)
        rows.append({"task_id": pair.task_id, "parameter": pair.parameter, "source": args.source,
                     "target": args.target, "generated": gen, "truth": pair[args.target]})
    atomic_write(args.out, trajectories_csv(rows, channel_names(ds, args.target)).encode())
    print(f"wrote {len(rows)} generated {args.target} trajectories to {args.out}")
    return 0


def cmd_eval(args) -> int:
    model, ds, pairs = _load_pair_inputs(args)
    idx = _obs_indices(args, ds.T)
    results, summary = transfer_sweep(model, ds, obs_indices=idx, split=args.split, pairs=pairs,
                                      obs_count=None, obs_draws=args.obs_draws,
                                      rng=np.random.default_rng(args.seed), rescale=False)
    table = results_table(results)
    if args.out:
        atomic_write(args.out, table.encode())
    sys.stdout.write(table)
    for key, entry in summary.items():
        parts = [f"{name} {m:.4f}+-{s:.4f}" for name, (m, s) in
                 ((k, v) for k, v in entry.items() if k != "n")]
        print(f"{key}: n={entry['n']} " + " ".join(parts))
    return 0


def cmd_plot(args) -> int:
    from .plotting import plot_loss, plot_trajectories

    src = Path(args.input)
    first = src.read_text().split("\n", 1)[0]
    if first.startswith("task_id,"):
        channels, runs = read_trajectories_csv(src)
        if args.task:
            runs = [r for r in runs if r["task_id"] in set(args.task)]
        if not runs:
            raise CLIError("no trajectories selected")
        plot_trajectories(channels, runs, args.out, args.title)
    else:
        try:
            curve = read_loss_log(src)
        except ValueError as exc:
            raise FormatError(f"{src}: neither a trajectory file nor a loss log") from exc
        plot_loss(curve, args.out, args.title)
    print(f"wrote {args.out}")
    return 0


# ---- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    ap = argparse.ArgumentParser(prog="skillbridge", formatter_class=fmt,
                                 description="Coupled movement primitives for arm <-> mobile robot skill transfer.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a demonstration dataset", formatter_class=fmt)
    g.add_argument("family", choices=FAMILIES)
    g.add_argument("--count", type=int, help="number of evenly spaced task parameters")
    g.add_argument("--params", type=_floats, help="explicit task parameters")
    g.add_argument("--train", type=int, help="training pairs; the rest are test pairs inside the range")
    g.add_argument("--train-params", "--train-angles", dest="train_params", type=_floats,
                   help="training task parameters")
    g.add_argument("--test-params", "--test-angles", dest="test_params", type=_floats,
                   help="test task parameters")
    g.add_argument("--T", type=int, default=DEFAULT_T, help="samples per trajectory")
    g.add_argument("--links", type=_floats, help="arm link lengths in meters (default 1.0,0.8,0.5)")
    g.add_argument("--out", help="output file (default <family>.json)")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model from a run config", formatter_class=fmt)
    t.add_argument("--config", help="JSON run config (dataset, output_dir, model, train)")
    t.add_argument("--dataset", help="dataset file when no config is given")
    t.add_argument("--out", help="output directory (overrides the config)")
    t.add_argument("--seed", type=int, help="training seed (overrides the config)")
    t.add_argument("--iterations", type=int, help="optimizer steps (overrides the config)")
    t.add_argument("--lr", type=float, help="learning rate (overrides the config)")
    t.set_defaults(func=cmd_train)

    for name, helptext in (("transfer", "generate one robot's trajectories from another's observations"),
                           ("eval", "transfer metrics table over every robot direction")):
        p = sub.add_parser(name, help=helptext, formatter_class=fmt)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--dataset", required=True)
        p.add_argument("--split", choices=("test", "train", "all"), default="test")
        p.add_argument("--task", action="append", help="restrict to these task ids (repeatable)")
        p.add_argument("--obs-indices", type=_ints, default=list(REFERENCE_OBS_INDICES),
                       help="observed sample indices on a 128-step grid, rescaled to the dataset's T")
        p.add_argument("--obs-count", type=int, default=3, help="use only the first N observation indices")
        if name == "transfer":
            p.add_argument("--source", choices=ROBOTS, required=True)
            p.add_argument("--target", choices=ROBOTS, required=True)
            p.add_argument("--out", required=True, help="trajectory CSV")
            p.set_defaults(func=cmd_transfer)
        else:
            p.add_argument("--obs-draws", type=int, default=0, help="extra runs with random observation indices")
            p.add_argument("--seed", type=int, default=0, help="seed for random observation draws")
            p.add_argument("--out", help="also write the table as CSV")
            p.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="SVG from a trajectory CSV or a loss log", formatter_class=fmt)
    pl.add_argument("input")
    pl.add_argument("--out", required=True, help="output .svg")
    pl.add_argument("--task", action="append", help="restrict to these task ids (repeatable)")
    pl.add_argument("--title")
    pl.set_defaults(func=cmd_plot)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(_join_list_values(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (CLIError, FormatError, CheckpointError, TrainingDiverged, IKError, ValueError, KeyError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
