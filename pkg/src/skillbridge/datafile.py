"""On-disk formats: the SKBD1 dataset file and the trajectory CSV interchange.

A dataset file is a single JSON document. Floats are written with Python's
shortest round-trip repr and keys are sorted, so write -> read -> write is
byte-identical and regeneration with the same arguments reproduces the file.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .cnmp import ChannelNorm, DemonstrationPair, Trajectory
from .robots import ARM, MOBILE, ArmSpec, Dataset, channel_layout
from .fileio import atomic_write

DATASET_FORMAT = "SKBD1"


class FormatError(ValueError):
    pass


def dataset_to_dict(ds: Dataset) -> dict:
    layout = channel_layout(ds.arm_spec)
    norm = ds.normalization or {}
    return {
        "format": DATASET_FORMAT,
        "family": ds.family,
        "T": ds.T,
        "robots": {
            ARM: {"kind": "planar_arm", "spec": ds.arm_spec.to_dict(),
                  "channels": [{"name": n, "unit": u} for n, u in layout[ARM]]},
            MOBILE: {"kind": "diff_drive",
                     "channels": [{"name": n, "unit": u} for n, u in layout[MOBILE]]},
        },
        "normalization": {r: {"mean": c.mean.tolist(), "scale": c.scale.tolist()} for r, c in norm.items()},
        "records": [
            {
                "task_id": p.task_id,
                "parameter": float(p.parameter),
                "split": p.split,
                "times": p.times.tolist(),
                "states": {r: p[r].states.tolist() for r in (ARM, MOBILE)},
            }
            for p in ds.pairs
        ],
    }


def dataset_from_dict(d: dict) -> Dataset:
    if d.get("format") != DATASET_FORMAT:
        raise FormatError(f"expected dataset format {DATASET_FORMAT}, found {d.get('format')!r}")
    try:
        spec = ArmSpec.from_dict(d["robots"][ARM]["spec"])
        T = int(d["T"])
        widths = {r: len(d["robots"][r]["channels"]) for r in (ARM, MOBILE)}
        pairs = []
        for rec in d["records"]:
            trajs = {r: Trajectory(r, rec["times"], rec["states"][r]) for r in (ARM, MOBILE)}
            for r, t in trajs.items():
                if len(t) != T or t.width != widths[r]:
                    raise FormatError(f"record {rec['task_id']}: {r} layout does not match the header")
            pairs.append(DemonstrationPair(rec["task_id"], trajs, rec["parameter"], rec["split"]))
        norm = {r: ChannelNorm(np.array(v["mean"], dtype=np.float64), np.array(v["scale"], dtype=np.float64))
                for r, v in d["normalization"].items()}
        for r, c in norm.items():
            if c.mean.size != widths[r] or c.scale.size != widths[r]:
                raise FormatError(f"normalization for {r} does not cover every channel")
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed dataset file: {exc}") from exc
    return Dataset(d["family"], pairs, T, spec, norm or None)


def dumps_dataset(ds: Dataset) -> bytes:
    return (json.dumps(dataset_to_dict(ds), sort_keys=True, separators=(",", ":")) + "\n").encode()


def write_dataset(path, ds: Dataset) -> None:
    atomic_write(path, dumps_dataset(ds))


def read_dataset(path) -> Dataset:
    try:
        d = json.loads(Path(path).read_bytes())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: not a dataset file") from exc
    return dataset_from_dict(d)


def channel_names(ds_or_spec, robot: str) -> list[str]:
    spec = getattr(ds_or_spec, "arm_spec", ds_or_spec)
    return [n for n, _ in channel_layout(spec)[robot]]


TRAJ_META = ("task_id", "parameter", "source", "target", "t")


def trajectories_csv(rows: Sequence[dict], channels: Sequence[str]) -> str:
    """Serialize generated trajectories.

    Each row dict holds ``task_id, parameter, source, target`` plus
    ``generated`` (a Trajectory with ``std``) and optional ``truth``.
    Columns: the metadata, ``t``, then ``<ch>``, ``<ch>_std``, ``<ch>_true`` per channel.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = list(TRAJ_META)
    for ch in channels:
        header += [ch, f"{ch}_std", f"{ch}_true"]
    w.writerow(header)
    for row in rows:
        gen = row["generated"]
        truth = row.get("truth")
        for k, t in enumerate(gen.times):
            line = [row["task_id"], repr(float(row["parameter"])), row["source"], row["target"], repr(float(t))]
            for j in range(len(channels)):
                line += [repr(float(gen.states[k, j])),
                         repr(float(gen.std[k, j])) if gen.std is not None else "",
                         repr(float(truth.states[k, j])) if truth is not None else ""]
            w.writerow(line)
    return buf.getvalue()


def read_trajectories_csv(path) -> tuple[list[str], list[dict]]:
    """Inverse of :func:`trajectories_csv`; returns channel names and one dict per run."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[:len(TRAJ_META)]) != TRAJ_META:
            raise FormatError(f"{path}: not a trajectory file")
        channels = header[len(TRAJ_META)::3]
        runs: dict[tuple, dict] = {}
        for line in reader:
            key = tuple(line[:4])
            run = runs.setdefault(key, {"task_id": line[0], "parameter": float(line[1]), "source": line[2],
                                        "target": line[3], "t": [], "generated": [], "std": [], "truth": []})
            run["t"].append(float(line[4]))
            vals = line[len(TRAJ_META):]
            run["generated"].append([float(v) for v in vals[0::3]])
            run["std"].append([float(v) if v else np.nan for v in vals[1::3]])
            run["truth"].append([float(v) if v else np.nan for v in vals[2::3]])
    out = []
    for run in runs.values():
        for k in ("t", "generated", "std", "truth"):
            run[k] = np.asarray(run[k], dtype=np.float64)
        out.append(run)
    return channels, out
