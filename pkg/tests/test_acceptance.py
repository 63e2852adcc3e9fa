"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The experiment criteria train full-size models and take a few minutes each.
"""

import time

import numpy as np
import pytest
import sympy as sp

from conftest import random_pair
from skillbridge.cli import main
from skillbridge.cnmp import (BlendWeights, CoupledModel, ObservationSet, aggregate_latent, blend_latents,
                             loss_and_grad, query_trajectory, sample_training_batch)
from skillbridge.evaluation import reconstruction_rmse
from skillbridge.experiments import PRESETS, moving_average, run
from skillbridge.robots import (ARM, DEFAULT_ARM, MOBILE, arm_task_path, fk_planar, make_dataset,
                                radial_contact_index)
from skillbridge.training import TrainConfig, load_checkpoint, train


# ---- 1. gradient correctness --------------------------------------------------------

def fd_gradient(model, samples, h=1e-5):
    num = np.empty_like(model.params)
    for i in range(model.params.size):
        old = model.params[i]
        model.params[i] = old + h
        up = loss_and_grad(model, samples, need_grad=False)[0]
        model.params[i] = old - h
        down = loss_and_grad(model, samples, need_grad=False)[0]
        model.params[i] = old
        num[i] = (up - down) / (2 * h)
    return num


def test_criterion_1_gradient_check(criterion):
    rng = np.random.default_rng(2024)
    widths = {"a": 2, "b": 3}
    start = time.perf_counter()
    worst = 0.0
    failures = 0
    for k in range(100):
        enc = tuple(int(v) for v in rng.integers(2, 5, size=rng.integers(1, 3)))
        dec = tuple(int(v) for v in rng.integers(2, 5, size=rng.integers(1, 3)))
        model = CoupledModel.create(widths, d_lat=4, encoder_hidden=enc, decoder_hidden=dec, seed=k)
        model.params[:] += rng.normal(scale=0.1, size=model.params.size)
        pairs = [random_pair(rng, widths, 8, f"p{i}") for i in range(2)]
        sample = sample_training_batch(pairs, rng, obs_max=5)
        _, grad, _ = loss_and_grad(model, [sample])
        num = fd_gradient(model, [sample])
        err = np.abs(grad - num)
        tol = np.maximum(1e-4 * np.maximum(np.abs(grad), np.abs(num)), 1e-7)
        failures += int(np.sum(err > tol))
        worst = max(worst, float(np.max(err / tol)))
    elapsed = time.perf_counter() - start
    criterion(1, failures == 0 and elapsed < 60.0,
              f"100 models, {failures} mismatched gradients, worst err/tol {worst:.3f}, {elapsed:.1f}s")


# ---- 2. blending and aggregation algebra ------------------------------------------------

def test_criterion_2_blend_algebra(criterion):
    rng = np.random.default_rng(7)
    bad = {"one_hot": 0, "hull": 0, "perm": 0}
    for _ in range(1000):
        robots = [f"r{i}" for i in range(int(rng.integers(2, 5)))]
        width = int(rng.integers(1, 16))
        lat = {r: rng.normal(scale=rng.uniform(0.1, 10), size=width) for r in robots}
        chosen = robots[int(rng.integers(len(robots)))]
        if not np.array_equal(blend_latents(lat, BlendWeights.one_hot(robots, chosen)), lat[chosen]):
            bad["one_hot"] += 1
        p = rng.dirichlet(np.ones(len(robots)))
        p[-1] = max(0.0, 1.0 - p[:-1].sum())
        out = blend_latents(lat, BlendWeights(dict(zip(robots, p))))
        stack = np.vstack(list(lat.values()))
        slack = 1e-12 * np.max(np.abs(stack))
        if np.any(out < stack.min(0) - slack) or np.any(out > stack.max(0) + slack):
            bad["hull"] += 1
        items = list(rng.normal(size=(int(rng.integers(1, 12)), width)))
        shuffled = [items[i] for i in rng.permutation(len(items))]
        if np.max(np.abs(aggregate_latent(items) - aggregate_latent(shuffled))) > 1e-12:
            bad["perm"] += 1
    criterion(2, not any(bad.values()), f"1000 cases, violations {bad}")


# ---- 3. kinematics ----------------------------------------------------------------------

def symbolic_fk(lengths, angles):
    T = sp.eye(3)
    for l, q in zip(lengths, angles):
        q = sp.nsimplify(q)
        T = T * sp.Matrix([[sp.cos(q), -sp.sin(q), 0], [sp.sin(q), sp.cos(q), 0], [0, 0, 1]])
        T = T * sp.Matrix([[1, 0, sp.nsimplify(l)], [0, 1, 0], [0, 0, 1]])
    return np.array([float(sp.N(T[0, 2], 30)), float(sp.N(T[1, 2], 30))])


def test_criterion_3_kinematics(criterion):
    worst_ik = 0.0
    n_traj = 0
    for preset in PRESETS.values():
        ds = preset.dataset()
        for pair in ds.pairs:
            target = arm_task_path(ds.family, pair.parameter, ds.T)
            res = np.linalg.norm(fk_planar(ds.arm_spec, pair[ARM].states) - target, axis=1)
            worst_ik = max(worst_ik, float(res.max()))
            n_traj += 1
    rng = np.random.default_rng(11)
    configs = rng.uniform(-np.pi, np.pi, size=(20, 3))
    worst_fk = max(float(np.max(np.abs(fk_planar(DEFAULT_ARM, q) - symbolic_fk(DEFAULT_ARM.link_lengths, q))))
                   for q in configs)
    criterion(3, worst_ik < 1e-3 and worst_fk < 1e-9,
              f"FK(IK) max residual {worst_ik:.2e} m over {n_traj} trajectories; "
              f"FK vs symbolic max {worst_fk:.2e} on 20 configs")


# ---- 4-6. transfer experiments ----------------------------------------------------------

@pytest.mark.slow
def test_criterion_4_same_path(criterion):
    exp = run("same_path")
    results, summary = exp.final()
    means = {k: summary[k]["rmse"][0] for k in ("arm->mobile", "mobile->arm")}
    worst = {k: max(r.rmse for r in results if f"{r.source}->{r.target}" == k) for k in means}
    ok = all(v < 0.05 for v in means.values()) and exp.report.wall_time < 1200
    criterion(4, ok, f"test RMSE mean {({k: round(v, 4) for k, v in means.items()})}, "
                     f"worst pair {({k: round(v, 4) for k, v in worst.items()})}, "
                     f"training {exp.report.wall_time:.0f}s")


@pytest.mark.slow
def test_criterion_5_divergent_path(criterion):
    exp = run("divergent_path", eval_interval=1000)
    checks = {}
    ok = True
    for key in ("arm->mobile", "mobile->arm"):
        avg = moving_average(exp.history, key, "final_position_error", window=3)
        e = [avg[5000], avg[15000], avg[30000]]
        checks[key] = [round(v, 4) for v in e]
        ok &= e[0] >= e[1] >= e[2]
    final_mobile = exp.history[30000]["arm->mobile"]["final_position_error"][0]
    ok &= final_mobile < 0.05
    criterion(5, ok, f"final-position error (m) at 5k/15k/30k {checks}; mobile target at 30k {final_mobile:.4f} m")


@pytest.mark.slow
def test_criterion_6_radial_push(criterion):
    exp = run("radial_push")
    results, _ = exp.final()
    dir_err = {r.parameter: r.directional_error for r in results if (r.source, r.target) == (ARM, MOBILE)}
    arms = [r for r in results if (r.source, r.target) == (MOBILE, ARM)]
    k = radial_contact_index(exp.dataset.T)
    norm = exp.model.normalization[ARM]
    worst_pair = 0.0
    for i in range(len(arms)):
        for j in range(i + 1, len(arms)):
            _, agg = reconstruction_rmse(arms[i].generated.states[:k], arms[j].generated.states[:k], norm)
            worst_pair = max(worst_pair, agg)
    ok = len(dir_err) == 4 and max(dir_err.values()) <= 10.0 and worst_pair <= 0.05
    criterion(6, ok, f"directional error (deg) {({a: round(v, 2) for a, v in sorted(dir_err.items())})}; "
                     f"arm approach pairwise RMSE max {worst_pair:.4f}")


# ---- 7. determinism and persistence -------------------------------------------------------

def test_criterion_7_determinism(criterion, tmp_path):
    ds = PRESETS["same_path"].dataset()

    def fresh():
        return CoupledModel.create(ds.widths, seed=5, normalization=ds.normalization)

    cfg = dict(iterations=300, learning_rate=1e-3, seed=5, log_interval=50)
    a, ra = train(fresh(), ds, TrainConfig(**cfg))
    b, rb = train(fresh(), ds, TrainConfig(**cfg))
    same_seed = a.params.tobytes() == b.params.tobytes() and ra.loss_curve == rb.loss_curve

    _, rc = train(fresh(), ds, TrainConfig(**cfg, checkpoint_interval=100, checkpoint_dir=str(tmp_path)))
    model, state = load_checkpoint(rc.checkpoints[0])
    resumed, rr = train(model, ds, TrainConfig(**cfg), state=state)
    resume_ok = resumed.params.tobytes() == a.params.tobytes() and rr.loss_curve == ra.loss_curve[2:]

    paths = [tmp_path / f"d{i}.json" for i in range(2)]
    for p in paths:
        assert main(["gen", "divergent_path", "--count", "9", "--train", "7", "--out", str(p)]) == 0
    regen_ok = paths[0].read_bytes() == paths[1].read_bytes()
    criterion(7, same_seed and resume_ok and regen_ok,
              f"same seed bit-identical {same_seed}; resume from iteration 100 equals uninterrupted {resume_ok}; "
              f"dataset regeneration byte-identical {regen_ok}")


# ---- 8. overfit oracle ----------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_8_overfit(criterion):
    ds = make_dataset("same_path", [0.55])
    pair = ds.pairs[0]
    preset = PRESETS["same_path"]
    model = CoupledModel.create(ds.widths, seed=0, normalization=ds.normalization, **preset.model)
    cfg = preset.config(iterations=20000, seed=0)
    model, _ = train(model, ds, cfg)
    errs = {}
    for r in (ARM, MOBILE):
        obs = ObservationSet.from_indices(pair[r], np.arange(ds.T))
        gen = query_trajectory(model, obs, r, pair.times)
        errs[r] = reconstruction_rmse(gen, pair[r], model.normalization[r])[1]
    criterion(8, max(errs.values()) < 0.02,
              f"self-reconstruction RMSE after 20k iterations {({k: round(v, 5) for k, v in errs.items()})}")
