"""Acceptance suite: the shipped correctness criteria, one test each.

Each test prints one `[PASS]`/`[FAIL]` line with its runtime (run pytest
with -s to see them). Scenario parameters come from the packaged fixture
configs, so the CLI and this suite exercise the same experiments.
"""

import json
import time
from contextlib import contextmanager
from dataclasses import replace
from importlib import resources

import numpy as np

import tpmove as tp
from tpmove.config import (
    build_cost,
    build_demos,
    build_inputs,
    build_train_frames,
    parse_config,
    resolve_q0,
)
from tpmove.policy import _FrameRollouts


@contextmanager
def criterion(name: str, limit_seconds: float):
    t0 = time.perf_counter()
    try:
        yield
    except Exception:
        print(f"[FAIL] {name} ({time.perf_counter() - t0:.1f}s)")
        raise
    elapsed = time.perf_counter() - t0
    ok = elapsed < limit_seconds
    print(f"[{'PASS' if ok else 'FAIL'}] {name} ({elapsed:.1f}s, limit {limit_seconds:.0f}s)")
    assert ok, f"{name} exceeded the runtime limit: {elapsed:.1f}s >= {limit_seconds}s"


def fixture_config(name: str):
    raw = json.loads((resources.files("tpmove") / f"configs/{name}.json").read_text())
    return parse_config(raw)


def pipeline_from(cfg):
    """Corpus, fitted local models (task-frame mapped), time grid."""
    demos = build_demos(cfg)
    train_frames = build_train_frames(cfg, demos)
    models = tp.fit_local_models(demos, train_frames, cfg.n_components, cfg.block, **cfg.em_kwargs)
    times = build_inputs(cfg, demos)
    mapped = [models[i] for i in cfg.model_map]
    return demos, models, mapped, times


def problem_from(cfg, mapped, times, frames=None):
    frames = tuple(cfg.task_frames if frames is None else frames)
    cost = build_cost(cfg, times)
    start, _ = tp.reproduce_moments(mapped, frames, times)
    q0 = resolve_q0(cfg, start[0])
    return tp.OptimizationProblem(
        models=tuple(mapped), frames=frames, inputs=times, cost=cost,
        arm=cfg.arm, q0=q0, free_mask=cfg.free_mask,
    )


def random_spd(rng, d, scale=1.0):
    a = rng.normal(size=(d, d))
    return scale * (a @ a.T + 0.3 * np.eye(d))


def random_rotation(rng, d):
    if d == 3:
        return tp.rotation_from_angles(*rng.uniform(-np.pi, np.pi, 3))
    if d == 2:
        return tp.planar_rotation(rng.uniform(-np.pi, np.pi))
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    return q


def random_local_model(rng, block, k=3):
    d = block.dim
    comps = tuple(tp.Gaussian(rng.normal(size=d), random_spd(rng, d)) for _ in range(k))
    w = rng.uniform(0.2, 1.0, k)
    return tp.LocalModel(0, tp.GMM(w / w.sum(), comps), block)


def test_criterion_1_gaussian_product_suite():
    with criterion("1 gaussian-product suite (additivity, permutation, cost gradient)", 10.0):
        rng = np.random.default_rng(1001)
        for _ in range(1000):
            d = int(rng.integers(1, 7))
            p = int(rng.integers(1, 6))
            factors = []
            for _ in range(p):
                base = tp.Gaussian(rng.normal(size=d), random_spd(rng, d))
                rot = random_rotation(rng, d)
                factors.append(tp.affine_transform(base, rot, rng.normal(size=d)))
            prod = tp.gaussian_product(factors)
            precisions = [np.linalg.inv(f.cov) for f in factors]
            if p > 1:
                assert np.max(np.abs(np.linalg.inv(prod.cov) - np.sum(precisions, axis=0))) < 1e-9
                perm = rng.permutation(p)
                prod2 = tp.gaussian_product([factors[i] for i in perm])
                assert np.max(np.abs(prod.mean - prod2.mean)) < 1e-9
                assert np.max(np.abs(prod.cov - prod2.cov)) < 1e-9
            grad = np.sum([2.0 * pr @ (prod.mean - f.mean) for pr, f in zip(precisions, factors)], axis=0)
            assert np.linalg.norm(grad) <= 1e-8


def test_criterion_2_duality_suite():
    with criterion("2 duality: adjusted frames vs dual-transformed models", 30.0):
        block = tp.BlockSpec((0,), (1, 2, 3))
        rng = np.random.default_rng(2002)
        inputs = np.linspace(0.0, 1.0, 8)
        for _ in range(200):
            models, frames, adjusted, duals = [], [], [], []
            for _ in range(2):
                model = random_local_model(rng, block)
                frame = tp.TaskFrame.from_blocks(
                    np.eye(1), rng.normal(size=1) * 0.1,
                    random_rotation(rng, 3), rng.normal(size=3),
                )
                adj = tp.FrameAdjustment(rng.uniform(-np.pi, np.pi, 3), rng.normal(size=3))
                new = tp.adjust_frame(frame, adj)
                models.append(model)
                frames.append(frame)
                adjusted.append(new)
                duals.append(tp.dual_model_transform(model, frame, new))
            m1, c1 = tp.reproduce_moments(models, adjusted, inputs)
            m2, c2 = tp.reproduce_moments(duals, frames, inputs)
            assert np.max(np.abs(m1 - m2)) < 1e-9
            assert np.max(np.abs(c1 - c2)) < 1e-9


def test_criterion_3_em_monotonicity():
    with criterion("3 EM log-likelihood monotonicity over 100 seeded datasets", 60.0):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            k = int(rng.integers(2, 5))
            centers = rng.normal(0.0, 2.5, size=(k, 2))
            data = np.vstack([rng.normal(c, rng.uniform(0.3, 1.0), size=(60, 2)) for c in centers])
            model = tp.em_fit(data, k, init="kmeans++", seed=seed)
            trace = np.array(model.log_likelihood_trace)
            assert np.all(np.diff(trace) >= -1e-9), f"seed {seed}: decreasing log-likelihood"


def test_criterion_4_confidence_ordering():
    with criterion("4 confidence ordering on the three-group reaching scenario", 60.0):
        cfg = fixture_config("reaching_confidence")
        demos, models, mapped, times = pipeline_from(cfg)
        frames = cfg.task_frames
        groups = cfg.confidence_groups
        ends = {
            label: tp.reproduce_moments(mapped, frames, times, conf)[0][-1]
            for label, conf in groups.items()
        }
        origin2 = frames[1].output_blocks()[1]
        origin3 = frames[2].output_blocks()[1]
        d2 = {k: np.linalg.norm(v - origin2) for k, v in ends.items()}
        d3 = {k: np.linalg.norm(v - origin3) for k, v in ends.items()}
        # high confidence on frame 2 -> terminate closest to frame 2's origin,
        # the balanced group sits between the two extremes on both measures
        assert d2["frame2_high"] < d2["balanced"] < d2["frame3_high"]
        assert d3["frame3_high"] < d3["balanced"] < d3["frame2_high"]
        # all-ones confidences reproduce the unweighted product exactly
        plain, _ = tp.reproduce_moments(mapped, frames, times)
        ones, _ = tp.reproduce_moments(mapped, frames, times, np.ones(len(frames)))
        assert np.max(np.abs(plain - ones)) <= 1e-12


def test_criterion_5_pole_task_ordering():
    with criterion("5 pole task: optimized beats all fixed parameter groups", 300.0):
        cfg = fixture_config("pole")
        demos, models, mapped, times = pipeline_from(cfg)
        problem = problem_from(cfg, mapped, times)
        baseline_costs = []
        for raw_frame in cfg.extras["baseline_frames"]:
            frame2 = tp.frame_from_dict(raw_frame, cfg.block)
            ev = _FrameRollouts(replace(problem, frames=(cfg.task_frames[0], frame2)))
            baseline_costs.append(ev.evaluate(np.zeros(ev.dim()))[0])
        wins = 0
        for seed in range(5):
            result = tp.optimize(problem, replace(cfg.optimizer, seed=seed))
            assert result.n_rollouts >= cfg.optimizer.total_rollouts
            if all(result.best_cost < b for b in baseline_costs):
                wins += 1
        assert wins >= 4, f"optimized beat the baselines on only {wins}/5 seeds"


def test_criterion_6_convergence_comparison():
    with criterion("6 frame search converges no slower than model-mean search", 600.0):
        cfg = fixture_config("reach_point")
        demos, models, mapped, times = pipeline_from(cfg)
        frame_curves, mean_curves = [], []
        problem = None
        for target in ([0.3, 0.3, 0.2], cfg.extras["second_target"]):
            frames = [cfg.task_frames[0], tp.TaskFrame.at_position(target)]
            problem = problem_from(cfg, mapped, times, frames=frames)
            for seed in range(5):
                opt_cfg = replace(cfg.optimizer, seed=seed)
                frame_curves.append(tp.optimize(problem, opt_cfg).noise_free_costs)
                mean_cfg = replace(opt_cfg, noise_std=cfg.extras["gmm_mean_noise_std"])
                mean_curves.append(tp.optimize_gmm_means(problem, mean_cfg).noise_free_costs)
        assert problem.theta_dim < tp.mean_search_dim(problem)
        frame_mean = np.mean(frame_curves, axis=0)
        model_mean = np.mean(mean_curves, axis=0)
        h = cfg.optimizer.rollouts_per_update
        checkpoints = [u for u in range(len(frame_mean)) if (u + 1) * h > 100]
        assert checkpoints, "budget leaves no checkpoints past 100 rollouts"
        for u in checkpoints:
            assert frame_mean[u] <= model_mean[u], (
                f"frame search above model-mean search at rollout {(u + 1) * h}"
            )


def test_criterion_7_obstacle_avoidance():
    with criterion("7 obstacle cost avoids the rectangle; joint-only cost crosses it", 300.0):
        cfg = fixture_config("obstacle")
        demos, models, mapped, times = pipeline_from(cfg)
        obstacle = build_cost(cfg, times).obstacle
        problem = problem_from(cfg, mapped, times)
        # the unoptimized reproduction goes straight through the obstacle
        ev = _FrameRollouts(problem)
        assert tp.polyline_crosses_rectangle(ev.trajectory(np.zeros(ev.dim())), obstacle)

        avoiding = tp.optimize(problem, cfg.optimizer)
        assert not tp.polyline_crosses_rectangle(avoiding.final_trajectory, obstacle)

        joint_problem = replace(problem, cost=tp.CostSpec(kind="joint", weight=1.0))
        ignoring = tp.optimize(joint_problem, cfg.optimizer)
        assert tp.polyline_crosses_rectangle(ignoring.final_trajectory, obstacle)


def test_criterion_8_frame_selection():
    with criterion("8 forward selection: frame 2 first, {2,5} second, decoy never", 900.0):
        cfg = fixture_config("pick_place")
        demos, models, mapped, times = pipeline_from(cfg)
        problem = problem_from(cfg, mapped, times)

        rng = np.random.default_rng(8080)
        decoy_train = tp.TaskFrame.at_position(rng.uniform(0.5, 0.9, 3) * rng.choice([-1, 1], 3))
        decoy_task = tp.TaskFrame.at_position(rng.uniform(0.5, 0.9, 3) * rng.choice([-1, 1], 3))
        decoy_model = tp.fit_local_models(
            demos, [decoy_train], cfg.n_components, cfg.block, frame_ids=[99], **cfg.em_kwargs
        )[0]
        labeled = [
            tp.LocalModel(fid, m.gmm, m.spec)
            for fid, m in zip(cfg.frame_ids, problem.models)
        ]
        candidates = list(zip(labeled, problem.frames)) + [(decoy_model, decoy_task)]
        full_mask = np.vstack([problem.free_mask, problem.free_mask[-1:]])
        sel_problem = replace(
            problem,
            models=tuple(m for m, _ in candidates),
            frames=tuple(f for _, f in candidates),
            free_mask=full_mask,
        )
        runs = int(cfg.selection_cfg["runs_per_eval"])
        wins = 0
        for seed in range(5):
            sel_cfg = replace(cfg.optimizer, seed=1000 * seed)
            report = tp.forward_select(
                candidates, sel_problem, sel_cfg,
                max_frames=int(cfg.selection_cfg["max_frames"]), runs_per_eval=runs,
            )
            assert 99 not in report.chosen, f"seed {seed}: decoy frame selected"
            if report.chosen == (2, 5):
                wins += 1
        assert wins >= 4, f"selection recovered (2, 5) on only {wins}/5 seeds"


def test_criterion_9_kinematics_suite():
    with criterion("9 kinematics: Jacobian vs finite differences, tracking accuracy", 10.0):
        arm = tp.ArmModel.default_spatial()
        rng = np.random.default_rng(9009)
        h = 1e-6
        for _ in range(1000):
            q = rng.uniform(-2.5, 2.5, arm.n_joints)
            jac = tp.jacobian(arm, q)
            fd = np.empty_like(jac)
            for j in range(arm.n_joints):
                dq = np.zeros(arm.n_joints)
                dq[j] = h
                fd[:, j] = (
                    tp.forward_kinematics(arm, q + dq) - tp.forward_kinematics(arm, q - dq)
                ) / (2 * h)
            assert np.max(np.abs(jac - fd)) <= 1e-5

        # a folded mid-workspace pose; all paths stay well inside the reach
        q0 = np.array([0.3, 0.9, 1.2, -1.5, 0.4])
        p0 = tp.forward_kinematics(arm, q0)
        tau = np.linspace(0.0, 1.0, 150)[:, None]
        for direction in ([-0.12, 0.08, -0.10], [-0.05, -0.1, -0.06], [-0.08, -0.06, 0.02]):
            targets = p0 + (0.5 - 0.5 * np.cos(np.pi * tau)) * np.asarray(direction)
            q_seq = tp.track(arm, q0, targets, damping=1e-6)
            err = np.linalg.norm(tp.fk_path(arm, q_seq) - targets, axis=1)
            assert err.max() < 1e-3
