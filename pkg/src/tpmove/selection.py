"""Greedy forward search over candidate task frames, plus the model-mean baseline.

Each round optimizes every extension of the chosen frame set by one
candidate (averaging the final noise-free cost over several seeded runs)
and keeps the cheapest: relevant frames pull the cost down quickly, so the
lower the optimized cost, the more important the frame. Later rounds warm
start from the previous round's solution for the already-chosen frames.

``optimize_gmm_means`` runs the same episodic search directly over the
output-block component means of all local models, covariances held fixed.
It is the higher-dimensional baseline the frame search is compared against.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InsufficientCandidatesError, LengthMismatchError
from .frames import LocalModel, fuse_moment_arrays, local_input_sequence, output_block_sequence
from .gaussians import GMM, Gaussian, component_conditionals
from .policy import (
    ADJ_ANGLES,
    OptimizationProblem,
    OptimizationResult,
    OptimizerConfig,
    optimize,
    run_episodic_search,
)
from .arm import fk_path, track


@dataclass(frozen=True, eq=False)
class CandidateEvaluation:
    """Scores of one candidate set in one round."""

    frame_ids: tuple
    run_costs: tuple[float, ...]
    mean_cost: float
    mean_curve: np.ndarray


@dataclass(frozen=True, eq=False)
class SelectionRound:
    evaluations: tuple[CandidateEvaluation, ...]
    winner: object
    rationale: str


@dataclass(frozen=True, eq=False)
class SelectionReport:
    rounds: tuple[SelectionRound, ...]
    chosen: tuple

    def to_dict(self) -> dict:
        return {
            "chosen": list(self.chosen),
            "rounds": [
                {
                    "winner": r.winner,
                    "rationale": r.rationale,
                    "evaluations": [
                        {
                            "frame_ids": list(e.frame_ids),
                            "run_costs": list(e.run_costs),
                            "mean_cost": e.mean_cost,
                            "mean_curve": e.mean_curve.tolist(),
                        }
                        for e in r.evaluations
                    ],
                }
                for r in self.rounds
            ],
        }


def _sub_problem(problem: OptimizationProblem, candidates, indices) -> OptimizationProblem:
    models = tuple(candidates[i][0] for i in indices)
    frames = tuple(candidates[i][1] for i in indices)
    mask = problem.free_mask[list(indices)]
    return replace(problem, models=models, frames=frames, free_mask=mask)


def _extend_theta(theta, problem: OptimizationProblem, n_old: int, n_new: int) -> np.ndarray:
    """Grow a per-frame-block theta from n_old to n_new frames with zeros."""
    per_frame = ADJ_ANGLES + problem.out_dim
    b = problem.basis.n_basis
    old = np.asarray(theta, dtype=float).reshape(b, n_old * per_frame)
    out = np.zeros((b, n_new * per_frame))
    out[:, : n_old * per_frame] = old
    return out.reshape(-1)


def forward_select(
    candidates,
    problem: OptimizationProblem,
    config: OptimizerConfig,
    max_frames: int,
    runs_per_eval: int = 3,
    n_workers: int = 1,
) -> SelectionReport:
    """Grow the frame set one argmin-cost candidate per round.

    `candidates` is a list of (LocalModel, TaskFrame) pairs; `problem` is a
    template built over the full candidate list (its free_mask rows align
    with the candidates), whose models/frames are replaced per subset. Each
    evaluation averages the final noise-free cost of `runs_per_eval`
    optimization runs seeded config.seed + run. Ties break toward the lower
    frame id; rounds after the first warm start from the winner's per-run
    solutions.
    """
    candidates = list(candidates)
    if len(candidates) < 2:
        raise InsufficientCandidatesError(f"need >= 2 candidates, got {len(candidates)}")
    if not (1 <= max_frames <= len(candidates)):
        raise InsufficientCandidatesError(
            f"max_frames={max_frames} outside 1..{len(candidates)}"
        )
    if problem.free_mask.shape[0] != len(candidates):
        raise LengthMismatchError(
            "problem.free_mask must carry one row per candidate frame"
        )
    ids = [m.frame_id for m, _ in candidates]
    if len(set(ids)) != len(ids):
        raise InsufficientCandidatesError("candidate frame ids must be unique")
    base_seed = 0 if config.seed is None else config.seed

    chosen_idx: list[int] = []
    winner_thetas: list[np.ndarray] | None = None  # per run, for the current chosen set
    rounds = []
    while len(chosen_idx) < max_frames:
        remaining = [i for i in range(len(candidates)) if i not in chosen_idx]
        evaluations = []
        results_by_candidate = {}
        for i in remaining:
            indices = chosen_idx + [i]
            sub = _sub_problem(problem, candidates, indices)
            theta0 = None
            run_costs, run_thetas, curves = [], [], []
            for run in range(runs_per_eval):
                if winner_thetas is not None:
                    theta0 = _extend_theta(
                        winner_thetas[run], problem, len(chosen_idx), len(indices)
                    )
                run_cfg = replace(config, seed=base_seed + run)
                res = optimize(sub, run_cfg, theta0=theta0, n_workers=n_workers)
                run_costs.append(res.best_cost)
                run_thetas.append(res.best_theta)
                curves.append(res.noise_free_costs)
            evaluations.append(
                CandidateEvaluation(
                    frame_ids=tuple(ids[j] for j in indices),
                    run_costs=tuple(run_costs),
                    mean_cost=float(np.mean(run_costs)),
                    mean_curve=np.mean(curves, axis=0),
                )
            )
            results_by_candidate[i] = run_thetas
        # argmin mean cost, ties toward lower frame id
        def id_key(i):
            fid = ids[i]
            return (0, fid, "") if isinstance(fid, (int, float)) else (1, 0, str(fid))

        scored = sorted(
            zip(remaining, evaluations),
            key=lambda pair: (pair[1].mean_cost, id_key(pair[0])),
        )
        winner_i, winner_eval = scored[0]
        chosen_idx.append(winner_i)
        winner_thetas = results_by_candidate[winner_i]
        rounds.append(
            SelectionRound(
                evaluations=tuple(evaluations),
                winner=ids[winner_i],
                rationale=(
                    f"lowest mean final cost {winner_eval.mean_cost:.6g} over "
                    f"{runs_per_eval} runs among {len(remaining)} candidate sets"
                ),
            )
        )
    return SelectionReport(rounds=tuple(rounds), chosen=tuple(ids[i] for i in chosen_idx))


# ---------------------------------------------------------------------------
# Baseline: search the local models' output-block means directly
# ---------------------------------------------------------------------------

def mean_search_dim(problem: OptimizationProblem) -> int:
    """Dimension of the model-mean search space: sum_j K_j * D_out."""
    return sum(m.gmm.n_components * problem.out_dim for m in problem.models)


class _MeanRollouts:
    """Rollout evaluator over per-component output-mean offsets.

    Shifting a component's output-block mean by delta shifts its conditional
    mean by delta and leaves responsibilities and conditional covariances
    untouched, so everything except the moment matching is precomputed.
    """

    def __init__(self, problem: OptimizationProblem):
        self.problem = problem
        n = problem.inputs.shape[0]
        self.resp, self.cond_means, self.cond_covs = [], [], []
        self.base_cov_part = []
        self.base_a, self.base_b = [], []
        self.sizes = []
        for model, frame in zip(problem.models, problem.frames):
            loc = local_input_sequence(frame, problem.inputs)
            h, means, covs = component_conditionals(model.gmm, model.spec, loc)
            self.resp.append(h)
            self.cond_means.append(means)
            self.cond_covs.append(covs)
            self.base_cov_part.append(np.einsum("nk,kde->nde", h, covs))
            a_seq, b_seq = output_block_sequence(frame, n)
            self.base_a.append(np.array(a_seq))
            self.base_b.append(np.array(b_seq))
            self.sizes.append(model.gmm.n_components * problem.out_dim)
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])

    def dim(self) -> int:
        return int(self.offsets[-1])

    def _frame_moments(self, vector, j):
        d_o = self.problem.out_dim
        k = self.cond_means[j].shape[0]
        delta = vector[self.offsets[j] : self.offsets[j + 1]].reshape(k, d_o)
        shifted = self.cond_means[j] + delta[:, None, :]
        h = self.resp[j]
        mean = np.einsum("nk,knd->nd", h, shifted)
        dev = shifted - mean[None, :, :]
        cov = self.base_cov_part[j] + np.einsum("nk,knd,kne->nde", h, dev, dev)
        return mean, 0.5 * (cov + np.transpose(cov, (0, 2, 1)))

    def trajectory(self, vector: np.ndarray) -> np.ndarray:
        means, covs = [], []
        for j in range(len(self.resp)):
            m, c = self._frame_moments(vector, j)
            gm = np.einsum("nde,ne->nd", self.base_a[j], m) + self.base_b[j]
            gc = np.einsum("nde,nef,ngf->ndg", self.base_a[j], c, self.base_a[j])
            means.append(gm)
            covs.append(gc)
        fused_mean, _ = fuse_moment_arrays(np.stack(means), np.stack(covs))
        return fused_mean

    def evaluate(self, vector: np.ndarray) -> tuple[float, np.ndarray]:
        traj = self.trajectory(vector)
        prob = self.problem
        q_seq = track(prob.arm, prob.q0, traj, prob.tracking_damping)
        cost = prob.cost.evaluate(fk_path(prob.arm, q_seq), q_seq)
        return float(cost), traj

    def shifted_models(self, vector: np.ndarray) -> tuple[LocalModel, ...]:
        out = []
        d_o = self.problem.out_dim
        for j, model in enumerate(self.problem.models):
            k = model.gmm.n_components
            delta = vector[self.offsets[j] : self.offsets[j + 1]].reshape(k, d_o)
            idx_o = np.asarray(model.spec.output_dims)
            comps = []
            for i, comp in enumerate(model.gmm.components):
                mean = comp.mean.copy()
                mean[idx_o] += delta[i]
                comps.append(Gaussian(mean, comp.cov))
            out.append(replace(model, gmm=GMM(model.gmm.weights, tuple(comps))))
        return tuple(out)


def optimize_gmm_means(problem: OptimizationProblem, config: OptimizerConfig,
                       theta0=None, n_workers: int = 1) -> OptimizationResult:
    """Search the output-block component means of all local models.

    Same loop and update rule as the frame search, but the decision vector
    adds directly onto every component's output mean in every frame, and
    covariances stay fixed. Frames are never adjusted.
    """
    ev = _MeanRollouts(problem)
    scale = np.broadcast_to(np.asarray(config.noise_std, dtype=float), (ev.dim(),))
    best_theta, best_cost, best_traj, initial_cost, records, n_rollouts = run_episodic_search(
        ev.evaluate, ev.dim(), config, scale, theta0, n_workers
    )
    return OptimizationResult(
        best_theta=best_theta,
        best_cost=best_cost,
        initial_cost=initial_cost,
        cost_curve=records,
        final_trajectory=best_traj,
        n_rollouts=n_rollouts,
        final_models=ev.shifted_models(best_theta),
    )
