"""Discrete stochastic gradient descent with decaying steps.

The recursion X_{n+1} = X_n - gamma (n+1)^{-alpha} H(X_n, Z_{n+1}) is run
either one replicate at a time (run_sgd) or as a vectorized bank of
replicates (run_sgd_replicates).  Both paths draw innovations in identical
chunks from per-replicate counter-based streams and update states with
row-independent array ops, so a replicate's trajectory is bit-identical
whichever path computes it and however replicates are split over threads.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import RngStream, StepSchedule, derive_stream, log_spaced_indices
from .noise import GradientOracle
from .objectives import Objective, StronglyConvex

CHUNK = 1024
REPLICATE_BLOCK = 256
DIVERGENCE_NORM = 1e12


class DivergenceError(RuntimeError):
    """A replicate left the finite regime; carries where it happened."""

    def __init__(self, replicate_id: int, step: int, detail: str):
        super().__init__(
            f"replicate {replicate_id} aborted at step {step}: {detail}"
        )
        self.replicate_id = replicate_id
        self.step = step


@dataclass
class Trajectory:
    """One replicate sampled at a sorted set of indices (or times)."""

    sample_indices: np.ndarray
    values: np.ndarray
    dist2_to_min: np.ndarray
    replicate_id: int
    states: np.ndarray | None = None
    grad_sq: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.sample_indices)
        for arr in (self.values, self.dist2_to_min, self.states, self.grad_sq):
            if arr is not None and len(arr) != n:
                raise ValueError("trajectory columns must match sample_indices")


@dataclass
class ReplicateRuns:
    """Checkpoint records for a bank of replicates, stacked (replicate, checkpoint)."""

    sample_indices: np.ndarray
    values: np.ndarray
    dist2_to_min: np.ndarray
    grad_sq: np.ndarray
    replicate_ids: np.ndarray
    states: np.ndarray | None = None

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(
            sample_indices=self.sample_indices,
            values=self.values[i],
            dist2_to_min=self.dist2_to_min[i],
            replicate_id=int(self.replicate_ids[i]),
            states=None if self.states is None else self.states[i],
            grad_sq=self.grad_sq[i],
        )

    def trajectories(self) -> list[Trajectory]:
        return [self.trajectory(i) for i in range(len(self.replicate_ids))]


def _normalize_plan(plan, n_steps: int) -> np.ndarray:
    if plan is None:
        return log_spaced_indices(n_steps)
    plan = np.unique(np.asarray(plan, dtype=np.int64))
    if len(plan) == 0 or plan[0] < 1 or plan[-1] > n_steps:
        raise ValueError("plan indices must lie in [1, n_steps]")
    return plan


def _maybe_warn_alpha_one(obj: Objective, sched: StepSchedule) -> None:
    tag = obj.tag(StronglyConvex)
    if sched.alpha == 1.0 and tag is not None and not sched.gamma > 1.0 / (2.0 * tag.mu):
        warnings.warn(
            f"alpha=1 with gamma={sched.gamma:g} <= 1/(2 mu)={1.0 / (2.0 * tag.mu):g}:"
            " the strongly convex rate guarantee needs a larger gamma",
            stacklevel=3,
        )


def _run_block(
    obj: Objective,
    oracle: GradientOracle,
    sched: StepSchedule,
    x0: np.ndarray,
    n_steps: int,
    plan: np.ndarray,
    gens: list[np.random.Generator],
    replicate_ids: np.ndarray,
    record_states: bool,
    radius: float | None,
):
    r = len(gens)
    d = obj.dim
    x = np.broadcast_to(np.asarray(x0, dtype=float), (r, d)).copy()
    steps = np.asarray(sched.step_size(np.arange(n_steps)))
    x_star = obj.x_star

    n_ckpt = len(plan)
    values = np.empty((r, n_ckpt))
    dist2 = np.empty((r, n_ckpt))
    grad_sq = np.empty((r, n_ckpt))
    states = np.empty((r, n_ckpt, d)) if record_states else None
    p = 0

    for start in range(0, n_steps, CHUNK):
        m = min(CHUNK, n_steps - start)
        raws = [oracle.draw_raw((m,), g) for g in gens]
        raw = np.stack(raws, axis=0) if r > 1 else raws[0][None]
        for j in range(m):
            n = start + j
            h = oracle.apply(x, raw[:, j])
            x = x - steps[n] * h
            if radius is not None:
                norms = np.sqrt(np.einsum("rd,rd->r", x, x))
                over = norms > radius
                if np.any(over):
                    x[over] *= radius / norms[over, None]
            sq = np.einsum("rd,rd->r", x, x)
            bad = ~np.isfinite(sq) | (sq > DIVERGENCE_NORM**2)
            if np.any(bad):
                i = int(np.argmax(bad))
                detail = (
                    "state is non-finite"
                    if not np.isfinite(sq[i])
                    else f"|X| = {np.sqrt(sq[i]):.3e} exceeds {DIVERGENCE_NORM:g}"
                )
                raise DivergenceError(int(replicate_ids[i]), n + 1, detail)
            while p < n_ckpt and plan[p] == n + 1:
                values[:, p] = obj.value(x)
                diff = x - x_star
                dist2[:, p] = np.einsum("rd,rd->r", diff, diff)
                g = obj.gradient(x)
                grad_sq[:, p] = np.einsum("rd,rd->r", g, g)
                if states is not None:
                    states[:, p] = x
                p += 1
    return values, dist2, grad_sq, states


def run_sgd(
    obj: Objective,
    oracle: GradientOracle,
    sched: StepSchedule,
    x0,
    n_steps: int,
    plan=None,
    stream: RngStream | None = None,
    record_states: bool = False,
) -> Trajectory:
    """One SGD replicate, recorded at the plan's iteration indices."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if stream is None:
        raise ValueError("run_sgd needs an explicit RngStream")
    _maybe_warn_alpha_one(obj, sched)
    plan = _normalize_plan(plan, n_steps)
    values, dist2, grad_sq, states = _run_block(
        obj, oracle, sched, x0, n_steps, plan,
        [stream.generator()], np.array([stream.replicate_id]),
        record_states, None,
    )
    return Trajectory(
        sample_indices=plan,
        values=values[0],
        dist2_to_min=dist2[0],
        replicate_id=stream.replicate_id,
        states=None if states is None else states[0],
        grad_sq=grad_sq[0],
    )


def run_projected_sgd(
    obj: Objective,
    oracle: GradientOracle,
    sched: StepSchedule,
    x0,
    n_steps: int,
    radius: float,
    plan=None,
    stream: RngStream | None = None,
    record_states: bool = False,
) -> Trajectory:
    """SGD with each step followed by projection onto the ball |x| <= radius.

    An infinite radius reproduces run_sgd bit for bit: the projection is
    only applied to rows strictly outside the ball.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if stream is None:
        raise ValueError("run_projected_sgd needs an explicit RngStream")
    x0 = np.asarray(x0, dtype=float)
    if np.linalg.norm(x0) > radius:
        raise ValueError("x0 must lie inside the projection ball")
    _maybe_warn_alpha_one(obj, sched)
    plan = _normalize_plan(plan, n_steps)
    values, dist2, grad_sq, states = _run_block(
        obj, oracle, sched, x0, n_steps, plan,
        [stream.generator()], np.array([stream.replicate_id]),
        record_states, float(radius),
    )
    return Trajectory(
        sample_indices=plan,
        values=values[0],
        dist2_to_min=dist2[0],
        replicate_id=stream.replicate_id,
        states=None if states is None else states[0],
        grad_sq=grad_sq[0],
    )


def run_sgd_replicates(
    obj: Objective,
    oracle: GradientOracle,
    sched: StepSchedule,
    x0,
    n_steps: int,
    n_replicates: int,
    master_seed: int,
    plan=None,
    threads: int = 1,
    record_states: bool = False,
    radius: float | None = None,
) -> ReplicateRuns:
    """A bank of replicates with streams derived from one master seed.

    Replicates are partitioned into fixed blocks of 256 and the blocks are
    farmed to a thread pool; the partition does not depend on the thread
    count, and every array op is row-independent, so results are identical
    for any threads value (and equal to run_sgd replicate by replicate).
    """
    if n_steps < 1 or n_replicates < 1:
        raise ValueError("n_steps and n_replicates must be >= 1")
    _maybe_warn_alpha_one(obj, sched)
    plan = _normalize_plan(plan, n_steps)
    rep_ids = np.arange(n_replicates)
    blocks = [
        rep_ids[i : i + REPLICATE_BLOCK]
        for i in range(0, n_replicates, REPLICATE_BLOCK)
    ]

    def work(ids):
        gens = [derive_stream(master_seed, int(rid), "noise").generator() for rid in ids]
        return _run_block(
            obj, oracle, sched, x0, n_steps, plan, gens, ids, record_states, radius
        )

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(ids) for ids in blocks]

    values = np.concatenate([p[0] for p in parts], axis=0)
    dist2 = np.concatenate([p[1] for p in parts], axis=0)
    grad_sq = np.concatenate([p[2] for p in parts], axis=0)
    states = (
        np.concatenate([p[3] for p in parts], axis=0) if record_states else None
    )
    return ReplicateRuns(
        sample_indices=plan,
        values=values,
        dist2_to_min=dist2,
        grad_sq=grad_sq,
        replicate_ids=rep_ids,
        states=states,
    )


def suffix_average(values, k: int) -> float:
    """Mean of the last k+1 entries of values."""
    values = np.asarray(values, dtype=float)
    if k < 0 or k + 1 > len(values):
        raise ValueError(f"need k+1 = {k + 1} values, have {len(values)}")
    return float(values[len(values) - (k + 1) :].mean())
