"""Coupled discrete/continuous runs sharing one Brownian source.

One Brownian path drives the diffusion; the same path's block increments,
rescaled to standard normals, drive the discrete chain's noise through one
of three couplings per block:

* gaussian_shared: the discrete noise IS the rescaled block increment
  (exact for oracles whose noise is sigma_sqrt(x) times a standard normal);
* comonotone_1d: the discrete noise is F^{-1}(Phi(G)) for the oracle's
  one-dimensional noise law F, the W2-optimal coupling of 1-D marginals;
* independent: the discrete noise comes from its own stream.  This is not
  an optimal coupling; distances measured under it upper-bound nothing
  sharp and are flagged by the kind string.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .analysis import Estimate
from .core import RngStream, StepSchedule, derive_stream, log_spaced_indices
from .noise import GradientOracle
from .objectives import Objective
from .sde import path_length
from .sgd import (
    REPLICATE_BLOCK,
    DivergenceError,
    ReplicateRuns,
    Trajectory,
    DIVERGENCE_NORM,
)

GAUSSIAN_SHARED = "gaussian_shared"
COMONOTONE_1D = "comonotone_1d"
INDEPENDENT = "independent"
COUPLING_KINDS = (GAUSSIAN_SHARED, COMONOTONE_1D, INDEPENDENT)

_CHUNK = 1024


@dataclass
class CoupledRun:
    """One replicate of the pair, recorded at aligned block checkpoints.

    discrete.sample_indices holds block indices n; continuous records the
    matching times n * gamma_alpha; dist2[i] is the squared distance
    between the two states at checkpoint i.
    """

    discrete: Trajectory
    continuous: Trajectory
    dist2: np.ndarray
    schedule: StepSchedule
    coupling_kind: str
    replicate_id: int


@dataclass
class CoupledBank:
    """Vectorized bank of coupled replicates (arrays are replicate-major)."""

    block_indices: np.ndarray
    times: np.ndarray
    coupled_dist2: np.ndarray
    discrete: ReplicateRuns
    continuous: ReplicateRuns
    final_discrete_states: np.ndarray
    final_continuous_states: np.ndarray
    schedule: StepSchedule
    coupling_kind: str

    def run(self, i: int) -> CoupledRun:
        return CoupledRun(
            discrete=self.discrete.trajectory(i),
            continuous=self.continuous.trajectory(i),
            dist2=self.coupled_dist2[i],
            schedule=self.schedule,
            coupling_kind=self.coupling_kind,
            replicate_id=int(self.discrete.replicate_ids[i]),
        )

    def runs(self) -> list[CoupledRun]:
        return [self.run(i) for i in range(len(self.coupled_dist2))]


def resolve_kind(obj: Objective, oracle: GradientOracle, kind: str | None) -> str:
    if kind is None:
        if oracle.gaussian_noise:
            return GAUSSIAN_SHARED
        if obj.dim == 1 and oracle.noise_ppf is not None:
            return COMONOTONE_1D
        return INDEPENDENT
    if kind not in COUPLING_KINDS:
        raise ValueError(f"coupling kind must be one of {COUPLING_KINDS}, got {kind!r}")
    if kind == GAUSSIAN_SHARED and not oracle.gaussian_noise:
        raise ValueError("gaussian_shared needs an oracle with gaussian noise")
    if kind == COMONOTONE_1D:
        if obj.dim != 1:
            raise ValueError("comonotone coupling is one-dimensional only")
        if oracle.noise_ppf is None:
            raise ValueError(
                "comonotone coupling needs a noise law with an invertible CDF;"
                " this oracle does not expose a quantile function"
            )
    return kind


def _check_rows(sq: np.ndarray, step: int, rep_ids: np.ndarray, label: str) -> None:
    bad = ~np.isfinite(sq) | (sq > DIVERGENCE_NORM**2)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise DivergenceError(
            int(rep_ids[i]), step, f"{label} state is non-finite or diverged"
        )


def _coupled_block(
    obj: Objective,
    oracle: GradientOracle,
    sched: StepSchedule,
    x0,
    n_blocks: int,
    substeps: int,
    plan: np.ndarray,
    brown_gens,
    noise_gens,
    rep_ids: np.ndarray,
    kind: str,
    record_states: bool,
):
    r = len(brown_gens)
    d = obj.dim
    ga = sched.gamma_alpha
    h = ga / substeps
    root_ga = np.sqrt(ga)
    root_h = np.sqrt(h)
    rates = np.asarray(sched.continuous_rate(np.arange(n_blocks * substeps) * h))
    steps_disc = np.asarray(sched.step_size(np.arange(n_blocks)))
    x_star = obj.x_star
    # the one-dimensional comonotone map degenerates to the shared coupling
    # when the noise is gaussian (quantile of its own CDF), so take the
    # exact path and keep the requested label
    effective = GAUSSIAN_SHARED if kind == COMONOTONE_1D and oracle.gaussian_noise else kind

    x = np.broadcast_to(np.asarray(x0, dtype=float), (r, d)).copy()
    y = x.copy()
    n_ckpt = len(plan)
    cols = lambda: np.empty((r, n_ckpt))
    d_vals, d_d2, d_gsq = cols(), cols(), cols()
    c_vals, c_d2, c_gsq = cols(), cols(), cols()
    cp_d2 = cols()
    d_states = np.empty((r, n_ckpt, d)) if record_states else None
    c_states = np.empty((r, n_ckpt, d)) if record_states else None
    p = 0

    blocks_per_chunk = max(1, _CHUNK // substeps)
    for k0 in range(0, n_blocks, blocks_per_chunk):
        nb = min(blocks_per_chunk, n_blocks - k0)
        m = nb * substeps
        db = root_h * np.stack([g.standard_normal((m, d)) for g in brown_gens])
        if effective == INDEPENDENT:
            raw = [oracle.draw_raw((nb,), g) for g in noise_gens]
            raw = np.stack(raw) if r > 1 else raw[0][None]
        for b in range(nb):
            k = k0 + b
            for j in range(substeps):
                s = k * substeps + j
                drift = obj.gradient(y) * h
                y = y - rates[s] * (drift + root_ga * oracle.apply_sqrt(y, db[:, b * substeps + j]))
                _check_rows(np.einsum("rd,rd->r", y, y), k + 1, rep_ids, "continuous")
            g_block = db[:, b * substeps : (b + 1) * substeps].sum(axis=1) / root_ga
            if effective == GAUSSIAN_SHARED:
                h_val = obj.gradient(x) + oracle.apply_sqrt(x, g_block)
            elif effective == COMONOTONE_1D:
                u = np.clip(ndtr(g_block), 1e-300, 1.0 - 1e-16)
                h_val = obj.gradient(x) + oracle.noise_ppf(u)
            else:
                h_val = oracle.apply(x, raw[:, b])
            x = x - steps_disc[k] * h_val
            _check_rows(np.einsum("rd,rd->r", x, x), k + 1, rep_ids, "discrete")
            while p < n_ckpt and plan[p] == k + 1:
                d_vals[:, p] = obj.value(x)
                dx = x - x_star
                d_d2[:, p] = np.einsum("rd,rd->r", dx, dx)
                g = obj.gradient(x)
                d_gsq[:, p] = np.einsum("rd,rd->r", g, g)
                c_vals[:, p] = obj.value(y)
                dy = y - x_star
                c_d2[:, p] = np.einsum("rd,rd->r", dy, dy)
                g = obj.gradient(y)
                c_gsq[:, p] = np.einsum("rd,rd->r", g, g)
                gap = y - x
                cp_d2[:, p] = np.einsum("rd,rd->r", gap, gap)
                if record_states:
                    d_states[:, p] = x
                    c_states[:, p] = y
                p += 1
    return (d_vals, d_d2, d_gsq, c_vals, c_d2, c_gsq, cp_d2, d_states, c_states, x, y)


def run_coupled(
    obj: Objective,
    oracle: GradientOracle,
    sched: StepSchedule,
    x0,
    horizon: float,
    substeps_per_block: int = 16,
    stream: RngStream | None = None,
    kind: str | None = None,
    plan=None,
    record_states: bool = False,
) -> CoupledRun:
    """One coupled replicate over ceil(horizon / gamma_alpha) blocks.

    stream identifies the replicate: its (master_seed, replicate_id) pair
    derives the brownian stream driving both processes and, for the
    independent kind, the separate noise stream.
    """
    if sched.alpha >= 1.0:
        raise ValueError("coupling needs alpha < 1")
    if stream is None:
        raise ValueError("run_coupled needs an explicit RngStream")
    kind = resolve_kind(obj, oracle, kind)
    n_blocks = path_length(horizon, sched.gamma_alpha)
    plan = _normalize_block_plan(plan, n_blocks)
    brown = derive_stream(stream.master_seed, stream.replicate_id, "brownian").generator()
    noise = derive_stream(stream.master_seed, stream.replicate_id, "noise").generator()
    out = _coupled_block(
        obj, oracle, sched, x0, n_blocks, substeps_per_block, plan,
        [brown], [noise], np.array([stream.replicate_id]), kind, record_states,
    )
    d_vals, d_d2, d_gsq, c_vals, c_d2, c_gsq, cp_d2, d_states, c_states, _, _ = out
    ga = sched.gamma_alpha
    discrete = Trajectory(
        sample_indices=plan,
        values=d_vals[0],
        dist2_to_min=d_d2[0],
        replicate_id=stream.replicate_id,
        states=None if d_states is None else d_states[0],
        grad_sq=d_gsq[0],
    )
    continuous = Trajectory(
        sample_indices=plan * ga,
        values=c_vals[0],
        dist2_to_min=c_d2[0],
        replicate_id=stream.replicate_id,
        states=None if c_states is None else c_states[0],
        grad_sq=c_gsq[0],
    )
    return CoupledRun(
        discrete=discrete,
        continuous=continuous,
        dist2=cp_d2[0],
        schedule=sched,
        coupling_kind=kind,
        replicate_id=stream.replicate_id,
    )


def _normalize_block_plan(plan, n_blocks: int) -> np.ndarray:
    if plan is None:
        return log_spaced_indices(n_blocks)
    plan = np.unique(np.asarray(plan, dtype=np.int64))
    if len(plan) == 0 or plan[0] < 1 or plan[-1] > n_blocks:
        raise ValueError("plan block indices must lie in [1, n_blocks]")
    return plan


def run_coupled_replicates(
    obj: Objective,
    oracle: GradientOracle,
    sched: StepSchedule,
    x0,
    horizon: float,
    substeps_per_block: int,
    n_replicates: int,
    master_seed: int,
    kind: str | None = None,
    plan=None,
    threads: int = 1,
    record_states: bool = False,
) -> CoupledBank:
    """Bank of coupled replicates; partitioning over threads never changes results."""
    if sched.alpha >= 1.0:
        raise ValueError("coupling needs alpha < 1")
    if n_replicates < 1:
        raise ValueError("n_replicates must be >= 1")
    kind = resolve_kind(obj, oracle, kind)
    n_blocks = path_length(horizon, sched.gamma_alpha)
    plan = _normalize_block_plan(plan, n_blocks)
    rep_ids = np.arange(n_replicates)
    blocks = [
        rep_ids[i : i + REPLICATE_BLOCK]
        for i in range(0, n_replicates, REPLICATE_BLOCK)
    ]

    def work(ids):
        brown = [derive_stream(master_seed, int(i), "brownian").generator() for i in ids]
        noise = [derive_stream(master_seed, int(i), "noise").generator() for i in ids]
        return _coupled_block(
            obj, oracle, sched, x0, n_blocks, substeps_per_block, plan,
            brown, noise, ids, kind, record_states,
        )

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(ids) for ids in blocks]

    cat = lambda i: np.concatenate([p[i] for p in parts])
    ga = sched.gamma_alpha
    discrete = ReplicateRuns(
        sample_indices=plan,
        values=cat(0),
        dist2_to_min=cat(1),
        grad_sq=cat(2),
        replicate_ids=rep_ids,
        states=cat(7) if record_states else None,
    )
    continuous = ReplicateRuns(
        sample_indices=plan * ga,
        values=cat(3),
        dist2_to_min=cat(4),
        grad_sq=cat(5),
        replicate_ids=rep_ids,
        states=cat(8) if record_states else None,
    )
    return CoupledBank(
        block_indices=plan,
        times=plan * ga,
        coupled_dist2=cat(6),
        discrete=discrete,
        continuous=continuous,
        final_discrete_states=cat(9),
        final_continuous_states=cat(10),
        schedule=sched,
        coupling_kind=kind,
    )


def _gather_dist2(runs, checkpoint: int | None) -> np.ndarray:
    if isinstance(runs, CoupledBank):
        idx = len(runs.block_indices) - 1
        if checkpoint is not None:
            hits = np.nonzero(runs.block_indices == checkpoint)[0]
            if len(hits) == 0:
                raise ValueError(f"checkpoint {checkpoint} was not recorded")
            idx = int(hits[0])
        return runs.coupled_dist2[:, idx]
    out = []
    for run in runs:
        idx = -1
        if checkpoint is not None:
            hits = np.nonzero(run.discrete.sample_indices == checkpoint)[0]
            if len(hits) == 0:
                raise ValueError(f"checkpoint {checkpoint} was not recorded")
            idx = int(hits[0])
        out.append(run.dist2[idx])
    return np.asarray(out, dtype=float)


def strong_error(runs, checkpoint: int | None = None) -> Estimate:
    """Root mean squared coupled distance at a block checkpoint.

    The mean of squared distances gets a normal-approximation interval and
    the square root a delta-method one (95%, two-sided).  Defaults to the
    last recorded checkpoint.
    """
    d2 = _gather_dist2(runs, checkpoint)
    n = len(d2)
    if n < 2:
        raise ValueError("strong_error needs at least 2 replicates")
    mean = float(d2.mean())
    se = float(d2.std(ddof=1)) / np.sqrt(n)
    if mean <= 0.0:
        return Estimate(value=0.0, ci_halfwidth=0.0, n=n)
    return Estimate(value=float(np.sqrt(mean)), ci_halfwidth=1.96 * se / (2.0 * np.sqrt(mean)), n=n)


def _endpoint_states(runs, which: str) -> np.ndarray:
    if isinstance(runs, CoupledBank):
        return runs.final_discrete_states if which == "discrete" else runs.final_continuous_states
    states = []
    for run in runs:
        if isinstance(run, Trajectory):
            traj = run
        else:
            traj = run.discrete if which == "discrete" else run.continuous
        if traj.states is None:
            raise ValueError("weak_error needs recorded states (record_states=True)")
        states.append(traj.states[-1])
    return np.asarray(states, dtype=float)


def weak_error(runs_discrete, runs_continuous_or_coupled, g) -> Estimate:
    """|E g(continuous endpoint) - E g(discrete endpoint)| with a 95% CI.

    When the second argument is coupled output (a CoupledBank or a list of
    CoupledRun), the paired estimator mean(g(Y) - g(X)) is used, which
    cancels most replicate noise; otherwise the two sample means are
    differenced with a pooled interval.
    """
    second = runs_continuous_or_coupled
    paired = isinstance(second, CoupledBank) or (
        isinstance(second, (list, tuple)) and len(second) > 0 and isinstance(second[0], CoupledRun)
    )
    if paired:
        gx = np.asarray(g(_endpoint_states(second, "discrete")), dtype=float)
        gy = np.asarray(g(_endpoint_states(second, "continuous")), dtype=float)
        if len(gx) < 2:
            raise ValueError("weak_error needs at least 2 replicates")
        diffs = gy - gx
        se = float(diffs.std(ddof=1)) / np.sqrt(len(diffs))
        return Estimate(value=abs(float(diffs.mean())), ci_halfwidth=1.96 * se, n=len(diffs))
    gx = np.asarray(g(_endpoint_states(runs_discrete, "discrete")), dtype=float)
    gy = np.asarray(g(_endpoint_states(second, "continuous")), dtype=float)
    if len(gx) < 2 or len(gy) < 2:
        raise ValueError("weak_error needs at least 2 replicates per process")
    se = np.sqrt(gx.var(ddof=1) / len(gx) + gy.var(ddof=1) / len(gy))
    return Estimate(
        value=abs(float(gy.mean() - gx.mean())),
        ci_halfwidth=1.96 * float(se),
        n=min(len(gx), len(gy)),
    )


def w2_1d(a, b) -> float:
    """Quadratic Wasserstein distance of two equal-size 1-D samples.

    Sorting couples order statistics, which is the optimal transport plan
    on the line; the distance is the root mean squared gap.
    """
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.shape != b.shape:
        raise ValueError(f"sample counts differ: {a.shape} vs {b.shape}")
    if len(a) == 0:
        raise ValueError("need at least one sample")
    diff = a - b
    return float(np.sqrt(np.mean(diff * diff)))


def epsilon_hat(oracle: GradientOracle, x, n_samples: int, stream) -> float:
    """Distance between the oracle's noise law and its gaussian surrogate.

    Draws n_samples of H(x, .), then n_samples of the surrogate
    grad f(x) + sigma_sqrt(x) G, and measures W2 per coordinate between
    the two (combined as a root sum of squares).  For non-diagonal
    covariances this compares marginals only, which lower-bounds the
    joint distance.
    """
    rng = stream.generator() if isinstance(stream, RngStream) else stream
    x = np.asarray(x, dtype=float)
    d = oracle.objective.dim
    draws = oracle.apply(
        np.broadcast_to(x, (n_samples,) + x.shape),
        oracle.draw_raw((n_samples,), rng),
    )
    grad = oracle.objective.gradient(x)
    surrogate = grad + oracle.apply_sqrt(x, rng.standard_normal((n_samples, d)))
    per_coord = [w2_1d(draws[:, i], surrogate[:, i]) for i in range(d)]
    return float(np.sqrt(np.sum(np.square(per_coord))))
