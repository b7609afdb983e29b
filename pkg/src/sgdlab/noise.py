"""Stochastic gradient oracles and their covariance structure.

An oracle is the pair (objective, noise law).  Every oracle separates
*drawing* raw innovations from *applying* them to a state, so a driver can
pre-draw blocks, reuse them across coupled processes, and stay bit-identical
between scalar and vectorized paths.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtri
from scipy.stats import t as student_t

from .core import RngStream
from .objectives import LeastSquaresObjective, Objective

VARIANCE_BOUND = "variance-bound"
PER_SAMPLE_SMOOTH = "per-sample-smooth"
HEAVY_LAWS = ("rademacher", "laplace", "student")

_ESTIMATE_SEED = 0x5EED_C0DE
_SIGMA_EST_SAMPLES = 1 << 16
_ETA_EST_SAMPLES = 1_000_000


def _as_generator(stream) -> np.random.Generator:
    if isinstance(stream, RngStream):
        return stream.generator()
    if isinstance(stream, np.random.Generator):
        return stream
    raise TypeError(f"expected RngStream or Generator, got {type(stream).__name__}")


@dataclass(frozen=True)
class GradientOracle:
    """Unbiased gradient estimator H(x, xi) with known covariance.

    draw_raw(prefix, rng) returns the raw innovation for states with the
    given batch shape; apply(x, raw) turns state plus innovation into the
    estimate H; sample composes the two.  sigma(x) is the estimator
    covariance at x (already divided by the batch size where one applies),
    sigma_sqrt its symmetric square root, and apply_sqrt(x, g) the matching
    action on a vector without forming the matrix when the structure is
    diagonal.  eta is the declared noise bound: a uniform bound on
    trace sigma(x) in the variance-bound setting, and the second moment of
    the per-sample gradient at the minimizer in the per-sample-smooth one.

    noise_ppf, when present, is the quantile function of one noise
    coordinate; oracles whose noise has no fixed one-dimensional law
    (resampled data batches) leave it None.  gaussian_noise marks oracles
    whose noise is exactly sigma_sqrt(x) @ standard normal.
    """

    name: str
    objective: Objective
    setting: str
    eta: float
    draw_raw: Callable[[tuple, np.random.Generator], np.ndarray]
    apply: Callable[[np.ndarray, np.ndarray], np.ndarray]
    sigma: Callable[[np.ndarray], np.ndarray]
    sigma_sqrt: Callable[[np.ndarray], np.ndarray]
    apply_sqrt: Callable[[np.ndarray, np.ndarray], np.ndarray]
    batch_m: int | None = None
    noise_ppf: Callable[[np.ndarray], np.ndarray] | None = None
    gaussian_noise: bool = False

    def sample(self, x, stream) -> np.ndarray:
        """One draw of H(x, .).  Accepts a stateful Generator or an
        RngStream; a stream is opened fresh, so repeated calls with the
        same stream repeat the same draw.
        """
        rng = _as_generator(stream)
        x = np.asarray(x, dtype=float)
        return self.apply(x, self.draw_raw(x.shape[:-1], rng))

    def noise_part(self, x, stream) -> np.ndarray:
        """H(x, .) - grad f(x) for one draw."""
        x = np.asarray(x, dtype=float)
        return self.sample(x, stream) - self.objective.gradient(x)


def _diagonal_fields(obj: Objective, scale_of):
    """sigma / sigma_sqrt / apply_sqrt for additive noise with diagonal scale."""

    def sigma(x):
        x = np.asarray(x, dtype=float)
        s = np.broadcast_to(np.asarray(scale_of(x), dtype=float), x.shape)
        out = np.zeros(x.shape + (x.shape[-1],))
        idx = np.arange(x.shape[-1])
        out[..., idx, idx] = s * s
        return out

    def sigma_sqrt(x):
        x = np.asarray(x, dtype=float)
        s = np.broadcast_to(np.asarray(scale_of(x), dtype=float), x.shape)
        out = np.zeros(x.shape + (x.shape[-1],))
        idx = np.arange(x.shape[-1])
        out[..., idx, idx] = s
        return out

    def apply_sqrt(x, g):
        return scale_of(np.asarray(x, dtype=float)) * g

    return sigma, sigma_sqrt, apply_sqrt


def gaussian_oracle(obj: Objective, sigma_spec, eta: float | None = None) -> GradientOracle:
    """Additive gaussian noise: H = grad f(x) + scale(x) * G.

    sigma_spec is either a constant scalar scale or a callable mapping x to
    per-coordinate scales (a state-dependent diagonal).  For a callable
    spec the uniform trace bound cannot be inferred, so eta must be given.
    """
    if callable(sigma_spec):
        if eta is None:
            raise ValueError(
                "state-dependent sigma needs an explicit eta bound on trace sigma(x)"
            )
        base = sigma_spec

        def scale_of(x):
            d = np.asarray(base(x), dtype=float)
            if np.any(d < 0):
                raise ValueError("sigma entries must be nonnegative")
            return d

        ppf = None
    else:
        s = float(sigma_spec)
        if s < 0:
            raise ValueError(f"sigma must be nonnegative, got {s}")
        if eta is None:
            eta = s * s * obj.dim

        def scale_of(x):
            return s

        def ppf(u):
            return s * ndtri(u)

    def draw_raw(prefix, rng):
        return rng.standard_normal(prefix + (obj.dim,))

    def apply(x, raw):
        return obj.gradient(x) + scale_of(x) * raw

    sigma, sigma_sqrt, apply_sqrt = _diagonal_fields(obj, scale_of)
    return GradientOracle(
        name="gaussian",
        objective=obj,
        setting=VARIANCE_BOUND,
        eta=float(eta),
        draw_raw=draw_raw,
        apply=apply,
        sigma=sigma,
        sigma_sqrt=sigma_sqrt,
        apply_sqrt=apply_sqrt,
        noise_ppf=ppf,
        gaussian_noise=True,
    )


def _standardized_law(law: str, dim: int, df: float | None):
    """draw(prefix, rng) and ppf for one of the unit-variance heavy laws."""
    if law == "normal":

        def draw(prefix, rng):
            return rng.standard_normal(prefix + (dim,))

        return draw, ndtri

    if law == "rademacher":

        def draw(prefix, rng):
            return rng.integers(0, 2, size=prefix + (dim,)).astype(float) * 2.0 - 1.0

        def ppf(u):
            return np.where(np.asarray(u) < 0.5, -1.0, 1.0)

        return draw, ppf

    if law == "laplace":
        b = 1.0 / np.sqrt(2.0)

        def draw(prefix, rng):
            return rng.laplace(0.0, b, size=prefix + (dim,))

        def ppf(u):
            u = np.asarray(u, dtype=float)
            return np.where(u < 0.5, b * np.log(2.0 * u), -b * np.log(2.0 * (1.0 - u)))

        return draw, ppf

    if law == "student":
        if df is None or df <= 4:
            raise ValueError("student noise needs df > 4")
        df = float(df)
        unit = np.sqrt((df - 2.0) / df)

        def draw(prefix, rng):
            return rng.standard_t(df, size=prefix + (dim,)) * unit

        def ppf(u):
            return student_t.ppf(u, df) * unit

        return draw, ppf

    raise ValueError(f"law must be one of {HEAVY_LAWS}, got {law!r}")


def heavy_oracle(obj: Objective, scale: float, law: str, df: float | None = None) -> GradientOracle:
    """Additive noise from a standardized heavier-than-gaussian law.

    Coordinates are i.i.d. with mean zero and unit variance before the
    scale factor, so trace sigma = scale**2 * dim regardless of the law.
    student requires df > 4 so the fourth moment exists.
    """
    if law not in HEAVY_LAWS:
        raise ValueError(f"law must be one of {HEAVY_LAWS}, got {law!r}")
    scale = float(scale)
    if scale < 0:
        raise ValueError("scale must be nonnegative")
    draw_std, std_ppf = _standardized_law(law, obj.dim, df)

    def scale_of(x):
        return scale

    def apply(x, raw):
        return obj.gradient(x) + scale * raw

    def ppf(u):
        return scale * std_ppf(u)

    sigma, sigma_sqrt, apply_sqrt = _diagonal_fields(obj, scale_of)
    name = f"student{df:g}" if law == "student" else law
    return GradientOracle(
        name=name,
        objective=obj,
        setting=VARIANCE_BOUND,
        eta=scale * scale * obj.dim,
        draw_raw=draw_std,
        apply=apply,
        sigma=sigma,
        sigma_sqrt=sigma_sqrt,
        apply_sqrt=apply_sqrt,
        noise_ppf=ppf,
        gaussian_noise=False,
    )


@dataclass(frozen=True)
class DataDistribution:
    """Samplable data source for mini-batch oracles.

    draw(prefix, rng) returns data points shaped prefix + datum_shape;
    callers append the batch axis themselves.
    """

    name: str
    draw: Callable[[tuple, np.random.Generator], np.ndarray]


def empirical_data(points: np.ndarray, name: str = "empirical") -> DataDistribution:
    """Uniform resampling (with replacement) of fixed rows."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or len(points) == 0:
        raise ValueError("points must be a nonempty (n, k) array")
    n = len(points)

    def draw(prefix, rng):
        return points[rng.integers(0, n, size=prefix)]

    return DataDistribution(name=name, draw=draw)


def iid_data(k: int, law: str = "normal", df: float | None = None) -> DataDistribution:
    """i.i.d. standardized coordinates from normal or one of the heavy laws."""
    draw_std, _ = _standardized_law(law, k, df)
    return DataDistribution(name=f"iid-{law}", draw=draw_std)


def batch_oracle(
    obj: Objective,
    per_sample_gradient: Callable[[np.ndarray, np.ndarray], np.ndarray],
    data: DataDistribution,
    m: int,
    sigma_f: Callable[[np.ndarray], np.ndarray] | None = None,
    eta: float | None = None,
) -> GradientOracle:
    """Mini-batch oracle: H(x) averages per-sample gradients of m data draws.

    per_sample_gradient(x, y) must broadcast over leading axes of both
    arguments; it receives x expanded with a batch axis against y of shape
    (..., m, datum).  The covariance is sigma_f(x) / m, with sigma_f the
    single-sample gradient covariance; when no analytic sigma_f is given
    it is estimated at call time from a fixed internal stream, and the same
    goes for the eta bound (second moment of the per-sample gradient at
    the minimizer).
    """
    if m < 1:
        raise ValueError("batch size must be >= 1")
    m = int(m)

    def draw_raw(prefix, rng):
        return data.draw(prefix + (m,), rng)

    def apply(x, raw):
        x = np.asarray(x, dtype=float)
        grads = per_sample_gradient(x[..., None, :], raw)
        return np.mean(grads, axis=-2)

    def estimated_sigma_f(x):
        x = np.asarray(x, dtype=float)
        rng = np.random.Generator(np.random.Philox(_ESTIMATE_SEED))
        y = data.draw((_SIGMA_EST_SAMPLES,), rng)
        g = per_sample_gradient(x[..., None, :], y)
        mean = g.mean(axis=-2)
        c = g - mean[..., None, :]
        return np.einsum("...ni,...nj->...ij", c, c) / (_SIGMA_EST_SAMPLES - 1)

    sf = sigma_f if sigma_f is not None else estimated_sigma_f

    def sigma(x):
        return np.asarray(sf(x), dtype=float) / m

    def sigma_sqrt(x):
        return psd_sqrt(sigma(x))

    def apply_sqrt(x, g):
        return np.einsum("...ij,...j->...i", sigma_sqrt(x), g)

    if eta is None:
        rng = np.random.Generator(np.random.Philox(_ESTIMATE_SEED + 1))
        y = data.draw((_ETA_EST_SAMPLES,), rng)
        g = per_sample_gradient(obj.x_star[None, :], y)
        eta = float(np.mean(np.sum(g * g, axis=-1)))

    return GradientOracle(
        name=f"batch{m}[{data.name}]",
        objective=obj,
        setting=PER_SAMPLE_SMOOTH,
        eta=float(eta),
        draw_raw=draw_raw,
        apply=apply,
        sigma=sigma,
        sigma_sqrt=sigma_sqrt,
        apply_sqrt=apply_sqrt,
        batch_m=m,
        noise_ppf=None,
        gaussian_noise=False,
    )


def least_squares_batch_oracle(obj: LeastSquaresObjective, m: int) -> GradientOracle:
    """Resample the rows of a least-squares objective in batches of m.

    Data points are packed as rows (a_i, b_i); the per-sample gradient is
    the residual times the feature vector.  Covariance and eta come from
    the empirical data in closed form.
    """
    if not isinstance(obj, LeastSquaresObjective):
        raise TypeError("need an objective carrying its data rows")
    a, b = obj.data_a, obj.data_b
    dim = a.shape[1]
    rows = np.hstack([a, b[:, None]])

    def per_sample_gradient(x, y):
        feats = y[..., :dim]
        targets = y[..., dim]
        resid = np.sum(x * feats, axis=-1) - targets
        return resid[..., None] * feats

    grads_at = lambda x: per_sample_gradient(np.asarray(x, dtype=float)[..., None, :], rows)

    def sigma_f(x):
        g = grads_at(x)
        mean = g.mean(axis=-2)
        c = g - mean[..., None, :]
        return np.einsum("...ni,...nj->...ij", c, c) / a.shape[0]

    g_star = grads_at(obj.x_star)
    eta = float(np.mean(np.sum(g_star * g_star, axis=-1)))
    oracle = batch_oracle(
        obj, per_sample_gradient, empirical_data(rows, name="rows"), m,
        sigma_f=sigma_f, eta=eta,
    )
    return oracle


def probe_batch_oracle(obj: Objective, m: int, law: str = "normal", df: float | None = None) -> GradientOracle:
    """Pure-noise batch oracle: per-sample gradient is the data point itself.

    On a flat objective this gives H = mean of m i.i.d. standardized
    vectors, the cleanest instance of batch-size covariance scaling:
    sigma = identity / m.
    """
    data = iid_data(obj.dim, law, df)
    eye = np.eye(obj.dim)

    def per_sample_gradient(x, y):
        return obj.gradient(x) + y

    def sigma_f(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(eye, x.shape[:-1] + (obj.dim, obj.dim))

    return batch_oracle(
        obj, per_sample_gradient, data, m, sigma_f=sigma_f, eta=float(obj.dim)
    )


def psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix, clipping tiny negative eigenvalues."""
    w, v = np.linalg.eigh(mat)
    root = np.sqrt(np.clip(w, 0.0, None))
    return np.einsum("...ik,...k,...jk->...ij", v, root, v)


def empirical_sigma(oracle: GradientOracle, x, n_samples: int, stream) -> np.ndarray:
    """Unbiased sample covariance of the oracle output at a fixed state."""
    if n_samples < 2:
        raise ValueError("need at least 2 samples for an unbiased covariance")
    x = np.asarray(x, dtype=float)
    rng = _as_generator(stream)
    draws = oracle.apply(
        np.broadcast_to(x, (n_samples,) + x.shape),
        oracle.draw_raw((n_samples,), rng),
    )
    mean = draws.mean(axis=0)
    centered = draws - mean
    return centered.T @ centered / (n_samples - 1)
