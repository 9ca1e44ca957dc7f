"""Gaussian-process regression over signal levels, the belief model for planning.

Exact GP with a squared-exponential kernel. Targets are centred on their mean
before fitting and the mean is restored at prediction, so the prior reverts to
the data mean far from all observations. Fits go through a Cholesky
factorization with a small jitter ladder as a fallback for marginal matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .env import Position
from .nav import Observation

#: Jitter ladder tried in order when the kernel matrix is not numerically SPD.
JITTERS = (0.0, 1e-8, 1e-6)


class GpFitError(RuntimeError):
    """Raised when the kernel matrix cannot be factorized even with jitter."""


@dataclass(frozen=True, slots=True)
class Kernel:
    """Squared-exponential covariance: sigma_f^2 exp(-|a-b|^2 / (2 l^2))."""

    length_scale: float = 0.4
    signal_variance: float = 100.0
    noise_variance: float = 1.0

    def __post_init__(self) -> None:
        if self.length_scale <= 0:
            raise ValueError("length_scale must be positive")
        if self.signal_variance <= 0:
            raise ValueError("signal_variance must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Gram matrix between row-stacked point sets ``a`` (n,2) and ``b`` (m,2)."""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
        return self.signal_variance * np.exp(-d2 / (2.0 * self.length_scale**2))


DEFAULT_KERNEL = Kernel()


@dataclass(frozen=True)
class GpModel:
    """Frozen posterior: training set, kernel, Cholesky factor and alpha vector."""

    X: np.ndarray
    y_mean: float
    y_centered: np.ndarray
    kernel: Kernel
    L: np.ndarray
    alpha: np.ndarray
    jitter: float

    def predict(self, pos: Position | Sequence[Position] | np.ndarray):
        """Posterior mean and standard deviation of the latent level.

        A single Position yields floats; an (n,2) array or a sequence of
        positions yields arrays. The std is the model uncertainty about the
        underlying field (measurement noise not added back).
        """
        single = isinstance(pos, Position)
        q = _as_points(pos)
        k_star = self.kernel(q, self.X)
        mu = k_star @ self.alpha + self.y_mean
        v = solve_triangular(self.L, k_star.T, lower=True)
        var = self.kernel.signal_variance - np.sum(v * v, axis=0)
        sigma = np.sqrt(np.maximum(var, 0.0))
        if single:
            return float(mu[0]), float(sigma[0])
        return mu, sigma


def _as_points(pos: Position | Sequence[Position] | np.ndarray) -> np.ndarray:
    if isinstance(pos, Position):
        return pos.as_array()[None, :]
    arr = np.asarray(
        [p.as_array() if isinstance(p, Position) else p for p in pos]
        if not isinstance(pos, np.ndarray)
        else pos,
        dtype=float,
    )
    return np.atleast_2d(arr)


def fit_xy(X: np.ndarray, y: np.ndarray, kernel: Kernel = DEFAULT_KERNEL) -> GpModel:
    """Fit from raw arrays: ``X`` row-stacked positions (n,2), ``y`` levels (n,)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(X) == 0:
        raise ValueError("need at least one observation")
    if len(X) != len(y):
        raise ValueError(f"X has {len(X)} rows but y has {len(y)} values")
    if kernel.noise_variance == 0.0 and len(np.unique(X, axis=0)) < len(X):
        raise GpFitError("duplicate inputs with zero noise variance make the kernel singular")
    y_mean = float(y.mean())
    yc = y - y_mean
    K = kernel(X, X)
    K[np.diag_indices_from(K)] += kernel.noise_variance
    last_err: Exception | None = None
    for jitter in JITTERS:
        try:
            L = cholesky(K + jitter * np.eye(len(X)), lower=True)
        except np.linalg.LinAlgError as exc:
            last_err = exc
            continue
        alpha = cho_solve((L, True), yc)
        return GpModel(
            X=X, y_mean=y_mean, y_centered=yc, kernel=kernel, L=L, alpha=alpha, jitter=jitter
        )
    raise GpFitError(f"kernel matrix not positive definite even with jitter: {last_err}")


def fit(data: Sequence[Observation], kernel: Kernel = DEFAULT_KERNEL) -> GpModel:
    """Fit a belief model to observations, using filtered levels where present."""
    if len(data) == 0:
        raise ValueError("need at least one observation")
    X = np.array([[ob.position.x, ob.position.y] for ob in data])
    y = np.array([ob.phi_filtered if ob.phi_filtered is not None else ob.phi for ob in data])
    return fit_xy(X, y, kernel)


def predict(model: GpModel, pos: Position | Sequence[Position] | np.ndarray):
    """Module-level alias of :meth:`GpModel.predict`."""
    return model.predict(pos)


def log_marginal_likelihood(model: GpModel) -> float:
    """Log evidence of the training targets under the fitted kernel."""
    n = len(model.y_centered)
    return float(
        -0.5 * model.y_centered @ model.alpha
        - np.sum(np.log(np.diag(model.L)))
        - 0.5 * n * math.log(2.0 * math.pi)
    )


#: Grids searched by :func:`select_kernel`.
LENGTH_SCALE_GRID = (0.1, 0.2, 0.4, 0.8)
NOISE_VARIANCE_GRID = (0.1, 1.0, 4.0)


def select_kernel(
    X: np.ndarray,
    y: np.ndarray,
    base: Kernel = DEFAULT_KERNEL,
    length_scales: Sequence[float] = LENGTH_SCALE_GRID,
    noise_variances: Sequence[float] = NOISE_VARIANCE_GRID,
) -> Kernel:
    """Pick kernel hyperparameters by log-marginal-likelihood grid search.

    Signal variance stays at ``base.signal_variance``; combinations that fail
    to factorize are skipped. Ties keep the earliest grid entry (length scale
    outer loop, noise variance inner), so the choice is deterministic.
    """
    best: tuple[float, Kernel] | None = None
    for ls in length_scales:
        for nv in noise_variances:
            kern = Kernel(length_scale=ls, signal_variance=base.signal_variance, noise_variance=nv)
            try:
                model = fit_xy(X, y, kern)
            except GpFitError:
                continue
            lml = log_marginal_likelihood(model)
            if best is None or lml > best[0]:
                best = (lml, kern)
    if best is None:
        raise GpFitError("no kernel in the search grid produced a usable fit")
    return best[1]


def subsample(
    data: Sequence[Observation], cap: int, rng: np.random.Generator
) -> list[Observation]:
    """Thin a pooled observation set to at most ``cap`` points.

    Keeps the most recent observation of every robot (so no teammate's latest
    knowledge is dropped) and fills the rest uniformly at random without
    replacement. The result is returned in (t, robot id) order. Identity when
    the pool already fits.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    data = list(data)
    if len(data) <= cap:
        return data
    latest: dict[int, int] = {}
    for i, ob in enumerate(data):
        j = latest.get(ob.robot_id)
        if j is None or (ob.t, i) > (data[j].t, j):
            latest[ob.robot_id] = i
    keep = sorted(latest.values())
    if len(keep) > cap:
        keep = keep[:cap]
    remaining = [i for i in range(len(data)) if i not in set(keep)]
    extra = cap - len(keep)
    if extra > 0:
        picked = rng.choice(len(remaining), size=extra, replace=False)
        keep.extend(remaining[int(i)] for i in picked)
    chosen = [data[i] for i in keep]
    chosen.sort(key=lambda ob: (ob.t, ob.robot_id))
    return chosen
