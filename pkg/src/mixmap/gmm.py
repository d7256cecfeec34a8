"""Univariate Gaussian mixtures fitted with expectation-maximization.

Fitting is deterministic and depends only on the multiset of input
values: the data is sorted once on entry, initial means sit on evenly
spaced quantiles, and all arithmetic runs in float64 regardless of the
input dtype.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

_EMPTY_COMPONENT_MASS = 1e-12


class Component(NamedTuple):
    weight: float
    mean: float
    variance: float


@dataclass(frozen=True)
class EmConfig:
    """Mixture-fit settings. k is the component count; the rest is numerics.

    The seed only feeds the optional k-means initialization refinement;
    the default quantile initialization is seed-free.
    """

    k: int
    max_iterations: int = 500
    rel_tolerance: float = 1e-8
    variance_floor_scale: float = 1e-9
    seed: int = 0
    kmeans_refine: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.rel_tolerance <= 0 or self.variance_floor_scale <= 0:
            raise ValueError("tolerances must be > 0")


@dataclass(frozen=True)
class MixtureModel:
    """Fitted k-component mixture, components sorted by ascending mean."""

    components: tuple[Component, ...]
    log_likelihood: float
    iterations_run: int
    converged: bool

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def means(self) -> np.ndarray:
        return np.array([c.mean for c in self.components])

    @property
    def variances(self) -> np.ndarray:
        return np.array([c.variance for c in self.components])


def gaussian_pdf(x, mean, variance):
    """Normal density (1 / (sigma * sqrt(2 pi))) * exp(-(x - mean)^2 / (2 variance)).

    Accepts scalars or arrays for x; variance must be strictly positive.
    """
    if variance <= 0:
        raise ValueError(f"variance must be > 0, got {variance}")
    z = np.asarray(x, dtype=np.float64) - mean
    out = np.exp(-(z * z) / (2.0 * variance)) / math.sqrt(2.0 * math.pi * variance)
    return out if out.ndim else float(out)


def _log_components(x, weights, means, variances):
    # (S, k) matrix of log(w_j) + log G(x_s; mu_j, var_j)
    z = x[:, None] - means[None, :]
    const = np.log(weights) - 0.5 * np.log(2.0 * math.pi * variances)
    return const[None, :] - (z * z) * (0.5 / variances)[None, :]


def _log_norm(log_comp):
    # Row-wise logsumexp with the max-subtraction trick.
    m = log_comp.max(axis=1, keepdims=True)
    return m[:, 0] + np.log(np.exp(log_comp - m).sum(axis=1))


def _quantile_means(x_sorted: np.ndarray, k: int) -> np.ndarray:
    probs = (2.0 * np.arange(1, k + 1) - 1.0) / (2.0 * k)
    return np.quantile(x_sorted, probs)


def _kmeans_refine(x: np.ndarray, means: np.ndarray, seed: int) -> np.ndarray:
    """Lloyd iterations from the quantile start plus one seeded random restart."""
    k = means.size

    def lloyd(centers):
        centers = centers.copy()
        for _ in range(50):
            assign = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
            new = centers.copy()
            for j in range(k):
                sel = x[assign == j]
                if sel.size:
                    new[j] = sel.mean()
            if np.array_equal(new, centers):
                break
            centers = new
        assign = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
        sse = float(np.sum((x - centers[assign]) ** 2))
        return centers, sse

    best, best_sse = lloyd(means)
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    start = np.sort(rng.choice(x, size=k, replace=x.size < k))
    cand, sse = lloyd(start)
    if sse < best_sse:
        best = cand
    return np.sort(best)


def fit_gmm_em(
    values, config: EmConfig, *, trace: list | None = None
) -> MixtureModel:
    """Fit a k-component univariate mixture to the value distribution.

    E-step computes responsibilities in log space; M-step reestimates
    weights, means, and floor-clamped variances; iteration stops when the
    relative log-likelihood change drops below config.rel_tolerance.
    When trace is a list it collects the per-iteration log-likelihood.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("cannot fit a mixture to an empty value set")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite value in mixture input")
    x = np.sort(x)
    s = x.size
    k = config.k

    pop_var = float(x.var())
    floor = config.variance_floor_scale * max(pop_var, 1.0)

    means = _quantile_means(x, k)
    if config.kmeans_refine:
        means = _kmeans_refine(x, means, config.seed)
    variances = np.full(k, max(pop_var, floor))
    weights = np.full(k, 1.0 / k)

    log_likelihood = -math.inf
    iterations = 0
    converged = False
    for _ in range(config.max_iterations):
        iterations += 1
        log_comp = _log_components(x, weights, means, variances)
        norm = _log_norm(log_comp)
        new_ll = float(norm.sum())
        if trace is not None:
            trace.append(new_ll)
        if iterations > 1 and abs(new_ll - log_likelihood) <= (
            config.rel_tolerance * max(1.0, abs(log_likelihood))
        ):
            log_likelihood = new_ll
            converged = True
            break
        log_likelihood = new_ll

        resp = np.exp(log_comp - norm[:, None])
        mass = resp.sum(axis=0)
        empty = mass < _EMPTY_COMPONENT_MASS
        safe = np.where(empty, 1.0, mass)
        means = (resp * x[:, None]).sum(axis=0) / safe
        sq = (x[:, None] - means[None, :]) ** 2
        variances = (resp * sq).sum(axis=0) / safe
        weights = mass / s
        if empty.any():
            # Reseed dead components on the worst-explained samples.
            worst = np.argsort(norm)
            for rank, j in enumerate(np.flatnonzero(empty)):
                means[j] = x[worst[rank % s]]
                variances[j] = max(pop_var, floor)
                weights[j] = 1.0 / s
            weights = weights / weights.sum()
        variances = np.maximum(variances, floor)

    weights = weights / weights.sum()
    order = np.lexsort((weights, variances, means))
    components = tuple(
        Component(float(weights[j]), float(means[j]), float(variances[j]))
        for j in order
    )
    return MixtureModel(components, log_likelihood, iterations, converged)


def mixture_log_likelihood(values: Sequence[float], model: MixtureModel) -> float:
    """Log-likelihood of values under a fitted model (diagnostic helper)."""
    x = np.asarray(values, dtype=np.float64).ravel()
    log_comp = _log_components(x, model.weights, model.means, model.variances)
    return float(_log_norm(log_comp).sum())
