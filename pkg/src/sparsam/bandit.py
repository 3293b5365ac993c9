"""Adaptive sampling distribution over layers.

The sampler keeps one inclusion probability per layer, constrained to
the set {p : sum(p) = s, p_min <= p_l <= 1}. Each iteration the sparse
optimizer draws an active set by independent Bernoulli trials, scores
the sampled layers with a pseudo-loss built from their ascent gradient
norms, shrinks probabilities by an exponentiated-gradient step, and
projects back onto the constraint set in KL geometry.

The pseudo-loss for a sampled layer is

    k_l = G^2 / p_min^2 - ||r_l||^2 / p_l^2

with G an upper envelope on the sampled gradient norms, so k_l >= 0 and
layers with large gradients relative to their probability shrink least.
Unsampled layers score zero and are only rescaled by the projection.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from sparsam.layered import ActiveSet

logger = logging.getLogger(__name__)

SUM_TOL = 1e-9
PROJECT_SUM_TOL = 1e-12
PROJECT_MAX_ITER = 200
MAX_SAMPLE_ATTEMPTS = 10_000


@dataclass(frozen=True)
class SamplingDistribution:
    """Per-layer inclusion probabilities with budget s and floor p_min."""

    p: np.ndarray
    s: float
    p_min: float

    def __post_init__(self) -> None:
        p = np.ascontiguousarray(self.p, dtype=np.float64)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "p_min", float(self.p_min))
        if p.ndim != 1 or p.size < 1:
            raise ValueError("p must be a non-empty 1-d array")
        n = p.size
        if not 0.0 < self.p_min <= 1.0:
            raise ValueError(f"p_min must be in (0, 1], got {self.p_min}")
        if not n * self.p_min <= self.s + SUM_TOL:
            raise ValueError(f"budget s={self.s} infeasible: below {n} * p_min={self.p_min}")
        if self.s > n + SUM_TOL:
            raise ValueError(f"budget s={self.s} exceeds layer count {n}")
        if (p < self.p_min - SUM_TOL).any() or (p > 1.0 + SUM_TOL).any():
            raise ValueError("probabilities leave [p_min, 1]")
        if abs(float(p.sum()) - self.s) > SUM_TOL:
            raise ValueError(f"sum(p)={float(p.sum())} deviates from s={self.s}")

    @property
    def n_layers(self) -> int:
        return self.p.size


@dataclass(frozen=True)
class BanditConfig:
    alpha_p: float = 1e-4
    exponent_clamp: float = 50.0
    g_mode: str = "current"

    def __post_init__(self) -> None:
        if self.alpha_p <= 0:
            raise ValueError("alpha_p must be positive")
        if self.exponent_clamp <= 0:
            raise ValueError("exponent_clamp must be positive")
        if self.g_mode not in ("current", "running"):
            raise ValueError(f"unknown g_mode {self.g_mode!r}")


def init_uniform(n_layers: int, s: float, p_min: float) -> SamplingDistribution:
    """Uniform feasible start p_l = s / n."""
    if n_layers < 1:
        raise ValueError("need at least one layer")
    s = float(s)
    if not 0.0 < s <= n_layers:
        raise ValueError(f"budget s={s} must be in (0, {n_layers}]")
    p0 = s / n_layers
    if p0 < p_min:
        raise ValueError(f"uniform start {p0} falls below p_min={p_min}")
    return SamplingDistribution(np.full(n_layers, p0), s, p_min)


def sample_active_set(
    dist: SamplingDistribution, rng: np.random.Generator
) -> tuple[ActiveSet, int]:
    """Independent Bernoulli draw per layer, redrawn until non-empty.

    Returns the active set and how many redraws the non-empty guarantee
    cost (0 almost always).
    """
    redraws = 0
    while True:
        mask = rng.random(dist.n_layers) < dist.p
        if mask.any():
            if redraws:
                logger.debug("active set empty %d time(s); redrew", redraws)
            return ActiveSet.from_iterable(np.flatnonzero(mask)), redraws
        redraws += 1
        if redraws >= MAX_SAMPLE_ATTEMPTS:
            raise RuntimeError(f"no non-empty active set after {redraws} draws")


def pseudo_loss(
    r_norms: Mapping[int, float],
    dist: SamplingDistribution,
    active: ActiveSet,
    g: float | None = None,
) -> np.ndarray:
    """Per-layer scores k, zero off the active set and >= 0 on it.

    `g` overrides the envelope G; by default it is the max gradient norm
    over the current active set.
    """
    active.validate(dist.n_layers)
    if len(active) == 0:
        raise ValueError("active set is empty")
    if set(r_norms) != set(active.members):
        raise ValueError("r_norms keys must match the active set")
    norms = {l: float(v) for l, v in r_norms.items()}
    if any(v < 0 for v in norms.values()):
        raise ValueError("gradient norms must be non-negative")
    g_env = max(norms.values()) if g is None else float(g)
    if g_env < max(norms.values()):
        raise ValueError("envelope G below a sampled gradient norm")
    k = np.zeros(dist.n_layers)
    for l in active:
        k[l] = (g_env / dist.p_min) ** 2 - (norms[l] / dist.p[l]) ** 2
    if (k < 0).any():
        raise AssertionError("pseudo-loss must be non-negative")
    return k


def exp_update(
    dist: SamplingDistribution, k: np.ndarray, config: BanditConfig
) -> np.ndarray:
    """Unnormalized exponentiated-gradient shrink u_l = p_l exp(-a k_l / p_l)."""
    k = np.asarray(k, dtype=np.float64)
    if k.shape != dist.p.shape:
        raise ValueError(f"k shape {k.shape} does not match p shape {dist.p.shape}")
    if (k < 0).any():
        raise ValueError("pseudo-losses must be non-negative")
    exponent = np.clip(-config.alpha_p * k / dist.p, -config.exponent_clamp, 0.0)
    return dist.p * np.exp(exponent)


def kl_project(u: np.ndarray, s: float, p_min: float) -> SamplingDistribution:
    """KL projection of positive weights u onto {q : sum(q) = s, p_min <= q <= 1}.

    The minimizer has the form q = clip(c * u, p_min, 1) for a scalar
    c > 0; sum(clip(c * u)) is continuous and non-decreasing in c, so c
    is found by bisection on [0, 1/min(u)]. The result is returned as a
    distribution, which re-checks every constraint on construction.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 1 or u.size < 1:
        raise ValueError("u must be a non-empty 1-d array")
    if not np.isfinite(u).all() or (u <= 0).any():
        raise ValueError("u must be finite and strictly positive")
    n = u.size
    s = float(s)
    if not 0.0 < p_min <= 1.0:
        raise ValueError(f"p_min must be in (0, 1], got {p_min}")
    if n * p_min > s + SUM_TOL or s > n + SUM_TOL:
        raise ValueError(f"target sum s={s} infeasible for n={n}, p_min={p_min}")

    def mass(c: float) -> float:
        return float(np.clip(c * u, p_min, 1.0).sum())

    lo, hi = 0.0, 1.0 / float(u.min())
    c = hi
    for _ in range(PROJECT_MAX_ITER):
        c = 0.5 * (lo + hi)
        m = mass(c)
        if abs(m - s) <= PROJECT_SUM_TOL:
            break
        if m < s:
            lo = c
        else:
            hi = c
    else:
        if abs(mass(c) - s) > SUM_TOL:
            raise ValueError("projection bisection failed to reach the target sum")
    return SamplingDistribution(np.clip(c * u, p_min, 1.0), s, p_min)


def update_distribution(
    dist: SamplingDistribution,
    active: ActiveSet,
    r_norms: Mapping[int, float],
    config: BanditConfig,
    g: float | None = None,
) -> SamplingDistribution:
    """One full sampler update: score, shrink, project."""
    k = pseudo_loss(r_norms, dist, active, g=g)
    u = exp_update(dist, k, config)
    return kl_project(u, dist.s, dist.p_min)
