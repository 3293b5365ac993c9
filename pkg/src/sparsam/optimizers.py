"""AdamW and the sharpness-aware optimizer family built on it.

Every variant shares one primitive, `adamw_step`, which updates moments
and parameters without bias correction and only on the active layer
set. The variants differ in how they obtain the descent gradient:

    adamw_baseline_step   one plain gradient pass
    adasam_step           dense ascent pass, perturb, dense descent pass
    slsam_step            sampled layers, sparse ascent and descent passes
    s2sam_step            perturb along last step's gradient, one pass
    sl_s2sam_step         sampled layers, stale per-layer perturbations

Step functions mutate x and state in place and return a StepTelemetry
(plus the updated sampling distribution where one is involved). The
telemetry loss is the loss at the point where the step's first gradient
was evaluated; for single-step variants past their bootstrap that is
the perturbed point, the only point they ever visit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from sparsam.bandit import (
    BanditConfig,
    SamplingDistribution,
    sample_active_set,
    update_distribution,
)
from sparsam.errors import DivergenceError
from sparsam.layered import (
    ActiveSet,
    LayeredVector,
    active_param_count,
    layer_l2_norm,
    masked_axpy,
    total_l1_norm,
)
from sparsam.objectives import Batch, Objective
from sparsam.telemetry import StepTelemetry

SelectorKind = Literal["bandit", "uniform_random", "greedy_topk"]
SELECTOR_KINDS: tuple[str, ...] = ("bandit", "uniform_random", "greedy_topk")


@dataclass(frozen=True)
class AdamWConfig:
    eta: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if not 0.0 < self.beta1 < 1.0 or not 0.0 < self.beta2 < 1.0:
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be positive")


@dataclass(frozen=True)
class SamConfig:
    rho: float = 0.01
    perturb_norm: str = "global"

    def __post_init__(self) -> None:
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if self.perturb_norm not in ("global", "per_layer"):
            raise ValueError(f"unknown perturb_norm {self.perturb_norm!r}")


@dataclass
class OptimizerState:
    m: LayeredVector
    v: LayeredVector
    t: int = 0
    prev_grad: LayeredVector | None = None
    # Step at which prev_grad[l] was written; 0 means never stashed.
    stash_step: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not self.m.same_shape(self.v):
            raise ValueError("m and v shapes differ")

    @classmethod
    def init(cls, dims) -> "OptimizerState":
        return cls(LayeredVector.zeros(dims), LayeredVector.zeros(dims))


def adamw_step(
    state: OptimizerState,
    x: LayeredVector,
    g: LayeredVector,
    active: ActiveSet,
    cfg: AdamWConfig,
) -> tuple[LayeredVector, OptimizerState]:
    """Moment and parameter update on the active layers, no bias correction.

    Blocks outside the active set are left bit-identical, in x and in
    both moment vectors.
    """
    if not x.same_shape(state.m) or not x.same_shape(g):
        raise ValueError(f"shape mismatch: x {x.dims}, m {state.m.dims}, g {g.dims}")
    active.validate(x.n_layers)
    for l in active:
        gl = g[l]
        if not np.isfinite(gl).all():
            raise DivergenceError(f"non-finite gradient in layer {l} at step {state.t + 1}")
        state.m.blocks[l] = cfg.beta1 * state.m[l] + (1.0 - cfg.beta1) * gl
        state.v.blocks[l] = cfg.beta2 * state.v[l] + (1.0 - cfg.beta2) * gl * gl
        x.blocks[l] = (
            x[l]
            - cfg.eta * state.m[l] / np.sqrt(state.v[l] + cfg.adam_eps)
            - cfg.eta * cfg.weight_decay * x[l]
        )
    state.t += 1
    return x, state


def sam_perturb(r: LayeredVector, active: ActiveSet, cfg: SamConfig) -> LayeredVector:
    """Ascent perturbation of radius rho along r, zero off the active set.

    per_layer mode scales each active block to norm rho on its own;
    global mode scales the whole active restriction jointly. Zero-norm
    input maps to a zero perturbation.
    """
    active.validate(r.n_layers)
    eps = LayeredVector.zeros(r.dims)
    if cfg.rho == 0.0 or len(active) == 0:
        return eps
    if cfg.perturb_norm == "per_layer":
        for l in active:
            norm = layer_l2_norm(r, l)
            if norm > 0.0:
                eps.blocks[l] = (cfg.rho / norm) * r[l]
    else:
        joint = math.sqrt(sum(layer_l2_norm(r, l) ** 2 for l in active))
        if joint > 0.0:
            for l in active:
                eps.blocks[l] = (cfg.rho / joint) * r[l]
    return eps


def _perturbed(x: LayeredVector, eps: LayeredVector, active: ActiveSet) -> LayeredVector:
    x_pert = x.copy()
    return masked_axpy(x_pert, 1.0, eps, active)


def adamw_baseline_step(
    obj: Objective,
    x: LayeredVector,
    batch: Batch | None,
    state: OptimizerState,
    adamw_cfg: AdamWConfig,
) -> StepTelemetry:
    """One plain dense AdamW step: a single gradient pass over all layers."""
    full = ActiveSet.full(obj.n_layers)
    step_no = state.t + 1
    loss, g = obj.loss_and_grad(x, batch, full)
    adamw_step(state, x, g, full, adamw_cfg)
    return StepTelemetry(
        step=step_no,
        loss=loss,
        grad_l1=total_l1_norm(g),
        active_layers=full,
        active_param_count=obj.dim,
        grad_passes=1,
    )


def adasam_step(
    obj: Objective,
    x: LayeredVector,
    batch: Batch | None,
    state: OptimizerState,
    sam_cfg: SamConfig,
    adamw_cfg: AdamWConfig,
) -> StepTelemetry:
    """Dense two-pass step: ascent gradient, perturb, descent gradient.

    Both passes see the same minibatch.
    """
    full = ActiveSet.full(obj.n_layers)
    step_no = state.t + 1
    loss, r = obj.loss_and_grad(x, batch, full)
    eps = sam_perturb(r, full, sam_cfg)
    g = obj.grad(_perturbed(x, eps, full), batch, full)
    adamw_step(state, x, g, full, adamw_cfg)
    return StepTelemetry(
        step=step_no,
        loss=loss,
        grad_l1=total_l1_norm(r),
        active_layers=full,
        active_param_count=obj.dim,
        grad_passes=2,
        per_layer_r_norms={l: layer_l2_norm(r, l) for l in full},
    )


def sparse_sam_step(
    obj: Objective,
    x: LayeredVector,
    batch: Batch | None,
    state: OptimizerState,
    active: ActiveSet,
    sam_cfg: SamConfig,
    adamw_cfg: AdamWConfig,
) -> StepTelemetry:
    """Two-pass SAM restricted to a given active set.

    The sampling policy that produced the set is the caller's business;
    this core is shared by the bandit optimizer and the ablations.
    """
    active.validate(obj.n_layers)
    step_no = state.t + 1
    loss, r = obj.loss_and_grad(x, batch, active)
    eps = sam_perturb(r, active, sam_cfg)
    g = obj.grad(_perturbed(x, eps, active), batch, active)
    adamw_step(state, x, g, active, adamw_cfg)
    return StepTelemetry(
        step=step_no,
        loss=loss,
        grad_l1=total_l1_norm(r),
        active_layers=active,
        active_param_count=active_param_count(x, active),
        grad_passes=2,
        per_layer_r_norms={l: layer_l2_norm(r, l) for l in active},
    )


def slsam_step(
    obj: Objective,
    x: LayeredVector,
    batch: Batch | None,
    state: OptimizerState,
    dist: SamplingDistribution,
    sam_cfg: SamConfig,
    adamw_cfg: AdamWConfig,
    bandit_cfg: BanditConfig,
    rng: np.random.Generator,
    g_prior: float | None = None,
) -> tuple[SamplingDistribution, StepTelemetry]:
    """Bandit-sampled sparse SAM step plus the distribution update.

    `g_prior` feeds the running-envelope mode: when bandit_cfg.g_mode is
    "running" the caller passes the largest ascent norm seen so far and
    the update uses max(g_prior, current norms) as its envelope.
    """
    active, redraws = sample_active_set(dist, rng)
    tel = sparse_sam_step(obj, x, batch, state, active, sam_cfg, adamw_cfg)
    tel.redraws = redraws
    env = None
    if bandit_cfg.g_mode == "running" and g_prior is not None:
        env = max(g_prior, max(tel.per_layer_r_norms.values()))
    new_dist = update_distribution(dist, active, tel.per_layer_r_norms, bandit_cfg, g=env)
    return new_dist, tel


def s2sam_step(
    obj: Objective,
    x: LayeredVector,
    batch: Batch | None,
    state: OptimizerState,
    sam_cfg: SamConfig,
    adamw_cfg: AdamWConfig,
) -> StepTelemetry:
    """Single-pass dense SAM: perturb along the previous step's gradient.

    The first step has nothing stashed and runs a plain AdamW step, then
    every later step costs exactly one gradient pass.
    """
    full = ActiveSet.full(obj.n_layers)
    step_no = state.t + 1
    if state.prev_grad is None:
        loss, g = obj.loss_and_grad(x, batch, full)
        staleness: dict[int, int] = {}
    else:
        eps = sam_perturb(state.prev_grad, full, sam_cfg)
        loss, g = obj.loss_and_grad(_perturbed(x, eps, full), batch, full)
        staleness = {l: step_no - int(state.stash_step[l]) for l in full}
    adamw_step(state, x, g, full, adamw_cfg)
    state.prev_grad = g
    state.stash_step = np.full(obj.n_layers, step_no, dtype=np.int64)
    return StepTelemetry(
        step=step_no,
        loss=loss,
        grad_l1=total_l1_norm(g),
        active_layers=full,
        active_param_count=obj.dim,
        grad_passes=1,
        per_layer_r_norms={l: layer_l2_norm(g, l) for l in full},
        per_layer_staleness=staleness,
    )


def sl_s2sam_step(
    obj: Objective,
    x: LayeredVector,
    batch: Batch | None,
    state: OptimizerState,
    dist: SamplingDistribution,
    sam_cfg: SamConfig,
    adamw_cfg: AdamWConfig,
    bandit_cfg: BanditConfig,
    rng: np.random.Generator,
    g_prior: float | None = None,
) -> tuple[SamplingDistribution, StepTelemetry]:
    """Sampled single-pass SAM with per-layer stale perturbation gradients.

    Step 1 is a dense AdamW bootstrap that stashes every layer's
    gradient; afterwards each sampled layer is perturbed along its most
    recently stashed gradient (staleness recorded per layer), refreshed
    with the new sparse gradient, and the sampling distribution is
    updated from the fresh norms.
    """
    step_no = state.t + 1
    if state.prev_grad is None:
        full = ActiveSet.full(obj.n_layers)
        loss, g = obj.loss_and_grad(x, batch, full)
        adamw_step(state, x, g, full, adamw_cfg)
        state.prev_grad = g.copy()
        state.stash_step = np.full(obj.n_layers, step_no, dtype=np.int64)
        tel = StepTelemetry(
            step=step_no,
            loss=loss,
            grad_l1=total_l1_norm(g),
            active_layers=full,
            active_param_count=obj.dim,
            grad_passes=1,
            per_layer_r_norms={l: layer_l2_norm(g, l) for l in full},
        )
        return dist, tel

    active, redraws = sample_active_set(dist, rng)
    if any(int(state.stash_step[l]) < 1 for l in active):
        raise AssertionError("sampled a layer with no stashed gradient after bootstrap")
    staleness = {l: step_no - int(state.stash_step[l]) for l in active}
    eps = sam_perturb(state.prev_grad, active, sam_cfg)
    loss, g = obj.loss_and_grad(_perturbed(x, eps, active), batch, active)
    adamw_step(state, x, g, active, adamw_cfg)
    for l in active:
        state.prev_grad.blocks[l] = g[l]
        state.stash_step[l] = step_no
    g_norms = {l: layer_l2_norm(g, l) for l in active}
    env = None
    if bandit_cfg.g_mode == "running" and g_prior is not None:
        env = max(g_prior, max(g_norms.values()))
    new_dist = update_distribution(dist, active, g_norms, bandit_cfg, g=env)
    tel = StepTelemetry(
        step=step_no,
        loss=loss,
        grad_l1=total_l1_norm(g),
        active_layers=active,
        active_param_count=active_param_count(x, active),
        grad_passes=1,
        per_layer_r_norms=g_norms,
        per_layer_staleness=staleness,
        redraws=redraws,
    )
    return new_dist, tel


def select_layers_ablation(
    kind: SelectorKind,
    obj: Objective,
    x: LayeredVector,
    batch: Batch | None,
    k: int,
    rng: np.random.Generator,
) -> ActiveSet:
    """Non-bandit layer selection: uniform without replacement, or the k
    layers with the largest full-gradient norms (ties to the lower index).

    greedy_topk spends a full gradient pass on selection; callers must
    charge obj.dim to the step's selection_param_count.
    """
    if kind == "bandit":
        raise ValueError("bandit selection happens in sample_active_set")
    if kind not in SELECTOR_KINDS:
        raise ValueError(f"unknown selector kind {kind!r}")
    if not 1 <= k <= obj.n_layers:
        raise ValueError(f"k={k} out of range for {obj.n_layers} layers")
    if kind == "uniform_random":
        idx = rng.choice(obj.n_layers, size=k, replace=False)
        return ActiveSet.from_iterable(int(i) for i in idx)
    g = obj.grad(x, batch, ActiveSet.full(obj.n_layers))
    norms = np.array([layer_l2_norm(g, l) for l in range(obj.n_layers)])
    order = np.argsort(-norms, kind="stable")
    return ActiveSet.from_iterable(int(i) for i in order[:k])


def ablation_step(
    kind: SelectorKind,
    obj: Objective,
    x: LayeredVector,
    batch: Batch | None,
    state: OptimizerState,
    k: int,
    sam_cfg: SamConfig,
    adamw_cfg: AdamWConfig,
    rng: np.random.Generator,
) -> StepTelemetry:
    """Sparse SAM step whose active set comes from an ablation selector."""
    active = select_layers_ablation(kind, obj, x, batch, k, rng)
    tel = sparse_sam_step(obj, x, batch, state, active, sam_cfg, adamw_cfg)
    if kind == "greedy_topk":
        tel.selection_param_count = obj.dim
    return tel
