"""Per-step telemetry and run-level metrics.

A run produces one StepTelemetry per optimizer step plus an optional
series of probe records. Probes evaluate the full population gradient
on a fixed schedule for reporting only; they are deliberately kept out
of the step list so cost metrics count exactly the work the optimizer
itself performed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sparsam.layered import ActiveSet


@dataclass
class StepTelemetry:
    step: int
    loss: float
    grad_l1: float
    active_layers: ActiveSet
    active_param_count: int
    grad_passes: int
    per_layer_r_norms: dict[int, float] = field(default_factory=dict)
    # Parameters touched by a selection rule outside the optimizer's own
    # gradient passes (greedy full-gradient scoring); counted into
    # active_ratio but not into grad_passes, which stays in {1, 2}.
    selection_param_count: int = 0
    per_layer_staleness: dict[int, int] = field(default_factory=dict)
    redraws: int = 0
    wall_ns: int = 0

    def __post_init__(self) -> None:
        if self.step < 1:
            raise ValueError("step numbers start at 1")
        if self.grad_passes not in (1, 2):
            raise ValueError(f"grad_passes must be 1 or 2, got {self.grad_passes}")
        if self.active_param_count < 0 or self.selection_param_count < 0:
            raise ValueError("parameter counts must be non-negative")
        if len(self.active_layers) == 0:
            raise ValueError("a step must touch at least one layer")
        if any(st < 1 for st in self.per_layer_staleness.values()):
            raise ValueError("staleness counters start at 1")


@dataclass
class ProbeRecord:
    step: int
    loss: float
    grad_l1: float


@dataclass
class RunRecord:
    config_digest: str
    seed: int
    n_layers: int
    total_params: int
    optimizer: str = ""
    steps: list[StepTelemetry] = field(default_factory=list)
    probes: list[ProbeRecord] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def append(self, t: StepTelemetry) -> None:
        if self.steps and t.step <= self.steps[-1].step:
            raise ValueError(f"step {t.step} not increasing after {self.steps[-1].step}")
        t.active_layers.validate(self.n_layers)
        self.steps.append(t)

    @property
    def n_steps(self) -> int:
        return len(self.steps)


def active_ratio(record: RunRecord, total_params: int | None = None) -> float:
    """Gradient work relative to full-vector passes, one per step.

    Each step contributes grad_passes * active_param_count, plus any
    selection-rule parameters; the denominator is steps * total params
    (taken from the record unless given). Dense AdamW gives exactly 1.0
    and the dense two-pass variant 2.0.
    """
    if not record.steps:
        raise ValueError("empty run")
    if total_params is None:
        total_params = record.total_params
    if total_params < 1:
        raise ValueError("total_params must be positive")
    work = sum(
        t.grad_passes * t.active_param_count + t.selection_param_count for t in record.steps
    )
    return work / (record.n_steps * total_params)


def layer_frequency(record: RunRecord) -> np.ndarray:
    """Fraction of steps on which each layer was active."""
    if not record.steps:
        raise ValueError("empty run")
    counts = np.zeros(record.n_layers)
    for t in record.steps:
        for l in t.active_layers:
            counts[l] += 1.0
    return counts / record.n_steps


def grad_l1_trend(record: RunRecord, window: int) -> list[tuple[int, float]]:
    """Mean step grad_l1 over consecutive windows of `window` steps.

    Each entry carries the last step number of its window; a short
    trailing window is averaged over what it holds.
    """
    if window < 1:
        raise ValueError("window must be at least 1")
    if not record.steps:
        raise ValueError("empty run")
    out = []
    for start in range(0, len(record.steps), window):
        chunk = record.steps[start : start + window]
        out.append((chunk[-1].step, float(np.mean([t.grad_l1 for t in chunk]))))
    return out


def probe_trend(record: RunRecord, window: int) -> list[tuple[int, float]]:
    """Windowed means of the probe gradient series, same scheme as grad_l1_trend."""
    if window < 1:
        raise ValueError("window must be at least 1")
    if not record.probes:
        raise ValueError("run has no probes")
    out = []
    for start in range(0, len(record.probes), window):
        chunk = record.probes[start : start + window]
        out.append((chunk[-1].step, float(np.mean([p.grad_l1 for p in chunk]))))
    return out
