"""Training loop, output files, and optimizer comparisons.

A Trainer owns one objective, parameter vector, optimizer state, and
(for sampled variants) sampling distribution, and advances them one
step at a time so tests can inspect full trajectories. `run` drives a
Trainer to completion and writes the step CSV and summary JSON;
`compare` repeats a config across optimizer types with identical data
and seed.
"""

from __future__ import annotations

import json
import time
from dataclasses import replace
from pathlib import Path
from typing import Iterator

import numpy as np

from sparsam.bandit import init_uniform
from sparsam.config import SPARSE_OPTIMIZERS, ExperimentConfig, OPTIMIZER_TYPES
from sparsam.datasets import Dataset, batch_id, gen_blobs, gen_two_moons, minibatches
from sparsam.errors import ConfigError, DivergenceError
from sparsam.layered import ActiveSet, total_l1_norm
from sparsam.objectives import Batch, MlpClassifier
from sparsam.optimizers import (
    OptimizerState,
    ablation_step,
    adamw_baseline_step,
    adasam_step,
    s2sam_step,
    sl_s2sam_step,
    slsam_step,
)
from sparsam.rng import stream
from sparsam.telemetry import (
    ProbeRecord,
    RunRecord,
    StepTelemetry,
    active_ratio,
    layer_frequency,
)

CSV_HEADER = "step,loss,grad_l1,active_layers,active_params,grad_passes,wall_ns"


def build_datasets(config: ExperimentConfig) -> tuple[Dataset | None, Dataset | None]:
    """Train and held-out datasets for the config; (None, None) for
    objectives that synthesize their own batches."""
    d = config.dataset
    if d.type == "none":
        return None, None
    if d.type == "two_moons":
        return (
            gen_two_moons(d.n, d.noise, d.seed),
            gen_two_moons(d.n, d.noise, d.seed + 1),
        )
    k = config.objective.widths[-1]
    return gen_blobs(d.n, k, d.noise, d.seed), gen_blobs(d.n, k, d.noise, d.seed + 1)


class Trainer:
    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.objective = config.objective.build(noise_seed=config.train.seed)
        self.train_ds, self.test_ds = build_datasets(config)
        seed = config.train.seed
        self.x = self.objective.init_params(seed)
        self.state = OptimizerState.init(self.objective.layer_dims)
        self.adamw_cfg = config.optimizer.adamw()
        self.sam_cfg = config.optimizer.sam()
        self.bandit_cfg = config.bandit.to_bandit_config()
        self.otype = config.optimizer.type
        n = self.objective.n_layers
        self.dist = None
        if self.otype in ("slsam", "sl_s2sam"):
            self.dist = init_uniform(n, config.bandit.budget(n), config.bandit.p_min())
        self.k = config.bandit.ablation_k(n)
        self.bandit_rng = stream(seed, "bandit")
        self.record = RunRecord(
            config_digest=config.digest(),
            seed=seed,
            n_layers=n,
            total_params=self.objective.dim,
            optimizer=self.otype,
        )
        self._batches = self._batch_stream()
        self._g_env = 0.0

    def _batch_stream(self) -> Iterator[Batch]:
        if self.train_ds is None:
            t = 0
            while True:
                yield Batch(np.zeros((1, 1)), np.zeros(1, dtype=np.int64), id=t)
                t += 1
        else:
            epoch = 0
            while True:
                yield from minibatches(
                    self.train_ds, self.config.train.batch_size, self.record.seed, epoch
                )
                epoch += 1

    def step(self) -> StepTelemetry:
        batch = next(self._batches)
        t0 = time.perf_counter_ns()
        if self.otype == "adamw":
            tel = adamw_baseline_step(self.objective, self.x, batch, self.state, self.adamw_cfg)
        elif self.otype == "adasam":
            tel = adasam_step(
                self.objective, self.x, batch, self.state, self.sam_cfg, self.adamw_cfg
            )
        elif self.otype == "s2sam":
            tel = s2sam_step(
                self.objective, self.x, batch, self.state, self.sam_cfg, self.adamw_cfg
            )
        elif self.otype == "slsam":
            self.dist, tel = slsam_step(
                self.objective,
                self.x,
                batch,
                self.state,
                self.dist,
                self.sam_cfg,
                self.adamw_cfg,
                self.bandit_cfg,
                self.bandit_rng,
                g_prior=self._g_env,
            )
        elif self.otype == "sl_s2sam":
            self.dist, tel = sl_s2sam_step(
                self.objective,
                self.x,
                batch,
                self.state,
                self.dist,
                self.sam_cfg,
                self.adamw_cfg,
                self.bandit_cfg,
                self.bandit_rng,
                g_prior=self._g_env,
            )
        elif self.otype in ("random_slsam", "top_slsam"):
            kind = "uniform_random" if self.otype == "random_slsam" else "greedy_topk"
            tel = ablation_step(
                kind,
                self.objective,
                self.x,
                batch,
                self.state,
                self.k,
                self.sam_cfg,
                self.adamw_cfg,
                self.bandit_rng,
            )
        else:
            raise ConfigError(f"unknown optimizer type {self.otype!r}")
        tel.wall_ns = time.perf_counter_ns() - t0
        if tel.per_layer_r_norms:
            self._g_env = max(self._g_env, max(tel.per_layer_r_norms.values()))
        self.record.append(tel)
        if tel.step % self.config.train.eval_every == 0:
            self._probe(tel.step)
        return tel

    def _probe(self, step: int) -> None:
        """Full population gradient for the trend metric; off the books for
        pass counting."""
        full = ActiveSet.full(self.objective.n_layers)
        if self.train_ds is None:
            loss, g = self.objective.loss_and_grad(self.x, None, full)
        else:
            loss, g = self.objective.loss_and_grad(self.x, self.train_ds.as_batch(), full)
        self.record.probes.append(ProbeRecord(step, loss, total_l1_norm(g)))

    def run_all(self) -> RunRecord:
        for _ in range(self.config.train.steps):
            self.step()
        self.finalize()
        return self.record

    def accuracy(self, ds: Dataset | None) -> float | None:
        if ds is None or not isinstance(self.objective, MlpClassifier):
            return None
        preds = self.objective.predict(self.x, ds.features)
        return float((preds == ds.labels).mean())

    def finalize(self) -> None:
        rec = self.record
        rec.summary = {
            "optimizer": self.otype,
            "final_loss": rec.steps[-1].loss if rec.steps else None,
            "active_ratio": active_ratio(rec) if rec.steps else None,
            "layer_frequency": [float(f) for f in layer_frequency(rec)] if rec.steps else [],
            "config_digest": rec.config_digest,
            "seed": rec.seed,
            "steps": rec.n_steps,
            "train_accuracy": self.accuracy(self.train_ds),
            "test_accuracy": self.accuracy(self.test_ds),
            "expensive_selection": self.otype == "top_slsam",
            "probes": [[p.step, p.loss, p.grad_l1] for p in rec.probes],
        }


def _fmt(value: float) -> str:
    return repr(float(value))


def _csv_row(t: StepTelemetry) -> str:
    layers = "|".join(str(l) for l in t.active_layers)
    return ",".join(
        [
            str(t.step),
            _fmt(t.loss),
            _fmt(t.grad_l1),
            layers,
            str(t.active_param_count),
            str(t.grad_passes),
            str(t.wall_ns),
        ]
    )


def run(config: ExperimentConfig, out_dir: str | Path | None = None) -> RunRecord:
    """Execute one training run, streaming the step CSV as it goes.

    On divergence the rows written so far stay on disk and the error
    propagates to the caller.
    """
    trainer = Trainer(config)
    out = Path(out_dir) if out_dir is not None else Path(config.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "steps.csv"
    with open(csv_path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        try:
            for _ in range(config.train.steps):
                tel = trainer.step()
                fh.write(_csv_row(tel) + "\n")
                fh.flush()
        except DivergenceError:
            fh.flush()
            raise
    trainer.finalize()
    with open(out / "summary.json", "w") as fh:
        json.dump(trainer.record.summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return trainer.record


def compare(
    config: ExperimentConfig,
    optimizers: list[str],
    out_dir: str | Path | None = None,
) -> Path:
    """Run the same config under several optimizer types and tabulate.

    Every row sees identical data and seed; only the optimizer section's
    type (and with it the resolved perturbation mode) changes.
    """
    if len(optimizers) < 2:
        raise ConfigError("compare needs at least two optimizers")
    if len(set(optimizers)) != len(optimizers):
        raise ConfigError("duplicate optimizer in compare list")
    for o in optimizers:
        if o not in OPTIMIZER_TYPES:
            raise ConfigError(f"unknown optimizer type {o!r}")
    out = Path(out_dir) if out_dir is not None else Path(config.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for o in optimizers:
        row_config = replace(config, optimizer=replace(config.optimizer, type=o))
        row_config.validate()
        rec = run(row_config, out / o)
        s = rec.summary
        rows.append(
            [
                o,
                _fmt(s["final_loss"]),
                "" if s["train_accuracy"] is None else _fmt(s["train_accuracy"]),
                "" if s["test_accuracy"] is None else _fmt(s["test_accuracy"]),
                _fmt(s["active_ratio"]),
                "expensive:full-gradient-selection" if s["expensive_selection"] else "",
            ]
        )
    table = out / "compare.csv"
    with open(table, "w") as fh:
        fh.write("optimizer,final_loss,train_acc,test_acc,active_ratio,notes\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
    return table
