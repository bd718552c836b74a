"""Adam training loop with a staircase learning-rate schedule."""
from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .field import NeuralField, Parameters, init_params, save_checkpoint
from .geometry import Domain
from .losses import LossWeights, total_loss
from .sampler import BatchSampler, SamplerConfig

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "lr", "manifold", "gradient_matching", "shortest_path", "minimal_area", "total", "eikonal")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3000
    lr0: float = 1e-3
    decay_factor: float = 0.99
    decay_every: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weights: LossWeights = LossWeights()
    sampler: SamplerConfig = SamplerConfig()
    checkpoint_every: int = 0
    progress_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.lr0 <= 0 or self.decay_every < 1 or not 0 < self.decay_factor <= 1:
            raise ValueError("invalid training schedule")

    @classmethod
    def paper(cls, **overrides):
        base = dict(epochs=60000, sampler=SamplerConfig(20000, 20000))
        base.update(overrides)
        return cls(**base)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


def lr_at(epoch, config):
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return config.lr0 * config.decay_factor ** (epoch // config.decay_every)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update on flat vectors; returns ``(params, state)``."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient and state shapes differ")
    if lr <= 0:
        raise ValueError("lr must be positive")
    if not np.all(np.isfinite(grads)):
        raise TrainingError("non-finite gradient")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t)


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)
    header: dict = field(default_factory=dict)

    def append(self, epoch, lr, breakdown):
        row = {"epoch": epoch, "lr": lr}
        for key in LOG_COLUMNS[2:]:
            row[key] = getattr(breakdown, key)
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def to_csv(self):
        buf = io.StringIO()
        for key, value in self.header.items():
            buf.write(f"# {key}: {value}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for r in self.rows:
            writer.writerow([r["epoch"]] + [repr(float(r[k])) for k in LOG_COLUMNS[1:]])
        return buf.getvalue()

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read(cls, path):
        header, lines = {}, []
        with open(path) as fh:
            for line in fh:
                if line.startswith("#"):
                    key, _, value = line[1:].strip().partition(": ")
                    header[key] = value
                else:
                    lines.append(line)
        rows = []
        for r in csv.DictReader(lines):
            rows.append({k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()})
        return cls(rows, header)


def train(cloud, model_config, config=TrainConfig(), params=None, domain=Domain(),
          checkpoint_dir=None, log_path=None):
    """Fit the field to a normalized point cloud.

    One Adam step per epoch on freshly drawn surface and domain batches.
    Returns ``(params, TrainingLog)``.  On a non-finite loss or gradient the
    run stops with :class:`TrainingError`; checkpoints already written stay.
    """
    params = init_params(model_config, config.seed) if params is None else params.copy()
    sampler = BatchSampler(cloud, config.sampler, domain)
    log = TrainingLog(header={
        "adam": f"beta1={config.beta1} beta2={config.beta2} eps={config.adam_eps}",
        "schedule": f"lr0={config.lr0} decay={config.decay_factor} every={config.decay_every}",
        "weights": str(config.weights),
        "seed": config.seed,
    })
    theta = params.flat()
    state = AdamState.zeros(len(theta))
    last_checkpoint = None

    for epoch in range(config.epochs):
        lr = lr_at(epoch, config)
        surface, dom = sampler.surface(), sampler.domain_points()
        tape = ad.Tape()
        bound = NeuralField(params, model_config).bind(tape)
        try:
            loss, breakdown = total_loss(bound, surface, dom, config.weights)
            grads = ad.grad_params(loss, bound.params)
            theta, state = adam_step(theta, grads, state, lr, config.beta1, config.beta2, config.adam_eps)
        except (ad.NonFiniteError, TrainingError) as exc:
            if log_path:
                log.write(log_path)
            raise TrainingError(f"epoch {epoch}: {exc}; last checkpoint: {last_checkpoint}") from exc
        params = Parameters.from_flat(theta, model_config)
        log.append(epoch, lr, breakdown)

        done = epoch + 1
        if checkpoint_dir and config.checkpoint_every and done % config.checkpoint_every == 0:
            last_checkpoint = os.path.join(checkpoint_dir, f"checkpoint_{done:06d}.npz")
            save_checkpoint(last_checkpoint, params, model_config, config.seed, done)
        if config.progress_every and done % config.progress_every == 0:
            print(f"epoch {done:6d}  lr {lr:.3e}  total {breakdown.total:.6f}  "
                  f"manifold {breakdown.manifold:.5f}  gm {breakdown.gradient_matching:.5f}  "
                  f"sp {breakdown.shortest_path:.6f}  ma {breakdown.minimal_area:.5f}  "
                  f"eikonal {breakdown.eikonal:.4f}", flush=True)

    if log_path:
        log.write(log_path)
    return params, log
