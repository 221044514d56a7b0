"""Optimization loop: Adam with cosine-annealed learning rate and L1 loss.

Weight decay is decoupled (applied directly to the parameter before the Adam
update) and grouped by parameter-name prefix, so the color branch and the
coordinate branch can be regularized differently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .model import ModelConfig, ModelParams, init_model, forward_model
from .sampler import ReferencePair, sample_windows


class OptimizerStateError(RuntimeError):
    """Optimizer invoked with inconsistent parameter/gradient state."""


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 1000
    batch: int = 484
    window: int = 13
    lr_start: float = 1e-3
    lr_end: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    wd_rgb_branch: float = 0.0
    wd_coord_branch: float = 1e-4
    wd_other: float = 0.0
    seed: int = 0

    def validate(self) -> "TrainConfig":
        # lr of exactly 0 is tolerated so a zero-lr run is a provable no-op.
        if not (self.lr_start >= self.lr_end >= 0.0):
            raise ValueError(
                f"need lr_start >= lr_end >= 0, got {self.lr_start}, {self.lr_end}"
            )
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        return self


def lr_at(step: int, config: TrainConfig) -> float:
    """Cosine annealing from lr_start (step 0) to lr_end (step = iterations)."""
    span = config.lr_start - config.lr_end
    return config.lr_end + 0.5 * span * (1.0 + math.cos(math.pi * step / config.iterations))


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def _wd_for(name: str, config: TrainConfig) -> float:
    if name.startswith("rgb_branch"):
        return config.wd_rgb_branch
    if name.startswith("coord_branch"):
        return config.wd_coord_branch
    return config.wd_other


def adam_step(
    state: AdamState,
    params: ModelParams,
    grads: dict[str, np.ndarray],
    lr: float,
    config: TrainConfig,
) -> None:
    """One in-place Adam update with bias correction and decoupled decay."""
    state.t += 1
    t = state.t
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, p in params.arrays.items():
        if name not in grads:
            raise OptimizerStateError(f"missing gradient for parameter {name!r}")
        g = grads[name]
        wd = _wd_for(name, config)
        if wd != 0.0:
            p -= (lr * wd) * p
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + config.eps)


def train(
    pairs: list[ReferencePair],
    model_config: ModelConfig,
    train_config: TrainConfig,
) -> tuple[ModelParams, list[float]]:
    """Fit the network to the reference pair(s); returns params + loss trace.

    Fully deterministic for a given (model_config, train_config): the
    initialization and sampling streams both derive from train_config.seed.
    """
    if not pairs:
        raise ValueError("at least one reference pair is required")
    model_config.validate()
    train_config.validate()
    params = init_model(model_config, seed=train_config.seed)
    rng = np.random.Generator(np.random.PCG64(train_config.seed))
    state = AdamState()
    trace: list[float] = []
    for step in range(train_config.iterations):
        batch = sample_windows(pairs, train_config.batch, train_config.window, rng)
        tape = ad.Tape()
        out = forward_model(params, batch.rgb, batch.coords, tape)
        loss = ad.l1_loss(out, ad.feature_map(batch.target), tape)
        grads = ad.backprop(tape, loss)
        adam_step(state, params, grads, lr_at(step, train_config), train_config)
        trace.append(float(loss.data))
    return params, trace
