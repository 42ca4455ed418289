"""AdamW optimizer: bias-corrected moments, decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor
from .util import ConfigError, check_finite


@dataclass
class TrainHyper:
    learning_rate: float
    epochs: int
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be a positive integer, got {self.epochs}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in (0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")


@dataclass
class AdamWState:
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)
    step_count: int = 0


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamWState, hyper: TrainHyper):
    """One AdamW update, in place on the param tensors.

    params maps names to Tensors; grads maps a subset of those names to
    gradient arrays. Moment buffers are created lazily on first sight of
    a name. Parameters without a grad entry are left untouched (and not
    decayed). Returns (params, state) for convenience.
    """
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - hyper.beta1**t
    bc2 = 1.0 - hyper.beta2**t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.data.shape:
            raise ValueError(f"grad shape {g.shape} does not match param {name} {p.data.shape}")
        m = state.first_moment.get(name)
        if m is None:
            m = state.first_moment[name] = np.zeros_like(p.data)
            state.second_moment[name] = np.zeros_like(p.data)
        v = state.second_moment[name]
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * np.square(g)
        update = (m / bc1) / (np.sqrt(v / bc2) + hyper.eps)
        if hyper.weight_decay:
            update = update + hyper.weight_decay * p.data
        p.data -= hyper.learning_rate * update
        check_finite(p.data, f"param {name} after adamw_step")
    return params, state
