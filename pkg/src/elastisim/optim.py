"""Local worker optimizers: SGD with momentum and the second-order scheme.

The second-order optimizer estimates the Hessian diagonal with Rademacher
probes (mean of z * (H @ z)), smooths it by block-wise absolute averaging
inside each layer, then applies an ADAM-style update where the smoothed
diagonal replaces the gradient in the second moment.

Each optimizer state belongs to exactly one worker; steps mutate only their
own state and return a fresh parameter vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model
from .errors import ConfigError, ShapeError
from .model import Batch, ParamVector
from .rng import substream


@dataclass
class SgdState:
    """Velocity-form SGD: v <- momentum*v + g; theta <- theta - lr*v."""

    learning_rate: float
    momentum: float = 0.0
    velocity: ParamVector | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")

    @classmethod
    def init(cls, params: ParamVector, learning_rate: float, momentum: float = 0.0) -> "SgdState":
        return cls(learning_rate, momentum, params.zeros_like())


def sgd_step(state: SgdState, params: ParamVector, grad: ParamVector) -> ParamVector:
    """One (momentum) SGD step; with momentum 0 this is plain SGD."""
    if grad.shape_table != params.shape_table:
        raise ShapeError("gradient layout differs from parameters")
    if state.velocity is None:
        state.velocity = params.zeros_like()
    elif state.velocity.shape_table != params.shape_table:
        raise ShapeError("velocity layout differs from parameters")
    state.velocity.values *= state.momentum
    state.velocity.values += grad.values
    return params.like(params.values - state.learning_rate * state.velocity.values)


@dataclass
class AdaHessianState:
    """Moments and probe stream for the Hessian-diagonal optimizer.

    block_size None means "fan-in of each layer", i.e. one averaging block
    per output unit of that layer.
    """

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: ParamVector | None = None
    v: ParamVector | None = None
    step_count: int = 0
    hutchinson_samples: int = 1
    block_size: int | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigError("betas must lie in (0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.hutchinson_samples < 1:
            raise ConfigError("need at least one Hutchinson sample")
        if self.block_size is not None and self.block_size < 1:
            raise ConfigError("block size must be positive")

    @classmethod
    def init(cls, params: ParamVector, learning_rate: float, **kwargs) -> "AdaHessianState":
        return cls(
            learning_rate,
            m=params.zeros_like(),
            v=params.zeros_like(),
            **kwargs,
        )


def rademacher_draw(
    params: ParamVector, rng_seed: int, step_count: int, sample_index: int
) -> ParamVector:
    """+-1 probe vector, deterministic in (rng_seed, step_count, sample_index)."""
    gen = substream(rng_seed, "rademacher", step_count, sample_index)
    z = gen.integers(0, 2, size=params.size).astype(np.float64) * 2.0 - 1.0
    return params.like(z)


def hutchinson_diag(
    params: ParamVector, batch: Batch, state: AdaHessianState, hvp_fn=None
) -> ParamVector:
    """Hessian-diagonal estimate: mean over probes of z * (H @ z).

    hvp_fn(params, batch, z) defaults to the analytic model product; tests
    inject synthetic Hessians through it.
    """
    if hvp_fn is None:
        hvp_fn = model.hvp
    acc = np.zeros_like(params.values)
    for i in range(state.hutchinson_samples):
        z = rademacher_draw(params, state.rng_seed, state.step_count, i)
        acc += z.values * hvp_fn(params, batch, z).values
    return params.like(acc / state.hutchinson_samples)


def spatial_average(diag: ParamVector, block_size: int | None = None) -> ParamVector:
    """Blockwise mean of |diag| within each layer's span.

    Consecutive runs of block_size coordinates share their mean absolute
    value; the final run of a layer may be shorter, and runs never cross
    layer boundaries. block_size None uses each layer's fan-in, giving one
    block per output unit of the weight matrix.
    """
    out = np.empty_like(diag.values)
    for start, stop, fan_in in diag.layer_spans():
        seg = np.abs(diag.values[start:stop])
        width = stop - start
        b = fan_in if block_size is None else min(block_size, width)
        nfull, rem = divmod(width, b)
        if nfull:
            means = seg[: nfull * b].reshape(nfull, b).mean(axis=1)
            out[start : start + nfull * b] = np.repeat(means, b)
        if rem:
            out[start + nfull * b : stop] = seg[nfull * b :].mean()
    return diag.like(out)


def adahessian_step(
    state: AdaHessianState, params: ParamVector, grad: ParamVector, diag_avg: ParamVector
) -> ParamVector:
    """ADAM-style update with the averaged Hessian diagonal as second moment."""
    if grad.shape_table != params.shape_table or diag_avg.shape_table != params.shape_table:
        raise ShapeError("gradient/diagonal layout differs from parameters")
    if np.any(diag_avg.values < 0.0):
        raise ValueError("averaged Hessian diagonal must be non-negative")
    if state.m is None:
        state.m = params.zeros_like()
    if state.v is None:
        state.v = params.zeros_like()
    state.step_count += 1
    t = state.step_count
    state.m.values *= state.beta1
    state.m.values += (1.0 - state.beta1) * grad.values
    state.v.values *= state.beta2
    state.v.values += (1.0 - state.beta2) * diag_avg.values * diag_avg.values
    m_hat = state.m.values / (1.0 - state.beta1**t)
    v_hat = state.v.values / (1.0 - state.beta2**t)
    step = state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return params.like(params.values - step)
