"""Dense softmax classifier: init, loss, gradient, Hessian-vector product.

Parameters live in one flat float64 vector described by a per-layer shape
table. Each layer stores its weight matrix row-major as (n_out, n_in), one
row per output unit, followed by the n_out bias entries; layers are
concatenated in order. Every function here is pure: identical inputs give
bit-identical outputs, which is what makes whole simulation runs replayable.

The Hessian-vector product supports two modes:

* ``analytic``  - forward-over-reverse: a tangent is pushed through the
  forward pass and through backpropagation, giving the exact H@z of the
  batch loss in roughly the cost of one extra backprop.
* ``fd``        - central difference of two gradient calls with a
  scale-aware step eps = sqrt(machine eps) * (1 + ||theta||) / ||z||.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

ACTIVATIONS = ("relu", "tanh")
HVP_MODES = ("analytic", "fd")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture and init seed of a dense classifier.

    layer_sizes runs (input dim, hidden widths..., class count). Two equal
    specs initialize to bit-identical parameter vectors.
    """

    layer_sizes: tuple[int, ...]
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(n) for n in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ConfigError("layer_sizes needs at least an input and an output entry")
        if min(self.layer_sizes) < 1:
            raise ConfigError(f"layer sizes must be >= 1, got {self.layer_sizes}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in 64 unsigned bits")

    @property
    def shape_table(self) -> tuple[tuple[int, int, int], ...]:
        """(rows, cols, bias_len) per layer."""
        sizes = self.layer_sizes
        return tuple((out, inp, out) for inp, out in zip(sizes[:-1], sizes[1:]))

    @property
    def num_params(self) -> int:
        return sum(r * c + b for r, c, b in self.shape_table)


@dataclass
class ParamVector:
    """Flat parameter vector plus its layer layout.

    shape_table holds (rows, cols, bias_len) per layer; rows are output
    units, cols the fan-in. The activation rides along so loss/gradient/hvp
    need no separate spec argument.
    """

    values: np.ndarray
    shape_table: tuple[tuple[int, int, int], ...]
    activation: str = "relu"

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.shape_table = tuple(tuple(int(x) for x in entry) for entry in self.shape_table)
        if self.values.ndim != 1:
            raise ShapeError("parameter values must be one-dimensional")
        expected = sum(r * c + b for r, c, b in self.shape_table)
        if self.values.shape[0] != expected:
            raise ShapeError(
                f"shape table implies {expected} parameters, vector has {self.values.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def size(self) -> int:
        return int(self.values.shape[0])

    def like(self, values) -> "ParamVector":
        """New vector with the same layout."""
        return ParamVector(values, self.shape_table, self.activation)

    def copy(self) -> "ParamVector":
        return self.like(self.values.copy())

    def zeros_like(self) -> "ParamVector":
        return self.like(np.zeros_like(self.values))

    def layers(self):
        """Yield (weight_view, bias_view) per layer. Views: do not mutate."""
        off = 0
        for rows, cols, bias in self.shape_table:
            w = self.values[off : off + rows * cols].reshape(rows, cols)
            off += rows * cols
            b = self.values[off : off + bias]
            off += bias
            yield w, b

    def layer_spans(self) -> list[tuple[int, int, int]]:
        """(start, stop, fan_in) per layer over the flat vector."""
        spans, off = [], 0
        for rows, cols, bias in self.shape_table:
            width = rows * cols + bias
            spans.append((off, off + width, cols))
            off += width
        return spans


@dataclass
class Batch:
    """Mini-batch of inputs (m, d) and integer class labels (m,)."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ShapeError("batch inputs must be a (m, d) matrix")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.inputs.shape[0]:
            raise ShapeError("labels must align with input rows")
        if self.inputs.shape[0] < 1:
            raise ShapeError("batch must hold at least one sample")
        if int(self.labels.min(initial=0)) < 0:
            raise ShapeError("labels must be non-negative")

    @property
    def size(self) -> int:
        return int(self.inputs.shape[0])


def init_params(spec: ModelSpec) -> ParamVector:
    """Fan-in scaled Gaussian weights, zero biases, deterministic in seed.

    Weight scale is sqrt(2/fan_in) for relu and sqrt(1/fan_in) for tanh.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(spec.seed))))
    gain = 2.0 if spec.activation == "relu" else 1.0
    chunks = []
    for rows, cols, bias in spec.shape_table:
        chunks.append(rng.standard_normal(rows * cols) * math.sqrt(gain / cols))
        chunks.append(np.zeros(bias))
    return ParamVector(np.concatenate(chunks), spec.shape_table, spec.activation)


def _check_pair(params: ParamVector, batch: Batch) -> None:
    d = params.shape_table[0][1]
    if batch.inputs.shape[1] != d:
        raise ShapeError(f"model expects {d} features, batch has {batch.inputs.shape[1]}")
    classes = params.shape_table[-1][0]
    top = int(batch.labels.max())
    if top >= classes:
        raise ShapeError(f"label {top} out of range for {classes} classes")


def _act(s, kind):
    return np.maximum(s, 0.0) if kind == "relu" else np.tanh(s)


def _act_prime(s, a, kind):
    # a is the already-computed activation value, reused for tanh
    return (s > 0.0).astype(np.float64) if kind == "relu" else 1.0 - a * a


def _act_curv(s, a, kind):
    # second derivative; zero a.e. for relu
    if kind == "relu":
        return np.zeros_like(s)
    return -2.0 * a * (1.0 - a * a)


def _forward(params: ParamVector, X: np.ndarray):
    """Return (pre-activations per layer, inputs seen by each layer)."""
    mats = list(params.layers())
    pres, acts = [], [X]
    a = X
    for i, (w, b) in enumerate(mats):
        s = a @ w.T + b
        pres.append(s)
        if i < len(mats) - 1:
            a = _act(s, params.activation)
            acts.append(a)
    return pres, acts


def logits(params: ParamVector, inputs) -> np.ndarray:
    """Class scores for an (m, d) input matrix."""
    X = np.ascontiguousarray(inputs, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.shape_table[0][1]:
        raise ShapeError("inputs do not match the model's feature dimension")
    return _forward(params, X)[0][-1]


def _softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def loss(params: ParamVector, batch: Batch) -> float:
    """Mean softmax cross-entropy over the batch."""
    _check_pair(params, batch)
    z = _forward(params, batch.inputs)[0][-1]
    zs = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(zs).sum(axis=1))
    picked = zs[np.arange(batch.size), batch.labels]
    return float(np.mean(lse - picked))


def gradient(params: ParamVector, batch: Batch) -> ParamVector:
    """Exact gradient of `loss` with respect to every parameter."""
    _check_pair(params, batch)
    kind = params.activation
    mats = list(params.layers())
    n_layers = len(mats)
    pres, acts = _forward(params, batch.inputs)
    m = batch.size

    g = _softmax(pres[-1])
    g[np.arange(m), batch.labels] -= 1.0
    g /= m

    chunks = [None] * n_layers
    for layer in reversed(range(n_layers)):
        gw = g.T @ acts[layer]
        gb = g.sum(axis=0)
        chunks[layer] = (gw, gb)
        if layer > 0:
            back = g @ mats[layer][0]
            g = back * _act_prime(pres[layer - 1], acts[layer], kind)
    flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in chunks])
    return params.like(flat)


def hvp(params: ParamVector, batch: Batch, z: ParamVector, mode: str = "analytic") -> ParamVector:
    """Hessian-vector product H @ z of the batch loss at `params`.

    `mode` selects analytic forward-over-reverse or a central difference of
    gradients; callers that persist results should record the mode used.
    A zero direction returns a zero vector without touching the eps rule.
    """
    if mode not in HVP_MODES:
        raise ConfigError(f"unknown hvp mode {mode!r}")
    _check_pair(params, batch)
    if z.shape_table != params.shape_table:
        raise ShapeError("direction vector layout differs from parameters")
    if not np.any(z.values):
        return params.zeros_like()
    if mode == "fd":
        eps = math.sqrt(np.finfo(np.float64).eps)
        eps *= (1.0 + float(np.linalg.norm(params.values))) / float(np.linalg.norm(z.values))
        gp = gradient(params.like(params.values + eps * z.values), batch)
        gm = gradient(params.like(params.values - eps * z.values), batch)
        return params.like((gp.values - gm.values) / (2.0 * eps))

    kind = params.activation
    mats = list(params.layers())
    dirs = list(z.like(z.values).layers())
    n_layers = len(mats)
    X = batch.inputs
    m = batch.size

    # forward sweep carrying the tangent of every intermediate
    pres, acts = [], [X]
    rpres, racts = [], [np.zeros_like(X)]
    a, ra = X, np.zeros_like(X)
    for i, (w, b) in enumerate(mats):
        vw, vb = dirs[i]
        s = a @ w.T + b
        rs = ra @ w.T + a @ vw.T + vb
        pres.append(s)
        rpres.append(rs)
        if i < n_layers - 1:
            a = _act(s, kind)
            ra = _act_prime(s, a, kind) * rs
            acts.append(a)
            racts.append(ra)

    p = _softmax(pres[-1])
    rp = p * (rpres[-1] - (p * rpres[-1]).sum(axis=1, keepdims=True))
    g = p.copy()
    g[np.arange(m), batch.labels] -= 1.0
    g /= m
    rg = rp / m

    chunks = [None] * n_layers
    for layer in reversed(range(n_layers)):
        rgw = rg.T @ acts[layer] + g.T @ racts[layer]
        rgb = rg.sum(axis=0)
        chunks[layer] = (rgw, rgb)
        if layer > 0:
            w = mats[layer][0]
            vw = dirs[layer][0]
            back = g @ w
            rback = rg @ w + g @ vw
            s_prev, a_prev, rs_prev = pres[layer - 1], acts[layer], rpres[layer - 1]
            phi1 = _act_prime(s_prev, a_prev, kind)
            phi2 = _act_curv(s_prev, a_prev, kind)
            rg = phi2 * rs_prev * back + phi1 * rback
            g = back * phi1
    flat = np.concatenate([np.concatenate([rgw.ravel(), rgb]) for rgw, rgb in chunks])
    return params.like(flat)
