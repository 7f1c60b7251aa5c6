"""Deterministic discrete-event simulation of the master/worker system.

Time advances in integer ticks, one tick per local optimizer step. A round
spans tau local-step ticks followed by k communication slots: worker j's
exchange attempt sits at slot offset j, so exchanges are serialized at the
master and never coincide. Events with equal time are ordered by (worker,
sequence), giving a total order and hence bit-identical replays.

Each attempt is suppressed with the configured failure probability (or
deterministically every third attempt); a suppressed worker keeps training
against an ever-staler master snapshot, which is exactly what inflates its
log-distance history once it finally reconnects. A round completes when
every worker has had one attempt; the master is then evaluated on the full
training and test sets.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from . import model
from .data import Dataset, PartitionPlan, next_batch, partition
from .elastic import (
    DistanceHistory,
    ElasticConfig,
    InsufficientHistoryError,
    elastic_exchange,
    raw_score,
    select_weights,
    update_history,
)
from .errors import ConfigError
from .model import Batch, ModelSpec, ParamVector, init_params
from .optim import (
    AdaHessianState,
    SgdState,
    adahessian_step,
    hutchinson_diag,
    sgd_step,
    spatial_average,
)
from .rng import derive_seed, substream

METHODS = ("EASGD", "EAMSGD", "EAHES", "EAHES-O", "EAHES-OM", "DEAHES-O")
OVERLAP_METHODS = frozenset({"EAHES-O", "EAHES-OM", "DEAHES-O"})
SECOND_ORDER_METHODS = frozenset({"EAHES", "EAHES-O", "EAHES-OM", "DEAHES-O"})
METHOD_VARIANT = {
    "EASGD": "fixed",
    "EAMSGD": "fixed",
    "EAHES": "fixed",
    "EAHES-O": "fixed",
    "EAHES-OM": "oracle",
    "DEAHES-O": "dynamic",
}
FAILURE_MODES = ("bernoulli", "every_third")
MAX_WORKERS = 64


def evaluate(params: ParamVector, dataset: Dataset) -> tuple[float, float]:
    """Full-dataset mean loss and top-1 accuracy of a parameter vector."""
    scores = model.logits(params, dataset.inputs)
    zs = scores - scores.max(axis=1, keepdims=True)
    lse = np.log(np.exp(zs).sum(axis=1))
    picked = zs[np.arange(dataset.size), dataset.labels]
    mean_loss = float(np.mean(lse - picked))
    accuracy = float(np.mean(np.argmax(scores, axis=1) == dataset.labels))
    return mean_loss, accuracy


class MlpObjective:
    """Default objective: the dense softmax classifier from `model`."""

    def __init__(self, hvp_mode: str = "analytic"):
        if hvp_mode not in model.HVP_MODES:
            raise ConfigError(f"unknown hvp mode {hvp_mode!r}")
        self.hvp_mode = hvp_mode

    def loss(self, params: ParamVector, batch: Batch) -> float:
        return model.loss(params, batch)

    def gradient(self, params: ParamVector, batch: Batch) -> ParamVector:
        return model.gradient(params, batch)

    def hvp(self, params: ParamVector, batch: Batch, z: ParamVector) -> ParamVector:
        return model.hvp(params, batch, z, mode=self.hvp_mode)

    def evaluate(self, params: ParamVector, dataset: Dataset) -> tuple[float, float]:
        return evaluate(params, dataset)


@dataclass
class SimConfig:
    """Everything a single run depends on; equal configs replay identically."""

    method: str
    worker_count: int
    comm_period: int
    rounds: int
    batch_size: int
    master_seed: int
    model: ModelSpec
    train_data: Dataset
    test_data: Dataset
    overlap_ratio: float = 0.0
    failure_probability: float = 1.0 / 3.0
    failure_mode: str = "bernoulli"
    learning_rate: float = 0.01
    momentum: float = 0.5
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    hutchinson_samples: int = 1
    block_size: int | None = None
    elastic: ElasticConfig = field(default_factory=ElasticConfig)
    hvp_mode: str = "analytic"
    oracle_master_estimate: bool = False
    objective: object | None = None  # test hook; None selects the MLP


@dataclass(frozen=True, order=True)
class SimEvent:
    """Queued tick; equal times are ordered by (worker, sequence)."""

    time: int
    worker: int
    sequence: int
    kind: str = field(compare=False)


@dataclass
class WorkerState:
    """One worker's replica, optimizer, and staleness bookkeeping."""

    params: ParamVector
    optimizer: SgdState | AdaHessianState
    history: DistanceHistory
    last_master_snapshot: ParamVector
    missed_comms: int = 0
    step_counter: int = 0
    attempt_counter: int = 0


@dataclass
class WorkerRoundRecord:
    worker: int
    suppressed: bool
    score: float | None
    h1: float
    h2: float
    missed_comms: int


@dataclass
class RoundRecord:
    """Master quality plus per-worker exchange data for one round."""

    round_index: int
    master_loss: float
    test_accuracy: float
    workers: tuple[WorkerRoundRecord, ...]

    @property
    def mean_h1(self) -> float:
        return float(np.mean([w.h1 for w in self.workers]))

    @property
    def mean_h2(self) -> float:
        return float(np.mean([w.h2 for w in self.workers]))

    @property
    def suppressed_count(self) -> int:
        return sum(1 for w in self.workers if w.suppressed)


@dataclass
class RunMetrics:
    rounds: list[RoundRecord]
    metadata: dict


@dataclass
class SimState:
    config: SimConfig
    objective: object
    master: ParamVector
    workers: list[WorkerState]
    plan: PartitionPlan
    failure_rngs: list
    master_version: int = 0
    rounds_done: int = 0


def _validate(config: SimConfig) -> None:
    if config.method not in METHODS:
        raise ConfigError(f"unknown method {config.method!r}; expected one of {METHODS}")
    if not 1 <= config.worker_count <= MAX_WORKERS:
        raise ConfigError(f"worker count must lie in 1..{MAX_WORKERS}")
    if config.comm_period < 1:
        raise ConfigError("communication period must be positive")
    if config.rounds < 1:
        raise ConfigError("round count must be positive")
    if config.batch_size < 1:
        raise ConfigError("batch size must be positive")
    if not 0.0 <= config.failure_probability < 1.0:
        raise ConfigError("failure probability must lie in [0, 1)")
    if config.failure_mode not in FAILURE_MODES:
        raise ConfigError(f"unknown failure mode {config.failure_mode!r}")
    wants_overlap = config.method in OVERLAP_METHODS
    if wants_overlap and config.overlap_ratio <= 0.0:
        raise ConfigError(f"{config.method} requires a positive overlap ratio")
    if not wants_overlap and config.overlap_ratio != 0.0:
        raise ConfigError(f"{config.method} does not use data overlap; set ratio 0")
    expected_variant = METHOD_VARIANT[config.method]
    if config.elastic.variant != expected_variant:
        raise ConfigError(
            f"{config.method} needs elastic variant {expected_variant!r}, "
            f"got {config.elastic.variant!r}"
        )
    if config.train_data.dim != config.model.layer_sizes[0]:
        raise ConfigError("model input width does not match the dataset")
    if config.train_data.num_classes != config.model.layer_sizes[-1]:
        raise ConfigError("model class count does not match the dataset")
    if config.test_data.dim != config.train_data.dim:
        raise ConfigError("train and test feature dimensions differ")


def build(config: SimConfig) -> SimState:
    """Initialize master, cloned workers, partition, and RNG streams."""
    _validate(config)
    objective = config.objective if config.objective is not None else MlpObjective(config.hvp_mode)
    master = init_params(config.model)
    plan = partition(
        config.train_data,
        config.overlap_ratio,
        config.worker_count,
        derive_seed(config.master_seed, "partition"),
    )
    for j in range(config.worker_count):
        if config.batch_size > plan.shard_size(j):
            raise ConfigError(
                f"batch size {config.batch_size} exceeds worker {j}'s shard "
                f"of {plan.shard_size(j)}"
            )
    workers = []
    for j in range(config.worker_count):
        if config.method in SECOND_ORDER_METHODS:
            opt = AdaHessianState.init(
                master,
                config.learning_rate,
                beta1=config.betas[0],
                beta2=config.betas[1],
                eps=config.adam_eps,
                hutchinson_samples=config.hutchinson_samples,
                block_size=config.block_size,
                rng_seed=derive_seed(config.master_seed, "hutchinson", j),
            )
        else:
            momentum = config.momentum if config.method == "EAMSGD" else 0.0
            opt = SgdState.init(master, config.learning_rate, momentum)
        workers.append(
            WorkerState(
                params=master.copy(),
                optimizer=opt,
                history=DistanceHistory(config.elastic.history_depth),
                last_master_snapshot=master.copy(),
            )
        )
    failure_rngs = [
        substream(config.master_seed, "failure", j) for j in range(config.worker_count)
    ]
    return SimState(config, objective, master, workers, plan, failure_rngs)


def _local_step(state: SimState, worker_id: int) -> None:
    w = state.workers[worker_id]
    batch = next_batch(state.plan, worker_id, state.config.batch_size, w.step_counter)
    grad = state.objective.gradient(w.params, batch)
    if isinstance(w.optimizer, AdaHessianState):
        diag = hutchinson_diag(w.params, batch, w.optimizer, hvp_fn=state.objective.hvp)
        diag_avg = spatial_average(diag, w.optimizer.block_size)
        w.params = adahessian_step(w.optimizer, w.params, grad, diag_avg)
    else:
        w.params = sgd_step(w.optimizer, w.params, grad)
    w.step_counter += 1


def _comm_attempt(state: SimState, worker_id: int) -> WorkerRoundRecord:
    cfg = state.config
    w = state.workers[worker_id]
    if cfg.failure_mode == "every_third":
        suppressed = w.attempt_counter % 3 == 2
    else:
        suppressed = state.failure_rngs[worker_id].random() < cfg.failure_probability
    w.attempt_counter += 1

    if suppressed:
        w.missed_comms += 1
        return WorkerRoundRecord(worker_id, True, None, 0.0, 0.0, w.missed_comms)

    missed_before = w.missed_comms
    try:
        score = raw_score(w.history, cfg.elastic.coeffs)
    except InsufficientHistoryError:
        score = None
    weights = select_weights(cfg.elastic, w.history, oracle_failed_flag=missed_before > 0)
    # u is measured on the pre-exchange state: the worker's current params
    # against the master estimate it could actually know (stale snapshot,
    # or the live master under the oracle-estimate ablation)
    estimate = state.master if cfg.oracle_master_estimate else w.last_master_snapshot
    pre_worker = w.params
    w.params, state.master = elastic_exchange(w.params, state.master, weights)
    state.master_version += 1
    update_history(w.history, pre_worker, estimate)
    w.last_master_snapshot = state.master.copy()
    w.missed_comms = 0
    return WorkerRoundRecord(worker_id, False, score, weights.h1, weights.h2, missed_before)


def iter_rounds(state: SimState):
    """Drive the event queue, yielding one RoundRecord per completed round.

    Suppressed attempts contribute h1 = h2 = 0 to the round means (an
    exchange that never happened pulls nothing).
    """
    cfg = state.config
    k, tau = cfg.worker_count, cfg.comm_period
    period = tau + k
    queue: list[SimEvent] = []
    seqs = [0] * k

    def push(time, worker, kind):
        heapq.heappush(queue, SimEvent(time, worker, seqs[worker], kind))
        seqs[worker] += 1

    for j in range(k):
        push(0, j, "local_step")

    round_index = 1
    pending: list[WorkerRoundRecord] = []
    while queue:
        ev = heapq.heappop(queue)
        base = (round_index - 1) * period
        if ev.kind == "local_step":
            _local_step(state, ev.worker)
            step_in_round = ev.time - base
            if step_in_round + 1 < tau:
                push(ev.time + 1, ev.worker, "local_step")
            else:
                push(base + tau + ev.worker, ev.worker, "comm_attempt")
        else:
            pending.append(_comm_attempt(state, ev.worker))
            if len(pending) == k:
                train_loss, _ = state.objective.evaluate(state.master, cfg.train_data)
                _, test_acc = state.objective.evaluate(state.master, cfg.test_data)
                record = RoundRecord(round_index, train_loss, test_acc, tuple(pending))
                pending = []
                state.rounds_done = round_index
                round_index += 1
                if round_index <= cfg.rounds:
                    for j in range(k):
                        push((round_index - 1) * period, j, "local_step")
                yield record


def run(state: SimState) -> RunMetrics:
    """Execute every round and collect the per-round records."""
    records = list(iter_rounds(state))
    cfg = state.config
    metadata = {
        "method": cfg.method,
        "worker_count": cfg.worker_count,
        "comm_period": cfg.comm_period,
        "rounds": cfg.rounds,
        "master_seed": cfg.master_seed,
        "overlap_ratio": cfg.overlap_ratio,
        "failure_probability": cfg.failure_probability,
        "failure_mode": cfg.failure_mode,
        "hvp_mode": getattr(state.objective, "hvp_mode", "custom"),
    }
    return RunMetrics(records, metadata)
