"""Experiment grid runner: config parsing, execution, CSV export, summaries.

A config file is a YAML mapping; every key is validated, unknown keys are
rejected, and the fully-resolved config (defaults filled in) is echoed to
`<output stem>.resolved.yaml` next to the output CSV as proof of
interpretation. Grid cells are the product methods x k x tau x r x repeats,
each run with seed base_seed + repeat index. Rows append to one CSV with a
fixed header; finished cells are never recomputed, so an interrupted run
resumes by cell.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import yaml

from .data import Dataset, load_idx, make_synthetic
from .elastic import ElasticConfig, default_coeffs
from .errors import ConfigError, DataConsistencyError, FormatError, NumericError
from .model import ACTIVATIONS, HVP_MODES, ModelSpec
from .rng import derive_seed
from .sim import (
    FAILURE_MODES,
    METHOD_VARIANT,
    METHODS,
    OVERLAP_METHODS,
    RoundRecord,
    SimConfig,
    build,
    iter_rounds,
)

CSV_SCHEMA_VERSION = 1
CSV_HEADER = "method,k,tau,r,seed,round,master_loss,test_accuracy,mean_h1,mean_h2,suppressed_count"

# overlap ratio by worker count when `r` is omitted
DEFAULT_OVERLAP_BY_K = {4: 0.25, 8: 0.125}

_TOP_KEYS = {
    "output", "base_seed", "repeats", "rounds", "methods", "k", "tau", "r",
    "batch_size", "failure_probability", "failure_mode", "alpha",
    "score_threshold", "history_depth", "coeffs", "learning_rate", "momentum",
    "betas", "adam_eps", "hutchinson_samples", "block_size", "hvp_mode",
    "oracle_master_estimate", "model", "dataset",
}
_MODEL_KEYS = {"hidden", "activation"}
_SYNTH_KEYS = {"kind", "classes", "per_class", "dim", "spread", "seed", "test_fraction"}
_IDX_KEYS = {
    "kind", "train_images", "train_labels", "test_images", "test_labels",
    "limit_train", "limit_test",
}


@dataclass
class ExperimentConfig:
    """Fully-resolved experiment description; round-trips through YAML."""

    output: str
    base_seed: int
    repeats: int
    rounds: int
    methods: tuple[str, ...]
    k: tuple[int, ...]
    tau: tuple[int, ...]
    r: tuple[float, ...] | None
    batch_size: int
    failure_probability: float
    failure_mode: str
    alpha: float
    score_threshold: float
    history_depth: int
    coeffs: tuple[float, ...]
    learning_rate: float
    momentum: float
    betas: tuple[float, float]
    adam_eps: float
    hutchinson_samples: int
    block_size: int | None
    hvp_mode: str
    oracle_master_estimate: bool
    hidden: tuple[int, ...]
    activation: str
    dataset: dict


@dataclass(frozen=True)
class GridCell:
    index: int
    method: str
    k: int
    tau: int
    r: float
    seed: int


# --- config loading -------------------------------------------------------


def _collect_lines(node, path, lines):
    if isinstance(node, yaml.MappingNode):
        for key_node, val_node in node.value:
            child = f"{path}.{key_node.value}" if path else str(key_node.value)
            lines[child] = key_node.start_mark.line + 1
            _collect_lines(val_node, child, lines)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            child = f"{path}[{i}]"
            lines[child] = item.start_mark.line + 1
            _collect_lines(item, child, lines)


def _load_config_file(path):
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        doc = yaml.safe_load(text)
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    lines: dict[str, int] = {}
    if root is not None:
        _collect_lines(root, "", lines)
    return doc, lines


def _fail(lines, key, msg):
    line = lines.get(key)
    where = f" (line {line})" if line is not None else ""
    raise ConfigError(f"{key}{where}: {msg}")


def _reject_unknown(doc, allowed, lines, prefix=""):
    for key in doc:
        full = f"{prefix}.{key}" if prefix else str(key)
        if key not in allowed:
            _fail(lines, full, "unknown key")


def _get_int(doc, lines, key, default, lo=None, hi=None, prefix=""):
    full = f"{prefix}.{key}" if prefix else key
    v = doc.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(lines, full, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        _fail(lines, full, f"must be >= {lo}, got {v}")
    if hi is not None and v > hi:
        _fail(lines, full, f"must be <= {hi}, got {v}")
    return int(v)


def _get_float(doc, lines, key, default, lo=None, hi=None, lo_open=False, hi_open=False, prefix=""):
    full = f"{prefix}.{key}" if prefix else key
    v = doc.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(lines, full, f"expected a number, got {v!r}")
    v = float(v)
    if lo is not None and (v < lo or (lo_open and v == lo)):
        _fail(lines, full, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
    if hi is not None and (v > hi or (hi_open and v == hi)):
        _fail(lines, full, f"must be {'<' if hi_open else '<='} {hi}, got {v}")
    return v


def _get_choice(doc, lines, key, default, choices, prefix=""):
    full = f"{prefix}.{key}" if prefix else key
    v = doc.get(key, default)
    if v not in choices:
        _fail(lines, full, f"expected one of {sorted(choices)}, got {v!r}")
    return v


def _get_str(doc, lines, key, prefix=""):
    full = f"{prefix}.{key}" if prefix else key
    if key not in doc:
        _fail(lines, full, "required key is missing")
    v = doc[key]
    if not isinstance(v, str) or not v:
        _fail(lines, full, f"expected a non-empty string, got {v!r}")
    return v


def _effective_r(method, k, r_value):
    """Overlap ratio actually simulated for a grid cell."""
    if method not in OVERLAP_METHODS:
        return 0.0
    if r_value is None:
        if k in DEFAULT_OVERLAP_BY_K:
            return DEFAULT_OVERLAP_BY_K[k]
        raise ConfigError(
            f"no default overlap ratio for k={k}; set `r` explicitly for {method}"
        )
    if r_value <= 0.0:
        raise ConfigError(f"{method} requires a positive overlap ratio, got {r_value}")
    return float(r_value)


def expand_cells(config: ExperimentConfig) -> list[GridCell]:
    """Grid cells in their fixed execution (and CSV) order."""
    cells = []
    r_axis = config.r if config.r is not None else (None,)
    index = 0
    for method in config.methods:
        for k in config.k:
            for tau in config.tau:
                for r_value in r_axis:
                    for rep in range(config.repeats):
                        cells.append(
                            GridCell(
                                index, method, k, tau,
                                _effective_r(method, k, r_value),
                                config.base_seed + rep,
                            )
                        )
                        index += 1
    return cells


def parse_config(path, write_resolved: bool = True) -> ExperimentConfig:
    """Load, validate, and resolve a config file.

    Unknown keys are rejected with their source line; the resolved config is
    written next to the output CSV unless write_resolved is False.
    """
    doc, lines = _load_config_file(path)
    _reject_unknown(doc, _TOP_KEYS, lines)

    output = _get_str(doc, lines, "output")
    base_seed = _get_int(doc, lines, "base_seed", 1000, lo=0)
    repeats = _get_int(doc, lines, "repeats", 3, lo=1)
    rounds = _get_int(doc, lines, "rounds", 100, lo=1)

    methods_raw = doc.get("methods")
    if not isinstance(methods_raw, list) or not methods_raw:
        _fail(lines, "methods", "expected a non-empty list of method names")
    methods = []
    for i, name in enumerate(methods_raw):
        if name not in METHODS:
            _fail(lines, f"methods[{i}]", f"unknown method {name!r}; expected one of {METHODS}")
        if name in methods:
            _fail(lines, f"methods[{i}]", f"duplicate method {name!r}")
        methods.append(name)

    def int_axis(key, default, lo):
        values = doc.get(key, default)
        if not isinstance(values, list) or not values:
            _fail(lines, key, "expected a non-empty list")
        out = []
        for i, v in enumerate(values):
            if isinstance(v, bool) or not isinstance(v, int) or v < lo:
                _fail(lines, f"{key}[{i}]", f"expected an integer >= {lo}, got {v!r}")
            out.append(int(v))
        return tuple(out)

    k_axis = int_axis("k", [4], 1)
    tau_axis = int_axis("tau", [2], 1)

    r_raw = doc.get("r")
    if r_raw is None:
        r_axis = None
    else:
        if not isinstance(r_raw, list) or not r_raw:
            _fail(lines, "r", "expected a non-empty list of overlap ratios (or omit for defaults)")
        vals = []
        for i, v in enumerate(r_raw):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not 0.0 <= float(v) < 1.0:
                _fail(lines, f"r[{i}]", f"expected a ratio in [0, 1), got {v!r}")
            vals.append(float(v))
        r_axis = tuple(vals)

    batch_size = _get_int(doc, lines, "batch_size", 4, lo=1)
    failure_probability = _get_float(
        doc, lines, "failure_probability", 1.0 / 3.0, lo=0.0, hi=1.0, hi_open=True
    )
    failure_mode = _get_choice(doc, lines, "failure_mode", "bernoulli", FAILURE_MODES)
    alpha = _get_float(doc, lines, "alpha", 0.1, lo=0.0, hi=1.0, lo_open=True, hi_open=True)
    score_threshold = _get_float(doc, lines, "score_threshold", -1.0, hi=0.0, hi_open=True)
    history_depth = _get_int(doc, lines, "history_depth", 4, lo=1)

    coeffs_raw = doc.get("coeffs")
    if coeffs_raw is None:
        coeffs = default_coeffs(history_depth)
    else:
        if not isinstance(coeffs_raw, list):
            _fail(lines, "coeffs", "expected a list of weights")
        if len(coeffs_raw) != history_depth:
            _fail(lines, "coeffs", f"need exactly history_depth={history_depth} weights")
        for i, c in enumerate(coeffs_raw):
            if isinstance(c, bool) or not isinstance(c, (int, float)) or c < 0:
                _fail(lines, f"coeffs[{i}]", f"expected a non-negative number, got {c!r}")
        coeffs = tuple(float(c) for c in coeffs_raw)
        if abs(sum(coeffs) - 1.0) > 1e-12:
            _fail(lines, "coeffs", f"weights must sum to 1, got {sum(coeffs)}")

    learning_rate = _get_float(doc, lines, "learning_rate", 0.01, lo=0.0, lo_open=True)
    momentum = _get_float(doc, lines, "momentum", 0.5, lo=0.0, hi=1.0, hi_open=True)
    betas_raw = doc.get("betas", [0.9, 0.999])
    if not isinstance(betas_raw, list) or len(betas_raw) != 2:
        _fail(lines, "betas", "expected a two-element list")
    for i, b in enumerate(betas_raw):
        if isinstance(b, bool) or not isinstance(b, (int, float)) or not 0.0 < float(b) < 1.0:
            _fail(lines, f"betas[{i}]", f"expected a number in (0, 1), got {b!r}")
    betas = (float(betas_raw[0]), float(betas_raw[1]))
    adam_eps = _get_float(doc, lines, "adam_eps", 1e-8, lo=0.0, lo_open=True)
    hutchinson_samples = _get_int(doc, lines, "hutchinson_samples", 1, lo=1)

    block_raw = doc.get("block_size")
    if block_raw is None:
        block_size = None
    elif isinstance(block_raw, bool) or not isinstance(block_raw, int) or block_raw < 1:
        _fail(lines, "block_size", f"expected a positive integer or null, got {block_raw!r}")
    else:
        block_size = int(block_raw)

    hvp_mode = _get_choice(doc, lines, "hvp_mode", "analytic", HVP_MODES)
    oracle_est = doc.get("oracle_master_estimate", False)
    if not isinstance(oracle_est, bool):
        _fail(lines, "oracle_master_estimate", f"expected a boolean, got {oracle_est!r}")

    model_doc = doc.get("model", {})
    if not isinstance(model_doc, dict):
        _fail(lines, "model", "expected a mapping")
    _reject_unknown(model_doc, _MODEL_KEYS, lines, prefix="model")
    hidden_raw = model_doc.get("hidden", [8])
    if not isinstance(hidden_raw, list) or not hidden_raw:
        _fail(lines, "model.hidden", "expected a non-empty list of layer widths")
    for i, h in enumerate(hidden_raw):
        if isinstance(h, bool) or not isinstance(h, int) or h < 1:
            _fail(lines, f"model.hidden[{i}]", f"expected a positive integer, got {h!r}")
    hidden = tuple(int(h) for h in hidden_raw)
    activation = _get_choice(model_doc, lines, "activation", "relu", ACTIVATIONS, prefix="model")

    dataset = _parse_dataset_block(doc, lines)

    config = ExperimentConfig(
        output=output,
        base_seed=base_seed,
        repeats=repeats,
        rounds=rounds,
        methods=tuple(methods),
        k=k_axis,
        tau=tau_axis,
        r=r_axis,
        batch_size=batch_size,
        failure_probability=failure_probability,
        failure_mode=failure_mode,
        alpha=alpha,
        score_threshold=score_threshold,
        history_depth=history_depth,
        coeffs=coeffs,
        learning_rate=learning_rate,
        momentum=momentum,
        betas=betas,
        adam_eps=adam_eps,
        hutchinson_samples=hutchinson_samples,
        block_size=block_size,
        hvp_mode=hvp_mode,
        oracle_master_estimate=oracle_est,
        hidden=hidden,
        activation=activation,
        dataset=dataset,
    )

    if (
        "EAHES-OM" in config.methods
        and config.failure_mode == "bernoulli"
        and config.failure_probability == 0.0
    ):
        _fail(lines, "failure_probability",
              "EAHES-OM needs failure injection enabled; it reacts to failures")
    expand_cells(config)  # every grid cell must resolve to a valid setup

    if write_resolved:
        out_dir = os.path.dirname(config.output)
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
        with open(resolved_config_path(config.output), "w", encoding="utf-8") as f:
            yaml.safe_dump(resolved_doc(config), f, sort_keys=False)
    return config


def _parse_dataset_block(doc, lines):
    block = doc.get("dataset")
    if not isinstance(block, dict):
        _fail(lines, "dataset", "required mapping is missing")
    kind = _get_choice(block, lines, "kind", None, ("synthetic", "idx"), prefix="dataset")
    if kind == "synthetic":
        _reject_unknown(block, _SYNTH_KEYS, lines, prefix="dataset")
        return {
            "kind": "synthetic",
            "classes": _get_int(block, lines, "classes", 3, lo=2, prefix="dataset"),
            "per_class": _get_int(block, lines, "per_class", 1200, lo=2, prefix="dataset"),
            "dim": _get_int(block, lines, "dim", 20, lo=1, prefix="dataset"),
            "spread": _get_float(block, lines, "spread", 0.3, lo=0.0, prefix="dataset"),
            "seed": _get_int(block, lines, "seed", 7, lo=0, prefix="dataset"),
            "test_fraction": _get_float(
                block, lines, "test_fraction", 1.0 / 6.0,
                lo=0.0, hi=1.0, lo_open=True, hi_open=True, prefix="dataset",
            ),
        }
    _reject_unknown(block, _IDX_KEYS, lines, prefix="dataset")
    out = {"kind": "idx"}
    for key in ("train_images", "train_labels", "test_images", "test_labels"):
        out[key] = _get_str(block, lines, key, prefix="dataset")
    for key in ("limit_train", "limit_test"):
        if block.get(key) is None:
            out[key] = None
        else:
            out[key] = _get_int(block, lines, key, None, lo=1, prefix="dataset")
    return out


def resolved_config_path(output: str) -> str:
    p = Path(output)
    return str(p.with_name(p.stem + ".resolved.yaml"))


def resolved_doc(config: ExperimentConfig) -> dict:
    """Plain-data mapping that parses back to an equal ExperimentConfig."""
    return {
        "output": config.output,
        "base_seed": config.base_seed,
        "repeats": config.repeats,
        "rounds": config.rounds,
        "methods": list(config.methods),
        "k": list(config.k),
        "tau": list(config.tau),
        "r": None if config.r is None else list(config.r),
        "batch_size": config.batch_size,
        "failure_probability": config.failure_probability,
        "failure_mode": config.failure_mode,
        "alpha": config.alpha,
        "score_threshold": config.score_threshold,
        "history_depth": config.history_depth,
        "coeffs": list(config.coeffs),
        "learning_rate": config.learning_rate,
        "momentum": config.momentum,
        "betas": list(config.betas),
        "adam_eps": config.adam_eps,
        "hutchinson_samples": config.hutchinson_samples,
        "block_size": config.block_size,
        "hvp_mode": config.hvp_mode,
        "oracle_master_estimate": config.oracle_master_estimate,
        "model": {"hidden": list(config.hidden), "activation": config.activation},
        "dataset": dict(config.dataset),
    }


# --- dataset construction --------------------------------------------------


def build_datasets(block: dict) -> tuple[Dataset, Dataset]:
    """Materialize (train, test) datasets from a validated dataset block."""
    return _build_datasets_cached(tuple(sorted(block.items())))


@lru_cache(maxsize=8)
def _build_datasets_cached(frozen):
    block = dict(frozen)
    if block["kind"] == "synthetic":
        full = make_synthetic(
            block["classes"], block["per_class"], block["dim"], block["spread"], block["seed"]
        )
        n_test = max(1, int(block["test_fraction"] * full.size))
        if n_test >= full.size:
            raise ConfigError("test fraction leaves no training data")
        train = Dataset(
            full.inputs[:-n_test], full.labels[:-n_test], full.num_classes, "synthetic"
        )
        test = Dataset(
            full.inputs[-n_test:], full.labels[-n_test:], full.num_classes, "synthetic"
        )
        return train, test
    train = load_idx(block["train_images"], block["train_labels"])
    test = load_idx(block["test_images"], block["test_labels"])
    if block.get("limit_train"):
        m = min(block["limit_train"], train.size)
        train = Dataset(train.inputs[:m], train.labels[:m], train.num_classes, "idx_file")
    if block.get("limit_test"):
        m = min(block["limit_test"], test.size)
        test = Dataset(test.inputs[:m], test.labels[:m], test.num_classes, "idx_file")
    return train, test


# --- cell execution ---------------------------------------------------------


def cell_sim_config(config: ExperimentConfig, cell: GridCell,
                    train: Dataset, test: Dataset) -> SimConfig:
    spec = ModelSpec(
        (train.dim, *config.hidden, train.num_classes),
        config.activation,
        seed=derive_seed(cell.seed, "model-init"),
    )
    elastic_cfg = ElasticConfig(
        alpha=config.alpha,
        score_threshold=config.score_threshold,
        history_depth=config.history_depth,
        coeffs=config.coeffs,
        variant=METHOD_VARIANT[cell.method],
    )
    return SimConfig(
        method=cell.method,
        worker_count=cell.k,
        comm_period=cell.tau,
        rounds=config.rounds,
        batch_size=config.batch_size,
        master_seed=cell.seed,
        model=spec,
        train_data=train,
        test_data=test,
        overlap_ratio=cell.r,
        failure_probability=config.failure_probability,
        failure_mode=config.failure_mode,
        learning_rate=config.learning_rate,
        momentum=config.momentum,
        betas=config.betas,
        adam_eps=config.adam_eps,
        hutchinson_samples=config.hutchinson_samples,
        block_size=config.block_size,
        elastic=elastic_cfg,
        hvp_mode=config.hvp_mode,
        oracle_master_estimate=config.oracle_master_estimate,
    )


def _g9(x) -> str:
    return format(float(x), ".9g")


def format_row(cell: GridCell, record: RoundRecord) -> str:
    values = (record.master_loss, record.test_accuracy, record.mean_h1, record.mean_h2)
    if not all(math.isfinite(v) for v in values):
        raise NumericError(
            f"non-finite metric in {cell.method} k={cell.k} tau={cell.tau} "
            f"seed={cell.seed} round={record.round_index}"
        )
    return ",".join(
        [
            cell.method,
            str(cell.k),
            str(cell.tau),
            _g9(cell.r),
            str(cell.seed),
            str(record.round_index),
            _g9(record.master_loss),
            _g9(record.test_accuracy),
            _g9(record.mean_h1),
            _g9(record.mean_h2),
            str(record.suppressed_count),
        ]
    )


def _cell_lines_iter(config: ExperimentConfig, cell: GridCell):
    train, test = build_datasets(config.dataset)
    state = build(cell_sim_config(config, cell, train, test))
    for record in iter_rounds(state):
        yield format_row(cell, record)


def _compute_cell_lines(config: ExperimentConfig, cell: GridCell) -> list[str]:
    return list(_cell_lines_iter(config, cell))


def _cell_prefix(cell: GridCell) -> str:
    return f"{cell.method},{cell.k},{cell.tau},{_g9(cell.r)},{cell.seed},"


def _prepare_output(path: str, cells: list[GridCell], rounds: int) -> int:
    """Keep complete cells already on disk; return how many lead the file."""
    if not os.path.exists(path):
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(CSV_HEADER + "\n")
        return 0
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ConfigError(f"{path}: existing file does not carry the expected header")
    cursor, done = 1, 0
    for cell in cells:
        prefix = _cell_prefix(cell)
        have = 0
        while have < rounds and cursor + have < len(lines) and lines[cursor + have].startswith(prefix):
            have += 1
        if have == rounds:
            done += 1
            cursor += rounds
        else:
            break
    if done == len(cells) and cursor != len(lines):
        raise ConfigError(f"{path}: holds rows beyond this config's grid; refusing to append")
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("\n".join(lines[:cursor]) + "\n")
    return done


def run_grid(config: ExperimentConfig, workers: int = 1) -> None:
    """Execute every grid cell, appending MetricsRows to the output CSV.

    Rows land in fixed cell order regardless of `workers`; each round is
    flushed in serial mode, each cell in parallel mode.
    """
    cells = expand_cells(config)
    out_dir = os.path.dirname(config.output)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    done = _prepare_output(config.output, cells, config.rounds)
    remaining = cells[done:]
    if not remaining:
        print(f"all {len(cells)} cells already complete in {config.output}")
        return
    if done:
        print(f"resuming: {done}/{len(cells)} cells already complete")
    with open(config.output, "a", encoding="utf-8", newline="") as out:
        if workers <= 1:
            for cell in remaining:
                print(
                    f"[{cell.index + 1}/{len(cells)}] {cell.method} k={cell.k} "
                    f"tau={cell.tau} r={_g9(cell.r)} seed={cell.seed}",
                    flush=True,
                )
                for line in _cell_lines_iter(config, cell):
                    out.write(line + "\n")
                    out.flush()
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_compute_cell_lines, config, cell) for cell in remaining]
                for cell, future in zip(remaining, futures):
                    for line in future.result():
                        out.write(line + "\n")
                    out.flush()
                    print(f"[{cell.index + 1}/{len(cells)}] {cell.method} k={cell.k} "
                          f"tau={cell.tau} r={_g9(cell.r)} seed={cell.seed} done", flush=True)


# --- summaries ---------------------------------------------------------------


def summarize(csv_path) -> int:
    """Print final-round accuracy mean +- sd per cell group; 1 when empty."""
    with open(csv_path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise FormatError(f"{csv_path}: line 1: expected header {CSV_HEADER!r}")
    rows = []
    for num, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 11:
            raise FormatError(f"{csv_path}: line {num}: expected 11 fields, got {len(parts)}")
        try:
            row = {
                "method": parts[0],
                "k": int(parts[1]),
                "tau": int(parts[2]),
                "r": float(parts[3]),
                "seed": int(parts[4]),
                "round": int(parts[5]),
                "accuracy": float(parts[7]),
            }
            # validate the remaining numeric fields even though the summary
            # does not use them
            float(parts[6]), float(parts[8]), float(parts[9]), int(parts[10])
        except ValueError as exc:
            raise FormatError(f"{csv_path}: line {num}: {exc}") from exc
        rows.append(row)
    if not rows:
        print("no data")
        return 1
    groups: dict[tuple, list] = {}
    for row in rows:
        groups.setdefault((row["method"], row["k"], row["tau"], row["r"]), []).append(row)
    print("method\tk\ttau\tr\tseeds\tfinal_round\tacc_mean\tacc_sd")
    for key in sorted(groups):
        rows_in_group = groups[key]
        final = max(row["round"] for row in rows_in_group)
        finals = [row["accuracy"] for row in rows_in_group if row["round"] == final]
        mean = sum(finals) / len(finals)
        if len(finals) > 1:
            var = sum((a - mean) ** 2 for a in finals) / (len(finals) - 1)
            sd = math.sqrt(var)
        else:
            sd = 0.0
        method, k, tau, r = key
        print(f"{method}\t{k}\t{tau}\t{_g9(r)}\t{len(finals)}\t{final}\t{_g9(mean)}\t{_g9(sd)}")
    return 0


# --- entry point -------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="elastisim",
        description="Run elastic-averaging training simulations over an experiment grid.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute every grid cell of a config file")
    p_run.add_argument("config")
    p_run.add_argument("--workers", type=int, default=1, help="parallel grid cells")
    p_validate = sub.add_parser("validate", help="check a config file and echo the resolved form")
    p_validate.add_argument("config")
    p_summarize = sub.add_parser("summarize", help="final-round accuracy table from a metrics CSV")
    p_summarize.add_argument("csv")
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            config = parse_config(args.config)
            run_grid(config, workers=args.workers)
            return 0
        if args.command == "validate":
            config = parse_config(args.config)
            print(f"OK: {len(expand_cells(config))} grid cells, "
                  f"resolved config at {resolved_config_path(config.output)}")
            return 0
        return summarize(args.csv)
    except (ConfigError, FormatError, DataConsistencyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
