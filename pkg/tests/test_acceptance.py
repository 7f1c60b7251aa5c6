"""Acceptance gate: every release criterion at its stated tolerance.

Each test prints one PASS/FAIL line (run with `pytest -s` to see them all).
The desk-scale experiment protocols are pinned: synthetic 3-class blobs,
n=3000 train / 600 test, and seeds 1000-1002 for the multi-seed checks.
Ordering checks compare means with a tolerance of one pooled standard
deviation across the three seeds.
"""

import math
import os

import numpy as np
import pytest

from elastisim.cli import build_datasets, parse_config, run_grid
from elastisim.data import Dataset, partition
from elastisim.elastic import (
    ElasticConfig,
    WeightPair,
    elastic_exchange,
    map_h1,
    map_h2,
)
from elastisim.model import Batch, ModelSpec, gradient, hvp, init_params, loss
from elastisim.optim import AdaHessianState, hutchinson_diag
from elastisim.rng import derive_seed
from elastisim.sim import METHOD_VARIANT, SimConfig, build, run
from tests.test_model import fd_dense_hessian, fd_gradient


def report(criterion, ok, detail=""):
    tag = "PASS" if ok else "FAIL"
    print(f"{tag} criterion {criterion}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


def pooled_sd(a, b):
    return math.sqrt((np.std(a, ddof=1) ** 2 + np.std(b, ddof=1) ** 2) / 2.0)


DESK_DATASET = {
    "kind": "synthetic",
    "classes": 3,
    "per_class": 1200,
    "dim": 20,
    "spread": 0.3,
    "seed": 7,
    "test_fraction": 1.0 / 6.0,
}
SEEDS = (1000, 1001, 1002)


def desk_sim(method, seed, k, tau, rounds, r=None, failure_probability=1.0 / 3.0):
    train, test = build_datasets(DESK_DATASET)
    if r is None:
        r = {4: 0.25, 8: 0.125}[k] if method in ("EAHES-O", "EAHES-OM", "DEAHES-O") else 0.0
    spec = ModelSpec((20, 8, 3), "relu", seed=derive_seed(seed, "model-init"))
    return SimConfig(
        method=method, worker_count=k, comm_period=tau, rounds=rounds, batch_size=4,
        master_seed=seed, model=spec, train_data=train, test_data=test,
        overlap_ratio=r, failure_probability=failure_probability,
        elastic=ElasticConfig(variant=METHOD_VARIANT[method]),
    )


def final_accuracies(method, k, tau, rounds, r=None):
    return np.array(
        [
            run(build(desk_sim(method, seed, k, tau, rounds, r))).rounds[-1].test_accuracy
            for seed in SEEDS
        ]
    )


def test_criterion_1_numerical_kernels():
    gen = np.random.default_rng(42)

    # gradient vs central differences, 100 draws on a [4, 8, 3] model;
    # relative error floored at 1e-6 in the denominator
    worst = 0.0
    spec = ModelSpec((4, 8, 3), "tanh", seed=0)
    for _ in range(100):
        params = init_params(spec)
        params.values[:] += gen.normal(0.0, 0.4, params.size)
        batch = Batch(gen.normal(0.0, 1.0, (8, 4)), gen.integers(0, 3, 8))
        g = gradient(params, batch).values
        fd = fd_gradient(params, batch)
        rel = np.abs(g - fd) / np.maximum(1e-6, np.abs(g) + np.abs(fd))
        worst = max(worst, float(rel.max()))
    grad_ok = worst < 1e-4

    # hvp vs dense finite-difference Hessian on a [2, 3, 2] model
    spec2 = ModelSpec((2, 3, 2), "tanh", seed=1)
    params2 = init_params(spec2)
    params2.values[:] += gen.normal(0.0, 0.4, params2.size)
    batch2 = Batch(gen.normal(0.0, 1.0, (6, 2)), gen.integers(0, 2, 6))
    H = fd_dense_hessian(params2, batch2)
    z = params2.like(gen.normal(0.0, 1.0, params2.size))
    w = params2.like(gen.normal(0.0, 1.0, params2.size))
    hz = hvp(params2, batch2, z).values
    hvp_err = float(np.linalg.norm(hz - H @ z.values) / np.linalg.norm(H @ z.values))
    hvp_ok = hvp_err < 1e-4

    lhs = float(z.values @ hvp(params2, batch2, w).values)
    rhs = float(w.values @ hvp(params2, batch2, z).values)
    sym_err = abs(lhs - rhs) / max(abs(lhs), abs(rhs))
    sym_ok = sym_err < 1e-6

    # Hutchinson exactness: injected diagonal Hessian, one sample
    flat = params2.zeros_like()
    state = AdaHessianState.init(flat, 0.01, hutchinson_samples=1, rng_seed=5)
    target = np.arange(1.0, flat.size + 1)
    est = hutchinson_diag(
        flat, batch2, state, hvp_fn=lambda p, b, zz: p.like(target * zz.values)
    )
    diag_exact = np.array_equal(est.values, target)

    # [[2, 1], [1, 3]]: the two distinct sign patterns average to [2, 3]
    Hm = np.array([[2.0, 1.0], [1.0, 3.0]])
    est_fn = lambda zz: zz * (Hm @ zz)
    mean = (est_fn(np.array([1.0, 1.0])) + est_fn(np.array([1.0, -1.0]))) / 2.0
    pattern_exact = np.array_equal(mean, [2.0, 3.0])

    report(
        1,
        grad_ok and hvp_ok and sym_ok and diag_exact and pattern_exact,
        f"grad fd rel {worst:.2e} < 1e-4; hvp rel {hvp_err:.2e} < 1e-4; "
        f"symmetry {sym_err:.2e} < 1e-6; hutchinson exact on diag and [[2,1],[1,3]]",
    )


def test_criterion_2_elastic_law():
    alpha, kappa = 0.1, -1.0
    cont_ok = True
    for point in (kappa, 0.0):
        for f in (map_h1, map_h2):
            mid = f(point, alpha, kappa)
            cont_ok &= abs(f(point - 1e-9, alpha, kappa) - mid) < 1e-6
            cont_ok &= abs(f(point + 1e-9, alpha, kappa) - mid) < 1e-6

    grid = np.linspace(-3.0, 2.0, 1000)
    h1 = np.array([map_h1(a, alpha, kappa) for a in grid])
    h2 = np.array([map_h2(a, alpha, kappa) for a in grid])
    range_ok = bool(np.all((h1 >= alpha) & (h1 <= 1)) and np.all((h2 >= 0) & (h2 <= alpha)))
    mono_ok = bool(np.all(np.diff(h1) <= 1e-15) and np.all(np.diff(h2) >= -1e-15))

    gen = np.random.default_rng(3)
    spec = ModelSpec((5, 4, 2), seed=0)
    worker = init_params(spec)
    worker = worker.like(gen.normal(0, 1, worker.size))
    master = worker.like(gen.normal(0, 1, worker.size))
    w2, m2 = elastic_exchange(worker, master, WeightPair(alpha, alpha))
    conserve_err = float(
        np.abs((w2.values + m2.values) - (worker.values + master.values)).max()
    )
    conserve_ok = conserve_err < 1e-12

    scaling_ok = True
    for h1v, h2v in ((0.1, 0.1), (0.55, 0.05), (1.0, 0.0)):
        wx, mx = elastic_exchange(worker, master, WeightPair(h1v, h2v))
        got = np.linalg.norm(wx.values - mx.values)
        want = abs(1 - h1v - h2v) * np.linalg.norm(worker.values - master.values)
        scaling_ok &= abs(got - want) < 1e-10

    worked_ok = (
        abs(map_h1(-0.5, alpha, kappa) - 0.55) < 1e-12
        and abs(map_h2(-0.5, alpha, kappa) - 0.05) < 1e-12
    )

    report(
        2,
        cont_ok and range_ok and mono_ok and conserve_ok and scaling_ok and worked_ok,
        f"maps continuous/monotone/in-range; pair sum conserved to {conserve_err:.1e}; "
        f"gap scaling to 1e-10; h1(-0.5)=0.55, h2(-0.5)=0.05",
    )


def test_criterion_3_partition_properties():
    gen = np.random.default_rng(2024)
    checked = 0
    nest_checked = 0
    attempt = 0
    while checked < 200:
        attempt += 1
        n = int(gen.integers(10, 500))
        k = int(gen.integers(1, 10))
        ratio = float(gen.uniform(0.0, 0.9))
        seed = int(gen.integers(0, 2**62))
        if math.floor(ratio * n) + k > n:
            continue
        ds = Dataset(np.zeros((n, 2)), np.zeros(n, dtype=np.int64), 1, "synthetic")
        plan = partition(ds, ratio, k, seed)
        o = math.floor(ratio * n)
        assert plan.overlap_indices.shape[0] == o
        base = (n - o) // k
        uniques = []
        for shard in plan.shards:
            unique = np.setdiff1d(shard, plan.overlap_indices)
            assert unique.shape[0] in (base, base + 1)
            uniques.append(unique)
        merged = np.concatenate(uniques + [plan.overlap_indices])
        assert merged.shape[0] == n and len(set(merged.tolist())) == n

        bigger = min(0.95, ratio + 0.3)
        if math.floor(bigger * n) + k <= n:
            plan2 = partition(ds, bigger, k, seed)
            assert set(plan.overlap_indices.tolist()) <= set(plan2.overlap_indices.tolist())
            nest_checked += 1
        checked += 1
    report(3, True, f"200 random partitions satisfy all invariants "
                    f"({nest_checked} nesting checks included)")


GRID_CONFIG = """
output: {output}
base_seed: 500
repeats: 2
rounds: 4
methods: [EASGD, EAHES]
k: [2]
tau: [2]
batch_size: 4
dataset:
  kind: synthetic
  classes: 2
  per_class: 40
  dim: 4
  spread: 0.5
  seed: 3
model:
  hidden: [5]
"""


def test_criterion_4_determinism(tmp_path):
    import textwrap

    outputs = []
    for name, workers in (("a", 1), ("b", 1), ("c", 2)):
        out = os.path.join(str(tmp_path), name, "rows.csv")
        cfg_path = os.path.join(str(tmp_path), f"grid_{name}.yaml")
        with open(cfg_path, "w") as f:
            f.write(textwrap.dedent(GRID_CONFIG.format(output=out)))
        run_grid(parse_config(cfg_path), workers=workers)
        outputs.append(open(out, "rb").read())
    identical = outputs[0] == outputs[1]
    parallel_same = outputs[0] == outputs[2]
    report(
        4,
        identical and parallel_same,
        f"repeat run byte-identical: {identical}; parallel(2) == serial: {parallel_same}",
    )


def test_criterion_5_failure_statistics():
    cfg = desk_sim("EASGD", seed=1234, k=8, tau=1, rounds=1250)
    attempts = cfg.rounds * cfg.worker_count
    assert attempts >= 10_000
    metrics = run(build(cfg))
    suppressed = sum(r.suppressed_count for r in metrics.rounds)
    p = 1.0 / 3.0
    sigma = math.sqrt(p * (1 - p) * attempts)
    dev = abs(suppressed - p * attempts)
    report(
        5,
        dev < 3 * sigma,
        f"{suppressed}/{attempts} suppressed; |dev| {dev:.1f} < 3 sigma = {3 * sigma:.1f}",
    )


def test_criterion_6_overlap_sweep_directional():
    # overlap ratio sweep; the r=0 cell is the overlap-free method, which
    # the r=0 limit of the overlap variant coincides with by construction
    rounds, k, tau = 300, 8, 2
    accs = {0.0: final_accuracies("EAHES", k, tau, rounds, r=0.0)}
    for ratio in (0.125, 0.25, 0.5):
        accs[ratio] = final_accuracies("EAHES-O", k, tau, rounds, r=ratio)
    ratios = sorted(accs)
    ok = True
    details = []
    for low, high in zip(ratios, ratios[1:]):
        tol = pooled_sd(accs[low], accs[high])
        margin = float(accs[high].mean() - (accs[low].mean() - tol))
        ok &= margin >= 0
        details.append(f"r={high}>=r={low} margin {margin:+.4f}")
    means = {r: round(float(a.mean()), 4) for r, a in accs.items()}
    report(6, ok, f"accuracy by ratio {means}; " + "; ".join(details))


def test_criterion_7_method_ordering_and_tau_trend():
    rounds, k, tau = 1400, 4, 2
    methods = ("EASGD", "EAMSGD", "EAHES", "EAHES-O", "EAHES-OM", "DEAHES-O")
    accs = {m: final_accuracies(m, k, tau, rounds) for m in methods}

    ok = True
    details = []
    chain = ("EAHES-OM", "DEAHES-O", "EAHES-O", "EAHES")
    for high, low in zip(chain, chain[1:]):
        tol = pooled_sd(accs[high], accs[low])
        margin = float(accs[high].mean() - (accs[low].mean() - tol))
        ok &= margin >= 0
        details.append(f"{high}>={low} {margin:+.4f}")
    for low in ("EASGD", "EAMSGD"):
        tol = pooled_sd(accs["EAHES"], accs[low])
        margin = float(accs["EAHES"].mean() - (accs[low].mean() - tol))
        ok &= margin >= 0
        details.append(f"EAHES>={low} {margin:+.4f}")

    # communication-period sweep: raising tau must not degrade the final
    # accuracy of the dynamic method beyond one pooled standard deviation
    tau_accs = {2: accs["DEAHES-O"]}
    for t in (1, 4):
        tau_accs[t] = final_accuracies("DEAHES-O", k, t, rounds)
    for t_low, t_high in ((1, 2), (2, 4)):
        tol = pooled_sd(tau_accs[t_low], tau_accs[t_high])
        margin = float(tau_accs[t_high].mean() - (tau_accs[t_low].mean() - tol))
        ok &= margin >= 0
        details.append(f"tau{t_high}>=tau{t_low} {margin:+.4f}")

    means = {m: round(float(a.mean()), 4) for m, a in accs.items()}
    report(7, ok, f"final means {means}; " + "; ".join(details))


def test_criterion_8_healthy_regime_equivalence():
    common = dict(k=2, tau=1, rounds=8, failure_probability=0.0, r=0.25)
    fixed_state = build(desk_sim("EAHES-O", seed=3, **common))
    dynamic_state = build(desk_sim("DEAHES-O", seed=3, **common))
    fixed = run(fixed_state)
    dynamic = run(dynamic_state)
    scores = [w.score for rec in dynamic.rounds for w in rec.workers if w.score is not None]
    all_positive = bool(scores) and all(s > 0 for s in scores)
    bitwise = all(
        ra.master_loss == rb.master_loss and ra.test_accuracy == rb.test_accuracy
        for ra, rb in zip(fixed.rounds, dynamic.rounds)
    ) and np.array_equal(fixed_state.master.values, dynamic_state.master.values)
    report(
        8,
        all_positive and bitwise,
        f"{len(scores)} raw scores all positive: {all_positive}; "
        f"fixed and dynamic trajectories bitwise identical: {bitwise}",
    )
