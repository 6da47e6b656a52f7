"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line; the lines are printed together at the end of
the session (see ``conftest.pytest_terminal_summary``) and also to stdout.
Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import json
import time

import numpy as np
import pytest

from augcl import mining as M
from augcl import numerics as nx
from augcl import pipeline as P
from augcl.config import ExperimentConfig
from augcl.encoder import EmbeddingBatch, EncoderConfig, EncoderParams, bind, encode_nodes
from augcl.graphs import SyntheticSpec, batch_graphs, gen_synthetic
from augcl.losses import (
    ContrastiveConfig,
    adaptive_margin,
    augcl_loss,
    column_map,
    contrastive_nodes,
    info_nce,
    triplet_surrogate,
)
from augcl.numerics import ComputationGraph, backward_grad, forward_eval
from tests import oracles
from tests.test_numerics import OP_CASES, _avoid_kinks, _weighted_sum, fd_check

RESULTS: list[str] = []


def record(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# 1 -----------------------------------------------------------------------------------


def _relu_case(seed):
    rng = np.random.default_rng(seed)
    g = ComputationGraph()
    a = g.param("a", _avoid_kinks(rng.normal(size=(3, 4))))
    loss = _weighted_sum(g, nx.relu(a), rng).named("loss")
    x = a.value.copy()
    num = oracles.central_diff(lambda: float(forward_eval(g, {"a": x})["loss"]), x)
    return oracles.rel_err(backward_grad(g, loss)["a"], num)


def _composition_case(seed):
    coll = gen_synthetic(SyntheticSpec(graphs_per_class=3, nodes=6), seed)
    p = EncoderParams.init(EncoderConfig(coll.feature_dim, hidden=6, layers=2, proj_dim=4), seed)
    rng = np.random.default_rng(seed)
    # a generic point: zero biases park ReLU inputs exactly on the kink
    for value in p.tensors.values():
        value[...] = rng.normal(scale=0.7, size=value.shape)
    g = ComputationGraph()
    bound = bind(g, p)
    z1, z2 = encode_nodes(g, bound, batch_graphs(coll, [0, 1, 2, 3]), batch_graphs(coll, [1, 2, 3, 4]), p.config)
    loss = contrastive_nodes(g, z1, z2, ContrastiveConfig(0.5), rng.uniform(0.5, 2.0, size=(4, 3))).named("loss")
    grads = backward_grad(g, loss)
    worst = 0.0
    for name, value in p.tensors.items():
        x = value.copy()
        num = oracles.central_diff(lambda: float(forward_eval(g, {name: x})["loss"]), x)
        forward_eval(g, {name: value})
        worst = max(worst, oracles.rel_err(grads[name], num))
    return worst


def test_c01_gradient_correctness():
    t0 = time.perf_counter()
    failures = []
    worst = 0.0
    for seed in range(100):
        for op, (shapes, build, positive) in OP_CASES.items():
            try:
                fd_check(build, shapes, seed, positive)
            except AssertionError:
                failures.append((op, seed))
        worst = max(worst, _relu_case(seed), _composition_case(seed))
    elapsed = time.perf_counter() - t0
    ok = not failures and worst <= 1e-4 and elapsed < 60
    record(1, "gradients vs central differences", ok,
           f"{len(OP_CASES) + 2} cases x 100 seeds, op failures {failures[:3]}, "
           f"worst composite rel err {worst:.2e}, {elapsed:.1f}s")


# 2 -----------------------------------------------------------------------------------


def test_c02_unit_weights_reduce_to_infonce():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        n, d = int(rng.integers(2, 33)), int(rng.integers(1, 9))
        batch = EmbeddingBatch(rng.normal(size=(n, d)), rng.normal(size=(n, d)))
        cfg = ContrastiveConfig(float(rng.uniform(0.05, 1.0)))
        worst = max(worst, abs(augcl_loss(batch, np.ones((n, n - 1)), cfg) - info_nce(batch, cfg)))
    elapsed = time.perf_counter() - t0
    record(2, "unit weights equal InfoNCE", worst <= 1e-12 and elapsed < 30,
           f"max |diff| {worst:.1e} over 1000 batches, {elapsed:.1f}s")


# 3 -----------------------------------------------------------------------------------


def test_c03_weight_monotonicity():
    rng = np.random.default_rng(3)
    bad = 0
    pairs = 0
    for _ in range(100):
        n, d = int(rng.integers(2, 9)), int(rng.integers(2, 6))
        batch = EmbeddingBatch(rng.normal(size=(n, d)), rng.normal(size=(n, d)))
        cfg = ContrastiveConfig(float(rng.uniform(0.1, 1.0)))
        w = rng.uniform(0.2, 2.0, size=(n, n - 1))
        num = oracles.central_diff(lambda: augcl_loss(batch, w, cfg), w, h=1e-5)
        bad += int(np.sum(num <= 0))
        pairs += w.size
    record(3, "loss increases with every weight", bad == 0, f"{pairs - bad}/{pairs} pair derivatives positive")


# 4 -----------------------------------------------------------------------------------


def test_c04_margin_sign_law():
    rng = np.random.default_rng(4)
    mismatches = 0
    for _ in range(10_000):
        u = float(rng.uniform(1e-6, 1.0))
        alpha = float(np.exp(rng.uniform(-1, 6)))
        cfg = ContrastiveConfig(float(rng.uniform(0.05, 2.0)))
        m = adaptive_margin(u, alpha, cfg)
        mismatches += int(np.sign(m) != np.sign(alpha * u - 1.0))
    # alpha a power of two and u = 1/alpha make the product exactly one
    exact = [adaptive_margin(2.0**-k, 2.0**k, ContrastiveConfig(t)) for k in range(0, 20) for t in (0.1, 0.5, 1.0)]
    zeros = all(m == 0.0 for m in exact)
    record(4, "margin sign follows alpha*u - 1", mismatches == 0 and zeros,
           f"{mismatches} sign mismatches in 10^4 triples, m == 0 exactly at alpha*u = 1: {zeros}")


# 5 -----------------------------------------------------------------------------------


def test_c05_kmeans_vs_brute_force():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    within = exact = 0
    worst = 1.0
    for k in range(100):
        m, d = int(rng.integers(2, 9)), int(rng.integers(1, 4))
        x = rng.normal(size=(m, d))
        best = oracles.best_two_partition(x.tolist())
        got = M.kmeans2(x, M.KMeansConfig(restarts=3, seed=k)).sse
        within += got <= best * 1.05 + 1e-12
        worst = max(worst, got / best if best > 0 else 1.0)
        exact += abs(got - best) <= 1e-9 * max(1.0, best)
    elapsed = time.perf_counter() - t0
    ok = within == 100 and exact >= 95 and elapsed < 10
    record(5, "2-means against exhaustive SSE", ok, f"{within}/100 within 5%, {exact}/100 exact, worst ratio {worst:.3f}, {elapsed:.2f}s")


# 6 -----------------------------------------------------------------------------------


def band_data(seed, n=64):
    """Two arcs near the unit circle plus a narrow band on the bisector between them."""
    rng = np.random.default_rng(seed)
    core = n // 2 - 4
    ang = np.concatenate([
        rng.uniform(-0.35, 0.35, core),
        rng.uniform(-0.35, 0.35, core) + np.pi / 2,
        rng.uniform(-0.05, 0.05, 8) + np.pi / 4,
    ])
    r = rng.uniform(0.9, 1.1, len(ang))
    pts = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
    band = np.r_[np.zeros(2 * core, bool), np.ones(8, bool)]
    return pts, band


def boundary_band_gap(seed):
    """Mean u of band vs core candidates, seen from core anchors."""
    pts, band = band_data(seed)
    n = len(pts)
    cols = column_map(n)
    rng = np.random.default_rng(seed)
    parts = [M.partition_negatives(pts[i], pts[cols[i]], M.KMeansConfig(), rng) for i in range(n)]
    params = M.train_gambler([(pts[i], pts[cols[i]], parts[i].labels) for i in range(n)], M.GamblerConfig(), seed)
    U = M.build_uncertainty_matrix(EmbeddingBatch(pts, pts), params).values
    anchors = [i for i in range(n) if not band[i]]
    u_band = float(np.mean([U[i][band[cols[i]]].mean() for i in anchors]))
    u_core = float(np.mean([U[i][~band[cols[i]]].mean() for i in anchors]))
    return u_band, u_core


def test_c06_boundary_uncertainty():
    t0 = time.perf_counter()
    gaps = [boundary_band_gap(s) for s in range(5)]
    per_seed = (time.perf_counter() - t0) / 5
    ok = all(b > c for b, c in gaps) and per_seed < 10
    record(6, "band points more uncertain than core points", ok,
           "u band/core " + ", ".join(f"{b:.3f}/{c:.3f}" for b, c in gaps) + f", {per_seed:.1f}s per seed")


# 7 -----------------------------------------------------------------------------------


def test_c07_false_negative_suppression():
    t0 = time.perf_counter()
    rows = []
    for seed in range(5):
        cfg = ExperimentConfig(seed=seed).replace(**{"dataset.source": "synthetic"})
        cfg = cfg.replace(**{"train.epochs": cfg.train.switch_epoch + 1})
        data = P.load_dataset(cfg)
        cache = P.pretrain(cfg, data).cache
        rows.append(P.class_weight_means(cache, data.labels))
    elapsed = time.perf_counter() - t0
    wins = sum(s < c for s, c in rows)
    ok = wins == 5 and elapsed < 120
    record(7, "same-class weight below cross-class weight", ok,
           f"{wins}/5 seeds; same/cross " + ", ".join(f"{s:.3f}/{c:.3f}" for s, c in rows) + f", {elapsed:.0f}s")


# 8 -----------------------------------------------------------------------------------


def test_c08_triplet_direction():
    rng = np.random.default_rng(8)
    n, d = 8, 4
    cfg = ContrastiveConfig(0.5)
    base1, base2 = rng.normal(size=(n, d)), rng.normal(size=(n, d))
    U = M.UncertaintyMatrix.from_values(rng.uniform(0.05, 1.0, size=(n, n - 1)))
    W = M.weights_from_uncertainty(U)
    loss, trip = [], []
    for _ in range(200):
        scale = rng.uniform(0.0, 1.5)
        batch = EmbeddingBatch(base1 + scale * rng.normal(size=(n, d)), base2 + scale * rng.normal(size=(n, d)))
        batch = EmbeddingBatch(*(z / np.linalg.norm(z, axis=1, keepdims=True) for z in (batch.z_tilde, batch.z_hat)))
        loss.append(augcl_loss(batch, W, cfg))
        trip.append(triplet_surrogate(batch, W, cfg).triplet_value)
    r = oracles.pearson(loss, trip)
    record(8, "weighted loss tracks the triplet form", r > 0.5, f"Pearson r = {r:.3f} over 200 perturbations")


# 9-11 (MUTAG) -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def mutag_runs(mutag_dir):
    t0 = time.perf_counter()
    data = P.load_dataset(ExperimentConfig())
    runs = []
    for seed in range(5):
        cfg = ExperimentConfig(seed=seed)
        runs.append((P.run_experiment(P.baseline(cfg), data), P.run_experiment(cfg, data)))
    return runs, time.perf_counter() - t0


def test_c09_mutag_end_to_end(mutag_runs):
    runs, elapsed = mutag_runs
    base = np.array([b.probe["mean"] for b, _ in runs])
    aug = np.array([a.probe["mean"] for _, a in runs])
    gain = 100 * (aug - base).mean()
    ok_a, ok_b = base.mean() >= 0.84, gain >= 0.5
    record(9, "MUTAG linear probe", ok_a and ok_b and elapsed <= 1800,
           f"(a) baseline {100 * base.mean():.2f}% [{'ok' if ok_a else 'below 84%'}], "
           f"(b) AUGCL {100 * aug.mean():.2f}%, paired gain {gain:+.2f}pp "
           f"[{'ok' if ok_b else 'below +0.5pp'}], per-seed {np.round(100 * (aug - base), 2).tolist()}, {elapsed:.0f}s")


def test_c10_determinism(mutag_runs):
    runs, _ = mutag_runs
    first = runs[0][1]
    again = P.run_experiment(ExperimentConfig(seed=0))
    same = json.dumps(first.metrics(), sort_keys=True) == json.dumps(again.metrics(), sort_keys=True)
    same_params = all(np.array_equal(first.params.tensors[k], again.params.tensors[k]) for k in first.params.tensors)
    record(10, "repeat MUTAG run is bit-identical", same and same_params,
           f"metrics identical: {same}, encoder tensors identical: {same_params}")


def test_c11_one_pass_cost(mutag_dir):
    cfg = ExperimentConfig(seed=0)
    data = P.load_dataset(cfg)
    bsz = cfg.train.resolve_batch_size(len(data))
    batches = P.epoch_batches(len(data), bsz, cfg.seed, cfg.train.switch_epoch)
    params = EncoderParams.init(P.encoder_config(cfg, data.feature_dim), 0)
    before = dict(M.COUNTERS)
    P.mine_phase(params, data, batches, cfg)
    trained = M.COUNTERS["gambler_train"] - before.get("gambler_train", 0)
    parts = M.COUNTERS["partition"] - before.get("partition", 0)
    expected = (len(data) // bsz) * bsz
    record(11, "gambler trained once, one partition per anchor", trained == 1 and parts == expected,
           f"gambler trainings {trained}, partitions {parts} (expected {expected})")
