"""Warmup contrastive pretraining, one-shot mining, weighted training, and probing.

Random streams are derived from the master seed by purpose, so a baseline run
and a mining run with the same seed see the same initial weights, batches and
augmentations; the only difference is the loss weighting after the switch.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from augcl import mining
from augcl import numerics as nx
from augcl.augment import AugmentationSpec, sample_two_views
from augcl.config import ExperimentConfig, to_dict
from augcl.encoder import (
    EmbeddingBatch,
    EncoderConfig,
    EncoderParams,
    bind,
    embed,
    encode_nodes,
    encode_views,
)
from augcl.graphs import GraphCollection, batch_graphs, gen_synthetic, merge_graphs, parse_tu_dataset, stratified_folds
from augcl.losses import column_map, contrastive_nodes
from augcl.numerics import ComputationGraph, OptimizerState, checkpoint, optimizer_step
from augcl.seeding import derive

log = logging.getLogger(__name__)

# Seed-path roots, one per independent random stream.
S_INIT, S_ORDER, S_AUG, S_MINE_VIEWS, S_MINE, S_PROBE, S_DATA = range(7)


class PipelineError(RuntimeError):
    pass


# --- data -------------------------------------------------------------------------


def data_root(root: str = "") -> Path:
    return Path(root or os.environ.get("AUGCL_DATA_DIR", "") or "data")


def load_dataset(cfg: ExperimentConfig) -> GraphCollection:
    d = cfg.dataset
    if d.source == "synthetic":
        spec = dict(
            classes=d.classes,
            graphs_per_class=d.graphs_per_class,
            intra_p=d.intra_p,
            inter_p=d.inter_p,
            nodes=d.nodes,
            degree_cap=d.degree_cap,
        )
        seed = int(np.random.default_rng(derive(cfg.seed, S_DATA)).integers(2**31))
        return gen_synthetic(spec, seed)
    root = data_root(d.root)
    directory = root / d.name if (root / d.name).is_dir() else root
    return parse_tu_dataset(directory, d.name, d.degree_cap)


def encoder_config(cfg: ExperimentConfig, feature_dim: int) -> EncoderConfig:
    e = cfg.encoder
    return EncoderConfig(feature_dim, e.hidden, e.layers, e.proj_dim, e.readout, e.concat_layers)


def augmentation_pool(cfg: ExperimentConfig) -> list[AugmentationSpec]:
    return [AugmentationSpec(k, cfg.train.aug_ratio) for k in cfg.train.pool_kinds]


def epoch_batches(n_graphs: int, batch_size: int, seed, epoch: int) -> list[np.ndarray]:
    """Shuffled index batches for one epoch; the incomplete tail is dropped."""
    if n_graphs < batch_size:
        raise PipelineError(f"dataset of {n_graphs} graphs is smaller than one batch ({batch_size})")
    order = np.random.default_rng(derive(seed, S_ORDER, epoch)).permutation(n_graphs)
    full = n_graphs // batch_size
    return [order[b * batch_size : (b + 1) * batch_size] for b in range(full)]


def make_views(data: GraphCollection, idx: np.ndarray, pool, seed, path: tuple[int, ...]):
    v1, v2 = [], []
    for pos, gi in enumerate(idx):
        a, b = sample_two_views(data[int(gi)], pool, derive(seed, *path, pos))
        v1.append(a)
        v2.append(b)
    return merge_graphs(v1), merge_graphs(v2)


# --- mining phase ----------------------------------------------------------------------


@dataclass
class WeightCache:
    """Per-batch weights keyed by batch id, plus what produced them."""

    weights: dict[int, mining.WeightMatrix]
    alpha: float
    outcome: mining.MiningOutcome
    embeddings: list[EmbeddingBatch]
    batches: list[np.ndarray]

    def summary(self, labels: np.ndarray | None = None) -> dict[str, Any]:
        us = np.concatenate([u.values.ravel() for u in self.outcome.uncertainties]) if self.outcome.uncertainties else np.zeros(0)
        out: dict[str, Any] = {
            "alpha": self.alpha,
            "batches": len(self.batches),
            "degenerate_batches": len(self.outcome.degenerate_batches),
            "u_mean": float(us.mean()) if us.size else None,
            "u_std": float(us.std()) if us.size else None,
            "u_min": float(us.min()) if us.size else None,
            "u_max": float(us.max()) if us.size else None,
            "w_mean": float(np.concatenate([w.values.ravel() for w in self.weights.values()]).mean()),
        }
        if labels is not None:
            same, cross = class_weight_means(self, labels)
            out["same_class_w_mean"] = same
            out["cross_class_w_mean"] = cross
        return out


def class_weight_means(cache: WeightCache, labels: np.ndarray) -> tuple[float | None, float | None]:
    """Mean weight over same-class and cross-class (anchor, negative) pairs."""
    same, cross = [], []
    for b, idx in enumerate(cache.batches):
        if b in cache.outcome.degenerate_batches:
            continue
        y = labels[idx]
        cols = column_map(len(idx))
        mask = y[:, None] == y[cols]
        w = cache.weights[b].values
        same.append(w[mask])
        cross.append(w[~mask])
    s, c = np.concatenate(same) if same else np.zeros(0), np.concatenate(cross) if cross else np.zeros(0)
    return (float(s.mean()) if s.size else None, float(c.mean()) if c.size else None)


def mine_phase(params: EncoderParams, data: GraphCollection, batches: list[np.ndarray], cfg: ExperimentConfig) -> WeightCache:
    """Encode each frozen batch once (one seeded augmentation draw), partition, train, weight."""
    pool = augmentation_pool(cfg)
    embs = []
    for b, idx in enumerate(batches):
        v1, v2 = make_views(data, idx, pool, cfg.seed, (S_MINE_VIEWS, b))
        embs.append(encode_views(v1, v2, params))
    m = cfg.mining
    outcome = mining.mine_batches(
        embs,
        cfg.kmeans,
        cfg.gambler,
        estimator=m.estimator,
        policy=m.policy,
        alpha=m.alpha if m.policy == "fixed" else None,
        delta_coef=m.delta_coef,
        alpha_scope=m.alpha_scope,
        seed=derive(cfg.seed, S_MINE),
    )
    return WeightCache(dict(enumerate(outcome.weights)), outcome.alpha, outcome, embs, [np.asarray(i) for i in batches])


# --- training -----------------------------------------------------------------------


@dataclass
class PretrainResult:
    params: EncoderParams
    cache: WeightCache | None
    loss_curve: list[float]
    timings: dict[str, float] = field(default_factory=dict)


def _train_step(params, state, view1, view2, cfg: ExperimentConfig, weights_for) -> float:
    g = ComputationGraph()
    z1, z2 = encode_nodes(g, bind(g, params), view1, view2, params.config)
    w = weights_for(z1.value, z2.value)
    loss = contrastive_nodes(g, z1, z2, cfg.loss, w)
    grads = nx.backward_grad(g, loss)
    optimizer_step(state, params.tensors, grads)
    return float(loss.value)


def pretrain(cfg: ExperimentConfig, data: GraphCollection) -> PretrainResult:
    """Epochs ``1..W`` with InfoNCE on fresh batches, mining at ``W``, then weighted epochs on frozen batches."""
    t0 = time.perf_counter()
    timings = {"mining": 0.0}
    bsz = cfg.train.resolve_batch_size(len(data))
    params = EncoderParams.init(encoder_config(cfg, data.feature_dim), derive(cfg.seed, S_INIT))
    state = OptimizerState("adam", cfg.train.learning_rate)
    pool = augmentation_pool(cfg)
    W = cfg.train.switch_epoch
    use_mining = cfg.mining.enabled
    frozen: list[np.ndarray] | None = None
    cache: WeightCache | None = None
    curve = []
    for epoch in range(1, cfg.train.epochs + 1):
        batches = frozen if frozen is not None else epoch_batches(len(data), bsz, cfg.seed, epoch)
        losses = []
        for b, idx in enumerate(batches):
            v1, v2 = make_views(data, idx, pool, cfg.seed, (S_AUG, epoch, b))

            def weights_for(z1, z2, b=b):
                if cache is None:
                    return None
                if cfg.mining.reinfer and cache.outcome.estimator is not None:
                    return mining.reweight([EmbeddingBatch(z1, z2)], cache.outcome.estimator, cache.alpha)[0].values
                return cache.weights[b].values

            losses.append(_train_step(params, state, v1, v2, cfg, weights_for))
        curve.append(float(np.mean(losses)))
        log.info("epoch %d loss %.6f", epoch, curve[-1])
        if epoch == W:
            frozen = batches
            if use_mining:
                tm = time.perf_counter()
                cache = mine_phase(params, data, frozen, cfg)
                timings["mining"] = time.perf_counter() - tm
    timings["pretrain"] = time.perf_counter() - t0
    return PretrainResult(params, cache, curve, timings)


# --- evaluation ------------------------------------------------------------------------


def embed_all(params: EncoderParams, data: GraphCollection, chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Pre-projection embeddings for every graph, in dataset order, plus labels."""
    rows = [embed(batch_graphs(data, range(s, min(s + chunk, len(data)))), params) for s in range(0, len(data), chunk)]
    return np.concatenate(rows), data.labels


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def fit_logreg(x: np.ndarray, y: np.ndarray, n_classes: int, l2: float, tol: float, max_iter: int):
    """L2-regularized multinomial logistic regression by full-batch gradient descent.

    Step size is ``1 / L`` for the smoothness bound ``L = ||X||_2^2 / (2n) + l2``;
    stops when the largest gradient entry falls below ``tol``.
    """
    n = x.shape[0]
    xb = np.hstack([x, np.ones((n, 1))])
    onehot = np.eye(n_classes)[y]
    lip = np.linalg.norm(xb, 2) ** 2 / (2.0 * n) + l2
    step = 1.0 / lip
    w = np.zeros((xb.shape[1], n_classes))
    reg = np.ones((xb.shape[1], 1))
    reg[-1] = 0.0  # bias is not penalized
    for it in range(max_iter):
        grad = xb.T @ (_softmax(xb @ w) - onehot) / n + l2 * reg * w
        if np.max(np.abs(grad)) < tol:
            break
        w -= step * grad
    return w


def predict_logreg(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.argmax(np.hstack([x, np.ones((x.shape[0], 1))]) @ w, axis=1)


def linear_probe_eval(embeddings: np.ndarray, labels: np.ndarray, probe, seed) -> dict[str, Any]:
    """Stratified ``k``-fold accuracy of a logistic-regression probe, over ``repeats`` fold draws."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0:
        raise PipelineError("probe needs labelled graphs")
    n_classes = int(labels.max()) + 1
    accs = []
    for r in range(probe.repeats):
        folds = stratified_folds(labels, probe.folds, derive(seed, S_PROBE, r))
        for f, test in enumerate(folds):
            train = np.setdiff1d(np.arange(len(labels)), test)
            if len(np.unique(labels[train])) < 2:
                raise PipelineError(f"training split of fold {f} holds a single class")
            xtr, xte = embeddings[train], embeddings[test]
            if probe.standardize:
                mu = xtr.mean(axis=0)
                sd = xtr.std(axis=0)
                sd = np.where(sd > 0, sd, 1.0)
                xtr, xte = (xtr - mu) / sd, (xte - mu) / sd
            w = fit_logreg(xtr, labels[train], n_classes, probe.l2, probe.tolerance, probe.max_iterations)
            accs.append(float(np.mean(predict_logreg(w, xte) == labels[test])))
    a = np.array(accs)
    return {"fold_accuracies": accs, "mean": float(a.mean()), "std": float(a.std())}


# --- whole run -----------------------------------------------------------------------


@dataclass
class RunReport:
    seed: int
    config: dict[str, Any]
    loss_curve: list[float]
    mining: dict[str, Any] | None
    probe: dict[str, Any]
    timings: dict[str, float]
    params: EncoderParams | None = field(default=None, repr=False, compare=False)
    cache: WeightCache | None = field(default=None, repr=False, compare=False)

    def metrics(self) -> dict[str, Any]:
        """Everything except wall-clock timings (the part expected to be reproducible)."""
        return {
            "seed": self.seed,
            "config": self.config,
            "loss_curve": self.loss_curve,
            "mining": self.mining,
            "probe": self.probe,
        }

    def to_json(self) -> str:
        doc = self.metrics()
        doc["timings"] = self.timings
        doc["created"] = time.strftime("%Y-%m-%dT%H:%M:%S")
        return json.dumps(doc, indent=2, sort_keys=True)

    def write(self, out_dir: str | Path, stem: str = "report") -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.json").write_text(self.to_json())
        with open(out / f"{stem}_loss.csv", "w") as fh:
            fh.write("epoch,loss\n")
            for e, v in enumerate(self.loss_curve, start=1):
                fh.write(f"{e},{v!r}\n")
        if self.params is not None:
            checkpoint.save(out / f"{stem}.augt", self.params.tensors)
        return out / f"{stem}.json"


def run_experiment(cfg: ExperimentConfig, data: GraphCollection | None = None) -> RunReport:
    data = load_dataset(cfg) if data is None else data
    res = pretrain(cfg, data)
    t = time.perf_counter()
    emb, labels = embed_all(res.params, data)
    probe = linear_probe_eval(emb, labels, cfg.probe, cfg.seed)
    timings = dict(res.timings, probe=time.perf_counter() - t)
    summary = res.cache.summary(labels) if res.cache is not None else None
    return RunReport(cfg.seed, to_dict(cfg), res.loss_curve, summary, probe, timings, res.params, res.cache)


def baseline(cfg: ExperimentConfig) -> ExperimentConfig:
    return cfg.replace(**{"mining.enabled": False})


__all__ = [
    "PipelineError",
    "PretrainResult",
    "RunReport",
    "WeightCache",
    "baseline",
    "class_weight_means",
    "embed_all",
    "epoch_batches",
    "fit_logreg",
    "linear_probe_eval",
    "load_dataset",
    "mine_phase",
    "pretrain",
    "run_experiment",
]
