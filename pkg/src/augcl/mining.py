"""Anchor-dependent hard negative mining.

For each anchor the negatives are split in two by 2-means; the group nearest
the anchor is labelled 1 and the rest 0. A shared MLP with an extra abstention
output is then trained on (anchor, candidate) pairs with the gambler loss
``-log(o * p_label + u)``; its abstention probability ``u`` is the hardness
of a negative, and ``w = alpha * u`` is its weight in the contrastive loss.
"""

from __future__ import annotations

import itertools
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from augcl import kernels
from augcl import numerics as nx
from augcl.encoder import EmbeddingBatch, glorot
from augcl.losses import column_map
from augcl.numerics import ComputationGraph, OptimizerState, optimizer_step

log = logging.getLogger(__name__)

#: Call counts for cost accounting (``partition``, ``gambler_train``, ``classifier_train``).
COUNTERS: Counter = Counter()

ESTIMATORS = ("extra_class", "softmax_response", "entropy", "distance")


class MiningError(ValueError):
    pass


# --- 2-means -------------------------------------------------------------------


@dataclass(frozen=True)
class KMeansConfig:
    restarts: int = 3
    max_iterations: int = 50
    tolerance: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1 or self.max_iterations < 1:
            raise MiningError("restarts and max_iterations must be >= 1")
        if self.tolerance < 0:
            raise MiningError("tolerance must be non-negative")


@dataclass(frozen=True, eq=False)
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    sse: float
    degenerate: bool = False


def kmeans2(points, cfg: KMeansConfig = KMeansConfig(), rng: np.random.Generator | None = None) -> KMeansResult:
    """Best-of-``restarts`` 2-means by SSE.

    Each restart seeds one centroid at a uniformly drawn point and the other at
    the point farthest from it, then runs Lloyd iterations in the compiled
    kernel. Nearest-centroid ties go to centroid 0; an emptied cluster takes
    the point farthest from its centroid. Each Lloyd result is then polished by
    single-point transfers, which escape the shallow local optima plain Lloyd
    stalls in on small sets. If all points coincide the result is flagged
    ``degenerate`` with every point in cluster 0.
    """
    x = np.ascontiguousarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise MiningError("kmeans2 needs at least one point")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    m = x.shape[0]
    spread = ((x - x[0]) ** 2).sum(axis=1)
    if m == 1 or not np.any(spread > 0):
        return KMeansResult(np.zeros(m, dtype=np.int64), np.stack([x[0], x[0]]), 0.0, True)
    best = None
    for _ in range(cfg.restarts):
        first = int(rng.integers(m))
        second = int(np.argmax(((x - x[first]) ** 2).sum(axis=1)))
        labels, _, _, _ = kernels.lloyd2(x, first, second, cfg.max_iterations, cfg.tolerance)
        labels, cent, sse, _ = kernels.transfer2(x, labels, cfg.max_iterations)
        if best is None or sse < best.sse:
            best = KMeansResult(labels, cent, float(sse))
    return best


def partition_sse(points: np.ndarray, labels: np.ndarray) -> float:
    total = 0.0
    for c in np.unique(labels):
        sel = points[labels == c]
        total += float(((sel - sel.mean(axis=0)) ** 2).sum())
    return total


# --- partition -----------------------------------------------------------------


def normalize_rows(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    n = np.linalg.norm(z, axis=-1, keepdims=True)
    return np.where(n > 0, z / np.where(n > 0, n, 1.0), 0.0)


@dataclass(frozen=True, eq=False)
class PartitionResult:
    """``labels[j] == 1`` marks candidates in the anchor-side group."""

    labels: np.ndarray
    centroids: np.ndarray
    anchor_cluster: int
    assignments: np.ndarray
    degenerate: bool = False


def partition_negatives(
    anchor, candidates, cfg: KMeansConfig = KMeansConfig(), rng: np.random.Generator | None = None
) -> PartitionResult:
    cand = np.asarray(candidates, dtype=np.float64)
    if cand.ndim != 2 or cand.shape[0] < 2:
        raise MiningError("partition needs at least 2 candidates")
    COUNTERS["partition"] += 1
    xc = normalize_rows(cand)
    xa = normalize_rows(np.asarray(anchor, dtype=np.float64))
    km = kmeans2(xc, cfg, rng)
    if km.degenerate:
        return PartitionResult(np.ones(len(xc), dtype=np.int64), km.centroids, 0, km.labels, True)
    d = ((km.centroids - xa) ** 2).sum(axis=1)
    side = 1 if d[1] < d[0] else 0
    return PartitionResult((km.labels == side).astype(np.int64), km.centroids, side, km.labels)


def partition_batch(batch: EmbeddingBatch, cfg: KMeansConfig, rng: np.random.Generator) -> list[PartitionResult]:
    """Partition the negatives of every anchor in ``batch`` (candidates exclude the positive)."""
    cols = column_map(batch.batch_size)
    return [partition_negatives(batch.z_tilde[i], batch.z_hat[cols[i]], cfg, rng) for i in range(batch.batch_size)]


# --- estimator network --------------------------------------------------------------


@dataclass(frozen=True)
class GamblerConfig:
    """Extra-class (deep gambler) estimator settings.

    ``layers`` hidden layers of ``hidden`` units feed a linear output head.
    """

    reward: float = 1.8
    epochs: int = 10
    layers: int = 3
    hidden: int = 128
    learning_rate: float = 0.01
    batch_size: int = 16

    def __post_init__(self):
        if not 1.0 < self.reward <= 2.0:
            raise MiningError(f"reward must lie in (1, 2], got {self.reward}")
        if self.epochs < 1 or self.layers < 1 or self.hidden < 1 or self.batch_size < 1:
            raise MiningError("epochs, layers, hidden and batch_size must be positive")
        if not self.learning_rate > 0:
            raise MiningError("learning_rate must be positive")


@dataclass(eq=False)
class GamblerParams:
    tensors: dict[str, np.ndarray]
    input_dim: int
    outputs: int = 3

    @property
    def embed_dim(self) -> int:
        return self.input_dim // 2


def pair_features(anchors: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """``[anchor || candidate]`` on L2-normalized embeddings, one row per pair."""
    return np.concatenate([normalize_rows(anchors), normalize_rows(candidates)], axis=-1)


def init_mlp(input_dim: int, cfg: GamblerConfig, outputs: int, seed) -> GamblerParams:
    rng = np.random.default_rng(seed)
    t = {}
    width = input_dim
    for k in range(cfg.layers):
        t[f"l{k}.w"] = glorot(rng, width, cfg.hidden)
        t[f"l{k}.b"] = np.zeros(cfg.hidden)
        width = cfg.hidden
    t["out.w"] = glorot(rng, width, outputs)
    t["out.b"] = np.zeros(outputs)
    return GamblerParams(t, input_dim, outputs)


def _n_hidden(params: GamblerParams) -> int:
    return sum(1 for k in params.tensors if k.endswith(".w")) - 1


def _logits_nodes(graph: ComputationGraph, bound: dict, x, n_hidden: int):
    h = graph.input("x", x)
    for k in range(n_hidden):
        h = nx.relu(nx.matmul(h, bound[f"l{k}.w"]) + bound[f"l{k}.b"])
    return nx.matmul(h, bound["out.w"]) + bound["out.b"]


def mlp_probs(params: GamblerParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise MiningError(f"estimator expects inputs of width {params.input_dim}, got {x.shape}")
    h = x
    t = params.tensors
    for k in range(_n_hidden(params)):
        h = np.maximum(h @ t[f"l{k}.w"] + t[f"l{k}.b"], 0.0)
    z = h @ t["out.w"] + t["out.b"]
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def gambler_loss_values(probs: np.ndarray, labels: np.ndarray, reward: float) -> np.ndarray:
    """Per-sample ``-log(o * p_label + u)``; label 1 -> column 0, label 0 -> column 1, u -> column 2."""
    cls = np.where(labels == 1, 0, 1)
    return -np.log(probs[np.arange(len(labels)), cls] * reward + probs[:, 2])


@dataclass(frozen=True, eq=False)
class PairSamples:
    """Pooled training pairs: ``x`` rows are pair features, ``y`` the affinity labels."""

    x: np.ndarray
    y: np.ndarray

    @classmethod
    def from_triples(cls, triples) -> PairSamples:
        xs, ys = [], []
        for anchor, candidates, labels in triples:
            cand = np.asarray(candidates, dtype=np.float64)
            labels = np.asarray(labels)
            if len(labels) != len(cand):
                raise MiningError("labels and candidates differ in length")
            xs.append(pair_features(np.broadcast_to(anchor, cand.shape), cand))
            ys.append(labels)
        if not xs:
            raise MiningError("no training samples")
        y = np.concatenate(ys)
        if not np.all((y == 0) | (y == 1)):
            raise MiningError("affinity labels must be 0 or 1")
        return cls(np.concatenate(xs), y.astype(np.int64))


def _train_mlp(samples: PairSamples, cfg: GamblerConfig, seed, outputs: int, objective: str) -> GamblerParams:
    rng = np.random.default_rng(seed)
    params = init_mlp(samples.x.shape[1], cfg, outputs, rng)
    state = OptimizerState("sgd", cfg.learning_rate)
    n = len(samples.y)
    coef_col = np.where(samples.y == 1, 0, 1)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            g = ComputationGraph()
            bound = {k: g.param(k, v) for k, v in params.tensors.items()}
            probs = nx.softmax(_logits_nodes(g, bound, samples.x[idx], cfg.layers))
            coef = np.zeros((len(idx), outputs))
            if objective == "gambler":
                coef[np.arange(len(idx)), coef_col[idx]] = cfg.reward
                coef[:, 2] = 1.0
            else:
                coef[np.arange(len(idx)), coef_col[idx]] = 1.0
            picked = nx.sum_(nx.mul(probs, g.const(coef)), axis=1)
            if np.any(~(picked.value > 0)):
                bad = int(idx[np.flatnonzero(~(picked.value > 0))[0]])
                raise MiningError(f"non-finite estimator loss at sample {bad}")
            loss = nx.neg(nx.mean(nx.log(picked)))
            grads = nx.backward_grad(g, loss)
            optimizer_step(state, params.tensors, grads)
    return params


def train_gambler(samples, cfg: GamblerConfig = GamblerConfig(), seed=0) -> GamblerParams:
    """Train the extra-class estimator once over all pooled (anchor, candidate, label) samples.

    ``samples`` is a :class:`PairSamples` or an iterable of
    ``(anchor, candidates, labels)`` triples. Minibatch SGD, reshuffled each epoch.
    """
    if not isinstance(samples, PairSamples):
        samples = PairSamples.from_triples(samples)
    COUNTERS["gambler_train"] += 1
    return _train_mlp(samples, cfg, seed, 3, "gambler")


def train_classifier(samples, cfg: GamblerConfig = GamblerConfig(), seed=0) -> GamblerParams:
    """Same network without the abstention output, trained with cross-entropy."""
    if not isinstance(samples, PairSamples):
        samples = PairSamples.from_triples(samples)
    COUNTERS["classifier_train"] += 1
    return _train_mlp(samples, cfg, seed, 2, "ce")


def gambler_infer(params: GamblerParams, anchor, candidate) -> tuple[float, float, float]:
    """``(p_anchor_side, p_other, u)`` for one pair."""
    p = mlp_probs(params, pair_features(np.atleast_2d(anchor), np.atleast_2d(candidate)))[0]
    return float(p[0]), float(p[1]), float(p[2])


# --- uncertainty and weights ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class UncertaintyMatrix:
    """``values[i, c]`` is the uncertainty of candidate ``column_map[i, c]`` for anchor ``i``."""

    values: np.ndarray
    column_map: np.ndarray

    def __post_init__(self):
        n = self.values.shape[0]
        if self.values.shape != (n, n - 1) or self.column_map.shape != (n, n - 1):
            raise MiningError(f"uncertainty matrix must be N x (N-1), got {self.values.shape}")
        if np.any(self.values < 0) or np.any(self.values > 1) or not np.all(np.isfinite(self.values)):
            raise MiningError("uncertainties must lie in [0, 1]")

    @classmethod
    def from_values(cls, values) -> UncertaintyMatrix:
        values = np.asarray(values, dtype=np.float64)
        return cls(values, column_map(values.shape[0]))


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    values: np.ndarray
    alpha: float


def _pairs(batch: EmbeddingBatch) -> np.ndarray:
    n = batch.batch_size
    cols = column_map(n)
    anchors = np.repeat(batch.z_tilde, n - 1, axis=0)
    return pair_features(anchors, batch.z_hat[cols.ravel()])


def build_uncertainty_matrix(batch: EmbeddingBatch, params: GamblerParams) -> UncertaintyMatrix:
    n = batch.batch_size
    if batch.z_tilde.shape[1] != params.embed_dim:
        raise MiningError(f"estimator trained on width {params.embed_dim}, batch has {batch.z_tilde.shape[1]}")
    if params.outputs != 3:
        raise MiningError("uncertainty matrix needs the extra-class estimator")
    u = mlp_probs(params, _pairs(batch))[:, 2].reshape(n, n - 1)
    return UncertaintyMatrix(u, column_map(n))


def softmax_response(probs: np.ndarray) -> np.ndarray:
    """``2 (1 - max p)`` for 2-class probabilities, in ``[0, 1]``."""
    return np.clip(2.0 * (1.0 - np.max(probs, axis=-1)), 0.0, 1.0)


def predictive_entropy(probs: np.ndarray) -> np.ndarray:
    """Entropy in bits for 2-class probabilities, in ``[0, 1]``."""
    p = np.clip(probs, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(p > 0, p * np.log(p), 0.0).sum(axis=-1)
    return np.clip(h / np.log(2.0), 0.0, 1.0)


def centroid_distance_uncertainty(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """``1 - |d1 - d2| / (d1 + d2)``; a point at distance 0 from both gets 1."""
    d1 = np.linalg.norm(points - centroids[0], axis=-1)
    d2 = np.linalg.norm(points - centroids[1], axis=-1)
    total = d1 + d2
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(total > 0, 1.0 - np.abs(d1 - d2) / np.where(total > 0, total, 1.0), 1.0)
    return np.clip(u, 0.0, 1.0)


def alt_uncertainty(
    method: str,
    batch: EmbeddingBatch | None = None,
    params: GamblerParams | None = None,
    partitions: list[PartitionResult] | None = None,
) -> UncertaintyMatrix:
    """Uncertainty matrix from one of the ablation estimators.

    ``softmax_response``/``entropy`` need a 2-output classifier from
    :func:`train_classifier`; ``distance`` needs the batch's partitions.
    """
    if batch is None:
        raise MiningError("alt_uncertainty needs the embedding batch")
    n = batch.batch_size
    if method in ("softmax_response", "entropy"):
        if params is None or params.outputs != 2:
            raise MiningError(f"{method} needs a 2-class classifier")
        probs = mlp_probs(params, _pairs(batch))
        u = softmax_response(probs) if method == "softmax_response" else predictive_entropy(probs)
        return UncertaintyMatrix(u.reshape(n, n - 1), column_map(n))
    if method == "distance":
        if partitions is None or len(partitions) != n:
            raise MiningError("distance estimator needs one partition per anchor")
        cols = column_map(n)
        rows = [
            centroid_distance_uncertainty(normalize_rows(batch.z_hat[cols[i]]), partitions[i].centroids)
            for i in range(n)
        ]
        return UncertaintyMatrix(np.stack(rows), cols)
    raise MiningError(f"unknown estimator {method!r}")


def reciprocal_mean_alpha(us, delta_coef: float = 0.0) -> float:
    """``1 / (mean + delta_coef * std)`` over the pooled entries of ``us``."""
    pooled = np.concatenate([np.ravel(getattr(u, "values", u)) for u in us])
    mu, sd = float(pooled.mean()), float(pooled.std())
    denom = mu + delta_coef * sd
    if not denom > 0:
        raise MiningError(
            f"mean uncertainty {mu:.3g} (+ {delta_coef} std) is not positive; fall back to uniform weights"
        )
    return 1.0 / denom


def weights_from_uncertainty(
    U: UncertaintyMatrix, policy: str = "reciprocal_mean", alpha: float | None = None, delta_coef: float = 0.0
) -> WeightMatrix:
    """``w = alpha * u`` with ``alpha`` fixed or ``1 / (mean(U) + delta_coef * std(U))``."""
    if policy == "reciprocal_mean":
        a = reciprocal_mean_alpha([U], delta_coef)
    elif policy == "fixed":
        if alpha is None or not alpha > 0:
            raise MiningError("fixed policy needs a positive alpha")
        a = float(alpha)
    else:
        raise MiningError(f"unknown weight policy {policy!r}")
    return WeightMatrix(a * U.values, a)


ALPHA_SWEEP = (-1.0, -0.5, 0.0, 0.5, 1.0)


def alpha_grid(U, coefs=ALPHA_SWEEP) -> list[float]:
    """The sensitivity grid ``1 / (mu + c * sigma)`` for each coefficient ``c``."""
    return [reciprocal_mean_alpha([U], c) for c in coefs]


# --- batch-level driver -------------------------------------------------------------


@dataclass
class MiningOutcome:
    weights: list[WeightMatrix]
    uncertainties: list[UncertaintyMatrix]
    partitions: list[list[PartitionResult]]
    alpha: float
    degenerate_batches: list[int] = field(default_factory=list)
    estimator: GamblerParams | None = None


def is_degenerate(batch: EmbeddingBatch) -> bool:
    z = normalize_rows(batch.z_hat)
    return bool(np.all(z == z[0]))


def mine_batches(
    batches: list[EmbeddingBatch],
    kcfg: KMeansConfig = KMeansConfig(),
    gcfg: GamblerConfig = GamblerConfig(),
    estimator: str = "extra_class",
    policy: str = "reciprocal_mean",
    alpha: float | None = None,
    delta_coef: float = 0.0,
    alpha_scope: str = "global",
    seed=0,
) -> MiningOutcome:
    """Partition every batch, train one estimator on the pooled labels, and weight.

    Degenerate batches (all candidate embeddings identical) are skipped and
    receive uniform weights.
    """
    if estimator not in ESTIMATORS:
        raise MiningError(f"unknown estimator {estimator!r}")
    if alpha_scope not in ("global", "batch"):
        raise MiningError(f"alpha_scope must be 'global' or 'batch', got {alpha_scope!r}")
    rng = np.random.default_rng(seed)
    partitions: list[list[PartitionResult]] = []
    degenerate = []
    triples = []
    for b, batch in enumerate(batches):
        if is_degenerate(batch):
            log.warning("batch %d has identical embeddings; using uniform weights", b)
            degenerate.append(b)
            partitions.append([])
            continue
        parts = partition_batch(batch, kcfg, rng)
        partitions.append(parts)
        cols = column_map(batch.batch_size)
        triples.extend((batch.z_tilde[i], batch.z_hat[cols[i]], parts[i].labels) for i in range(batch.batch_size))

    live = [b for b in range(len(batches)) if b not in degenerate]
    if not live:
        log.warning("every batch is degenerate; training continues with plain InfoNCE")
        ones = [WeightMatrix(np.ones((x.batch_size, x.batch_size - 1)), 1.0) for x in batches]
        return MiningOutcome(ones, [], partitions, 1.0, degenerate)

    net = None
    if estimator == "extra_class":
        net = train_gambler(PairSamples.from_triples(triples), gcfg, rng)
    elif estimator in ("softmax_response", "entropy"):
        net = train_classifier(PairSamples.from_triples(triples), gcfg, rng)

    us: dict[int, UncertaintyMatrix] = {}
    for b in live:
        if estimator == "extra_class":
            us[b] = build_uncertainty_matrix(batches[b], net)
        else:
            us[b] = alt_uncertainty(estimator, batches[b], net, partitions[b])

    weights = []
    if policy == "fixed":
        global_alpha = float(alpha) if alpha is not None else 1.0
    else:
        global_alpha = reciprocal_mean_alpha(list(us.values()), delta_coef)
    for b, batch in enumerate(batches):
        if b not in us:
            weights.append(WeightMatrix(np.ones((batch.batch_size, batch.batch_size - 1)), 1.0))
        elif policy == "fixed":
            weights.append(weights_from_uncertainty(us[b], "fixed", global_alpha))
        elif alpha_scope == "batch":
            weights.append(weights_from_uncertainty(us[b], "reciprocal_mean", delta_coef=delta_coef))
        else:
            weights.append(weights_from_uncertainty(us[b], "fixed", global_alpha))
    return MiningOutcome(weights, [us[b] for b in live], partitions, global_alpha, degenerate, net)


def reweight(batches: list[EmbeddingBatch], estimator: GamblerParams, alpha: float) -> list[WeightMatrix]:
    """Re-infer weights for fresh embeddings with an already trained estimator."""
    return [
        weights_from_uncertainty(build_uncertainty_matrix(b, estimator), "fixed", alpha)
        if not is_degenerate(b)
        else WeightMatrix(np.ones((b.batch_size, b.batch_size - 1)), 1.0)
        for b in batches
    ]


def pairwise_brute_force_sse(points: np.ndarray) -> tuple[float, np.ndarray]:
    """Optimal 2-partition SSE by enumeration (small inputs only)."""
    m = len(points)
    best, best_labels = np.inf, None
    for bits in itertools.product((0, 1), repeat=m - 1):
        labels = np.array((0,) + bits)
        if labels.min() == labels.max():
            continue
        s = partition_sse(points, labels)
        if s < best:
            best, best_labels = s, labels
    return best, best_labels
