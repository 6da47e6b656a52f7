"""Contrastive objectives: InfoNCE, its hardness-weighted variant, and the
adaptive-margin triplet diagnostic.

Weight matrices are ``N x (N-1)``: row ``i`` lists negatives ``j != i`` in
ascending ``j`` order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from augcl import numerics as nx
from augcl.encoder import EmbeddingBatch
from augcl.numerics import ComputationGraph, Node

U_FLOOR = 1e-6


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.2
    symmetric: bool = False

    def __post_init__(self):
        if not self.temperature > 0:
            raise LossError("temperature must be positive")


def column_map(n: int) -> np.ndarray:
    """``cols[i]`` = candidate indices for anchor ``i`` (all ``j != i``, ascending)."""
    full = np.tile(np.arange(n), (n, 1))
    return full[~np.eye(n, dtype=bool)].reshape(n, n - 1)


def expand_offdiag(w: np.ndarray) -> np.ndarray:
    """``N x (N-1)`` -> ``N x N`` with a zero diagonal."""
    n = w.shape[0]
    if w.shape != (n, n - 1):
        raise LossError(f"weight matrix must be N x (N-1), got {w.shape}")
    full = np.zeros((n, n))
    full[~np.eye(n, dtype=bool)] = w.ravel()
    return full


def offdiag(m: np.ndarray) -> np.ndarray:
    n = m.shape[0]
    return m[~np.eye(n, dtype=bool)].reshape(n, n - 1)


def _weights_array(weights, n: int) -> np.ndarray:
    w = np.asarray(getattr(weights, "values", weights), dtype=np.float64)
    if w.shape != (n, n - 1):
        raise LossError(f"weights shape {w.shape} does not match batch size {n} (expected {(n, n - 1)})")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise LossError("weights must be finite and non-negative")
    return w


def cosine_sim(a, b) -> float:
    """Cosine similarity; a zero vector has similarity 0 with anything."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _one_direction(graph: ComputationGraph, sim: Node, w_full: np.ndarray) -> Node:
    n = sim.shape[0]
    shift = sim.value.max(axis=1)
    eye = graph.const(np.eye(n))
    e = nx.exp(nx.sub(sim, graph.const(shift[:, None])))
    pos_logit = nx.sum_(nx.mul(sim, eye), axis=1)
    pos = nx.sum_(nx.mul(e, eye), axis=1)
    neg = nx.sum_(nx.mul(e, graph.const(w_full)), axis=1)
    per_anchor = nx.log(pos + neg) - (pos_logit - graph.const(shift))
    return nx.mean(per_anchor)


def contrastive_nodes(
    graph: ComputationGraph, z1: Node, z2: Node, cfg: ContrastiveConfig, weights: np.ndarray | None = None
) -> Node:
    """Mean (weighted) InfoNCE with view-1 anchors against view-2 candidates.

    ``weights`` is ``N x (N-1)`` and enters as a constant; ``None`` means all ones.
    With ``cfg.symmetric`` the view-2 -> view-1 direction is averaged in, reusing
    ``w[i, j]`` for anchor ``i`` and negative ``j``.
    """
    n = z1.shape[0]
    if n < 2:
        raise LossError("contrastive loss needs at least 2 instances (one negative)")
    w = np.ones((n, n - 1)) if weights is None else _weights_array(weights, n)
    w_full = expand_offdiag(w)
    a = nx.l2_normalize(z1)
    b = nx.l2_normalize(z2)
    sim = nx.mul(nx.matmul(a, nx.transpose(b)), graph.const(1.0 / cfg.temperature))
    loss = _one_direction(graph, sim, w_full)
    if cfg.symmetric:
        back = _one_direction(graph, nx.transpose(sim), w_full)
        loss = nx.mul(loss + back, graph.const(0.5))
    return loss


def _batch_loss(batch: EmbeddingBatch, cfg: ContrastiveConfig, weights) -> float:
    g = ComputationGraph()
    z1 = g.input("z_tilde", batch.z_tilde)
    z2 = g.input("z_hat", batch.z_hat)
    return float(contrastive_nodes(g, z1, z2, cfg, weights).value)


def info_nce(batch: EmbeddingBatch, cfg: ContrastiveConfig = ContrastiveConfig()) -> float:
    return _batch_loss(batch, cfg, None)


def augcl_loss(batch: EmbeddingBatch, weights, cfg: ContrastiveConfig = ContrastiveConfig()) -> float:
    return _batch_loss(batch, cfg, _weights_array(weights, batch.batch_size))


def loss_and_grads(batch: EmbeddingBatch, cfg: ContrastiveConfig, weights=None):
    """Loss plus gradients w.r.t. both embedding matrices."""
    g = ComputationGraph()
    z1 = g.param("z_tilde", batch.z_tilde)
    z2 = g.param("z_hat", batch.z_hat)
    loss = contrastive_nodes(g, z1, z2, cfg, weights)
    grads = nx.backward_grad(g, loss)
    return float(loss.value), grads["z_tilde"], grads["z_hat"]


# --- margin diagnostic ---------------------------------------------------------------


def adaptive_margin(u, alpha, cfg: ContrastiveConfig = ContrastiveConfig()):
    """``(tau / 2) * ln(alpha * u)`` with ``u`` clamped to ``[1e-6, 1]``."""
    if np.any(np.asarray(alpha) <= 0):
        raise LossError("alpha must be positive")
    u = np.clip(np.asarray(u, dtype=np.float64), U_FLOOR, 1.0)
    m = 0.5 * cfg.temperature * np.log(np.asarray(alpha, dtype=np.float64) * u)
    return float(m) if np.ndim(m) == 0 else m


@dataclass(frozen=True, eq=False)
class MarginDiagnostic:
    margins: np.ndarray
    z_tilde_n: np.ndarray
    z_hat_n: np.ndarray
    triplet_value: float
    satisfied: np.ndarray

    @property
    def fraction_satisfied(self) -> float:
        return float(self.satisfied.mean())


def _normalize_rows(z: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(z, axis=1, keepdims=True)
    return np.where(n > 0, z / np.where(n > 0, n, 1.0), 0.0)


def triplet_surrogate(batch: EmbeddingBatch, weights, cfg: ContrastiveConfig = ContrastiveConfig()) -> MarginDiagnostic:
    """Triplet form of the weighted loss with margins ``m_ij = (tau/2) ln(alpha u_ij)``.

    ``weights`` must carry ``alpha`` (a :class:`~augcl.mining.WeightMatrix`) or be a
    plain array of ``alpha * u`` products. The value is averaged over anchors.
    """
    n = batch.batch_size
    w = _weights_array(weights, n)
    alpha = float(getattr(weights, "alpha", 1.0))
    u = w / alpha
    margins = adaptive_margin(u, alpha, cfg)
    a = _normalize_rows(batch.z_tilde)
    b = _normalize_rows(batch.z_hat)
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    d_pos = np.diag(d)[:, None]
    d_neg = offdiag(d)
    terms = d_pos - d_neg + margins
    value = float((terms.sum(axis=1) / (2.0 * cfg.temperature)).mean())
    return MarginDiagnostic(margins, a, b, value, d_pos < d_neg - margins)
