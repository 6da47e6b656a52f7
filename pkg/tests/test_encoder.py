import numpy as np
import pytest

from augcl import numerics as nx
from augcl.encoder import (
    EmbeddingBatch,
    EncoderConfig,
    EncoderError,
    EncoderParams,
    bind,
    embed,
    encode_nodes,
    encode_views,
    gin_forward,
    project,
    readout,
)
from augcl.graphs import Graph, GraphCollection, SyntheticSpec, batch_graphs, gen_synthetic, merge_graphs
from augcl.losses import ContrastiveConfig, contrastive_nodes
from augcl.numerics import ComputationGraph, backward_grad, forward_eval
from tests.oracles import central_diff, rel_err


def small(seed=0, **kw):
    return gen_synthetic(SyntheticSpec(graphs_per_class=3, nodes=6, **kw), seed)


def params_for(coll, seed=0, **kw):
    return EncoderParams.init(EncoderConfig(coll.feature_dim, hidden=8, layers=2, proj_dim=5, **kw), seed)


def test_no_edges_nodes_independent():
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    p = EncoderParams.init(EncoderConfig(2, hidden=4, layers=2), 0)
    joint = gin_forward(merge_graphs([Graph(2, np.zeros((0, 2)), x)]), p)
    alone = [gin_forward(merge_graphs([Graph(1, np.zeros((0, 2)), x[i : i + 1])]), p) for i in range(2)]
    assert np.allclose(joint, np.vstack(alone), rtol=0, atol=1e-13)


def test_single_edge_hand_evaluation():
    cfg = EncoderConfig(2, hidden=2, layers=2, proj_dim=2)
    p = EncoderParams.init(cfg, 0)
    for layer in range(2):
        p.tensors[f"gin.{layer}.w1"] = np.eye(2)
        p.tensors[f"gin.{layer}.w2"] = np.eye(2)
    x = np.array([[1.0, -2.0], [0.5, 3.0]])
    h = x
    for _ in range(2):
        h = np.maximum(h + h[::-1], 0.0)
    out = gin_forward(merge_graphs([Graph(2, np.array([[0, 1]]), x)]), p)
    assert np.array_equal(out, h)


def test_isomorphic_graphs_same_multiset():
    coll = small()
    g = coll[0]
    perm = np.random.default_rng(0).permutation(g.node_count)
    inv = np.argsort(perm)
    h = Graph(g.node_count, np.sort(inv[g.edges], axis=1), g.features[perm])
    p = params_for(coll)
    out = gin_forward(merge_graphs([g, h]), p)
    a, b = out[: g.node_count], out[g.node_count :]
    assert np.allclose(np.sort(a, axis=0), np.sort(b, axis=0), atol=1e-12)


@pytest.mark.parametrize("mode", ["sum", "mean"])
def test_permutation_invariance_of_readout(mode):
    coll = small(seed=4)
    p = params_for(coll, readout=mode)
    for g in coll:
        perm = np.random.default_rng(1).permutation(g.node_count)
        inv = np.argsort(perm)
        h = Graph(g.node_count, np.sort(inv[g.edges], axis=1), g.features[perm])
        a = embed(merge_graphs([g]), p)
        b = embed(merge_graphs([h]), p)
        assert np.max(np.abs(a - b)) <= 1e-10


def test_readout_examples():
    assert readout(np.array([[1.0, 2.0], [3.0, 4.0]]), [0, 0]).tolist() == [[4.0, 6.0]]
    assert readout(np.array([[2.0, 5.0]]), [0]).tolist() == [[2.0, 5.0]]
    assert readout(np.array([[1.0, 2.0], [1.0, 2.0]]), [0, 0], "mean").tolist() == [[1.0, 2.0]]
    with pytest.raises(EncoderError):
        readout(np.ones((2, 2)), [0])


def test_projection_examples():
    p = EncoderParams.init(EncoderConfig(3, hidden=3, layers=1, proj_dim=3), 0)
    for k in ("proj.w1", "proj.w2", "proj.b1", "proj.b2"):
        p.tensors[k] = np.zeros_like(p.tensors[k])
    x = np.array([[1.0, -1.0, 2.0]])
    assert np.array_equal(project(x, p), np.zeros((1, 3)))
    p.tensors["proj.w1"] = np.eye(3)
    p.tensors["proj.w2"] = np.eye(3)
    assert np.array_equal(project(x, p), np.maximum(x, 0))
    with pytest.raises(EncoderError):
        project(np.ones((1, 4)), p)


def test_encode_views_contracts():
    coll = small()
    p = params_for(coll)
    b = batch_graphs(coll, range(4))
    e = encode_views(b, b, p)
    assert np.array_equal(e.z_tilde, e.z_hat) and e.z_tilde.shape == (4, 5)
    order = [2, 0, 3, 1]
    shuffled = encode_views(batch_graphs(coll, order), batch_graphs(coll, order), p)
    assert np.allclose(shuffled.z_tilde, e.z_tilde[order], atol=1e-12)
    with pytest.raises(EncoderError):
        encode_views(b, batch_graphs(coll, range(3)), p)


def test_width_mismatch():
    coll = small()
    p = EncoderParams.init(EncoderConfig(coll.feature_dim + 1), 0)
    with pytest.raises(EncoderError):
        gin_forward(batch_graphs(coll, [0]), p)


def test_concat_layers_width():
    coll = small()
    p = params_for(coll, concat_layers=True)
    assert embed(batch_graphs(coll, [0, 1]), p).shape == (2, 16)


def test_shared_parameters_affect_both_views():
    coll = small()
    p = params_for(coll)
    b1, b2 = batch_graphs(coll, [0, 1]), batch_graphs(coll, [2, 3])
    before = encode_views(b1, b2, p)
    p.tensors["proj.b2"] = p.tensors["proj.b2"] + 1.0
    after = encode_views(b1, b2, p)
    assert np.allclose(after.z_tilde - before.z_tilde, 1.0) and np.allclose(after.z_hat - before.z_hat, 1.0)


def test_checkpoint_reconstruction(tmp_path):
    from augcl.numerics import checkpoint

    coll = small()
    p = params_for(coll, concat_layers=True)
    checkpoint.save(tmp_path / "e.augt", p.tensors)
    q = EncoderParams.from_tensors(checkpoint.load(tmp_path / "e.augt"))
    assert q.config == p.config
    with pytest.raises(EncoderError):
        EncoderParams.from_tensors({"x": np.ones(2)})


def test_embedding_batch_validation():
    with pytest.raises(EncoderError):
        EmbeddingBatch(np.ones((2, 3)), np.ones((3, 3)))
    with pytest.raises(EncoderError):
        EmbeddingBatch(np.array([[np.nan]]), np.array([[1.0]]))


@pytest.mark.parametrize("seed", range(3))
def test_end_to_end_gradients(seed):
    coll = small(seed=seed)
    p = params_for(coll, seed=seed)
    rng = np.random.default_rng(seed)
    g = ComputationGraph()
    bound = bind(g, p)
    # keep relu pre-activations off their kinks
    v1, v2 = batch_graphs(coll, [0, 1, 2, 3]), batch_graphs(coll, [1, 2, 3, 4])
    z1, z2 = encode_nodes(g, bound, v1, v2, p.config)
    loss = contrastive_nodes(g, z1, z2, ContrastiveConfig(0.5), rng.uniform(0.5, 2.0, size=(4, 3))).named("loss")
    grads = backward_grad(g, loss)
    for name in ("gin.0.w1", "gin.1.eps", "proj.w2", "proj.b1"):
        x = p.tensors[name].copy()
        num = central_diff(lambda: float(forward_eval(g, {name: x})["loss"]), x)
        forward_eval(g, {name: p.tensors[name]})
        assert rel_err(grads[name], num) <= 1e-4, name
