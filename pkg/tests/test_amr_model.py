from __future__ import annotations

import math

import numpy as np
import pytest

from tailkg.amr import parse_penman, reify
from tailkg.amr.graph import ReifiedGraph
from tailkg.amr.model import (
    UNK,
    DimensionMismatch,
    ErpInput,
    Hyper,
    ModelFormatError,
    RankerModel,
    ama_forward,
    encode_pairs,
    encode_question,
    gat_forward,
    graph_tokens,
    loss_and_grads,
    loss_only,
    node_token,
    score_pairs,
    tokenize,
)
from tailkg.core import EntityRef, RelationRef

ENT = EntityRef("Q1", "Aldo Vessari")
R1 = RelationRef("P19", "place of birth")
R2 = RelationRef("P108", "employer")
AMR = parse_penman('(b / bear-02 :ARG1 (p / person :name (n / name :op1 "Aldo")) :location (a / amr-unknown))')


def test_tokenization():
    assert tokenize("[TEXT] Where was Aldo born? [ENT] Aldo") == ["[TEXT]", "where", "was", "aldo", "born", "[ENT]", "aldo"]
    assert node_token("bear-02", "concept") == "bear"
    assert node_token('"Aldo"', "concept") == "aldo"
    assert node_token("ARG1", "relation") == ":arg1"
    assert ErpInput("q", ENT, R1).rendered == "[TEXT] q [ENT] Aldo Vessari [REL] place of birth"


def _model(d=4, heads=2, layers=2, seed=0, zero_head=True, extra=()):
    toks = graph_tokens(reify(AMR)) + ErpInput("where was aldo born", ENT, R1).tokens() + ["employer", *extra]
    return RankerModel.initialize(toks, Hyper(d, heads, layers, 8), seed=seed, zero_head=zero_head)


def test_hyper_validation():
    with pytest.raises(DimensionMismatch):
        Hyper(d=6, heads=4)


def test_encode_pairs_shape_and_determinism():
    m = _model()
    pairs = [ErpInput("where was aldo born", ENT, R1)] * 2 + [ErpInput("where was aldo born", ENT, R2)]
    X = encode_pairs(pairs, m)
    assert X.shape == (3, 4)
    assert np.array_equal(X[0], X[1]) and not np.array_equal(X[0], X[2])


# ---------------------------------------------------------------- GAT


def _leaky(x, slope):
    return x if x > 0 else slope * x


def _scalar_gat_layer(H, W, a_src, a_dst, nbrs, slope):
    n, d = len(H), len(W)
    Z = [[sum(H[i][k] * W[k][j] for k in range(d)) for j in range(d)] for i in range(n)]
    out = []
    for i in range(n):
        scores = {j: _leaky(sum(a_dst[k] * Z[i][k] for k in range(d)) + sum(a_src[k] * Z[j][k] for k in range(d)), slope) for j in nbrs[i]}
        mx = max(scores.values())
        w = {j: math.exp(s - mx) for j, s in scores.items()}
        tot = sum(w.values())
        out.append([sum(w[j] / tot * Z[j][k] for j in nbrs[i]) for k in range(d)])
    return out


def test_gat_three_node_path_matches_scalar_oracle():
    rg = ReifiedGraph((("x", "alpha", "concept"), ("y", "beta", "concept"), ("z", "gamma", "concept")), (("x", "y"), ("y", "z")), "x")
    m = RankerModel.initialize(["alpha", "beta", "gamma"], Hyper(2, 1, 1, 2), seed=0)
    P = m.params
    P["emb"][m.index["alpha"]] = [1.0, 0.0]
    P["emb"][m.index["beta"]] = [0.0, 1.0]
    P["emb"][m.index["gamma"]] = [1.0, -1.0]
    P["gat0_w"][:] = [[0.5, -0.2], [0.3, 0.8]]
    P["gat0_src"][:] = [0.7, -0.4]
    P["gat0_dst"][:] = [-0.1, 0.9]
    got = gat_forward(rg, m)
    H = [[1.0, 0.0], [0.0, 1.0], [1.0, -1.0]]
    nbrs = {0: [0, 1], 1: [0, 1, 2], 2: [1, 2]}
    want = _scalar_gat_layer(H, P["gat0_w"].tolist(), P["gat0_src"].tolist(), P["gat0_dst"].tolist(), nbrs, 0.2)
    assert np.allclose(got, want, atol=1e-12, rtol=0)


def test_gat_isolated_node_and_permutation():
    m = _model(d=4, heads=2, layers=2, seed=3)
    single = reify(parse_penman("(b / bear-02)"))
    h = m.params["emb"][m.index["bear"]]
    z = h @ m.params["gat0_w"]
    elu = np.where(z > 0, z, np.expm1(np.minimum(z, 0)))
    assert np.allclose(gat_forward(single, m)[0], elu @ m.params["gat1_w"], atol=1e-12)

    rg = reify(AMR)
    base = gat_forward(rg, m)
    order = list(np.random.default_rng(1).permutation(rg.n))
    perm = gat_forward(rg.permuted(order), m)
    assert np.max(np.abs(perm - base[order])) < 1e-9


# ---------------------------------------------------------------- AMA


def test_ama_two_by_two_scalar_oracle():
    m = RankerModel.initialize([], Hyper(2, 1, 1, 2), seed=0)
    for k in ("ama_wq", "ama_wk", "ama_wv"):
        m.params[k][0] = np.eye(2)
    m.params["ama_wo"][:] = np.eye(2)
    Q = [[1.0, 2.0], [0.5, -1.0]]
    K = [[0.3, 0.1], [-0.2, 0.4]]
    V = [[1.0, 0.0], [2.0, 3.0]]
    want = []
    for q in Q:
        s = [(q[0] * k[0] + q[1] * k[1]) / math.sqrt(2) for k in K]
        e = [math.exp(x) for x in s]
        a = [x / sum(e) for x in e]
        want.append([a[0] * V[0][c] + a[1] * V[1][c] for c in range(2)])
    got, att = ama_forward(np.array(Q), np.array(K), np.array(V), m, return_attention=True)
    assert np.max(np.abs(got - np.array(want))) < 1e-9
    assert np.max(np.abs(att[0].sum(axis=1) - 1)) < 1e-9


def test_ama_properties():
    m = _model(d=4, heads=2, seed=5)
    rng = np.random.default_rng(0)
    Q, K, V = rng.normal(size=(3, 4)), rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    out, att = ama_forward(Q, K, V, m, return_attention=True)
    assert all(np.max(np.abs(a.sum(axis=1) - 1)) < 1e-9 for a in att)
    perm = rng.permutation(5)
    assert np.max(np.abs(ama_forward(Q, K[perm], V[perm], m) - out)) < 1e-9
    one = ama_forward(Q, K[:1], V[:1], m)
    P = m.params
    vrow = np.concatenate([V[:1] @ P["ama_wv"][h] for h in range(2)], axis=1)
    assert np.array_equal(one, np.repeat(vrow, 3, axis=0) @ P["ama_wo"])
    with pytest.raises(DimensionMismatch):
        ama_forward(Q, K[:, :3], V, m)
    with pytest.raises(DimensionMismatch):
        ama_forward(Q, K[:0], V[:0], m)


# ---------------------------------------------------------------- scorer


def test_zero_head_gives_half_and_duplicates_match():
    m = _model()
    pairs = [(ENT, R1), (ENT, R2), (ENT, R1)]
    assert score_pairs("where was aldo born", AMR, pairs, m) == [0.5, 0.5, 0.5]
    m2 = _model(zero_head=False)
    s = score_pairs("where was aldo born", AMR, pairs, m2)
    assert s[0] == s[2] and s[0] != s[1] and all(0 < x < 1 for x in s)


def test_unused_embedding_rows_have_zero_gradient():
    m = _model(zero_head=False, extra=("unused",))
    q = encode_question(m, "where was aldo born", AMR, [(ENT, R1), (ENT, R2)], [1, 0])
    _, grads = loss_and_grads(m, [q])
    row = m.index["unused"]
    assert not grads["emb"][row].any()
    before = loss_only(m, [q])
    m.params["emb"][row] += 1e-5
    assert loss_only(m, [q]) == before


def test_save_load_round_trip(tmp_path):
    m = _model(zero_head=False)
    m.save(tmp_path / "m.bin")
    back = RankerModel.load(tmp_path / "m.bin")
    assert back.digest() == m.digest() and back.vocab == m.vocab and back.hyper == m.hyper
    assert back.vocab[0] == UNK
    data = (tmp_path / "m.bin").read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"NOTAMODEL" + data[9:])
    with pytest.raises(ModelFormatError):
        RankerModel.load(tmp_path / "bad.bin")
    (tmp_path / "long.bin").write_bytes(data + b"\0" * 8)
    with pytest.raises(ModelFormatError):
        RankerModel.load(tmp_path / "long.bin")
    with pytest.raises(DimensionMismatch):
        RankerModel(m.vocab, Hyper(8, 2, 2, 8), m.params)
