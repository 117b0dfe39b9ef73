"""AMR-aware entity-relation pair scorer, in numpy with hand-written gradients.

Pipeline for one question with ``m`` candidate pairs and a reified AMR graph
of ``n`` nodes:

    Q  = meanpool(emb[pair tokens]) @ erp_w + erp_b             (m, d)
    E  = GAT_L(... GAT_1(emb[node tokens]))                     (n, d)
    C  = AMA(Q, E, E)                                           (m, d)
    p  = sigmoid(tanh([Q, C] @ w1 + b1) @ w2 + b2)              (m,)

GAT layers are single-head with LeakyReLU attention logits, self-loops and
ELU between layers. AMA is multi-head scaled dot-product attention with
per-head projections followed by an output projection.
"""
from __future__ import annotations

import hashlib
import json
import re
import string
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from tailkg.amr.graph import AmrGraph, ReifiedGraph, reify
from tailkg.core import EntityRef, RelationRef, TailKGError

UNK = "[UNK]"
MARKERS = ("[TEXT]", "[ENT]", "[REL]")
_MAGIC = b"TAILKGRM"
_FORMAT_VERSION = 1
_SENSE = re.compile(r"-\d+$")
_STRIP = string.punctuation + "“”‘’«»…"


class DimensionMismatch(TailKGError, ValueError):
    pass


class ModelFormatError(TailKGError, ValueError):
    pass


# --------------------------------------------------------------------------
# Tokenization
# --------------------------------------------------------------------------


def tokenize(text: str) -> list[str]:
    """Whitespace split + lowercasing; markers stay atomic, edge punctuation is dropped."""
    out = []
    for raw in text.split():
        if raw in MARKERS:
            out.append(raw)
            continue
        tok = raw.lower().strip(_STRIP)
        if tok:
            out.append(tok)
    return out


@dataclass(frozen=True)
class ErpInput:
    query: str
    entity: EntityRef
    relation: RelationRef

    @property
    def rendered(self) -> str:
        return f"[TEXT] {self.query} [ENT] {self.entity.label} [REL] {self.relation.text}"

    def tokens(self) -> list[str]:
        return tokenize(self.rendered)


def node_token(label: str, kind: str) -> str:
    if kind == "relation":
        return ":" + label.lower()
    tok = label.strip('"').lower()
    tok = _SENSE.sub("", tok) if not label.startswith('"') else tok
    return tok or UNK


def graph_tokens(rg: ReifiedGraph) -> list[str]:
    return [node_token(label, kind) for _, label, kind in rg.nodes]


def _as_reified(g: AmrGraph | ReifiedGraph) -> ReifiedGraph:
    return g if isinstance(g, ReifiedGraph) else reify(g)


def _as_erp(query: str, pairs: Sequence[ErpInput | tuple[EntityRef, RelationRef]]) -> list[ErpInput]:
    return [p if isinstance(p, ErpInput) else ErpInput(query, p[0], p[1]) for p in pairs]


# --------------------------------------------------------------------------
# Model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Hyper:
    d: int = 64
    heads: int = 4
    layers: int = 2
    mlp_hidden: int = 64
    leaky_slope: float = 0.2

    def __post_init__(self) -> None:
        if self.d % self.heads:
            raise DimensionMismatch(f"d={self.d} not divisible by heads={self.heads}")
        if min(self.d, self.heads, self.layers, self.mlp_hidden) < 1:
            raise ValueError("dimensions must be positive")

    @property
    def dk(self) -> int:
        return self.d // self.heads


def param_shapes(hp: Hyper, vocab_size: int) -> dict[str, tuple[int, ...]]:
    d, h, dk = hp.d, hp.heads, hp.dk
    shapes: dict[str, tuple[int, ...]] = {"emb": (vocab_size, d), "erp_w": (d, d), "erp_b": (d,)}
    for l in range(hp.layers):
        shapes[f"gat{l}_w"] = (d, d)
        shapes[f"gat{l}_src"] = (d,)
        shapes[f"gat{l}_dst"] = (d,)
    shapes.update(
        ama_wq=(h, d, dk),
        ama_wk=(h, d, dk),
        ama_wv=(h, d, dk),
        ama_wo=(d, d),
        mlp_w1=(2 * d, hp.mlp_hidden),
        mlp_b1=(hp.mlp_hidden,),
        mlp_w2=(hp.mlp_hidden,),
        mlp_b2=(1,),
    )
    return shapes


class RankerModel:
    """Parameters, vocabulary and hyperparameters of the scorer."""

    def __init__(self, vocab: Sequence[str], hyper: Hyper, params: dict[str, np.ndarray]):
        self.vocab = list(vocab)
        if self.vocab[:1] != [UNK]:
            raise ValueError("vocabulary must start with the UNK token")
        self.index = {tok: i for i, tok in enumerate(self.vocab)}
        self.hyper = hyper
        shapes = param_shapes(hyper, len(self.vocab))
        if set(params) != set(shapes):
            raise DimensionMismatch(f"parameter names {sorted(params)} != {sorted(shapes)}")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise DimensionMismatch(f"{name}: shape {params[name].shape} != {shape}")
            if not np.all(np.isfinite(params[name])):
                raise ValueError(f"{name} has non-finite entries")
        self.params = {name: np.asarray(params[name], dtype=np.float64) for name in shapes}

    @classmethod
    def initialize(
        cls,
        tokens: Iterable[str],
        hyper: Hyper = Hyper(),
        seed: int = 0,
        zero_head: bool = True,
    ) -> "RankerModel":
        vocab = [UNK, *MARKERS]
        seen = set(vocab)
        for t in tokens:
            if t not in seen:
                seen.add(t)
                vocab.append(t)
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in param_shapes(hyper, len(vocab)).items():
            if name == "emb":
                params[name] = rng.normal(0.0, 1.0, shape)
            elif name.endswith("_b") or name in ("mlp_b1", "mlp_b2"):
                params[name] = np.zeros(shape)
            elif name == "mlp_w2" and zero_head:
                params[name] = np.zeros(shape)
            else:
                fan_in = shape[-2] if len(shape) >= 2 else shape[0]
                params[name] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), shape)
        return cls(vocab, hyper, params)

    def copy(self) -> "RankerModel":
        return RankerModel(self.vocab, self.hyper, {k: v.copy() for k, v in self.params.items()})

    def ids(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.index.get(t, 0) for t in tokens], dtype=np.int64)

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in param_shapes(self.hyper, len(self.vocab)):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return h.hexdigest()

    # ------------------------------------------------------------------
    # Persistence: magic, u32 version, u32 header length, JSON header, raw float64 arrays
    # ------------------------------------------------------------------

    def save(self, path: str | Path) -> None:
        names = list(param_shapes(self.hyper, len(self.vocab)))
        header = {
            "hyper": {
                "d": self.hyper.d,
                "heads": self.hyper.heads,
                "layers": self.hyper.layers,
                "mlp_hidden": self.hyper.mlp_hidden,
                "leaky_slope": self.hyper.leaky_slope,
            },
            "vocab": self.vocab,
            "params": [{"name": n, "shape": list(self.params[n].shape)} for n in names],
        }
        blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
        with Path(path).open("wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<II", _FORMAT_VERSION, len(blob)))
            fh.write(blob)
            for n in names:
                fh.write(np.ascontiguousarray(self.params[n], dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "RankerModel":
        data = Path(path).read_bytes()
        if data[: len(_MAGIC)] != _MAGIC:
            raise ModelFormatError(f"{path}: not a ranker model file")
        off = len(_MAGIC)
        version, hlen = struct.unpack_from("<II", data, off)
        if version != _FORMAT_VERSION:
            raise ModelFormatError(f"{path}: unsupported model format version {version}")
        off += 8
        header = json.loads(data[off:off + hlen].decode("utf-8"))
        off += hlen
        hyper = Hyper(**header["hyper"])
        expected = param_shapes(hyper, len(header["vocab"]))
        params = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            if expected.get(entry["name"]) != shape:
                raise ModelFormatError(f"{path}: header shape for {entry['name']} disagrees with dimensions")
            size = int(np.prod(shape)) * 8
            params[entry["name"]] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=off).reshape(shape).copy()
            off += size
        if off != len(data):
            raise ModelFormatError(f"{path}: {len(data) - off} trailing bytes")
        return cls(header["vocab"], hyper, params)


# --------------------------------------------------------------------------
# Numerics
# --------------------------------------------------------------------------


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax_rows(s: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    if mask is not None:
        s = np.where(mask, s, -np.inf)
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def _softmax_backward(a: np.ndarray, da: np.ndarray) -> np.ndarray:
    return a * (da - (da * a).sum(axis=1, keepdims=True))


def _elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _elu_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


# --------------------------------------------------------------------------
# Forward / backward
# --------------------------------------------------------------------------


@dataclass
class EncodedQuestion:
    node_ids: np.ndarray
    adjacency: np.ndarray
    pair_ids: list[np.ndarray]
    labels: np.ndarray | None = None

    @property
    def m(self) -> int:
        return len(self.pair_ids)


def encode_question(
    model: RankerModel,
    query: str,
    amr: AmrGraph | ReifiedGraph,
    pairs: Sequence[ErpInput | tuple[EntityRef, RelationRef]],
    labels: Sequence[int] | None = None,
) -> EncodedQuestion:
    rg = _as_reified(amr)
    erps = _as_erp(query, pairs)
    return EncodedQuestion(
        node_ids=model.ids(graph_tokens(rg)),
        adjacency=rg.adjacency(self_loops=True),
        pair_ids=[model.ids(p.tokens()) for p in erps],
        labels=None if labels is None else np.asarray(labels, dtype=np.float64),
    )


def _erp_forward(P, pair_ids):
    X = np.stack([P["emb"][ids].mean(axis=0) if len(ids) else np.zeros(P["emb"].shape[1]) for ids in pair_ids])
    return X, X @ P["erp_w"] + P["erp_b"]


def _gat_forward(P, hp: Hyper, H: np.ndarray, adj: np.ndarray):
    caches = []
    for l in range(hp.layers):
        W, a_src, a_dst = P[f"gat{l}_w"], P[f"gat{l}_src"], P[f"gat{l}_dst"]
        Z = H @ W
        G = (Z @ a_dst)[:, None] + (Z @ a_src)[None, :]
        A = softmax_rows(np.where(G > 0, G, hp.leaky_slope * G), adj)
        Hn = A @ Z
        caches.append((H, Z, G, A, Hn))
        H = _elu(Hn) if l < hp.layers - 1 else Hn
    return H, caches


def _gat_backward(P, hp: Hyper, caches, dH: np.ndarray, grads):
    for l in reversed(range(hp.layers)):
        H, Z, G, A, Hn = caches[l]
        W, a_src, a_dst = P[f"gat{l}_w"], P[f"gat{l}_src"], P[f"gat{l}_dst"]
        dHn = dH * _elu_grad(Hn) if l < hp.layers - 1 else dH
        dA = dHn @ Z.T
        dZ = A.T @ dHn
        dG = _softmax_backward(A, dA) * np.where(G > 0, 1.0, hp.leaky_slope)
        ds_dst = dG.sum(axis=1)
        ds_src = dG.sum(axis=0)
        grads[f"gat{l}_src"] += Z.T @ ds_src
        grads[f"gat{l}_dst"] += Z.T @ ds_dst
        dZ += np.outer(ds_src, a_src) + np.outer(ds_dst, a_dst)
        grads[f"gat{l}_w"] += H.T @ dZ
        dH = dZ @ W.T
    return dH


def _ama_forward(P, hp: Hyper, Q, K, V):
    scale = 1.0 / np.sqrt(hp.dk)
    heads = []
    cache = []
    for i in range(hp.heads):
        Qh, Kh, Vh = Q @ P["ama_wq"][i], K @ P["ama_wk"][i], V @ P["ama_wv"][i]
        A = softmax_rows((Qh @ Kh.T) * scale)
        heads.append(A @ Vh)
        cache.append((Qh, Kh, Vh, A))
    cat = np.concatenate(heads, axis=1)
    return cat @ P["ama_wo"], (cat, cache)


def _ama_backward(P, hp: Hyper, Q, K, V, cache, dC, grads):
    cat, per_head = cache
    scale = 1.0 / np.sqrt(hp.dk)
    grads["ama_wo"] += cat.T @ dC
    dcat = dC @ P["ama_wo"].T
    dQ, dK, dV = np.zeros_like(Q), np.zeros_like(K), np.zeros_like(V)
    for i, (Qh, Kh, Vh, A) in enumerate(per_head):
        dO = dcat[:, i * hp.dk:(i + 1) * hp.dk]
        dA = dO @ Vh.T
        dVh = A.T @ dO
        dS = _softmax_backward(A, dA) * scale
        dQh = dS @ Kh
        dKh = dS.T @ Qh
        grads["ama_wq"][i] += Q.T @ dQh
        grads["ama_wk"][i] += K.T @ dKh
        grads["ama_wv"][i] += V.T @ dVh
        dQ += dQh @ P["ama_wq"][i].T
        dK += dKh @ P["ama_wk"][i].T
        dV += dVh @ P["ama_wv"][i].T
    return dQ, dK, dV


def forward(model: RankerModel, q: EncodedQuestion):
    """Logits for every pair of one question, plus the cache needed by :func:`backward`."""
    P, hp = model.params, model.hyper
    X, Q = _erp_forward(P, q.pair_ids)
    E, gat_cache = _gat_forward(P, hp, P["emb"][q.node_ids], q.adjacency)
    C, ama_cache = _ama_forward(P, hp, Q, E, E)
    Xm = np.concatenate([Q, C], axis=1)
    Hd = np.tanh(Xm @ P["mlp_w1"] + P["mlp_b1"])
    z = Hd @ P["mlp_w2"] + P["mlp_b2"][0]
    return z, (X, Q, E, gat_cache, C, ama_cache, Xm, Hd)


def backward(model: RankerModel, q: EncodedQuestion, cache, dz: np.ndarray, grads: dict[str, np.ndarray]) -> None:
    """Accumulate d(loss)/d(params) into ``grads`` given d(loss)/d(logits)."""
    P, hp = model.params, model.hyper
    X, Q, E, gat_cache, C, ama_cache, Xm, Hd = cache
    d = hp.d
    grads["mlp_w2"] += Hd.T @ dz
    grads["mlp_b2"][0] += dz.sum()
    dpre = np.outer(dz, P["mlp_w2"]) * (1.0 - Hd**2)
    grads["mlp_w1"] += Xm.T @ dpre
    grads["mlp_b1"] += dpre.sum(axis=0)
    dXm = dpre @ P["mlp_w1"].T
    dQ, dC = dXm[:, :d].copy(), dXm[:, d:]
    dQa, dK, dV = _ama_backward(P, hp, Q, E, E, ama_cache, dC, grads)
    dQ += dQa
    dH0 = _gat_backward(P, hp, gat_cache, dK + dV, grads)
    np.add.at(grads["emb"], q.node_ids, dH0)
    grads["erp_w"] += X.T @ dQ
    grads["erp_b"] += dQ.sum(axis=0)
    dX = dQ @ P["erp_w"].T
    for j, ids in enumerate(q.pair_ids):
        if len(ids):
            np.add.at(grads["emb"], ids, np.broadcast_to(dX[j] / len(ids), (len(ids), d)))


def zero_grads(model: RankerModel) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in model.params.items()}


def bce_with_logits(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z) - y * z


def loss_and_grads(model: RankerModel, batch: Sequence[EncodedQuestion]) -> tuple[float, dict[str, np.ndarray]]:
    """Mean binary cross-entropy over every pair in ``batch`` and its gradient."""
    n = sum(q.m for q in batch)
    grads = zero_grads(model)
    total = 0.0
    for q in batch:
        z, cache = forward(model, q)
        total += float(bce_with_logits(z, q.labels).sum())
        backward(model, q, cache, (sigmoid(z) - q.labels) / n, grads)
    return total / n, grads


def loss_only(model: RankerModel, batch: Sequence[EncodedQuestion]) -> float:
    n = sum(q.m for q in batch)
    return sum(float(bce_with_logits(forward(model, q)[0], q.labels).sum()) for q in batch) / n


# --------------------------------------------------------------------------
# Public operations
# --------------------------------------------------------------------------


def encode_pairs(pairs: Sequence[ErpInput], model: RankerModel) -> np.ndarray:
    """Pair matrix Q, one d-dimensional row per pair."""
    return _erp_forward(model.params, [model.ids(p.tokens()) for p in pairs])[1]


def gat_forward(g: ReifiedGraph | AmrGraph, model: RankerModel) -> np.ndarray:
    """Node embeddings, one row per reified node, in ``g.nodes`` order."""
    rg = _as_reified(g)
    H0 = model.params["emb"][model.ids(graph_tokens(rg))]
    return _gat_forward(model.params, model.hyper, H0, rg.adjacency(self_loops=True))[0]


def ama_forward(
    Q: np.ndarray, K: np.ndarray, V: np.ndarray, model: RankerModel, return_attention: bool = False
):
    """Multi-head attention of pair rows over AMR node rows."""
    d = model.hyper.d
    Q, K, V = (np.asarray(x, dtype=np.float64) for x in (Q, K, V))
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2 or Q.shape[1] != d or K.shape[1] != d or V.shape[1] != d:
        raise DimensionMismatch(f"expected (*, {d}) matrices, got {Q.shape}, {K.shape}, {V.shape}")
    if K.shape[0] != V.shape[0]:
        raise DimensionMismatch("K and V need the same number of rows")
    if K.shape[0] == 0:
        raise DimensionMismatch("attention over an empty key set")
    out, (_, per_head) = _ama_forward(model.params, model.hyper, Q, K, V)
    if return_attention:
        return out, [A for *_, A in per_head]
    return out


def score_logits(query: str, amr: AmrGraph | ReifiedGraph, pairs, model: RankerModel) -> np.ndarray:
    if not pairs:
        return np.zeros(0)
    return forward(model, encode_question(model, query, amr, pairs))[0]


def score_pairs(query: str, amr: AmrGraph | ReifiedGraph, pairs, model: RankerModel) -> list[float]:
    """Probability that each (entity, relation) pair is needed to answer ``query``."""
    return [float(p) for p in sigmoid(score_logits(query, amr, pairs, model))]
