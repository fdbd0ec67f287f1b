"""Temporal objects-action graph and the graph transformer encoder.

Graph construction
    Object nodes are the present object slots of every frame.  An object at
    frame t links to the objects of frame t+1 whose cosine similarity with it
    is at least ``theta``, keeping only its ``top_k`` best matches.  Action
    nodes (one per frame) form a chain.  Merging adds an edge from each
    frame's action node to every object node of that frame.

Encoder
    Kind-specific input projections map object and action features to a
    common width.  Each layer lets node i attend over itself and its
    neighbours with a key/value projection chosen by the edge type
    (``self``, ``obj-obj``, ``act-act``, ``obj-act``).  Similarity edges add
    ``log(weight)`` to the logit.  The aggregate is added residually and RMS
    normalised.  Node outputs are mean pooled per frame.
"""

from __future__ import annotations

import functools
import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyGraph, FrameRangeMismatch
from .numerics import Tensor, as_tensor, rms_norm, seeded_init, softmax

OBJ_OBJ = "obj-obj"
ACT_ACT = "act-act"
OBJ_ACT = "obj-act"
EDGE_TYPES = (OBJ_OBJ, ACT_ACT, OBJ_ACT)
ATTN_TYPES = ("self",) + EDGE_TYPES
SIMILARITY_EDGES = frozenset({OBJ_OBJ})
LOG_FLOOR = 1e-8

# Incremented by every public graph routine; inference asserts it stays put.
CALLS: Counter = Counter()


class ZeroVectorWarning(UserWarning):
    """Cosine similarity requested for a zero vector; similarity taken as 0."""


def _counted(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        CALLS[fn.__name__] += 1
        return fn(*args, **kwargs)

    return wrapper


@dataclass
class Node:
    id: str
    frame: int
    kind: str  # "object" or "action"
    feature: np.ndarray
    slot: int | None = None


@dataclass
class Edge:
    src: str
    dst: str
    type: str
    weight: float


@dataclass
class TemporalGraph:
    n_frames: int
    nodes: list[Node] = field(default_factory=list)
    edges: list[Edge] = field(default_factory=list)

    def index(self) -> dict[str, int]:
        return {node.id: i for i, node in enumerate(self.nodes)}

    def node(self, node_id: str) -> Node:
        return self.nodes[self.index()[node_id]]

    def adjacency(self, edge_type: str) -> np.ndarray:
        """Symmetric n x n matrix of edge weights for one edge type."""
        idx = self.index()
        A = np.zeros((len(self.nodes), len(self.nodes)))
        for e in self.edges:
            if e.type == edge_type:
                i, j = idx[e.src], idx[e.dst]
                A[i, j] = A[j, i] = e.weight
        return A

    def edges_of(self, edge_type: str) -> list[Edge]:
        return [e for e in self.edges if e.type == edge_type]

    def check(self) -> None:
        """Raise AssertionError if an edge breaks frame locality."""
        idx = self.index()
        assert len(idx) == len(self.nodes), "duplicate node ids"
        for e in self.edges:
            a, b = self.nodes[idx[e.src]], self.nodes[idx[e.dst]]
            if e.type == OBJ_OBJ:
                assert a.kind == b.kind == "object" and b.frame == a.frame + 1, e
            elif e.type == ACT_ACT:
                assert a.kind == b.kind == "action" and b.frame == a.frame + 1, e
            elif e.type == OBJ_ACT:
                assert {a.kind, b.kind} == {"object", "action"} and a.frame == b.frame, e
            else:
                raise AssertionError(f"unknown edge type {e.type!r}")


def cosine_similarity(x: np.ndarray, y: np.ndarray) -> float:
    nx, ny = float(np.linalg.norm(x)), float(np.linalg.norm(y))
    if nx == 0.0 or ny == 0.0:
        warnings.warn("cosine similarity of a zero vector taken as 0", ZeroVectorWarning, stacklevel=2)
        return 0.0
    return float(np.dot(x, y) / (nx * ny))


@_counted
def build_object_graph(object_feats, object_mask, theta: float = 0.5, top_k: int | None = 1) -> TemporalGraph:
    """Object nodes per present slot; cross-frame edges by cosine similarity."""
    feats = np.asarray(object_feats, dtype=np.float64)
    mask = np.asarray(object_mask, dtype=bool)
    T, N = mask.shape
    g = TemporalGraph(T)
    for t in range(T):
        for n in range(N):
            if mask[t, n]:
                g.nodes.append(Node(f"o{t}_{n}", t, "object", feats[t, n].copy(), n))
    for t in range(T - 1):
        for n in np.flatnonzero(mask[t]):
            cands = []
            for m in np.flatnonzero(mask[t + 1]):
                sim = cosine_similarity(feats[t, n], feats[t + 1, m])
                if sim >= theta:
                    cands.append((-sim, int(m)))
            cands.sort()
            if top_k is not None:
                cands = cands[:top_k]
            for neg_sim, m in cands:
                g.edges.append(Edge(f"o{t}_{n}", f"o{t + 1}_{m}", OBJ_OBJ, -neg_sim))
    return g


@_counted
def build_action_graph(B_seq) -> TemporalGraph:
    """One action node per frame, chained by weight-1 edges."""
    B = as_tensor(B_seq).value
    T = B.shape[0]
    g = TemporalGraph(T, [Node(f"a{t}", t, "action", B[t].copy()) for t in range(T)])
    g.edges = [Edge(f"a{t}", f"a{t + 1}", ACT_ACT, 1.0) for t in range(T - 1)]
    return g


@_counted
def merge_graphs(obj_graph: TemporalGraph, act_graph: TemporalGraph) -> TemporalGraph:
    if obj_graph.n_frames != act_graph.n_frames:
        raise FrameRangeMismatch(
            f"object graph spans {obj_graph.n_frames} frames, action graph {act_graph.n_frames}"
        )
    g = TemporalGraph(
        obj_graph.n_frames,
        list(act_graph.nodes) + list(obj_graph.nodes),
        list(obj_graph.edges) + list(act_graph.edges),
    )
    actions = {n.frame: n.id for n in act_graph.nodes}
    for node in obj_graph.nodes:
        if node.frame in actions:
            g.edges.append(Edge(actions[node.frame], node.id, OBJ_ACT, 1.0))
    return g


# -- export -------------------------------------------------------------------


def export_graph(graph: TemporalGraph, format: str = "json") -> str:
    if format == "json":
        doc = {
            "n_frames": graph.n_frames,
            "nodes": [
                {
                    "id": n.id,
                    "frame": n.frame,
                    "kind": n.kind,
                    "slot": n.slot,
                    "feature": [float(v) for v in np.ravel(n.feature)],
                }
                for n in graph.nodes
            ],
            "edges": [
                {"src": e.src, "dst": e.dst, "type": e.type, "weight": float(e.weight)}
                for e in graph.edges
            ],
        }
        return json.dumps(doc)
    if format == "dot":
        lines = ["graph temporal_objects_action {"]
        for n in graph.nodes:
            shape = "box" if n.kind == "action" else "ellipse"
            lines.append(f'  "{n.id}" [label="{n.id}", shape={shape}, frame={n.frame}];')
        for e in graph.edges:
            style = "dashed" if e.type == OBJ_ACT else "solid"
            lines.append(
                f'  "{e.src}" -- "{e.dst}" [label="{e.type}", weight="{e.weight:.6g}", style={style}];'
            )
        lines.append("}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown export format {format!r}")


def import_graph(text: str) -> TemporalGraph:
    doc = json.loads(text)
    return TemporalGraph(
        doc["n_frames"],
        [
            Node(n["id"], n["frame"], n["kind"], np.asarray(n["feature"], dtype=np.float64), n["slot"])
            for n in doc["nodes"]
        ],
        [Edge(e["src"], e["dst"], e["type"], e["weight"]) for e in doc["edges"]],
    )


# -- encoder ------------------------------------------------------------------


@dataclass
class GraphTransformerParams:
    P_obj: Tensor
    P_act: Tensor
    layers: list[dict[str, Tensor]]
    W_out: Tensor

    @classmethod
    def init(cls, d_obj: int, d_act: int, d_g: int, n_layers: int, seed: int) -> "GraphTransformerParams":
        if n_layers < 1:
            raise ValueError("graph transformer needs at least one layer")

        def mat(shape, k, name):
            return Tensor(seeded_init(shape, seed + k), True, name)

        layers = []
        k = 3
        for ell in range(n_layers):
            layer = {"W_q": mat((d_g, d_g), k, f"gt{ell}.W_q")}
            k += 1
            for t in ATTN_TYPES:
                layer[f"W_k:{t}"] = mat((d_g, d_g), k, f"gt{ell}.W_k:{t}")
                layer[f"W_v:{t}"] = mat((d_g, d_g), k + 1, f"gt{ell}.W_v:{t}")
                k += 2
            layers.append(layer)
        return cls(
            mat((d_obj, d_g), 0, "gt.P_obj"),
            mat((d_act, d_g), 1, "gt.P_act"),
            layers,
            mat((d_g, d_g), 2, "gt.W_out"),
        )

    def tensors(self) -> list[Tensor]:
        out = [self.P_obj, self.P_act]
        for layer in self.layers:
            out.extend(layer.values())
        out.append(self.W_out)
        return out

    @property
    def d_g(self) -> int:
        return self.W_out.shape[1]


@dataclass
class GraphLayout:
    """Dense constant arrays describing a graph (optionally batched)."""

    sel_obj: np.ndarray  # n x n_obj
    sel_act: np.ndarray  # n x n_act
    obj_feats: np.ndarray  # n_obj x d_obj
    act_feats: np.ndarray  # n_act x d_act
    masks: dict[str, np.ndarray]  # attention type -> n x n bool
    offset: np.ndarray  # n x n
    pool: np.ndarray  # T x n
    node_ids: list[str]


def graph_layout(graph: TemporalGraph, d_obj: int | None = None, d_act: int | None = None) -> GraphLayout:
    """Dense layout in ``graph.nodes`` order."""
    n = len(graph.nodes)
    if n == 0:
        raise EmptyGraph("graph has no nodes")
    idx = graph.index()
    obj_ids = [i for i, nd in enumerate(graph.nodes) if nd.kind == "object"]
    act_ids = [i for i, nd in enumerate(graph.nodes) if nd.kind == "action"]
    sel_obj = np.zeros((n, len(obj_ids)))
    sel_obj[obj_ids, np.arange(len(obj_ids))] = 1.0
    sel_act = np.zeros((n, len(act_ids)))
    sel_act[act_ids, np.arange(len(act_ids))] = 1.0

    def stack(ids, d):
        if ids:
            return np.vstack([np.ravel(graph.nodes[i].feature) for i in ids])
        return np.zeros((0, d or 1))

    masks = {t: np.zeros((n, n), dtype=bool) for t in ATTN_TYPES}
    masks["self"][np.arange(n), np.arange(n)] = True
    offset = np.zeros((n, n))
    for e in graph.edges:
        i, j = idx[e.src], idx[e.dst]
        masks[e.type][i, j] = masks[e.type][j, i] = True
        if e.type in SIMILARITY_EDGES:
            offset[i, j] = offset[j, i] = math.log(max(e.weight, LOG_FLOOR))
    pool = np.zeros((graph.n_frames, n))
    for i, nd in enumerate(graph.nodes):
        pool[nd.frame, i] = 1.0
    counts = pool.sum(axis=1, keepdims=True)
    pool = np.divide(pool, counts, out=np.zeros_like(pool), where=counts > 0)
    return GraphLayout(
        sel_obj,
        sel_act,
        stack(obj_ids, d_obj),
        stack(act_ids, d_act),
        masks,
        offset,
        pool,
        [nd.id for nd in graph.nodes],
    )


def stack_layouts(layouts: Sequence[GraphLayout]) -> GraphLayout:
    """Pad layouts to a common node count and stack them along a batch axis.

    Padding nodes carry no features, attend only to themselves and are
    excluded from pooling, so they contribute nothing.
    """
    n = max(l.sel_obj.shape[0] for l in layouts)
    n_obj = max(l.sel_obj.shape[1] for l in layouts)
    n_act = max(l.sel_act.shape[1] for l in layouts)
    T = max(l.pool.shape[0] for l in layouts)
    d_obj = layouts[0].obj_feats.shape[1]
    d_act = layouts[0].act_feats.shape[1]
    B = len(layouts)
    sel_obj = np.zeros((B, n, n_obj))
    sel_act = np.zeros((B, n, n_act))
    obj = np.zeros((B, n_obj, d_obj))
    act = np.zeros((B, n_act, d_act))
    masks = {t: np.zeros((B, n, n), dtype=bool) for t in ATTN_TYPES}
    offset = np.zeros((B, n, n))
    pool = np.zeros((B, T, n))
    for b, l in enumerate(layouts):
        k, ko, ka = l.sel_obj.shape[0], l.sel_obj.shape[1], l.sel_act.shape[1]
        sel_obj[b, :k, :ko] = l.sel_obj
        sel_act[b, :k, :ka] = l.sel_act
        obj[b, :ko] = l.obj_feats
        act[b, :ka] = l.act_feats
        for t in ATTN_TYPES:
            masks[t][b, :k, :k] = l.masks[t]
        masks["self"][b, np.arange(k, n), np.arange(k, n)] = True
        offset[b, :k, :k] = l.offset
        pool[b, : l.pool.shape[0], :k] = l.pool
    return GraphLayout(sel_obj, sel_act, obj, act, masks, offset, pool, [])


@dataclass
class GraphFeatures:
    nodes: Tensor  # n x d_g
    frames: Tensor  # T x d_g, mean of each frame's node outputs
    node_ids: list[str]


def encode_layout(layout: GraphLayout, params: GraphTransformerParams, act_feats=None) -> tuple[Tensor, Tensor]:
    """Run the encoder on a (possibly batched) layout.

    ``act_feats`` overrides the action-node features stored in the layout,
    so gradients can flow into whatever produced them.
    """
    act = as_tensor(layout.act_feats if act_feats is None else act_feats)
    h = layout.sel_obj @ (as_tensor(layout.obj_feats) @ params.P_obj)
    h = h + layout.sel_act @ (act @ params.P_act)
    d_g = params.d_g
    live = {t: m for t, m in layout.masks.items() if m.any()}
    any_mask = np.zeros_like(layout.masks["self"])
    for m in live.values():
        any_mask |= m
    fmask = {t: m.astype(np.float64) for t, m in live.items()}
    for layer in params.layers:
        q = h @ layer["W_q"]
        logits = None
        for t, fm in fmask.items():
            s = (q @ (h @ layer[f"W_k:{t}"]).mT) * fm
            logits = s if logits is None else logits + s
        attn = softmax(logits, scale=d_g, mask=any_mask, offset=layout.offset)
        agg = None
        for t, fm in fmask.items():
            a = (attn * fm) @ (h @ layer[f"W_v:{t}"])
            agg = a if agg is None else agg + a
        h = rms_norm(h + agg)
    out = h @ params.W_out
    return out, layout.pool @ out


@_counted
def graph_transformer_encode(graph: TemporalGraph, params: GraphTransformerParams, act_feats=None) -> GraphFeatures:
    """Encode a temporal objects-action graph into node and per-frame features."""
    layout = graph_layout(graph, params.P_obj.shape[0], params.P_act.shape[0])
    nodes, frames = encode_layout(layout, params, act_feats)
    return GraphFeatures(nodes, frames, layout.node_ids)
