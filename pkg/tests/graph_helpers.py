"""Random graph generation and structural checks shared by graph tests."""

from __future__ import annotations

import numpy as np

from videocap import graph as G


def random_inputs(seed, d=None):
    rng = np.random.default_rng(seed)
    T, N = int(rng.integers(1, 7)), int(rng.integers(1, 5))
    d = int(rng.integers(2, 5)) if d is None else d
    base = rng.standard_normal((N, d))
    obj = base[None] + rng.uniform(0.1, 1.5) * rng.standard_normal((T, N, d))
    mask = rng.random((T, N)) < 0.75
    obj = np.where(mask[..., None], obj, 0.0)
    act = rng.standard_normal((T, 3))
    return obj, mask, act


def random_graph(seed, theta=0.5, top_k=1, d=None):
    obj, mask, act = random_inputs(seed, d)
    return G.merge_graphs(G.build_object_graph(obj, mask, theta, top_k), G.build_action_graph(act))


def edge_locality_ok(g):
    nodes = {n.id: n for n in g.nodes}
    for e in g.edges:
        a, b = nodes[e.src], nodes[e.dst]
        if e.type == G.OBJ_OBJ and not (a.kind == b.kind == "object" and abs(a.frame - b.frame) == 1):
            return False
        if e.type == G.OBJ_ACT and not ({a.kind, b.kind} == {"object", "action"} and a.frame == b.frame):
            return False
    return True


def edge_set(g):
    return {(e.src, e.dst, e.type) for e in g.edges}


def isomorphic(g, h):
    """Same node ids/kinds/frames/features and the same weighted edge set."""
    if g.n_frames != h.n_frames or len(g.nodes) != len(h.nodes):
        return False
    hn = {n.id: n for n in h.nodes}
    for n in g.nodes:
        m = hn.get(n.id)
        if m is None or (m.kind, m.frame, m.slot) != (n.kind, n.frame, n.slot):
            return False
        if not np.array_equal(np.ravel(m.feature), np.ravel(n.feature)):
            return False
    ge = sorted((frozenset((e.src, e.dst)), e.type, e.weight) for e in g.edges)
    he = sorted((frozenset((e.src, e.dst)), e.type, e.weight) for e in h.edges)
    return [(tuple(sorted(a)), b, c) for a, b, c in ge] == [(tuple(sorted(a)), b, c) for a, b, c in he]
