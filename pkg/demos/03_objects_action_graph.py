"""Building the temporal objects-action graph and encoding it.

Run:  python3 demos/03_objects_action_graph.py
"""

# %%
import numpy as np

from videocap import features, graph

bundle, record = features.synth_generate(3, T=4, N=3, pattern="drift")

# %% object nodes link across consecutive frames by cosine similarity (theta 0.5, best match only)
objects = graph.build_object_graph(bundle.object_feats, bundle.object_mask, theta=0.5, top_k=1)
actions = graph.build_action_graph(bundle.action_feats)
g = graph.merge_graphs(objects, actions)
for kind in graph.EDGE_TYPES:
    print(f"{kind:8s} {len(g.edges_of(kind))} edges")
g.check()

# %% raising theta can only remove similarity edges
for theta in (0.0, 0.5, 0.9, 0.99):
    n = len(graph.build_object_graph(bundle.object_feats, bundle.object_mask, theta, top_k=None).edges)
    print(f"theta={theta:<5} obj-obj edges={n}")

# %% encode: node outputs and a per-frame pooled sequence F_graph
params = graph.GraphTransformerParams.init(d_obj=16, d_act=16, d_g=8, n_layers=2, seed=0)
enc = graph.graph_transformer_encode(g, params)
print("node outputs", enc.nodes.shape, "| F_graph", enc.frames.shape)

# %% export for inspection (DOT renders with graphviz)
print(graph.export_graph(g, "dot")[:400], "...")
