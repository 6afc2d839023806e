"""Test helpers: random toy heterographs and a naive dense forward pass.

Shares no code with ``hgperf.model``: adjacency is materialised as explicit
matrices, means are computed with Python loops and GELU uses ``math.erf``.
"""

import math

import numpy as np

from hgperf.hetgraph import (
    CONTROLS_EXECUTION_PART,
    HAS_ALGORITHM,
    HAS_PARAMETER,
    HAS_PARAMETER_CLASS,
    HAS_PROBLEM,
    HeteroGraph,
    NodeType,
    add_reverse_relations,
)


def random_toy_graph(rng, max_nodes=20, n_features=46):
    """Random heterograph with every node type present and at most ``max_nodes`` nodes."""
    while True:
        counts = {t: int(rng.integers(1, 5)) for t in NodeType}
        if sum(counts.values()) <= max_nodes:
            break

    def rand_edges(rel, density=0.5):
        pairs = [
            (a, b)
            for a in range(counts[rel.src])
            for b in range(counts[rel.dst])
            if rng.random() < density
        ]
        return np.array(pairs, dtype=np.int64).reshape(-1, 2)

    n_perf = counts[NodeType.PERFORMANCE]
    edges = {
        HAS_PARAMETER: rand_edges(HAS_PARAMETER),
        HAS_PARAMETER_CLASS: rand_edges(HAS_PARAMETER_CLASS),
        CONTROLS_EXECUTION_PART: rand_edges(CONTROLS_EXECUTION_PART),
        HAS_ALGORITHM: np.array([(p, rng.integers(counts[NodeType.ALGORITHM])) for p in range(n_perf)]),
        HAS_PROBLEM: np.array([(p, rng.integers(counts[NodeType.PROBLEM])) for p in range(n_perf)]),
    }
    g = HeteroGraph(
        nodes={t: [f"{t.value}{i}" for i in range(n)] for t, n in counts.items()},
        edges=edges,
        features={NodeType.PROBLEM: rng.normal(size=(counts[NodeType.PROBLEM], n_features))},
        targets=rng.normal(size=n_perf),
    )
    return add_reverse_relations(g)


def gelu(x):
    return np.vectorize(lambda v: v * 0.5 * (1.0 + math.erf(v / math.sqrt(2.0))))(x)


def adjacency(g, rel):
    a = np.zeros((g.num_nodes(rel.dst), g.num_nodes(rel.src)))
    for s, d in g.edges[rel].tolist():
        a[d, s] += 1.0
    return a


def dense_forward(g, arrays, layers, final_activation=True):
    """``arrays`` maps parameter names to numpy arrays; ``layers`` is the relation list per layer."""
    h = {}
    for t in NodeType:
        n = g.num_nodes(t)
        if t is NodeType.PROBLEM:
            x = g.features[t]
            h[t] = np.array(
                [[sum(x[i, k] * arrays["projection/weight"][k, j] for k in range(x.shape[1])) + arrays["projection/bias"][0, j]
                  for j in range(arrays["projection/weight"].shape[1])] for i in range(n)]
            ).reshape(n, -1)
        elif t is NodeType.PERFORMANCE:
            h[t] = np.repeat(arrays[f"embedding/{t.value}"], n, axis=0)
        else:
            h[t] = arrays[f"embedding/{t.value}"].copy()

    for li, rels in enumerate(layers):
        new = {}
        for t in NodeType:
            incoming = [r for r in rels if r.dst is t]
            if not incoming:
                new[t] = h[t]
                continue
            d_out = arrays[f"layer{li}/{incoming[0].name}/w_self"].shape[1]
            out = np.zeros((g.num_nodes(t), d_out))
            for r in incoming:
                a = adjacency(g, r)
                ws = arrays[f"layer{li}/{r.name}/w_self"]
                wn = arrays[f"layer{li}/{r.name}/w_neigh"]
                b = arrays[f"layer{li}/{r.name}/bias"]
                for v in range(g.num_nodes(t)):
                    deg = a[v].sum()
                    mean = np.zeros(h[r.src].shape[1])
                    if deg > 0:
                        for u in range(g.num_nodes(r.src)):
                            mean = mean + a[v, u] * h[r.src][u]
                        mean = mean / deg
                    out[v] += mean @ wn + h[t][v] @ ws + b[0]
            last = li == len(layers) - 1
            new[t] = gelu(out) if (final_activation or not last) else out
        h = new
    return h[NodeType.PERFORMANCE] @ arrays["head/weight"] + arrays["head/bias"]
