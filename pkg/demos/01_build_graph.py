"""
Building a performance graph
============================

Ingest the bundled miniature dataset, build the heterogeneous graph for one
setting and look at its structure.
"""

import numpy as np

from hgperf import datasets
from hgperf.hetgraph import (
    HAS_ALGORITHM,
    HAS_PARAMETER,
    NodeType,
    add_reverse_relations,
    dumps,
    loads,
    neighbors,
    validate_metagraph,
)
from hgperf.ingest import Dataset, build_graph

# The three CSV inputs: ELA features, variant configurations, performance runs.
paths = datasets.miniature_paths()
ds = Dataset.from_files(paths["ela"], paths["configs"], paths["performance"])
print("settings in the data:", [s.slug for s in ds.specs()])

# One graph per (family, dimension, budget) setting.
spec = ds.specs()[0]
g = build_graph(spec, ds.ela, ds.configs, ds.performance)
for t in NodeType:
    print(f"{t.value:24s} {g.num_nodes(t):4d} nodes")
for r in g.relations:
    print(f"{r.name:36s} {g.num_edges(r):4d} edges")

# The graph conforms to the meta-graph: no violations.
print("violations:", validate_metagraph(g))

# Message passing needs both directions of every relation.
gr = add_reverse_relations(g)
print("edges before/after reverse augmentation:", g.num_edges(), gr.num_edges())

# Each Performance node points at exactly one algorithm variant,
# and a variant fans out to its parameter settings.
p0 = 0
alg = neighbors(gr, HAS_ALGORITHM, p0)[0]
print(g.nodes[NodeType.PERFORMANCE][p0], "->", g.nodes[NodeType.ALGORITHM][alg])
print("its parameters:", [g.nodes[NodeType.PARAMETER][i] for i in neighbors(gr, HAS_PARAMETER, alg)])

# Targets are log10 precision; the text format round-trips bit for bit.
print("targets:", np.round(g.targets[:4], 3))
assert loads(dumps(gr)) == gr
