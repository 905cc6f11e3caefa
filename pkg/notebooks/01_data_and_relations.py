# %% [markdown]
# # Synthetic catalog and relation labels
#
# Generate a small long-tail catalog, look at its degree profile and build the
# label assignments used by the different training stages.

# %%
import numpy as np

from ltfr import generate_synthetic
from ltfr.datamodel import degree_stats
from ltfr.relations import (
    CoInteractionConfig, RelationGraph, build_ground_truth_labels, build_meta_consistency_labels,
    co_interaction_edges,
)

bundle = generate_synthetic(n_artists=300, n_users=500, seed=0)
artists = bundle.ids("artist")
tail = bundle.long_tail_candidates("artist")
print(f"{len(artists)} artists, {len(bundle.ids('music'))} songs, {len(bundle.relations)} relations")
print(f"long-tail share: {len(tail) / len(artists):.3f}")
deg = degree_stats(bundle)
linked = deg[deg > 0]
print(f"degree among linked artists: median {int(np.median(linked))}, max {deg.max()}")

# %% [markdown]
# Ground-truth labels group artists by connected component; entities without
# any edge stay unlabeled and are exactly the long-tail set.

# %%
gt = build_ground_truth_labels(bundle.relations_of("artist"), artists)
print("labeled:", len(gt.labels), "unlabeled:", len(gt.unlabeled))

# %% [markdown]
# Metadata labels cover everyone: one class per (genre, region, popularity) tuple.

# %%
meta = build_meta_consistency_labels([bundle.entity(i) for i in artists])
print("metadata classes:", len(set(meta.labels.values())))

# %% [markdown]
# Co-interaction edges connect artists that share listeners. Raw shared-listener
# counts favour popular artists, so mutual top-k pairs are rare; the threshold
# rule (the default) links most of the catalog.

# %%
for cfg in (CoInteractionConfig("threshold", threshold=3), CoInteractionConfig("top_k", k=5)):
    edges = co_interaction_edges(bundle.interactions, cfg)
    graph = RelationGraph(edges)
    print(f"{cfg.mode:9s} edges: {len(edges):6d}  linked artists: {len(graph.linked())}")
