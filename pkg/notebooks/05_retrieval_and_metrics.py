# %% [markdown]
# # Retrieval and evaluation
#
# Exact cosine top-K, the four metrics on hand-made lists, and a report for
# random embeddings compared with the chance level of metadata agreement.

# %%
import numpy as np

from ltfr import EmbeddingMatrix, evaluate, generate_synthetic, topk_retrieve
from ltfr.evaluation import RankedList, average_precision, chance_consistency, ndcg_at_k

E = EmbeddingMatrix(["q", "twin", "near", "far"],
                    np.array([[1.0, 1.0], [2.0, 2.0], [1.0, 0.2], [-1.0, 0.0]]))
print(topk_retrieve(E, "q", 2))
print("AP, relevant at ranks 1 and 3:", round(average_precision(["r", "x", "s"], {"r", "s"}), 4))
print("NDCG@10, relevant at rank 2:", round(ndcg_at_k(["x", "r"], {"r"}, 10), 4))

# %%
bundle = generate_synthetic(n_artists=300, n_users=500, seed=4)
ids = bundle.ids("artist")
rand = EmbeddingMatrix(ids, np.random.default_rng(0).normal(size=(len(ids), 16)))
report = evaluate(rand, bundle, ks=(10, 50))
print(report.to_table())
test_ids = bundle.ids("artist", split="test")
print("chance Consistent:", round(chance_consistency([bundle.entity(i) for i in test_ids]), 4))
