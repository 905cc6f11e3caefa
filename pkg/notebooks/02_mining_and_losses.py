# %% [markdown]
# # Pair mining and the three losses
#
# A three-point batch shows which pairs each mining rule keeps, then the loss
# values on a random batch.

# %%
import numpy as np

from ltfr import losses as L

S = np.array([[1.0, 0.8, 0.75], [0.8, 1.0, 0.3], [0.75, 0.3, 1.0]])
Y = np.array([0, 0, 1])
for variant in ("paper_min", "original_max"):
    cfg = L.MiningConfig(0.1, variant)
    print(variant, "positives", L.mine_positive_set(S, Y, 0, cfg),
          "negatives", L.mine_negative_set(S, Y, 0, cfg))

# %% [markdown]
# On a random batch: the relationship loss on labeled rows, the metadata loss
# on every row, and their weighted sum for a few weights.

# %%
rng = np.random.default_rng(0)
E = rng.normal(size=(12, 8))
S = L.similarity_matrix(E / np.linalg.norm(E, axis=1, keepdims=True))
Y_A = np.array([0, 0, 0, 1, 1, 1, 2, 2, -1, -1, -1, -1])   # -1: long-tail rows
Y_P = rng.integers(0, 3, size=12)
print("prior loss:", round(L.prior_loss(S, Y_P)[0], 4))
for lam in (0.0, 0.3, 1.0):
    total, _, parts = L.multi_relationship_loss(S, Y_A, Y_P, lam=lam)
    print(f"lam={lam}: total {total:.4f}  ms {parts['ms']:.4f}  prior {parts['prior']:.4f}")
