# %% [markdown]
# # Encoders
#
# Artist content vectors come from averaging the most popular songs. The
# general encoder fuses content, listening and metadata tokens and crosses
# its fields before the output MLP.

# %%
import numpy as np

from ltfr import generate_synthetic
from ltfr.models import (
    CbrmConfig, CbrmModel, GrmConfig, GrmModel, MetaEmbedder, UirmConfig, UirmModel,
    aggregate_artist, encode_catalog, feature_cross, interaction_svd,
)

print(aggregate_artist([([1.0, 0.0], 5), ([0.0, 1.0], 4), ([9.0, 9.0], 1)], K=2))
print(feature_cross([[1.0, 2.0], [3.0, 4.0]]))

# %%
bundle = generate_synthetic(n_artists=150, n_users=250, seed=1)
ids = bundle.ids("artist")
cbrm = CbrmModel(CbrmConfig(bundle.content_dim(), 32, 16))
uirm = UirmModel(UirmConfig(16), ids, init=interaction_svd(bundle.interactions, ids, 16))
grm = GrmModel(GrmConfig(content_dim=16, user_dim=16, out_dim=24),
               MetaEmbedder.from_entities(bundle.entities))
# artist content rows are means of unit song vectors, so their norms sit just below 1
mats = encode_catalog(bundle, "artist", cbrm, uirm, grm)
for name, m in mats.items():
    print(name, m.values.shape, "row norms ~", np.round(np.linalg.norm(m.values, axis=1).mean(), 6))

# %% [markdown]
# Songs have no listening data, so the general encoder falls back to its
# learned missing-interaction token.

# %%
songs = encode_catalog(bundle, "music", cbrm, uirm, grm)
print(sorted(songs), songs["grm"].values.shape)
