# %% [markdown]
# # Training the three stages and comparing variants
#
# Content model first, then the listening model, then the general model on
# top of both. The ablation table compares the content baseline with the
# general model trained without and with the metadata term.

# %%
from ltfr import TrainConfig, Variant, format_table, generate_synthetic, run_ablation, train_stage

bundle = generate_synthetic(n_artists=300, n_users=600, seed=2)
base = TrainConfig(epochs=4, seed=2)

cb = train_stage(TrainConfig(stage="cbrm", epochs=4, seed=2), bundle)
print("content stage best validation:", cb.log.best)
losses = cb.log.losses()
print(f"{len(losses)} steps, first {losses[0]:.3f}, last {losses[-1]:.3f}")

# %%
rows = run_ablation(bundle, base, [
    Variant("CbRM", "cbrm"),
    Variant("GRM lam=0", overrides={"lam": 0.0}),
    Variant("GRM lam=0.3", overrides={"lam": 0.3}),
])
print(format_table(rows))
