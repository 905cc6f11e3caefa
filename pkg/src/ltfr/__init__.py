"""Similarity embeddings for artists and songs, including long-tail entities.

Modules: ``numerics`` (autodiff, attention, Adam), ``datamodel`` (records,
CSV and embedding files, synthetic generator), ``relations`` (label
assignments), ``models`` (CbRM, UiRM, GRM), ``losses`` (mining and metric
losses), ``evaluation`` (retrieval and metrics), ``trainer`` and ``cli``.
"""

from .datamodel import (
    DatasetBundle, EmbeddingMatrix, EntityRecord, InteractionRecord, RelationEdge,
    SyntheticConfig, generate_synthetic, load_dataset, read_embeddings, split_dataset,
    write_dataset, write_embeddings,
)
from .evaluation import EvalReport, evaluate, topk_retrieve
from .losses import LossHypers, MiningConfig, MsHyper, ms_loss, multi_relationship_loss, prior_loss
from .models import aggregate_artist, encode_catalog, load_checkpoint
from .trainer import TrainConfig, Variant, format_table, run_ablation, save_stage, train_stage

__version__ = "0.1.0"
