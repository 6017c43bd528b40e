"""Trainable core: embedding + Bidirectional LSTM encoders, cosine energy,
contrastive / cross-entropy losses with analytic gradients, RMSprop, and
the training loop."""

from .model import (
    BiLstmLayer,
    LstmParams,
    SiameseModel,
    init_model,
    load_checkpoint,
    model_fingerprint,
    save_checkpoint,
    serialize_model,
)
from .encoder import bilstm_encode, encode_product, encode_products
from .loss import (
    BINARY_CROSS_ENTROPY,
    CONTRASTIVE,
    batch_loss,
    compute_gradients,
    contrastive_loss,
    cosine_energy,
    negative_loss,
    positive_loss,
)
from .optimizer import RmsPropState, rmsprop_step
from .training import EpochStats, TrainConfig, train

__all__ = [
    "BINARY_CROSS_ENTROPY",
    "BiLstmLayer",
    "CONTRASTIVE",
    "EpochStats",
    "LstmParams",
    "RmsPropState",
    "SiameseModel",
    "TrainConfig",
    "batch_loss",
    "bilstm_encode",
    "compute_gradients",
    "contrastive_loss",
    "cosine_energy",
    "encode_product",
    "encode_products",
    "init_model",
    "load_checkpoint",
    "model_fingerprint",
    "negative_loss",
    "positive_loss",
    "rmsprop_step",
    "save_checkpoint",
    "serialize_model",
    "train",
]
