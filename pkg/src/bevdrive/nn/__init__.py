from .checkpoint import (MAGIC, CheckpointError, checkpoint_from_bytes, checkpoint_to_bytes,
                         load_checkpoint, load_into, save_checkpoint)
from .gradcheck import check_layer_gradients, relative_error
from .layers import (Conv2d, CrossAttention, Dense, Flatten, Layer, LayerSpec, NonFiniteError, ReLU,
                     SelfAttention, Sequential, Sigmoid, build_layer, check_finite, cross_attention,
                     forward, sigmoid, softmax)
from .optim import Adam, AdamState, adam_step, bce_loss, bce_with_logits

__all__ = [
    "MAGIC", "CheckpointError", "checkpoint_from_bytes", "checkpoint_to_bytes", "load_checkpoint",
    "load_into", "save_checkpoint", "check_layer_gradients", "relative_error", "Conv2d",
    "CrossAttention", "Dense", "Flatten", "Layer", "LayerSpec", "NonFiniteError", "ReLU",
    "SelfAttention", "Sequential", "Sigmoid", "build_layer", "check_finite", "cross_attention",
    "forward", "sigmoid", "softmax", "Adam", "AdamState", "adam_step", "bce_loss", "bce_with_logits",
]
