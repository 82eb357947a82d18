"""A small numpy network engine with analytic gradients.

Covers exactly the layers needed for a miniature U-Net segmenter and a
Keras-style CNN classifier: conv, transposed conv, max pooling, dense, ReLU,
sigmoid, dropout, batch normalization, flatten and skip concatenation.
"""

from .bundle import ModelBundle, load_bundle, save_bundle
from .layers import (
    activation_apply,
    activation_grad,
    batchnorm_apply,
    batchnorm_grad,
    bce_grad,
    bce_logit_grad,
    bce_loss,
    conv2d_apply,
    conv2d_grad,
    dense_apply,
    dense_grad,
    dropout_apply,
    maxpool2d_apply,
    maxpool2d_grad,
    tconv2d_apply,
    tconv2d_grad,
)
from .network import LayerSpec, Network, NetworkSpec, build_mini_cnn, build_mini_unet, init_weights
from .optim import Adam, adam_update
from .train import TrainConfig, extract_features, predict, train_model

__all__ = [
    "Adam",
    "LayerSpec",
    "ModelBundle",
    "Network",
    "NetworkSpec",
    "TrainConfig",
    "activation_apply",
    "activation_grad",
    "adam_update",
    "batchnorm_apply",
    "batchnorm_grad",
    "bce_grad",
    "bce_logit_grad",
    "bce_loss",
    "build_mini_cnn",
    "build_mini_unet",
    "conv2d_apply",
    "conv2d_grad",
    "dense_apply",
    "dense_grad",
    "dropout_apply",
    "extract_features",
    "init_weights",
    "load_bundle",
    "maxpool2d_apply",
    "maxpool2d_grad",
    "predict",
    "save_bundle",
    "tconv2d_apply",
    "tconv2d_grad",
    "train_model",
]
