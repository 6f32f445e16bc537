"""Minimal neural runtime: tape autodiff, layers, Adam, gradient checks."""
from .autodiff import Tensor, no_grad
from .adam import Adam
from .layers import (
    MlpParams,
    SageParams,
    TransformerLayerParams,
    graph_agg_forward,
    make_mlp,
    make_sage,
    make_transformer_layer,
    mean_agg_matrix,
    mlp_forward,
    sage_forward,
    softmax_rows,
    transformer_encoder_forward,
)
from .gradcheck import run_gradient_checks

__all__ = [
    "Tensor",
    "no_grad",
    "Adam",
    "MlpParams",
    "SageParams",
    "TransformerLayerParams",
    "graph_agg_forward",
    "make_mlp",
    "make_sage",
    "make_transformer_layer",
    "mean_agg_matrix",
    "mlp_forward",
    "sage_forward",
    "softmax_rows",
    "transformer_encoder_forward",
    "run_gradient_checks",
]
