"""Dozerformer: sparse Local/Stride/Vary attention for multivariate forecasting."""

from ._kernels import USE_NUMBA
from .attention import HeadConfig, multi_head_attention, scaled_dot_attention
from .data import Dataset, WindowSample, load_csv, sample_windows, split_and_standardize, synth_series
from .masks import (
    AttnMask,
    CrossCoords,
    PairCountReport,
    SparsityParams,
    closed_form_pairs,
    count_pairs,
    local_cross_mask,
    local_self_mask,
    stride_cross_mask,
    stride_self_mask,
    union_masks,
    vary_cross_mask,
)
from .model import Dozerformer, DozerformerConfig, decompose, forward, model_cost_report
from .tensor import Tensor, finite_diff_grad, grad_check, masked_softmax, matmul
from .train import MetricsReport, adam_step, cosine_lr, evaluate, train

__version__ = "0.1.0"
