"""Trainable detector core: autodiff tensors, kernels, network, training."""

from .network import (  # noqa: F401
    DEFAULT_ARCH,
    NetworkParams,
    backbone_forward,
    detect_forward,
    init_params,
    load_checkpoint,
    roi_pool,
    rpn_forward,
    save_checkpoint,
    total_stride,
)
from .tensor import Tensor, backward_from  # noqa: F401
