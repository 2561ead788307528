"""Small reverse-mode autodiff engine with 3D convolution building blocks."""

from .functional import (IGNORE_INDEX, batch_norm, conv2d, conv3d, deconv, deconv3d,
                         global_avg_pool, linear, log_softmax, softmax_cross_entropy)
from .gradcheck import check_gradients, relative_error
from .layers import (BatchNorm, Conv2d, Conv3d, DDRBlock, DdrBlockConfig, Deconv3d, Linear,
                     Module, ddr_block)
from .optim import SGD, PolySchedule, poly_lr, sgd_step
from .tensor import (Tensor, as_tensor, broadcast_to, concat, exp, log, no_grad, relu,
                     reshape, softmax, stack, transpose)

__all__ = [
    "IGNORE_INDEX", "BatchNorm", "Conv2d", "Conv3d", "DDRBlock", "DdrBlockConfig", "Deconv3d",
    "Linear", "Module", "PolySchedule", "SGD", "Tensor", "as_tensor", "batch_norm",
    "broadcast_to", "check_gradients", "concat", "conv2d", "conv3d", "ddr_block", "deconv",
    "deconv3d", "exp", "global_avg_pool", "linear", "log", "log_softmax", "no_grad", "poly_lr",
    "relative_error", "relu", "reshape", "sgd_step", "softmax", "softmax_cross_entropy",
    "stack", "transpose",
]
