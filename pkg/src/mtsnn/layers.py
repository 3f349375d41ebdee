"""Trainable layers: convolution, batch normalization, dense, pooling,
the voting readout, and the membrane-level residual sum.

Convolutions carry no bias (a batch-norm layer always follows); dense
layers carry one.  Weights use fan-in scaled Gaussian init.  Batch-norm
statistics are computed over every non-channel axis of whatever tensor it
is given; the model stacks the T time steps along the batch axis, so time
is folded into the statistics automatically.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ConvLayer:
    """2-d convolution, no bias."""

    def __init__(self, in_ch: int, out_ch: int, k: int = 3, stride: int = 1,
                 padding: str = "same", rng: np.random.Generator | None = None,
                 dtype=np.float32, name: str = "conv"):
        if padding not in ("same", "valid"):
            raise ValueError(f"ConvLayer: padding must be 'same' or 'valid', got {padding!r}")
        rng = rng or np.random.default_rng(0)
        fan_in = in_ch * k * k
        std = np.sqrt(2.0 / fan_in)
        self.kernel = Tensor((rng.standard_normal((out_ch, in_ch, k, k)) * std).astype(dtype),
                             requires_grad=True)
        self.stride = stride
        self.padding = padding
        self.name = name

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.kernel, stride=self.stride, padding=self.padding)

    def parameters(self):
        return [(f"{self.name}.kernel", self.kernel)]


class BatchNormLayer:
    """Batch normalization with running statistics for eval mode.

    Running estimates use the biased batch variance so that a stream of
    identical batches converges to exactly the train-mode normalization.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=np.float32, name: str = "bn"):
        if eps <= 0:
            raise ValueError(f"BatchNormLayer: eps must be positive, got {eps}")
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self.name = name

    def forward(self, x: Tensor, training: bool) -> Tensor:
        if training:
            out, mean, var = T.batchnorm_train(x, self.gamma, self.beta, self.eps)
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean + m * mean).astype(self.running_mean.dtype)
            self.running_var = ((1 - m) * self.running_var + m * var).astype(self.running_var.dtype)
            return out
        scale = self.gamma.data / np.sqrt(self.running_var + self.eps)
        shift = self.beta.data - self.running_mean * scale
        return T.channel_affine(x, scale, shift)

    def eval_scale_shift(self) -> tuple[np.ndarray, np.ndarray]:
        """The folded per-channel affine used at inference."""
        scale = self.gamma.data / np.sqrt(self.running_var + self.eps)
        shift = self.beta.data - self.running_mean * scale
        return scale, shift

    def parameters(self):
        return [(f"{self.name}.gamma", self.gamma), (f"{self.name}.beta", self.beta)]

    def buffers(self):
        return [(f"{self.name}.running_mean", self.running_mean),
                (f"{self.name}.running_var", self.running_var)]

    def load_buffers(self, mean: np.ndarray, var: np.ndarray):
        self.running_mean = mean.astype(self.running_mean.dtype)
        self.running_var = var.astype(self.running_var.dtype)


class DenseLayer:
    """Fully connected layer with bias."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None,
                 dtype=np.float32, name: str = "fc"):
        rng = rng or np.random.default_rng(0)
        std = np.sqrt(2.0 / in_dim)
        self.weight = Tensor((rng.standard_normal((out_dim, in_dim)) * std).astype(dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)
        self.name = name

    def forward(self, x: Tensor) -> Tensor:
        return T.matmul(x, T.transpose2d(self.weight)) + self.bias

    def parameters(self):
        return [(f"{self.name}.weight", self.weight), (f"{self.name}.bias", self.bias)]


class VotingLayer:
    """Average each consecutive group of `group_size` units into one class
    score; the spike-output head uses it to smooth few-step spike counts."""

    def __init__(self, group_size: int, class_count: int):
        if group_size < 1:
            raise ValueError(f"VotingLayer: group size must be >= 1, got {group_size}")
        self.group_size = group_size
        self.class_count = class_count

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.group_size * self.class_count:
            raise T.ShapeError(
                f"VotingLayer: input width {x.shape[1]} != "
                f"group {self.group_size} x classes {self.class_count}")
        return T.voting(x, self.group_size)


def membrane_residual_add(h_main: Tensor, h_skip: Tensor) -> Tensor:
    """Sum two membrane drive tensors ahead of a firing step.

    Shapes must already agree; a mismatched skip path needs its own
    downsampling projection before this point.
    """
    if h_main.shape != h_skip.shape:
        raise T.ShapeError(f"membrane_residual_add: shapes {h_main.shape} "
                           f"and {h_skip.shape} do not match")
    return h_main + h_skip


def conv_bn_plif_forward(x_t: Tensor, state, conv: ConvLayer, bn: BatchNormLayer,
                         params, mt=None, training: bool = False):
    """Single-step Conv -> BN -> neuron pipeline; returns (spikes, state')."""
    from . import neuron
    drive = bn.forward(conv.forward(x_t), training=training)
    state2, spikes = neuron.step(state, drive, params, mt)
    return spikes, state2
