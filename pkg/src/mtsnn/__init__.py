"""Spiking neural network training with multi-threshold firing and a
machine-checked multiplication-free inference path."""

from .counting import OpCounts, op_counter, tag
from .model import Model, ModelConfig, StepOutputs, build, preset
from .neuron import MTConfig, NeuronParams, NeuronState
from .tensor import Tensor, ShapeError, backward

__version__ = "0.1.0"

__all__ = [
    "Model", "ModelConfig", "MTConfig", "NeuronParams", "NeuronState",
    "OpCounts", "ShapeError", "StepOutputs", "Tensor", "backward", "build",
    "op_counter", "preset", "tag", "__version__",
]
