"""Config-driven network construction and the T-step forward pass.

Networks run layer by layer with the T time steps stacked along the batch
axis: stateless layers (conv, batch norm, dense, pooling) see one tensor
of shape [T*N, ...], while neuron layers split it back into steps and
thread their membrane state through the loop.  The recurrence lives
entirely inside neuron layers, so this ordering is exact and lets batch
norm fold time into its statistics.

Two output heads exist.  `membrane` ends with a plain affine layer whose
raw per-step values are the outputs; `spike_voting` fires the last dense
layer through a single-threshold neuron and averages groups of spike
trains with a voting layer.  Losses downstream always consume the mean
output across steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .layers import (BatchNormLayer, ConvLayer, DenseLayer, VotingLayer,
                     membrane_residual_add)
from .neuron import MTConfig, NeuronParams, NeuronState, step
from .tensor import Tensor

DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass
class ModelConfig:
    """Declarative architecture description.

    For `vgg`, `conv_counts[i]` convolutions with `filters[i]` channels
    form stage i, each stage ending in a 2x2 pool; `fc_widths` lists the
    hidden dense widths before the output layer.  For `resnet`,
    `blocks_per_stage` two-conv residual blocks run per stage and
    `fc_widths` must be empty (single output dense after global pooling).
    """

    arch: str = "vgg"
    conv_counts: tuple[int, ...] = (1, 1)
    filters: tuple[int, ...] = (16, 32)
    fc_widths: tuple[int, ...] = (64,)
    blocks_per_stage: int = 3
    steps: int = 1
    output_mode: str = "membrane"
    neuron: str = "plif"
    v_th: float = 1.0
    a_sg: float = 1.0
    a_init: float = 1.0
    mt: MTConfig = field(default_factory=MTConfig)
    input_shape: tuple[int, int, int] = (3, 32, 32)
    class_count: int = 10
    pool: str = "avg"
    voting_group: int = 10
    dtype: str = "float32"

    def __post_init__(self):
        self.conv_counts = tuple(int(c) for c in self.conv_counts)
        self.filters = tuple(int(f) for f in self.filters)
        self.fc_widths = tuple(int(w) for w in self.fc_widths)
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if self.arch not in ("vgg", "resnet"):
            raise ValueError(f"ModelConfig: unknown arch {self.arch!r}")
        if self.steps < 1:
            raise ValueError(f"ModelConfig: steps must be >= 1, got {self.steps}")
        if self.output_mode not in ("membrane", "spike_voting"):
            raise ValueError(f"ModelConfig: unknown output_mode {self.output_mode!r}")
        if self.pool not in ("avg", "max"):
            raise ValueError(f"ModelConfig: unknown pool {self.pool!r}")
        if len(self.filters) != len(self.conv_counts) and self.arch == "vgg":
            raise ValueError("ModelConfig: filters and conv_counts lengths differ")
        if any(f < 1 for f in self.filters) or any(c < 1 for c in self.conv_counts):
            raise ValueError("ModelConfig: stage and filter counts must be positive")
        if self.arch == "resnet" and self.fc_widths:
            raise ValueError("ModelConfig: resnet takes exactly one output dense layer; "
                             "fc_widths must be empty")
        if self.dtype not in DTYPES:
            raise ValueError(f"ModelConfig: unknown dtype {self.dtype!r}")
        if self.class_count < 2:
            raise ValueError(f"ModelConfig: class_count must be >= 2, got {self.class_count}")

    def np_dtype(self):
        return DTYPES[self.dtype]


@dataclass
class StepOutputs:
    """Per-step class scores plus their mean across steps.

    The mean is the left-to-right sum of the per-step tensors scaled by
    1/T, on the tape, so losses backpropagate through every step.
    """

    per_step: list
    mean: Tensor


class NeuronLayer:
    """Neuron dynamics over a stacked [T*N, ...] sequence."""

    def __init__(self, params: NeuronParams, mt: MTConfig | None, name: str):
        self.params = params
        self.mt = mt
        self.name = name

    def forward_seq(self, seq: Tensor, steps: int, ramp: bool = False) -> Tensor:
        n = seq.shape[0] // steps
        state = NeuronState.zeros((n,) + seq.shape[1:], dtype=seq.dtype)
        outs = []
        for t in range(steps):
            x_t = T.slice0(seq, t * n, (t + 1) * n)
            state, s = step(state, x_t, self.params, self.mt, ramp=ramp,
                            zero_state=(t == 0))
            outs.append(s)
        return T.concat0(outs)

    def parameters(self):
        if self.params.a.requires_grad:
            return [(f"{self.name}.a", self.params.a)]
        return []


class ConvUnit:
    """Conv -> BN -> neuron."""

    kind = "conv"

    def __init__(self, conv: ConvLayer, bn: BatchNormLayer, neuron: NeuronLayer):
        self.conv = conv
        self.bn = bn
        self.neuron = neuron

    def forward_seq(self, seq, steps, training, ramp):
        drive = self.bn.forward(self.conv.forward(seq), training=training)
        return self.neuron.forward_seq(drive, steps, ramp=ramp)

    def parameters(self):
        return self.conv.parameters() + self.bn.parameters() + self.neuron.parameters()

    def buffers(self):
        return self.bn.buffers()


class ResBlock:
    """Two-conv residual block; the skip joins the main path at the
    membrane drive of the block's final neuron, before it fires."""

    kind = "block"

    def __init__(self, conv1, bn1, neuron1, conv2, bn2, neuron2, down_conv=None, down_bn=None):
        self.conv1, self.bn1, self.neuron1 = conv1, bn1, neuron1
        self.conv2, self.bn2, self.neuron2 = conv2, bn2, neuron2
        self.down_conv, self.down_bn = down_conv, down_bn

    def forward_seq(self, seq, steps, training, ramp):
        h1 = self.bn1.forward(self.conv1.forward(seq), training=training)
        s1 = self.neuron1.forward_seq(h1, steps, ramp=ramp)
        h2 = self.bn2.forward(self.conv2.forward(s1), training=training)
        if self.down_conv is not None:
            skip = self.down_bn.forward(self.down_conv.forward(seq), training=training)
        else:
            skip = seq
        drive = membrane_residual_add(h2, skip)
        return self.neuron2.forward_seq(drive, steps, ramp=ramp)

    def parameters(self):
        parts = (self.conv1.parameters() + self.bn1.parameters() + self.neuron1.parameters()
                 + self.conv2.parameters() + self.bn2.parameters() + self.neuron2.parameters())
        if self.down_conv is not None:
            parts += self.down_conv.parameters() + self.down_bn.parameters()
        return parts

    def buffers(self):
        out = self.bn1.buffers() + self.bn2.buffers()
        if self.down_bn is not None:
            out += self.down_bn.buffers()
        return out


class PoolUnit:
    kind = "pool"

    def __init__(self, pool_kind: str, k: int):
        self.pool_kind = pool_kind
        self.k = k

    def forward_seq(self, seq, steps, training, ramp):
        if self.pool_kind == "max":
            return T.maxpool2d(seq, self.k)
        return T.avgpool2d(seq, self.k)

    def parameters(self):
        return []

    def buffers(self):
        return []


class FlattenUnit:
    kind = "flatten"

    def forward_seq(self, seq, steps, training, ramp):
        return T.reshape(seq, (seq.shape[0], int(np.prod(seq.shape[1:]))))

    def parameters(self):
        return []

    def buffers(self):
        return []


class DenseUnit:
    """Dense layer, optionally followed by a neuron (hidden FC layers)."""

    kind = "dense"

    def __init__(self, dense: DenseLayer, neuron: NeuronLayer | None):
        self.dense = dense
        self.neuron = neuron

    def forward_seq(self, seq, steps, training, ramp):
        out = self.dense.forward(seq)
        if self.neuron is not None:
            out = self.neuron.forward_seq(out, steps, ramp=ramp)
        return out

    def parameters(self):
        out = self.dense.parameters()
        if self.neuron is not None:
            out += self.neuron.parameters()
        return out

    def buffers(self):
        return []


class VotingUnit:
    kind = "voting"

    def __init__(self, voting: VotingLayer):
        self.voting = voting

    def forward_seq(self, seq, steps, training, ramp):
        return self.voting.forward(seq)

    def parameters(self):
        return []

    def buffers(self):
        return []


class Model:
    """A built network: an ordered unit pipeline plus its config."""

    def __init__(self, config: ModelConfig, units: list):
        self.config = config
        self.units = units

    def forward(self, x, steps: int | None = None, training: bool = False,
                ramp: bool = False) -> StepOutputs:
        """Run the unrolled network.

        `x` is either a single [N, C, H, W] array presented at every step
        (static input) or a list of per-step frames, whose length must
        equal the step count.  Neuron states start at zero for every call.
        """
        steps = steps or self.config.steps
        dtype = self.config.np_dtype()
        if isinstance(x, Tensor):
            x = x.data
        if isinstance(x, (list, tuple)):
            if len(x) != steps:
                raise ValueError(f"forward: got {len(x)} frames for {steps} steps")
            n = x[0].shape[0]
            seq = Tensor(np.concatenate([np.asarray(f, dtype=dtype) for f in x], axis=0))
        else:
            x = np.asarray(x, dtype=dtype)
            n = x.shape[0]
            seq = Tensor(np.concatenate([x] * steps, axis=0)) if steps > 1 else Tensor(x)
        out = seq
        for unit in self.units:
            out = unit.forward_seq(out, steps, training, ramp)
        per_step = [T.slice0(out, t * n, (t + 1) * n) for t in range(steps)]
        total = per_step[0]
        for t in range(1, steps):
            total = total + per_step[t]
        mean = total if steps == 1 else total * (1.0 / steps)
        return StepOutputs(per_step=per_step, mean=mean)

    def parameters(self):
        out = []
        for unit in self.units:
            out += unit.parameters()
        return out

    def buffers(self):
        out = []
        for unit in self.units:
            out += unit.buffers()
        return out

    def parameter_count(self) -> int:
        return sum(p.size for _, p in self.parameters())

    def load_buffers(self, named: dict):
        for unit in self.units:
            for bn in _unit_bns(unit):
                mean = named.get(f"{bn.name}.running_mean")
                var = named.get(f"{bn.name}.running_var")
                if mean is None or var is None:
                    raise KeyError(f"missing running stats for {bn.name}")
                bn.load_buffers(mean, var)


def _unit_bns(unit):
    if unit.kind == "conv":
        return [unit.bn]
    if unit.kind == "block":
        out = [unit.bn1, unit.bn2]
        if unit.down_bn is not None:
            out.append(unit.down_bn)
        return out
    return []


def _neuron_layer(cfg: ModelConfig, mt_here: MTConfig | None, name: str) -> NeuronLayer:
    params = NeuronParams.create(kind=cfg.neuron, a_init=cfg.a_init, v_th=cfg.v_th,
                                 a_sg=cfg.a_sg, dtype=cfg.np_dtype())
    return NeuronLayer(params, mt_here, name)


def build(config: ModelConfig, seed: int = 0) -> Model:
    """Construct a model with deterministic fan-in scaled Gaussian init."""
    rng = np.random.default_rng(seed)
    dtype = config.np_dtype()
    mt = config.mt
    conv_mt = mt if mt.enabled else None
    fc_mt = mt if (mt.enabled and mt.scope == "conv_and_fc") else None
    enc_mt = conv_mt if mt.apply_to_encoder else None

    units: list = []
    in_ch, h, w = config.input_shape

    if config.arch == "vgg":
        ch = in_ch
        for s, (count, f) in enumerate(zip(config.conv_counts, config.filters), start=1):
            for i in range(1, count + 1):
                name = f"s{s}c{i}"
                is_encoder = not units
                conv = ConvLayer(ch, f, k=3, stride=1, padding="same", rng=rng,
                                 dtype=dtype, name=f"{name}.conv")
                bn = BatchNormLayer(f, dtype=dtype, name=f"{name}.bn")
                nl = _neuron_layer(config, enc_mt if is_encoder else conv_mt, name)
                units.append(ConvUnit(conv, bn, nl))
                ch = f
            units.append(PoolUnit(config.pool, 2))
            h, w = h // 2, w // 2
            if h < 1 or w < 1:
                raise ValueError(f"ModelConfig: input {config.input_shape} too small "
                                 f"for {len(config.conv_counts)} pooling stages")
        units.append(FlattenUnit())
        feat = ch * h * w
        for i, width in enumerate(config.fc_widths, start=1):
            name = f"fc{i}"
            dense = DenseLayer(feat, width, rng=rng, dtype=dtype, name=name)
            units.append(DenseUnit(dense, _neuron_layer(config, fc_mt, name)))
            feat = width
    else:
        f0 = config.filters[0]
        conv = ConvLayer(in_ch, f0, k=3, stride=1, padding="same", rng=rng,
                         dtype=dtype, name="enc.conv")
        bn = BatchNormLayer(f0, dtype=dtype, name="enc.bn")
        units.append(ConvUnit(conv, bn, _neuron_layer(config, enc_mt, "enc")))
        ch = f0
        for s, f in enumerate(config.filters, start=1):
            for b in range(1, config.blocks_per_stage + 1):
                name = f"s{s}b{b}"
                stride = 2 if (s > 1 and b == 1) else 1
                conv1 = ConvLayer(ch, f, k=3, stride=stride, padding="same", rng=rng,
                                  dtype=dtype, name=f"{name}.conv1")
                bn1 = BatchNormLayer(f, dtype=dtype, name=f"{name}.bn1")
                n1 = _neuron_layer(config, conv_mt, f"{name}.n1")
                conv2 = ConvLayer(f, f, k=3, stride=1, padding="same", rng=rng,
                                  dtype=dtype, name=f"{name}.conv2")
                bn2 = BatchNormLayer(f, dtype=dtype, name=f"{name}.bn2")
                n2 = _neuron_layer(config, conv_mt, f"{name}.n2")
                down_conv = down_bn = None
                if stride != 1 or ch != f:
                    # 3x3 projection; a 1x1 projection undershoots the
                    # published parameter counts by several percent.
                    down_conv = ConvLayer(ch, f, k=3, stride=stride, padding="same",
                                          rng=rng, dtype=dtype, name=f"{name}.down.conv")
                    down_bn = BatchNormLayer(f, dtype=dtype, name=f"{name}.down.bn")
                units.append(ResBlock(conv1, bn1, n1, conv2, bn2, n2, down_conv, down_bn))
                ch = f
                if stride == 2:
                    h, w = -(-h // 2), -(-w // 2)
        units.append(PoolUnit(config.pool, h))
        units.append(FlattenUnit())
        feat = ch

    if config.output_mode == "membrane":
        units.append(DenseUnit(DenseLayer(feat, config.class_count, rng=rng,
                                          dtype=dtype, name="head"), None))
    else:
        width = config.voting_group * config.class_count
        dense = DenseLayer(feat, width, rng=rng, dtype=dtype, name="head")
        # the voting head always fires single-threshold: its consumer is an
        # averaging layer, not a conv/dense synapse
        units.append(DenseUnit(dense, _neuron_layer(config, None, "head")))
        units.append(VotingUnit(VotingLayer(config.voting_group, config.class_count)))

    return Model(config, units)


# Paper-scale presets (Tables of VGG/ResNet configurations) and the desk
# scale used by tests and the acceptance suite.
PRESETS = {
    "vgg8": ModelConfig(arch="vgg", conv_counts=(3, 3), filters=(256, 256),
                        fc_widths=(2048,), input_shape=(3, 32, 32), class_count=10),
    "vgg9": ModelConfig(arch="vgg", conv_counts=(2, 2, 3), filters=(256, 512, 512),
                        fc_widths=(1024,), input_shape=(3, 32, 32), class_count=10),
    "vgg12": ModelConfig(arch="vgg", conv_counts=(2, 2, 3, 3, 3),
                         filters=(128, 128, 128, 128, 128), fc_widths=(512,),
                         input_shape=(2, 128, 128), class_count=10),
    "resnet20": ModelConfig(arch="resnet", filters=(64, 128, 256), blocks_per_stage=3,
                            fc_widths=(), input_shape=(3, 32, 32), class_count=10),
    "tiny_vgg": ModelConfig(arch="vgg", conv_counts=(1, 1), filters=(16, 32),
                            fc_widths=(64,), input_shape=(3, 32, 32), class_count=10),
    "tiny_resnet": ModelConfig(arch="resnet", filters=(8, 16), blocks_per_stage=1,
                               fc_widths=(), input_shape=(3, 32, 32), class_count=10),
}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides)
