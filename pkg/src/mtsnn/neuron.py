"""Spiking neuron dynamics: IF/LIF/PLIF cells with single- or
multi-threshold firing and a rectangular surrogate gradient.

A neuron layer carries a membrane potential V across time steps.  Each
step integrates the input current into a pre-spike potential H, fires
against the base threshold (and any auxiliary threshold offsets), and
resets the membrane wherever the base spike occurred.  The auxiliary
spikes only add into the layer output; the reset sees the base spike
alone.

The hard step function has zero derivative almost everywhere, so firing
is registered on the tape with a rectangular surrogate: dS/dH is 1/a
inside a window of width a centred on the threshold, 0 outside.  Each
auxiliary threshold gets its own window centred on its shifted threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import counting
from . import tensor as T
from .tensor import Tensor


@dataclass
class MTConfig:
    """Multi-threshold firing configuration.

    `deltas` lists the auxiliary threshold offsets; empty means plain
    single-threshold firing.  `scope` selects which layers fire with the
    auxiliary thresholds; the encoder layer is included only when
    `apply_to_encoder` is set.
    """

    deltas: tuple[float, ...] = ()
    scope: str = "conv_only"
    apply_to_encoder: bool = True

    def __post_init__(self):
        self.deltas = tuple(float(d) for d in self.deltas)
        if len(set(self.deltas)) != len(self.deltas):
            raise ValueError(f"MTConfig: duplicate deltas in {self.deltas}")
        if any(not math.isfinite(d) for d in self.deltas):
            raise ValueError(f"MTConfig: non-finite delta in {self.deltas}")
        if self.scope not in ("conv_only", "conv_and_fc"):
            raise ValueError(f"MTConfig: unknown scope {self.scope!r}")

    @property
    def enabled(self) -> bool:
        return len(self.deltas) > 0


ST = MTConfig(deltas=())

NEURON_KINDS = ("if", "lif", "plif")


@dataclass
class NeuronParams:
    """Per-layer neuron parameters.

    `a` reparameterizes the leak time constant as tau = 1 + exp(-a), which
    keeps tau > 1 for any finite a; it is tape-attached (learnable) only
    for PLIF cells.  `v_reset` is fixed at 0.  `a_sg` is the surrogate
    window width.
    """

    kind: str = "plif"
    a: Tensor = field(default=None)  # type: ignore[assignment]
    v_th: float = 1.0
    v_reset: float = 0.0
    a_sg: float = 1.0

    def __post_init__(self):
        if self.kind not in NEURON_KINDS:
            raise ValueError(f"NeuronParams: unknown kind {self.kind!r}")
        if self.v_th <= 0:
            raise ValueError(f"NeuronParams: v_th must be positive, got {self.v_th}")
        if self.a_sg <= 0:
            raise ValueError(f"NeuronParams: a_sg must be positive, got {self.a_sg}")
        if self.v_reset != 0.0:
            raise ValueError("NeuronParams: v_reset is fixed at 0")
        if self.a is None:
            self.a = Tensor(np.asarray(1.0, dtype=np.float32),
                            requires_grad=(self.kind == "plif"))

    @classmethod
    def create(cls, kind: str = "plif", a_init: float = 1.0, v_th: float = 1.0,
               a_sg: float = 1.0, dtype=np.float32) -> "NeuronParams":
        a = Tensor(np.asarray(a_init, dtype=dtype), requires_grad=(kind == "plif"))
        return cls(kind=kind, a=a, v_th=v_th, a_sg=a_sg)

    def tau(self) -> Tensor:
        """Leak time constant tau = 1 + exp(-a), always > 1."""
        return T.exp(T.neg(self.a)) + 1.0


@dataclass
class NeuronState:
    """Membrane potential after the spike-triggered reset, per neuron."""

    v: Tensor

    @classmethod
    def zeros(cls, shape, dtype=np.float32) -> "NeuronState":
        return cls(v=Tensor(np.zeros(shape, dtype=dtype)))


def heaviside(x: Tensor) -> Tensor:
    """Elementwise step: 1 where x >= 0, else 0.  Not differentiable; the
    result is detached from the tape."""
    counting.record("heaviside", cmps=x.size)
    return Tensor((x.data >= 0).astype(x.dtype))


def _rect_window(a_sg: float):
    half = a_sg / 2.0

    def local_grad(x: np.ndarray) -> np.ndarray:
        return (np.abs(x) <= half).astype(x.dtype) / a_sg

    return local_grad


def _spike_at_zero(x: Tensor, a_sg: float, ramp: bool = False) -> Tensor:
    """Theta(x) with the rectangular surrogate window centred at 0.

    With `ramp` the forward is replaced by the clipped linear ramp whose
    true derivative equals the surrogate window; the gradient-check suite
    uses this substituted forward so finite differences have something
    smooth to probe.
    """
    counting.record("spike", cmps=x.size)
    if ramp:
        fwd = lambda v: np.clip(v / a_sg + 0.5, 0.0, 1.0)
    else:
        fwd = lambda v: (v >= 0).astype(v.dtype)
    return T.custom_grad(fwd, _rect_window(a_sg), name="spike")(x)


def membrane_dynamics(v_prev: Tensor, x_t: Tensor, params: NeuronParams,
                      zero_state: bool = False) -> Tensor:
    """Integrate input current into the pre-spike potential H.

    IF cells accumulate directly; LIF/PLIF cells blend the previous
    potential and the input with weights (1 - 1/tau) and 1/tau.  For PLIF
    the gradient flows into the leak parameter a.  `zero_state` marks a
    caller-guaranteed all-zero V (the first step of a sequence) and skips
    the vanishing term; the result is bit-identical either way.
    """
    if v_prev.shape != x_t.shape:
        raise T.ShapeError(f"membrane_dynamics: state shape {v_prev.shape} "
                           f"does not match input shape {x_t.shape}")
    if params.kind == "if":
        return x_t if zero_state else v_prev + x_t
    inv_tau = 1.0 / params.tau()
    drive = T.mul(x_t, inv_tau)
    if zero_state:
        return drive
    return T.mul(v_prev, 1.0 - inv_tau) + drive


def fire_st(h: Tensor, params: NeuronParams, ramp: bool = False) -> Tensor:
    """Single-threshold firing: S = Theta(H - v_th) with surrogate backward."""
    return _spike_at_zero(h - params.v_th, params.a_sg, ramp=ramp)


def fire_mt(h: Tensor, params: NeuronParams, mt: MTConfig | None,
            ramp: bool = False) -> tuple[Tensor, Tensor]:
    """Fire against the base threshold and every auxiliary offset.

    Returns (base spike, summed spikes).  Each per-threshold spike is
    binary; the sum is integer-valued in [0, n+1].  With no deltas the sum
    is exactly the single-threshold spike train.
    """
    s_base = fire_st(h, params, ramp=ramp)
    if mt is None or not mt.enabled:
        return s_base, s_base
    s_sum = s_base
    for delta in mt.deltas:
        s_sum = s_sum + _spike_at_zero(h - (params.v_th + delta), params.a_sg, ramp=ramp)
    return s_base, s_sum


def reset(h: Tensor, s_base: Tensor, params: NeuronParams) -> Tensor:
    """Hard reset after firing: V = H * (1 - S) + v_reset * S.

    The reset reacts to the base spike only; auxiliary spikes feed the
    layer output but never touch the membrane.  With v_reset = 0 a firing
    neuron holds exactly 0 afterwards.
    """
    if h.shape != s_base.shape:
        raise T.ShapeError(f"reset: potential shape {h.shape} "
                           f"does not match spike shape {s_base.shape}")
    v = T.mul(h, 1.0 - s_base)
    if params.v_reset != 0.0:
        v = v + s_base * params.v_reset
    return v


def step(state: NeuronState, x_t: Tensor, params: NeuronParams,
         mt: MTConfig | None = None, ramp: bool = False,
         zero_state: bool = False) -> tuple[NeuronState, Tensor]:
    """One time step: integrate, fire, reset.  Returns the new state and
    the summed spike output."""
    h = membrane_dynamics(state.v, x_t, params, zero_state=zero_state)
    s_base, s_sum = fire_mt(h, params, mt, ramp=ramp)
    v_next = reset(h, s_base, params)
    return NeuronState(v=v_next), s_sum
