"""Multiplication-free inference.

Spike-activation layers execute as gather-and-add: for every active spike
the matching kernel column is added into the output, so the synaptic work
contains no multiply instruction.  Summed multi-threshold spike trains
decompose exactly into their per-threshold binary tensors (the level sets
``counts >= m``), and convolution distributes over that sum, so the
accumulation path reproduces the dense path up to float reassociation.

Constant factors are folded into kernels ahead of time: eval-mode batch
norm becomes a per-channel kernel scale plus an additive shift, the
neuron leak blend 1/tau scales the incoming kernel, and average pooling
runs as integer sum pooling whose 1/k^2 lands in the next kernel.  Fold
arithmetic is counted under the ``fold`` tag; the encoder (real-valued
pixels) stays on the dense path under the ``encoder`` tag; the membrane
leak at steps t > 0 is the one remaining runtime multiply, under
``leak``.  Accumulation tags (``*.accum``) must count exactly zero
multiplications, which the verify report enforces.
"""

from __future__ import annotations

import numpy as np

from . import counting
from . import tensor as T
from .model import Model
from .neuron import MTConfig, NeuronParams
from .tensor import Tensor

TOL_F32 = 1e-5
TOL_F64 = 1e-12
LOGIT_TOL = 1e-4
EXEMPT_TAGS = ("encoder", "fold", "leak", "readout")

_INJECT_MULTIPLY = False


class MfreeError(RuntimeError):
    """Raised when inputs violate the spike-only contract."""


def set_multiply_injection(enabled: bool) -> None:
    """Test hook: make every accumulation kernel perform (and report) one
    multiplication, which must flip verification to FAIL."""
    global _INJECT_MULTIPLY
    _INJECT_MULTIPLY = bool(enabled)


def _require_binary(spikes: np.ndarray, op: str) -> None:
    if spikes.size and not np.isin(spikes, (0.0, 1.0)).all():
        raise MfreeError(f"{op}: input must be strictly binary; "
                         f"decompose summed spikes into per-threshold tensors first")


def _require_counts(x: np.ndarray, where: str) -> None:
    if x.size and (np.any(x < 0) or not np.array_equal(x, np.rint(x))):
        raise MfreeError(f"{where}: expected integer spike counts, found real-valued "
                         f"activations")


def integer_levels(counts: np.ndarray):
    """Yield the binary level sets 1[counts >= m] for m = 1..max(counts).

    For a summed spike tensor these are exactly the per-threshold spike
    tensors in ascending threshold order.
    """
    top = int(counts.max()) if counts.size else 0
    for m in range(1, top + 1):
        yield (counts >= m).astype(counts.dtype)


def accum_conv(spikes: np.ndarray, kernel: np.ndarray, stride: int = 1,
               padding: str = "same") -> np.ndarray:
    """Convolution of a binary spike tensor by pure gather-and-add.

    For each active input location the kernel column for that input
    channel and tap is added into the corresponding output pixels.  The
    add count reported is exactly the number of scalar additions made.
    """
    _require_binary(spikes, "accum_conv")
    n, cin, h, w = spikes.shape
    cout, _, kh, kw = kernel.shape
    oh, ow, ph, pw = T._conv_geometry(h, w, kh, kw, stride, padding, "accum_conv")
    xp = T._pad_input(spikes, ph, pw)
    out = np.zeros((n, oh, ow, cout), dtype=kernel.dtype)
    adds = 0
    for ky in range(kh):
        for kx in range(kw):
            tap = xp[:, :, ky:ky + stride * oh:stride, kx:kx + stride * ow:stride]
            n_idx, c_idx, y_idx, x_idx = np.nonzero(tap)
            if n_idx.size == 0:
                continue
            np.add.at(out, (n_idx, y_idx, x_idx), kernel[:, c_idx, ky, kx].T)
            adds += n_idx.size * cout
    if _INJECT_MULTIPLY:
        out.flat[0] = out.flat[0] * 1.0
        counting.record("accum_conv", mults=1)
    counting.record("accum_conv", adds=adds)
    return out.transpose(0, 3, 1, 2)


def accum_dense(spikes: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Dense layer on binary spikes: sum the weight columns of the active
    inputs, no multiplications."""
    _require_binary(spikes, "accum_dense")
    n, _ = spikes.shape
    out_dim = weight.shape[0]
    out = np.zeros((n, out_dim), dtype=weight.dtype)
    n_idx, i_idx = np.nonzero(spikes)
    if n_idx.size:
        np.add.at(out, (n_idx,), weight.T[i_idx])
    if _INJECT_MULTIPLY:
        out.flat[0] = out.flat[0] * 1.0
        counting.record("accum_dense", mults=1)
    counting.record("accum_dense", adds=n_idx.size * out_dim)
    return out


def accum_counts_conv(counts, kernel, stride=1, padding="same"):
    """Convolve an integer count tensor by accumulating its binary levels."""
    _require_counts(counts, "accum_counts_conv")
    n, cin, h, w = counts.shape
    cout, _, kh, kw = kernel.shape
    oh, ow, _, _ = T._conv_geometry(h, w, kh, kw, stride, padding, "accum_conv")
    out = np.zeros((n, cout, oh, ow), dtype=kernel.dtype)
    for mask in integer_levels(counts):
        out += accum_conv(mask, kernel, stride, padding)
        counting.record("accum_conv", adds=out.size)
    return out


def accum_counts_dense(counts, weight):
    _require_counts(counts, "accum_counts_dense")
    out = np.zeros((counts.shape[0], weight.shape[0]), dtype=weight.dtype)
    for mask in integer_levels(counts):
        out += accum_dense(mask, weight)
        counting.record("accum_dense", adds=out.size)
    return out


def accum_identity(counts, const, out):
    """Add `const` into `out` once per unit of `counts` (identity skip)."""
    _require_counts(counts, "accum_identity")
    adds = 0
    for mask in integer_levels(counts):
        active = mask > 0
        out[active] += const
        adds += int(active.sum())
    counting.record("accum_identity", adds=adds)
    return out


# ---------------------------------------------------------------------------
# spike generation on raw arrays (inference side)
# ---------------------------------------------------------------------------


def _thresholds(params: NeuronParams, mt: MTConfig | None) -> np.ndarray:
    thr = [params.v_th]
    if mt is not None and mt.enabled:
        thr += [params.v_th + d for d in mt.deltas]
    return np.sort(np.asarray(thr))


def _fire_counts(h: np.ndarray, params: NeuronParams, mt: MTConfig | None):
    """Summed spikes and the base spike mask for a raw membrane array."""
    thresholds = _thresholds(params, mt)
    s_sum = np.zeros_like(h)
    for thr in thresholds:
        s_sum += (h >= thr).astype(h.dtype)
    counting.record("spike", cmps=h.size * len(thresholds),
                    adds=h.size * (len(thresholds) - 1))
    base = h >= params.v_th
    counting.record("spike", cmps=h.size)
    return s_sum, base


def _leak_factors(params: NeuronParams) -> tuple[float, float]:
    """(membrane keep factor 1 - 1/tau, input factor 1/tau)."""
    if params.kind == "if":
        return 1.0, 1.0
    tau = 1.0 + np.exp(-float(params.a.data.reshape(-1)[0]))
    return 1.0 - 1.0 / tau, 1.0 / tau


def _neuron_run(drive: np.ndarray, steps: int, params: NeuronParams,
                mt: MTConfig | None, name: str) -> np.ndarray:
    """Run neuron dynamics over a stacked [T*N, ...] drive.  The incoming
    kernel fold already applied 1/tau, so only the leak multiply remains
    (steps > 1, leaky kinds)."""
    n = drive.shape[0] // steps
    keep, _ = _leak_factors(params)
    v = np.zeros((n,) + drive.shape[1:], dtype=drive.dtype)
    outs = []
    for t in range(steps):
        x_t = drive[t * n:(t + 1) * n]
        if t == 0:
            h = x_t.copy()
        elif params.kind == "if":
            h = v + x_t
            counting.record(name, adds=h.size)
        else:
            with counting.tag("leak"):
                counting.record("leak", mults=v.size)
            h = keep * v + x_t
            counting.record(name, adds=h.size)
        s_sum, base = _fire_counts(h, params, mt)
        v = h.copy()
        v[base] = 0.0
        outs.append(s_sum)
    return np.concatenate(outs, axis=0)


def _sumpool(x: np.ndarray, k: int) -> np.ndarray:
    n, c, h, w = x.shape
    out = x.reshape(n, c, h // k, k, w // k, k).sum(axis=(3, 5))
    counting.record("sumpool", adds=out.size * (k * k - 1))
    return out


def _blockmax(x: np.ndarray, k: int) -> np.ndarray:
    n, c, h, w = x.shape
    out = x.reshape(n, c, h // k, k, w // k, k).max(axis=(3, 5))
    counting.record("maxpool", cmps=out.size * (k * k - 1))
    return out


# ---------------------------------------------------------------------------
# folded model execution
# ---------------------------------------------------------------------------


def _fold_conv(conv, bn, inv_tau: float, input_scale: float):
    """Fold BN eval affine, upstream pooling scale and 1/tau into the
    kernel and an additive per-channel shift."""
    scale, shift = bn.eval_scale_shift()
    with counting.tag("fold"):
        kernel = conv.kernel.data * scale[:, None, None, None] * (inv_tau * input_scale)
        bias = shift * inv_tau
        counting.record("fold", mults=kernel.size * 2 + bias.size)
    return kernel, bias


def _fold_dense(dense, inv_tau: float, input_scale: float):
    with counting.tag("fold"):
        weight = dense.weight.data * (inv_tau * input_scale)
        bias = dense.bias.data * inv_tau
        counting.record("fold", mults=weight.size + bias.size)
    return weight, bias


class MfreeOutputs:
    """Per-step logits, their mean, and the op counts of the run."""

    def __init__(self, per_step: list[np.ndarray], mean: np.ndarray,
                 counts: counting.OpCounts):
        self.per_step = per_step
        self.mean = mean
        self.counts = counts


def run_inference_mfree(model: Model, x, steps: int | None = None) -> MfreeOutputs:
    """Execute the trained model along the accumulation path.

    Hidden activations must be integer spike counts; a real-valued hidden
    activation raises :class:`MfreeError`.  The encoder conv (raw pixels)
    and the constant folds are the only multiplication sites besides the
    leak blend at steps beyond the first.
    """
    steps = steps or model.config.steps
    dtype = model.config.np_dtype()
    if isinstance(x, (list, tuple)):
        if len(x) != steps:
            raise ValueError(f"run_inference_mfree: got {len(x)} frames for {steps} steps")
        seq = np.concatenate([np.asarray(f, dtype=dtype) for f in x], axis=0)
    else:
        x = np.asarray(x, dtype=dtype)
        seq = np.concatenate([x] * steps, axis=0) if steps > 1 else x
    n = seq.shape[0] // steps

    with counting.op_counter() as counts:
        acts = seq
        scale = 1.0
        first_conv = True
        for unit in model.units:
            kind = unit.kind
            if kind == "conv":
                _, inv_tau = _leak_factors(unit.neuron.params)
                if first_conv:
                    # encoder consumes real pixels; dense conv exempt by design
                    with counting.tag("encoder"):
                        drive = T.conv2d(Tensor(acts), unit.conv.kernel.detach(),
                                         stride=unit.conv.stride,
                                         padding=unit.conv.padding).data
                        s, b = unit.bn.eval_scale_shift()
                        expand = (1, -1, 1, 1)
                        drive = drive * (s.reshape(expand) * inv_tau) + (b.reshape(expand) * inv_tau)
                        counting.record("encoder", mults=drive.size, adds=drive.size)
                    first_conv = False
                else:
                    lname = unit.bn.name.rsplit('.', 1)[0]
                    kernel, bias = _fold_conv(unit.conv, unit.bn, inv_tau, scale)
                    with counting.tag(f"{lname}.accum"):
                        drive = accum_counts_conv(acts, kernel,
                                                  stride=unit.conv.stride,
                                                  padding=unit.conv.padding)
                    with counting.tag(f"{lname}.bias"):
                        drive += bias[None, :, None, None]
                        counting.record("bias", adds=drive.size)
                acts = _neuron_run(drive, steps, unit.neuron.params, unit.neuron.mt,
                                   f"{unit.bn.name.rsplit('.', 1)[0]}.neuron")
                scale = 1.0
            elif kind == "block":
                acts = _run_block_mfree(unit, acts, steps, scale)
                scale = 1.0
            elif kind == "pool":
                if unit.pool_kind == "max":
                    acts = _blockmax(acts, unit.k)
                else:
                    acts = _sumpool(acts, unit.k)
                    scale *= 1.0 / (unit.k * unit.k)
            elif kind == "flatten":
                acts = acts.reshape(acts.shape[0], -1)
            elif kind == "dense":
                name = unit.dense.name
                if unit.neuron is None:
                    weight, bias = _fold_dense(unit.dense, 1.0, scale)
                    with counting.tag(f"{name}.accum"):
                        acts = accum_counts_dense(acts, weight)
                    with counting.tag(f"{name}.bias"):
                        acts = acts + bias[None, :]
                        counting.record("bias", adds=acts.size)
                    scale = 1.0
                else:
                    _, inv_tau = _leak_factors(unit.neuron.params)
                    weight, bias = _fold_dense(unit.dense, inv_tau, scale)
                    with counting.tag(f"{name}.accum"):
                        drive = accum_counts_dense(acts, weight)
                    with counting.tag(f"{name}.bias"):
                        drive = drive + bias[None, :]
                        counting.record("bias", adds=drive.size)
                    acts = _neuron_run(drive, steps, unit.neuron.params, unit.neuron.mt,
                                       f"{name}.neuron")
                    scale = 1.0
            elif kind == "voting":
                g = unit.voting.group_size
                _require_counts(acts, "voting")
                sums = acts.reshape(acts.shape[0], -1, g).sum(axis=2)
                counting.record("voting.accum", adds=sums.size * (g - 1))
                with counting.tag("fold"):
                    table = np.arange(int(sums.max()) + 1, dtype=dtype) / g
                    counting.record("fold", mults=table.size)
                acts = table[sums.astype(np.int64)]
                scale = 1.0
            else:
                raise MfreeError(f"run_inference_mfree: unsupported unit kind {kind!r}")

        per_step = [acts[t * n:(t + 1) * n] for t in range(steps)]
        mean = per_step[0].copy()
        for t in range(1, steps):
            mean += per_step[t]
            counting.record("readout", adds=mean.size)
        if steps > 1:
            with counting.tag("readout"):
                counting.record("readout", mults=mean.size)
            mean = mean * (1.0 / steps)
    return MfreeOutputs(per_step, mean, counts)


def _run_block_mfree(block, acts, steps, scale):
    _, inv_tau1 = _leak_factors(block.neuron1.params)
    _, inv_tau2 = _leak_factors(block.neuron2.params)
    name = block.bn1.name.rsplit(".", 1)[0]

    kernel1, bias1 = _fold_conv(block.conv1, block.bn1, inv_tau1, scale)
    with counting.tag(f"{name}.conv1.accum"):
        drive1 = accum_counts_conv(acts, kernel1, stride=block.conv1.stride,
                                   padding=block.conv1.padding)
    with counting.tag(f"{name}.conv1.bias"):
        drive1 += bias1[None, :, None, None]
        counting.record("bias", adds=drive1.size)
    s1 = _neuron_run(drive1, steps, block.neuron1.params, block.neuron1.mt,
                     f"{name}.n1.neuron")

    kernel2, bias2 = _fold_conv(block.conv2, block.bn2, inv_tau2, 1.0)
    with counting.tag(f"{name}.conv2.accum"):
        drive2 = accum_counts_conv(s1, kernel2, stride=block.conv2.stride,
                                   padding=block.conv2.padding)
    with counting.tag(f"{name}.conv2.bias"):
        drive2 += bias2[None, :, None, None]
        counting.record("bias", adds=drive2.size)

    if block.down_conv is not None:
        kernel_d, bias_d = _fold_conv(block.down_conv, block.down_bn, inv_tau2, scale)
        with counting.tag(f"{name}.down.accum"):
            skip = accum_counts_conv(acts, kernel_d, stride=block.down_conv.stride,
                                     padding=block.down_conv.padding)
        with counting.tag(f"{name}.down.bias"):
            skip += bias_d[None, :, None, None]
            counting.record("bias", adds=skip.size)
        drive = drive2 + skip
        counting.record(f"{name}.residual", adds=drive.size)
    else:
        # identity skip: each input spike adds the constant scale/tau once
        with counting.tag(f"{name}.skip.accum"):
            drive = accum_identity(acts, np.asarray(scale * inv_tau2, dtype=acts.dtype),
                                   drive2)
    return _neuron_run(drive, steps, block.neuron2.params, block.neuron2.mt,
                       f"{name}.n2.neuron")


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


def mt_equivalence_check(h: np.ndarray, params: NeuronParams, mt: MTConfig | None,
                         kernel: np.ndarray, stride: int = 1,
                         padding: str = "same") -> dict:
    """Check Conv(summed spikes) == sum of Conv(per-threshold spikes).

    The left side runs the dense convolution on the integer spike sum;
    the right side accumulates each binary per-threshold tensor.  Reports
    the max abs difference and both sides' op counts.
    """
    h = np.asarray(h)
    thresholds = _thresholds(params, mt)
    per_thr = [(h >= thr).astype(h.dtype) for thr in thresholds]
    s_sum = np.zeros_like(h)
    for s in per_thr:
        s_sum += s

    with counting.op_counter() as dense_counts:
        lhs = T.conv2d(Tensor(s_sum), Tensor(np.asarray(kernel, dtype=h.dtype)),
                       stride=stride, padding=padding).data
    with counting.op_counter() as accum_counts:
        rhs = np.zeros_like(lhs)
        for s in per_thr:
            rhs += accum_conv(s, np.asarray(kernel, dtype=h.dtype), stride, padding)

    tol = TOL_F64 if h.dtype == np.float64 else TOL_F32
    diff = float(np.max(np.abs(lhs - rhs))) if lhs.size else 0.0
    return {
        "max_abs_diff": diff,
        "tolerance": tol,
        "passed": bool(diff < tol),
        "dtype": str(h.dtype),
        "thresholds": [float(t) for t in thresholds],
        "dense_counts": dense_counts.as_dict(),
        "accum_counts": accum_counts.as_dict(),
    }


def verify_model(model: Model, x, steps: int | None = None, eq12_draws: int = 20,
                 seed: int = 0) -> dict:
    """Full verification report for a model on a batch of inputs.

    Checks: zero multiplications in every accumulation tag, per-logit
    agreement with the dense path within 1e-4, total argmax agreement,
    and a sample of random equivalence draws at both precisions.
    """
    steps = steps or model.config.steps
    dense = model.forward(x, steps=steps, training=False)
    mfree = run_inference_mfree(model, x, steps=steps)

    logit_diff = float(np.max(np.abs(dense.mean.data - mfree.mean)))
    agree = float((dense.mean.data.argmax(axis=1) == mfree.mean.argmax(axis=1)).mean())

    accum_tags = {name: entry for name, entry in mfree.counts.by_tag.items()
                  if name.endswith(".accum") or name == "voting.accum"}
    accum_mults = sum(entry.multiplications for entry in accum_tags.values())
    accum_adds = sum(entry.additions for entry in accum_tags.values())
    mult_tags = sorted(name for name, entry in mfree.counts.by_tag.items()
                       if entry.multiplications > 0)

    rng = np.random.default_rng(seed)
    eq12 = {"draws": eq12_draws, "max_abs_diff_f32": 0.0, "max_abs_diff_f64": 0.0}
    params = NeuronParams.create(kind="if")
    for _ in range(eq12_draws):
        k = int(rng.integers(1, 4))
        deltas = tuple(float(d) for d in
                       np.round(rng.uniform(-0.6, 0.6, size=int(rng.integers(1, 5))), 3))
        deltas = tuple(dict.fromkeys(deltas))
        mt = MTConfig(deltas=deltas)
        for np_dtype, key in ((np.float32, "max_abs_diff_f32"), (np.float64, "max_abs_diff_f64")):
            hv = rng.standard_normal((1, 2, 6, 6)).astype(np_dtype) * 1.5 + 0.8
            kv = rng.standard_normal((3, 2, k, k)).astype(np_dtype)
            rep = mt_equivalence_check(hv, params, mt, kv, padding="valid")
            eq12[key] = max(eq12[key], rep["max_abs_diff"])
    eq12["passed"] = bool(eq12["max_abs_diff_f32"] < TOL_F32
                          and eq12["max_abs_diff_f64"] < TOL_F64)

    passed = (accum_mults == 0 and logit_diff < LOGIT_TOL and agree == 1.0
              and eq12["passed"])
    return {
        "passed": bool(passed),
        "steps": steps,
        "logit_max_abs_diff": logit_diff,
        "logit_tolerance": LOGIT_TOL,
        "argmax_agreement": agree,
        "accum_multiplications": int(accum_mults),
        "accum_additions": int(accum_adds),
        "tags_with_multiplications": mult_tags,
        "exempt_tags": list(EXEMPT_TAGS),
        "eq12": eq12,
        "op_counts": mfree.counts.as_dict(),
    }
