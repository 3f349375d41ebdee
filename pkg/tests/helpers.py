"""Shared test oracles, kept independent of the library internals."""

import numpy as np


def numerical_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of one array.

    Mutates a float64 copy elementwise; `f` must rebuild its computation
    from scratch on every call.
    """
    x = x.astype(np.float64).copy()
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Infinity-norm relative error with an absolute floor for tiny values."""
    scale = max(np.max(np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b)) / scale)


def conv2d_bruteforce(x: np.ndarray, w: np.ndarray, stride: int = 1,
                      padding: str = "valid") -> np.ndarray:
    """Direct quadruple-loop convolution oracle (cross-correlation)."""
    n, cin, h, width = x.shape
    cout, _, kh, kw = w.shape
    if padding == "same":
        oh = -(-h // stride)
        ow = -(-width // stride)
        ph = max((oh - 1) * stride + kh - h, 0)
        pw = max((ow - 1) * stride + kw - width, 0)
        x = np.pad(x, ((0, 0), (0, 0), (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)))
    else:
        oh = (h - kh) // stride + 1
        ow = (width - kw) // stride + 1
    out = np.zeros((n, cout, oh, ow), dtype=x.dtype)
    for b in range(n):
        for co in range(cout):
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += x[b, ci, oy * stride + ky, ox * stride + kx] \
                                       * w[co, ci, ky, kx]
                    out[b, co, oy, ox] = acc
    return out
