"""Dense numerical kernels: SPD solves, a small MLP with analytic gradients,
the Adam optimizer, and a central-difference gradient oracle.

Everything is double precision. All functions are pure: optimizer state and
parameters go in and come out, nothing is mutated in place.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import TrainingDivergedError

ACTIVATIONS = ("relu", "identity", "sigmoid")

_ACT_CODE = {name: i for i, name in enumerate(ACTIVATIONS)}


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    # Split by sign to stay finite for large |x|; clamp so outputs remain
    # strictly inside (0, 1) even when exp() under/overflows.
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return np.clip(out, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def apply_activation(name: str, x: np.ndarray) -> np.ndarray:
    if name == "relu":
        return relu(x)
    if name == "identity":
        return x
    if name == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {name!r}")


def activation_grad(name: str, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    """Derivative of the activation wrt its pre-activation.

    The relu subgradient at exactly 0 is taken as 0.
    """
    if name == "relu":
        return (pre > 0).astype(np.float64)
    if name == "identity":
        return np.ones_like(pre)
    if name == "sigmoid":
        return post * (1.0 - post)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class Layer:
    """One dense layer: y = act(A @ x + b). `bias` may be None."""

    weights: np.ndarray  # (out, in)
    bias: np.ndarray | None  # (out,)
    activation: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.bias is not None and self.bias.shape != (self.weights.shape[0],):
            raise ValueError("bias shape does not match layer width")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class MLPParams:
    """Ordered stack of dense layers with compatible dimensions."""

    layers: list[Layer]

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(
                    f"layer dims incompatible: {a.out_dim} -> {b.in_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def copy(self) -> "MLPParams":
        return MLPParams(
            [
                Layer(l.weights.copy(), None if l.bias is None else l.bias.copy(), l.activation)
                for l in self.layers
            ]
        )

    def param_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        """Name -> array view of every parameter, in a fixed order."""
        out: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.layers):
            out[f"{prefix}layer{i}.weight"] = layer.weights
            if layer.bias is not None:
                out[f"{prefix}layer{i}.bias"] = layer.bias
        return out

    def with_params(self, params: dict[str, np.ndarray], prefix: str = "") -> "MLPParams":
        """Rebuild the net with replacement arrays from `params`."""
        layers = []
        for i, layer in enumerate(self.layers):
            w = params[f"{prefix}layer{i}.weight"]
            b = None
            if layer.bias is not None:
                b = params[f"{prefix}layer{i}.bias"]
            layers.append(Layer(np.asarray(w, dtype=np.float64), b, layer.activation))
        return MLPParams(layers)


@dataclass
class GradientBundle:
    """Per-parameter gradients, keyed by the same names as param_dict()."""

    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def check_finite(self):
        for name, arr in self.arrays.items():
            if not np.all(np.isfinite(arr)):
                raise FloatingPointError(f"non-finite gradient in {name}")

    def scaled(self, factor: float) -> "GradientBundle":
        return GradientBundle({k: v * factor for k, v in self.arrays.items()})

    def add(self, other: "GradientBundle") -> "GradientBundle":
        out = dict(self.arrays)
        for k, v in other.arrays.items():
            out[k] = out[k] + v if k in out else v
        return GradientBundle(out)


def mlp_forward(params: MLPParams, x: np.ndarray):
    """Run the net on a single vector (in,) or a batch (n, in).

    Returns (output, cache); the cache holds per-layer inputs, pre- and
    post-activations and is what mlp_backward consumes.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[1] != params.in_dim:
        raise ValueError(f"input dim {h.shape[1]} != first-layer dim {params.in_dim}")
    cache = []
    for layer in params.layers:
        pre = h @ layer.weights.T
        if layer.bias is not None:
            pre = pre + layer.bias
        post = apply_activation(layer.activation, pre)
        cache.append((h, pre, post))
        h = post
    return (h[0] if squeeze else h), cache


def mlp_backward(params: MLPParams, cache, grad_output: np.ndarray, prefix: str = ""):
    """Exact reverse-mode gradients for a forward pass.

    grad_output has the shape of the forward output. Returns a
    GradientBundle over the net's parameters plus the gradient with respect
    to the input (same leading shape as the forward input).
    """
    if len(cache) != len(params.layers):
        raise ValueError("cache does not match network depth")
    g = np.asarray(grad_output, dtype=np.float64)
    squeeze = g.ndim == 1
    g = g[None, :] if squeeze else g
    if g.shape[1] != params.out_dim:
        raise ValueError("grad_output dim does not match network output dim")
    grads: dict[str, np.ndarray] = {}
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        inp, pre, post = cache[i]
        if inp.shape[0] != g.shape[0]:
            raise ValueError("cache batch size does not match grad_output")
        g_pre = g * activation_grad(layer.activation, pre, post)
        grads[f"{prefix}layer{i}.weight"] = g_pre.T @ inp
        if layer.bias is not None:
            grads[f"{prefix}layer{i}.bias"] = g_pre.sum(axis=0)
        g = g_pre @ layer.weights
    return GradientBundle(grads), (g[0] if squeeze else g)


def solve_spd(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A x = b for symmetric positive definite A via Cholesky.

    Raises LinAlgError when the factorization hits a non-positive pivot,
    which in this codebase signals a misconfigured ridge term.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    asym = np.max(np.abs(A - A.T)) if A.size else 0.0
    if asym > 1e-10 * max(1.0, np.max(np.abs(A))):
        raise ValueError(f"matrix not symmetric (max asymmetry {asym:.3e})")
    try:
        c, low = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"SPD factorization failed ({exc}); check the ridge regularization"
        ) from exc
    return scipy.linalg.cho_solve((c, low), b, check_finite=False)


@dataclass
class AdamState:
    """Adam moments for a named set of parameter arrays."""

    step: int
    lr: float
    beta1: float
    beta2: float
    eps: float
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def init(cls, params: dict[str, np.ndarray], lr: float,
             beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        m = {k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()}
        v = {k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()}
        return cls(step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps, m=m, v=v)


def adam_step(state: AdamState, params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray]):
    """One bias-corrected Adam update. Returns (new_params, new_state)."""
    if set(grads) - set(params):
        raise KeyError(f"gradients for unknown parameters: {sorted(set(grads) - set(params))}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient for {name!r}")
    t = state.step + 1
    new_params = {}
    new_m = {}
    new_v = {}
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        new_params[name] = p - update
        new_m[name] = m
        new_v[name] = v
    return new_params, replace(state, step=t, m=new_m, v=new_v)


def finite_diff_grad(fn, point: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function at `point`."""
    if h <= 0:
        raise ValueError("h must be positive")
    point = np.asarray(point, dtype=np.float64)
    grad = np.empty_like(point)
    flat = point.ravel()
    gflat = grad.ravel()
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        fp = fn(point)
        flat[j] = orig - h
        fm = fn(point)
        flat[j] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite evaluation at coordinate {j}")
        gflat[j] = (fp - fm) / (2.0 * h)
    return grad


# ---------------------------------------------------------------------------
# Binary serialization.
#
# All multi-byte values are little-endian. Layouts:
#
# MLP blob:   magic b"MLP1"
#             u32 n_layers
#             per layer: u32 out_dim, u32 in_dim, u8 has_bias, u8 act_code,
#                        f64[out*in] weights row-major, f64[out] bias if any
#
# Adam blob:  magic b"ADM1"
#             u64 step; f64 lr, beta1, beta2, eps
#             u32 n_entries
#             per entry: u16 name_len, name utf-8, u8 ndim, u32[ndim] dims,
#                        f64[size] m, f64[size] v
# ---------------------------------------------------------------------------

_MLP_MAGIC = b"MLP1"
_ADAM_MAGIC = b"ADM1"


def write_mlp_blob(buf: io.BufferedIOBase, params: MLPParams) -> None:
    buf.write(_MLP_MAGIC)
    buf.write(struct.pack("<I", len(params.layers)))
    for layer in params.layers:
        buf.write(struct.pack("<IIBB", layer.out_dim, layer.in_dim,
                              1 if layer.bias is not None else 0,
                              _ACT_CODE[layer.activation]))
        buf.write(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        if layer.bias is not None:
            buf.write(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())


def read_mlp_blob(buf: io.BufferedIOBase) -> MLPParams:
    magic = buf.read(4)
    if magic != _MLP_MAGIC:
        raise ValueError(f"bad MLP blob magic {magic!r}")
    (n_layers,) = struct.unpack("<I", buf.read(4))
    layers = []
    for _ in range(n_layers):
        out_dim, in_dim, has_bias, act_code = struct.unpack("<IIBB", buf.read(10))
        w = np.frombuffer(buf.read(8 * out_dim * in_dim), dtype="<f8").reshape(out_dim, in_dim)
        b = None
        if has_bias:
            b = np.frombuffer(buf.read(8 * out_dim), dtype="<f8").copy()
        layers.append(Layer(w.copy(), b, ACTIVATIONS[act_code]))
    return MLPParams(layers)


def write_adam_blob(buf: io.BufferedIOBase, state: AdamState) -> None:
    buf.write(_ADAM_MAGIC)
    buf.write(struct.pack("<Qdddd", state.step, state.lr, state.beta1, state.beta2, state.eps))
    buf.write(struct.pack("<I", len(state.m)))
    for name in sorted(state.m):
        raw = name.encode("utf-8")
        m = state.m[name]
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", m.ndim))
        buf.write(struct.pack(f"<{m.ndim}I", *m.shape))
        buf.write(np.ascontiguousarray(m, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(state.v[name], dtype="<f8").tobytes())


def read_adam_blob(buf: io.BufferedIOBase) -> AdamState:
    magic = buf.read(4)
    if magic != _ADAM_MAGIC:
        raise ValueError(f"bad Adam blob magic {magic!r}")
    step, lr, beta1, beta2, eps = struct.unpack("<Qdddd", buf.read(40))
    (n_entries,) = struct.unpack("<I", buf.read(4))
    m: dict[str, np.ndarray] = {}
    v: dict[str, np.ndarray] = {}
    for _ in range(n_entries):
        (name_len,) = struct.unpack("<H", buf.read(2))
        name = buf.read(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", buf.read(1))
        shape = struct.unpack(f"<{ndim}I", buf.read(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        m[name] = np.frombuffer(buf.read(8 * size), dtype="<f8").reshape(shape).copy()
        v[name] = np.frombuffer(buf.read(8 * size), dtype="<f8").reshape(shape).copy()
    return AdamState(step=step, lr=lr, beta1=beta1, beta2=beta2, eps=eps, m=m, v=v)
