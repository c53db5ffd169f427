"""Small numpy neural-network engine: dense and LSTM layers with exact
backpropagation (through time for recurrent stacks), Adam, and the
regularized MSE loss.

Sequences are arrays of shape ``(B, T, d)``; 2-D inputs ``(T, d)`` are treated
as a single sequence. Everything is float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "identity")


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


class ConfigError(ValueError):
    pass


def sigmoid(z):
    # split evaluation avoids overflow in exp for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ShapeError(f"expected (T, d) or (B, T, d) input, got shape {x.shape}")
    return x, False


def _check_finite(arr: np.ndarray, where: str):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {where}")


class DenseLayer:
    kind = "dense"

    def __init__(self, weights: np.ndarray, bias: np.ndarray, activation: str = "tanh"):
        weights = np.asarray(weights, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        if weights.ndim != 2 or bias.shape != (weights.shape[0],):
            raise ShapeError(f"dense weights {weights.shape} and bias {bias.shape} are inconsistent")
        self.weights, self.bias, self.activation = weights, bias, activation

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.weights, self.bias]

    def weight_params(self) -> list[np.ndarray]:
        return [self.weights]

    def forward(self, x):
        y = x @ self.weights.T + self.bias
        if self.activation == "tanh":
            y = np.tanh(y)
        return y, (x, y)

    def backward(self, dy, cache, bptt_window=None):
        x, y = cache
        dz = dy * (1.0 - y * y) if self.activation == "tanh" else dy
        dz2 = dz.reshape(-1, self.out_dim)
        dw = dz2.T @ x.reshape(-1, self.in_dim)
        db = dz2.sum(axis=0)
        return dz @ self.weights, [dw, db]


class LstmLayer:
    """LSTM with stacked gate blocks in order input, forget, cell candidate, output.

    ``weights`` has shape ``(4H, in + H)``: columns ``[:in]`` act on the input,
    ``[in:]`` on the previous hidden state. The initial state is zero.
    """

    kind = "lstm"

    def __init__(self, weights: np.ndarray, bias: np.ndarray, in_dim: int):
        weights = np.asarray(weights, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        h4 = weights.shape[0]
        if weights.ndim != 2 or h4 % 4 or weights.shape[1] != in_dim + h4 // 4 or bias.shape != (h4,):
            raise ShapeError(
                f"LSTM weights {weights.shape}/bias {bias.shape} inconsistent with in_dim={in_dim}"
            )
        self.weights, self.bias, self._in = weights, bias, in_dim

    @property
    def in_dim(self) -> int:
        return self._in

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0] // 4

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        k = ("input", "forget", "cell", "output").index(name)
        H = self.out_dim
        return self.weights[k * H:(k + 1) * H], self.bias[k * H:(k + 1) * H]

    def params(self) -> list[np.ndarray]:
        return [self.weights, self.bias]

    def weight_params(self) -> list[np.ndarray]:
        return [self.weights]

    def forward(self, x):
        B, T, _ = x.shape
        H = self.out_dim
        wx = self.weights[:, :self._in]
        wh_t = np.ascontiguousarray(self.weights[:, self._in:].T)
        zx = x @ wx.T + self.bias
        acts = np.empty((B, T, 4 * H))
        cs = np.empty((B, T, H))
        hs = np.empty((B, T, H))
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        for t in range(T):
            z = zx[:, t] + h @ wh_t
            a = acts[:, t]
            a[:, :2 * H] = sigmoid(z[:, :2 * H])
            a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
            a[:, 3 * H:] = sigmoid(z[:, 3 * H:])
            c = a[:, H:2 * H] * c + a[:, :H] * a[:, 2 * H:3 * H]
            h = a[:, 3 * H:] * np.tanh(c)
            cs[:, t] = c
            hs[:, t] = h
        return hs, (x, acts, cs, hs)

    def backward(self, dy, cache, bptt_window=None):
        x, acts, cs, hs = cache
        B, T, _ = x.shape
        H = self.out_dim
        wh = self.weights[:, self._in:]
        dz = np.empty((B, T, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            if bptt_window and (t + 1) % bptt_window == 0:
                dh_next[:] = 0.0
                dc_next[:] = 0.0
            a = acts[:, t]
            i, f, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
            c_prev = cs[:, t - 1] if t > 0 else 0.0
            tc = np.tanh(cs[:, t])
            dh = dy[:, t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            d = dz[:, t]
            d[:, :H] = dc * g * i * (1.0 - i)
            d[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
            d[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
            d[:, 3 * H:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = d @ wh
        h_prev = np.concatenate([np.zeros((B, 1, H)), hs[:, :-1]], axis=1)
        dz2 = dz.reshape(-1, 4 * H)
        dw = np.empty_like(self.weights)
        dw[:, :self._in] = dz2.T @ x.reshape(-1, self._in)
        dw[:, self._in:] = dz2.T @ h_prev.reshape(-1, H)
        db = dz2.sum(axis=0)
        return dz @ self.weights[:, :self._in], [dw, db]


@dataclass
class LayerSpec:
    kind: str
    size: int
    activation: str = "tanh"

    def __post_init__(self):
        if self.kind not in ("dense", "lstm"):
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.size < 1:
            raise ConfigError(f"layer size must be positive, got {self.size}")


@dataclass
class NetSpec:
    d_in: int
    layers: list[LayerSpec]

    def __post_init__(self):
        if self.d_in < 1:
            raise ConfigError("d_in must be positive")
        if not self.layers:
            raise ConfigError("a network needs at least one layer")
        self.layers = [l if isinstance(l, LayerSpec) else LayerSpec(*l) for l in self.layers]

    @property
    def d_out(self) -> int:
        return self.layers[-1].size

    @classmethod
    def stack(cls, d_in: int, kind: str, hidden: list[int], d_out: int) -> "NetSpec":
        """Hidden layers of ``kind`` (tanh) followed by a linear dense read-out."""
        layers = [LayerSpec(kind, h) for h in hidden] + [LayerSpec("dense", d_out, "identity")]
        return cls(d_in, layers)

    def to_dict(self) -> dict:
        return {"d_in": self.d_in, "layers": [[l.kind, l.size, l.activation] for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetSpec":
        return cls(int(d["d_in"]), [LayerSpec(k, int(s), a) for k, s, a in d["layers"]])


class Net:
    """An ordered stack of dense and LSTM layers."""

    def __init__(self, layers: list, spec: NetSpec | None = None):
        for i in range(1, len(layers)):
            if layers[i].in_dim != layers[i - 1].out_dim:
                raise ShapeError(
                    f"layer {i} expects {layers[i].in_dim} inputs but layer {i - 1} emits {layers[i - 1].out_dim}"
                )
        self.layers = layers
        self.spec = spec

    @classmethod
    def build(cls, spec: NetSpec, rng: np.random.Generator) -> "Net":
        layers = []
        d = spec.d_in
        for ls in spec.layers:
            if ls.kind == "dense":
                bound = 1.0 / np.sqrt(d)
                w = rng.uniform(-bound, bound, size=(ls.size, d))
                layers.append(DenseLayer(w, np.zeros(ls.size), ls.activation))
            else:
                H = ls.size
                bound = 1.0 / np.sqrt(d + H)
                w = rng.uniform(-bound, bound, size=(4 * H, d + H))
                b = np.zeros(4 * H)
                b[H:2 * H] = 1.0
                layers.append(LstmLayer(w, b, d))
            d = ls.size
        return cls(layers, spec)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def weight_mask(self) -> list[bool]:
        """True for parameters subject to L2 regularization (weights, not biases)."""
        return [True, False] * len(self.layers)

    def weight_params(self) -> list[np.ndarray]:
        return [w for layer in self.layers for w in layer.weight_params()]

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def forward(self, x: np.ndarray, keep: bool = False):
        xb, squeezed = _as_batch(x)
        if xb.shape[-1] != self.in_dim:
            raise ShapeError(f"layer 0 expects {self.in_dim} inputs, got {xb.shape[-1]}")
        caches = []
        h = xb
        for i, layer in enumerate(self.layers):
            h, cache = layer.forward(h)
            _check_finite(h, f"layer {i} ({layer.kind}) output")
            caches.append(cache)
        out = h[0] if squeezed else h
        return (out, (caches, squeezed)) if keep else out

    def backward(self, dout: np.ndarray, tape, bptt_window=None):
        """Gradients w.r.t. parameters (flat list matching ``params()``) and input."""
        caches, squeezed = tape
        d = dout[None] if squeezed else dout
        grads = []
        for i in range(len(self.layers) - 1, -1, -1):
            d, g = self.layers[i].backward(d, caches[i], bptt_window)
            _check_finite(d, f"layer {i} ({self.layers[i].kind}) gradient")
            grads = g + grads
        return grads, (d[0] if squeezed else d)

    def copy(self) -> "Net":
        layers = []
        for l in self.layers:
            if l.kind == "dense":
                layers.append(DenseLayer(l.weights.copy(), l.bias.copy(), l.activation))
            else:
                layers.append(LstmLayer(l.weights.copy(), l.bias.copy(), l.in_dim))
        return Net(layers, self.spec)

    def freeze(self):
        for p in self.params():
            p.flags.writeable = False


def dense_forward(stack: list[DenseLayer], input_seq: np.ndarray) -> np.ndarray:
    return Net(list(stack)).forward(input_seq)


def lstm_forward(stack: list[LstmLayer], input_seq: np.ndarray):
    """Run a stacked LSTM from zero state.

    Returns the top layer's hidden sequence and the per-layer final ``(h, c)``.
    """
    xb, squeezed = _as_batch(input_seq)
    if xb.shape[1] == 0:
        raise ShapeError("empty input sequence")
    _check_finite(xb, "LSTM input")
    h = xb
    final = []
    for i, layer in enumerate(stack):
        if h.shape[-1] != layer.in_dim:
            raise ShapeError(f"layer {i} expects {layer.in_dim} inputs, got {h.shape[-1]}")
        h, (_, _, cs, hs) = layer.forward(h)
        _check_finite(h, f"layer {i} (lstm) output")
        final.append((hs[:, -1], cs[:, -1]))
    if squeezed:
        return h[0], [(a[0], b[0]) for a, b in final]
    return h, final


@dataclass
class LossConfig:
    lambda_reg: float = 0.0
    lambda_enc: float = 1.0
    lambda_dec: float = 1.0

    def __post_init__(self):
        for name in ("lambda_reg", "lambda_enc", "lambda_dec"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")


def _sample_count(pred: np.ndarray, mask: np.ndarray | None) -> int:
    if mask is None:
        return int(np.prod(pred.shape[:-1])) if pred.ndim > 1 else 1
    return int(np.count_nonzero(mask))


def mse(pred: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean over samples of the squared L2 norm over the last axis."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} differs from target {target.shape}")
    r = pred - target
    if mask is not None:
        r = r * mask[..., None]
    n = _sample_count(pred, mask)
    if n < 1:
        raise ShapeError("loss needs at least one sample")
    return float(np.sum(r * r) / n)


def l2_penalty(enc_weights, dec_weights, cfg: LossConfig) -> float:
    se = sum(float(np.sum(w * w)) for w in enc_weights)
    sd = sum(float(np.sum(w * w)) for w in dec_weights)
    return cfg.lambda_reg * (cfg.lambda_enc * se + cfg.lambda_dec * sd)


def loss_mse_l2(pred_seq, target_seq, encoder_weights, decoder_weights, loss_cfg: LossConfig, mask=None) -> float:
    return mse(pred_seq, target_seq, mask) + l2_penalty(encoder_weights, decoder_weights, loss_cfg)


def mse_grad(pred: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    r = pred - target
    if mask is not None:
        r = r * mask[..., None]
    return 2.0 * r / _sample_count(pred, mask)


def add_l2_grads(grads, net: Net, coeff: float):
    if coeff == 0:
        return grads
    return [g + 2.0 * coeff * p if reg else g for g, p, reg in zip(grads, net.params(), net.weight_mask())]


def network_gradients(net: Net, input_seq, target_seq, loss_cfg: LossConfig, role: str = "decoder",
                      mask=None, bptt_window=None):
    """Exact gradient of the regularized MSE of a single network.

    ``role`` selects which regularization weight applies to its parameters.
    """
    pred, tape = net.forward(input_seq, keep=True)
    grads, _ = net.backward(mse_grad(pred, np.asarray(target_seq), mask), tape, bptt_window)
    lam = loss_cfg.lambda_enc if role == "encoder" else loss_cfg.lambda_dec
    return add_l2_grads(grads, net, loss_cfg.lambda_reg * lam)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float):
    """In-place Adam update with bias correction."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("parameter, gradient and moment lists differ in length")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
