"""A small dense-network engine with hand-written backprop.

Only what the two HI models need: fully connected layers with
leaky-ReLU / sigmoid / linear activations, Glorot-uniform initialisation,
Adam, and the trace-minus-log-determinant Gram penalty.  Everything is
float64.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .datamodel import atomic_write_bytes

MODEL_FORMAT_VERSION = 1
LEAKY_SLOPE = 0.01


def glorot_uniform(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples in ``+-sqrt(6 / (rows + cols))``."""
    if rows < 1 or cols < 1:
        raise ValueError("matrix dimensions must be positive")
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def _activate(name, a, slope):
    if name == "linear":
        return a
    if name == "leaky_relu":
        return np.where(a > 0, a, slope * a)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * a))
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(name, a, out, slope):
    if name == "linear":
        return 1.0
    if name == "leaky_relu":
        return np.where(a > 0, 1.0, slope)
    return out * (1.0 - out)


@dataclass
class Dense:
    weight: np.ndarray  # (n_in, n_out)
    bias: np.ndarray | None
    activation: str = "linear"
    slope: float = LEAKY_SLOPE

    @property
    def shape(self):
        return self.weight.shape


class DenseNet:
    """Stack of :class:`Dense` layers applied to row-major batches."""

    def __init__(self, layers):
        self.layers = list(layers)
        for a, b in zip(self.layers, self.layers[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError(f"layer width mismatch {a.shape} -> {b.shape}")
        for layer in self.layers:
            if not np.all(np.isfinite(layer.weight)):
                raise ValueError("non-finite weights")

    @classmethod
    def build(cls, widths, activations, rng, bias=True, slope=LEAKY_SLOPE) -> "DenseNet":
        """Glorot-initialised net; ``bias`` may be a per-layer list."""
        n = len(widths) - 1
        if isinstance(activations, str):
            activations = [activations] * n
        if isinstance(bias, bool):
            bias = [bias] * n
        layers = [
            Dense(glorot_uniform(widths[i], widths[i + 1], rng),
                  np.zeros(widths[i + 1]) if bias[i] else None, activations[i], slope)
            for i in range(n)
        ]
        return cls(layers)

    @property
    def in_width(self):
        return self.layers[0].shape[0]

    @property
    def out_width(self):
        return self.layers[-1].shape[1]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            if layer.bias is not None:
                out.append(layer.bias)
        return out

    def weights(self) -> list[np.ndarray]:
        return [layer.weight for layer in self.layers]

    def copy(self) -> "DenseNet":
        return DenseNet([Dense(l.weight.copy(), None if l.bias is None else l.bias.copy(),
                               l.activation, l.slope) for l in self.layers])

    def forward(self, x, keep_cache: bool = True):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_width:
            raise ValueError(f"expected batch of shape (n, {self.in_width}), got {x.shape}")
        cache = []
        h = x
        for layer in self.layers:
            a = h @ layer.weight
            if layer.bias is not None:
                a = a + layer.bias
            out = _activate(layer.activation, a, layer.slope)
            if keep_cache:
                cache.append((h, a, out))
            h = out
        return (h, cache) if keep_cache else h

    def __call__(self, x):
        return self.forward(x, keep_cache=False)

    def backward(self, cache, grad_out):
        """Backpropagate ``dL/d(output)``; returns ``(dL/d(input), grads)``.

        ``grads`` is aligned with :meth:`params`.
        """
        grads = []
        g = np.asarray(grad_out, dtype=np.float64)
        for layer, (h, a, out) in zip(reversed(self.layers), reversed(cache)):
            g = g * _activation_grad(layer.activation, a, out, layer.slope)
            if layer.bias is not None:
                grads.append(g.sum(axis=0))
            grads.append(h.T @ g)
            g = g @ layer.weight.T
        grads.reverse()
        return g, grads

    def l2(self) -> float:
        return float(sum(np.sum(w * w) for w in self.weights()))

    def l2_grads(self) -> list[np.ndarray]:
        """Gradient of :meth:`l2` aligned with :meth:`params` (biases excluded)."""
        out = []
        for layer in self.layers:
            out.append(2.0 * layer.weight)
            if layer.bias is not None:
                out.append(np.zeros_like(layer.bias))
        return out

    # serialisation helpers
    def to_arrays(self, prefix: str) -> dict:
        arrays = {}
        for i, layer in enumerate(self.layers):
            arrays[f"{prefix}.{i}.weight"] = layer.weight
            if layer.bias is not None:
                arrays[f"{prefix}.{i}.bias"] = layer.bias
        return arrays

    def spec(self) -> list:
        return [{"activation": l.activation, "bias": l.bias is not None, "slope": l.slope} for l in self.layers]

    @classmethod
    def from_arrays(cls, arrays: dict, prefix: str, spec: list) -> "DenseNet":
        layers = []
        for i, s in enumerate(spec):
            layers.append(Dense(np.array(arrays[f"{prefix}.{i}.weight"]),
                                np.array(arrays[f"{prefix}.{i}.bias"]) if s["bias"] else None,
                                s["activation"], s["slope"]))
        return cls(layers)


class Adam:
    """Adam updating a fixed list of parameter arrays in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled index batches covering ``range(n)``; the last one may be short."""
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def gram_trace_logdet(z, ridge: float = 1e-6):
    """``trace(G) - logdet(G)`` for ``G = Z^T Z + ridge*I`` and its gradient in ``Z``.

    Equals ``sum(zeta - ln zeta)`` over the eigenvalues of ``G``; the
    gradient is ``2 Z - 2 Z G^{-1}``.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1:
        raise ValueError("Z must be a 2-d matrix with at least one row")
    if not np.all(np.isfinite(z)):
        raise ValueError("Z contains non-finite values")
    if ridge <= 0:
        raise ValueError("ridge must be positive")
    g = z.T @ z + ridge * np.eye(z.shape[1])
    c, low = cho_factor(g)
    logdet = 2.0 * np.sum(np.log(np.diag(c)))
    value = float(np.trace(g) - logdet)
    grad = 2.0 * z - 2.0 * cho_solve((c, low), z.T).T
    return value, grad


# ---------------------------------------------------------------------------
# trained model container
# ---------------------------------------------------------------------------

@dataclass
class TrainedModel:
    """Network weights plus everything needed to turn features into an HI."""

    kind: str
    nets: dict
    arrays: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def save(self, path) -> None:
        payload = {}
        specs = {}
        for name, net in self.nets.items():
            payload.update(net.to_arrays(f"net.{name}"))
            specs[name] = net.spec()
        for k, v in self.arrays.items():
            payload[f"arr.{k}"] = np.asarray(v)
        header = {"format_version": MODEL_FORMAT_VERSION, "kind": self.kind, "specs": specs, "meta": self.meta}
        payload["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
        buf = io.BytesIO()
        np.savez(buf, **payload)
        atomic_write_bytes(Path(path), buf.getvalue())

    @classmethod
    def load(cls, path) -> "TrainedModel":
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
        header = json.loads(arrays.pop("header").tobytes().decode())
        if header["format_version"] != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format {header['format_version']}")
        nets = {name: DenseNet.from_arrays(arrays, f"net.{name}", spec) for name, spec in header["specs"].items()}
        extra = {k[4:]: v for k, v in arrays.items() if k.startswith("arr.")}
        return cls(header["kind"], nets, extra, header["meta"])
