"""Feed-forward networks with maxout and comparison activations.

A layer with ``m`` units and ``k`` pieces owns ``W`` of shape ``(d_in, m, k)``
and ``b`` of shape ``(m, k)``; non-pooled kinds use ``k = 1``.  Dropout masks
multiply a layer's *input* right before the weight multiplication, so the
inputs of the max operator are never dropped.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .numerics import DimensionError, DomainError, Prng, matmul, max_over_axis

# argmax sentinel for "the constant 0 won the pool"
ZERO_WINS = -1


class ContractError(ValueError):
    """Inputs violate an operation's preconditions (e.g. a stale trace)."""


@dataclass(frozen=True)
class LayerKind:
    units: int

    pieces = 1
    pooled = False
    name = "layer"

    def __post_init__(self):
        if self.units < 1 or self.pieces < 1:
            raise DomainError(f"{self.name}: units and pieces must be >= 1")

    def to_dict(self) -> dict:
        d = {"kind": self.name, "units": self.units}
        if self.pooled:
            d["pieces"] = self.pieces
        return d


@dataclass(frozen=True)
class Maxout(LayerKind):
    pieces: int = 2
    pooled = True
    name = "maxout"


@dataclass(frozen=True)
class RectifierPool(LayerKind):
    """Max over ``k`` rectified pieces.

    With ``include_zero`` the constant 0 is a member of the pool and is
    recorded as the winner (argmax ``ZERO_WINS``) whenever no piece is
    positive.  Without it the pool is a max over ``max(0, z_j)`` and the
    lowest index wins the all-zero tie.  Forward values coincide; the
    distinction matters for filter-usage bookkeeping.
    """

    pieces: int = 2
    include_zero: bool = True
    pooled = True
    name = "rectifier_pool"

    def to_dict(self):
        d = super().to_dict()
        d["include_zero"] = self.include_zero
        return d


@dataclass(frozen=True)
class Rectifier(LayerKind):
    name = "rectifier"


@dataclass(frozen=True)
class Tanh(LayerKind):
    name = "tanh"


@dataclass(frozen=True)
class Linear(LayerKind):
    name = "linear"


@dataclass(frozen=True)
class SoftmaxOutput(LayerKind):
    name = "softmax"

    def __post_init__(self):
        super().__post_init__()
        if self.units < 2:
            raise DomainError("softmax output needs at least 2 classes")

    @property
    def classes(self) -> int:
        return self.units


_KINDS = {c.name: c for c in (Maxout, RectifierPool, Rectifier, Tanh, Linear, SoftmaxOutput)}


def layer_from_dict(d: dict) -> LayerKind:
    d = dict(d)
    try:
        cls = _KINDS[d.pop("kind")]
    except KeyError as e:
        raise ValueError(f"unknown layer kind {e}") from None
    if "classes" in d:
        d["units"] = d.pop("classes")
    return cls(**d)


@dataclass(frozen=True)
class NetworkSpec:
    """Input width plus an ordered list of layers.

    Classifiers end in a single :class:`SoftmaxOutput`.  A spec without a
    softmax head is a regression/feature network: it can be evaluated with
    :func:`forward` but has no likelihood.
    """

    input_dim: int
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.input_dim < 1:
            raise DomainError("input_dim must be >= 1")
        if not self.layers:
            raise DomainError("a network needs at least one layer")
        for i, layer in enumerate(self.layers):
            if isinstance(layer, SoftmaxOutput) and i != len(self.layers) - 1:
                raise DomainError("SoftmaxOutput must be the last layer")

    @property
    def is_classifier(self) -> bool:
        return isinstance(self.layers[-1], SoftmaxOutput)

    @property
    def hidden(self) -> tuple:
        return self.layers[:-1] if self.is_classifier else self.layers

    def input_widths(self) -> list:
        """Width of the input of every layer (the maskable variables)."""
        widths = [self.input_dim]
        for layer in self.layers[:-1]:
            widths.append(layer.units)
        return widths

    def param_shapes(self) -> list:
        return [((d, layer.units, layer.pieces), (layer.units, layer.pieces))
                for d, layer in zip(self.input_widths(), self.layers)]

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(int(d["input_dim"]), tuple(layer_from_dict(l) for l in d["layers"]))


@dataclass
class Parameters:
    """Per-layer weights ``W[l]`` (d_in, m, k) and biases ``b[l]`` (m, k).

    Gradients use the same container.
    """

    W: list
    b: list

    def copy(self) -> "Parameters":
        return Parameters([w.copy() for w in self.W], [b.copy() for b in self.b])

    def __len__(self):
        return len(self.W)

    def arrays(self):
        for w, b in zip(self.W, self.b):
            yield w
            yield b

    def zeros_like(self) -> "Parameters":
        return Parameters([np.zeros_like(w) for w in self.W], [np.zeros_like(b) for b in self.b])

    def equals(self, other: "Parameters") -> bool:
        return len(self) == len(other) and all(
            a.shape == o.shape and np.array_equal(a, o) for a, o in zip(self.arrays(), other.arrays()))


def check_params(params: Parameters, spec: NetworkSpec):
    shapes = spec.param_shapes()
    if len(params) != len(shapes):
        raise DimensionError(f"spec has {len(shapes)} layers, parameters have {len(params)}")
    for l, ((ws, bs), w, b) in enumerate(zip(shapes, params.W, params.b)):
        if w.shape != ws or b.shape != bs:
            raise DimensionError(
                f"layer {l}: expected W{ws}, b{bs}; got W{w.shape}, b{b.shape}")


def init_params(spec: NetworkSpec, rng: Prng, sigma: float = 0.05, bias: float = 0.0) -> Parameters:
    """Gaussian weights with std ``sigma``; hidden biases set to ``bias``.

    The output layer bias is always 0.  A positive ``bias`` keeps rectifier
    units out of saturation at the start of training.
    """
    if sigma < 0:
        raise DomainError("sigma must be nonnegative")
    W, b = [], []
    for l, (ws, bs) in enumerate(spec.param_shapes()):
        W.append(rng.normal(sigma, ws) if sigma > 0 else np.zeros(ws))
        last = l == len(spec.layers) - 1 and spec.is_classifier
        b.append(np.zeros(bs) if last else np.full(bs, float(bias)))
    return Parameters(W, b)


@dataclass
class ForwardTrace:
    """Everything backward() needs, plus per-layer activations for diagnostics.

    ``inputs[l]`` is the (masked) input of layer ``l``; ``z[l]`` the
    pre-activations (n, m, k); ``h[l]`` the layer output (n, m); ``argmax[l]``
    the winning piece per unit for pooled kinds, else None.  For classifiers
    ``h[-1]`` holds the logits and ``probs``/``log_probs`` the softmax.
    """

    inputs: list
    z: list
    h: list
    argmax: list
    masks: Optional[list] = None
    probs: Optional[np.ndarray] = None
    log_probs: Optional[np.ndarray] = None

    @property
    def output(self) -> np.ndarray:
        return self.probs if self.probs is not None else self.h[-1]


def log_softmax(a: np.ndarray) -> np.ndarray:
    shifted = a - a.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _activate(kind: LayerKind, z: np.ndarray):
    """Layer output and argmax indices from pre-activations (n, m, k)."""
    if isinstance(kind, Maxout):
        return max_over_axis(z, 2)
    if isinstance(kind, RectifierPool):
        if kind.include_zero:
            h, idx = max_over_axis(z, 2)
            idx = np.where(h > 0, idx, ZERO_WINS)
            return np.maximum(h, 0.0), idx
        return max_over_axis(np.maximum(z, 0.0), 2)
    z = z[:, :, 0]
    if isinstance(kind, Rectifier):
        return np.maximum(z, 0.0), None
    if isinstance(kind, Tanh):
        return np.tanh(z), None
    return z, None  # Linear and softmax logits


def layer_forward(kind: LayerKind, W: np.ndarray, b: np.ndarray, x: np.ndarray):
    """Apply one layer to ``x`` (n, d).  Returns (z, h, argmax)."""
    d, m, k = W.shape
    if x.ndim != 2 or x.shape[1] != d:
        raise DimensionError(f"layer expects input width {d}, got shape {x.shape}")
    z = matmul(x, W.reshape(d, m * k)).reshape(len(x), m, k) + b
    h, idx = _activate(kind, z)
    return z, h, idx


MaskLike = Union[Sequence[np.ndarray], "object", None]


def _mask_list(mask) -> Optional[list]:
    if mask is None:
        return None
    return list(getattr(mask, "masks", mask))


def forward(params: Parameters, spec: NetworkSpec, x: np.ndarray, mask: MaskLike = None) -> ForwardTrace:
    """Evaluate the network on a batch ``x`` (n, d).

    ``mask`` is a MaskSet (or a list of arrays), one binary array per layer
    input, each shaped like that input.
    """
    check_params(params, spec)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise DimensionError(f"expected input of width {spec.input_dim}, got shape {x.shape}")
    masks = _mask_list(mask)
    if masks is not None:
        if len(masks) != len(spec.layers):
            raise DimensionError(f"expected {len(spec.layers)} masks, got {len(masks)}")
        for l, (mk, w) in enumerate(zip(masks, spec.input_widths())):
            if mk.shape != (len(x), w):
                raise DimensionError(f"mask {l} has shape {mk.shape}, expected {(len(x), w)}")
    trace = ForwardTrace([], [], [], [], masks)
    h = x
    for l, (kind, W, b) in enumerate(zip(spec.layers, params.W, params.b)):
        inp = h * masks[l] if masks is not None else h
        z, h, idx = layer_forward(kind, W, b, inp)
        trace.inputs.append(inp)
        trace.z.append(z)
        trace.h.append(h)
        trace.argmax.append(idx)
    if spec.is_classifier:
        trace.log_probs = log_softmax(trace.h[-1])
        trace.probs = np.exp(trace.log_probs)
    return trace


def _check_labels(trace: ForwardTrace, labels) -> np.ndarray:
    labels = np.asarray(labels)
    if trace.probs is None:
        raise ContractError("trace has no softmax output")
    n, c = trace.probs.shape
    if labels.shape != (n,):
        raise ContractError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ContractError(f"labels must lie in [0, {c})")
    return labels.astype(np.intp)


def _dz_from_dh(kind: LayerKind, z: np.ndarray, h: np.ndarray, idx, dh: np.ndarray) -> np.ndarray:
    """Route dL/dh back to the pre-activations (n, m, k)."""
    if kind.pooled:
        dz = np.zeros_like(z)
        if isinstance(kind, RectifierPool):
            gate = h > 0
            dh = dh * gate
            sel = np.where(idx == ZERO_WINS, 0, idx)
        else:
            sel = idx
        np.put_along_axis(dz, sel[:, :, None], dh[:, :, None], axis=2)
        return dz
    if isinstance(kind, Rectifier):
        dh = dh * (h > 0)
    elif isinstance(kind, Tanh):
        dh = dh * (1.0 - h * h)
    return dh[:, :, None]


def backward(params: Parameters, spec: NetworkSpec, trace: ForwardTrace, labels) -> Parameters:
    """Gradient of the mean negative log-likelihood with respect to every parameter.

    Pooled units pass gradient only to the piece recorded in the trace.
    """
    check_params(params, spec)
    if not spec.is_classifier:
        raise ContractError("backward needs a network with a softmax output")
    if len(trace.z) != len(spec.layers) or any(
            z.shape[1:] != b.shape for z, b in zip(trace.z, params.b)):
        raise ContractError("trace does not match these parameters (stale trace?)")
    labels = _check_labels(trace, labels)
    n = len(labels)
    delta = trace.probs.copy()
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    dz = delta[:, :, None]
    grads_W = [None] * len(spec.layers)
    grads_b = [None] * len(spec.layers)
    for l in range(len(spec.layers) - 1, -1, -1):
        W = params.W[l]
        d, m, k = W.shape
        flat = dz.reshape(n, m * k)
        grads_W[l] = matmul(trace.inputs[l].T, flat).reshape(d, m, k)
        grads_b[l] = dz.sum(axis=0)
        if l == 0:
            break
        dh = matmul(flat, W.reshape(d, m * k).T)
        if trace.masks is not None:
            dh = dh * trace.masks[l]
        below = spec.layers[l - 1]
        dz = _dz_from_dh(below, trace.z[l - 1], trace.h[l - 1], trace.argmax[l - 1], dh)
    return Parameters(grads_W, grads_b)


def log_likelihood(trace: ForwardTrace, labels) -> float:
    """Mean log-probability of the true labels."""
    labels = _check_labels(trace, labels)
    return float(trace.log_probs[np.arange(len(labels)), labels].mean())


def error_rate(trace: ForwardTrace, labels) -> float:
    labels = _check_labels(trace, labels)
    return float(np.mean(np.argmax(trace.probs, axis=1) != labels))


def project_max_norm(params: Parameters, c: float, include_bias: bool = False) -> Parameters:
    """Rescale every piece's incoming weight vector onto the L2 ball of radius ``c``.

    Columns ``W[:, i, j]`` with norm above ``c`` are scaled to norm exactly
    ``c``; the others are left bit-identical.  Biases are untouched unless
    ``include_bias``, in which case the norm is taken over ``[W[:, i, j], b[i, j]]``
    and both are scaled together.
    """
    if not c > 0:
        raise DomainError("norm cap must be positive")
    out = params.copy()
    for W, b in zip(out.W, out.b):
        sq = np.sum(W * W, axis=0)
        if include_bias:
            sq = sq + b * b
        norms = np.sqrt(sq)
        over = norms > c
        if np.any(over):
            scale = np.where(over, c / np.where(over, norms, 1.0), 1.0)
            W[:, over] *= scale[over]
            if include_bias:
                b[over] *= scale[over]
    return out


def scale_params(params: Parameters, factors: Sequence[float]) -> Parameters:
    """Copy of ``params`` with layer ``l``'s weights multiplied by ``factors[l]``."""
    if len(factors) != len(params):
        raise DimensionError(f"need {len(params)} factors, got {len(factors)}")
    return Parameters([w * f for w, f in zip(params.W, factors)], [b.copy() for b in params.b])
