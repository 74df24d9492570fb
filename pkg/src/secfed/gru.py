"""Small stacked-GRU regressor trained by plain SGD, weights as one flat vector.

The flat layout is canonical because the same vector is fixed-point encoded,
encrypted, averaged and decoded elsewhere; any reordering would silently
corrupt federated updates. Per layer: update-gate, reset-gate, candidate
weight matrices (row-major, columns ordered hidden-state first then input),
then the three bias vectors in the same gate order; after all layers, the
dense output weights and a single output bias.

Each gate of a layer with h hidden units and i inputs holds h*(h+i) weights
plus h biases; a dense head on i2 units holds i2 + 1 values.
"""

import math
import random
from dataclasses import dataclass, field

import numpy as np


class TrainingError(Exception):
    """Window too small, bad hyperparameters, or similar setup problems."""


class DivergenceError(TrainingError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class ModelShape:
    layers: tuple  # ((hidden, input), ...) bottom to top
    output_layer: bool = True
    input_shape: int = 12

    def __post_init__(self):
        layers = tuple((int(h), int(i)) for h, i in self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise TrainingError("need at least one recurrent layer")
        if self.input_shape < 1:
            raise TrainingError("input_shape must be >= 1")
        for (h, _), (_, i_next) in zip(layers, layers[1:]):
            if i_next != h:
                raise TrainingError("layer input size must equal previous hidden size")

    def to_dict(self) -> dict:
        return {
            "layers": [list(layer) for layer in self.layers],
            "output_layer": self.output_layer,
            "input_shape": self.input_shape,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelShape":
        return cls(
            layers=tuple(tuple(layer) for layer in d["layers"]),
            output_layer=bool(d["output_layer"]),
            input_shape=int(d["input_shape"]),
        )


def lightweight_shape(hidden: int = 5, input_shape: int = 12) -> ModelShape:
    return ModelShape(layers=((hidden, 1), (hidden, hidden)), input_shape=input_shape)


def param_count(shape: ModelShape) -> int:
    """Exact length of the canonical flat weight vector."""
    total = 0
    for h, i in shape.layers:
        total += 3 * (h * (h + i) + h)
    if shape.output_layer:
        total += shape.layers[-1][0] + 1
    return total


class _Layout:
    """Slice bookkeeping between the flat vector and per-gate views."""

    def __init__(self, shape: ModelShape):
        self.shape = shape
        self.spans = []
        pos = 0
        for h, i in shape.layers:
            w = h * (h + i)
            gates = []
            for _ in range(3):  # update, reset, candidate weight blocks
                gates.append((pos, pos + w))
                pos += w
            biases = []
            for _ in range(3):
                biases.append((pos, pos + h))
                pos += h
            self.spans.append((gates, biases))
        if shape.output_layer:
            h_top = shape.layers[-1][0]
            self.out_w = (pos, pos + h_top)
            pos += h_top
            self.out_b = pos
            pos += 1
        self.size = pos

    def layer(self, weights: np.ndarray, index: int):
        h, i = self.shape.layers[index]
        gates, biases = self.spans[index]
        mats = [weights[a:b].reshape(h, h + i) for a, b in gates]
        vecs = [weights[a:b] for a, b in biases]
        return mats, vecs

    def output(self, weights: np.ndarray):
        a, b = self.out_w
        return weights[a:b], weights[self.out_b:self.out_b + 1]


@dataclass
class GruModel:
    shape: ModelShape
    weights: np.ndarray
    round_tag: int = 0
    _layout: _Layout = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self._layout = _Layout(self.shape)
        if self.weights.shape != (self._layout.size,):
            raise TrainingError(
                f"weight vector has {self.weights.size} entries; shape needs {self._layout.size}"
            )
        if not np.all(np.isfinite(self.weights)):
            raise TrainingError("weights must be finite")

    def with_weights(self, weights: np.ndarray, round_tag: int | None = None) -> "GruModel":
        return GruModel(self.shape, np.array(weights, dtype=np.float64),
                        self.round_tag if round_tag is None else round_tag)

    def copy(self) -> "GruModel":
        return self.with_weights(self.weights.copy())


def init_weights(shape: ModelShape, rng: random.Random) -> np.ndarray:
    """Uniform in +/- 1/sqrt(h) per layer (output head uses its fan-in)."""
    out = np.empty(param_count(shape), dtype=np.float64)
    pos = 0
    for h, i in shape.layers:
        span = 3 * (h * (h + i) + h)
        bound = 1.0 / math.sqrt(h)
        out[pos:pos + span] = [rng.uniform(-bound, bound) for _ in range(span)]
        pos += span
    if shape.output_layer:
        h_top = shape.layers[-1][0]
        bound = 1.0 / math.sqrt(h_top)
        out[pos:pos + h_top + 1] = [rng.uniform(-bound, bound) for _ in range(h_top + 1)]
    return out


def new_model(shape: ModelShape, rng: random.Random) -> GruModel:
    return GruModel(shape=shape, weights=init_weights(shape, rng))


def _sigmoid(x):
    # clip keeps exp() in range; exact within float64 for |x| < 60 anyway
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


def _forward(model: GruModel, sequence, keep_cache: bool):
    layout = model._layout
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.shape != (model.shape.input_shape,):
        raise TrainingError(
            f"sequence length {seq.size} != input_shape {model.shape.input_shape}"
        )
    steps = seq.size
    inputs = seq.reshape(steps, 1)
    cache = [] if keep_cache else None
    for l_index in range(len(model.shape.layers)):
        h_size, _ = model.shape.layers[l_index]
        (wz, wr, wh), (bz, br, bh) = layout.layer(model.weights, l_index)
        h = np.zeros(h_size)
        outputs = np.empty((steps, h_size))
        layer_cache = [] if keep_cache else None
        for t in range(steps):
            x = inputs[t]
            zin = np.concatenate([h, x])
            z = _sigmoid(wz @ zin + bz)
            r = _sigmoid(wr @ zin + br)
            cin = np.concatenate([r * h, x])
            hc = np.tanh(wh @ cin + bh)
            h_new = (1.0 - z) * h + z * hc
            if keep_cache:
                layer_cache.append((h, x, z, r, hc, zin, cin))
            h = h_new
            outputs[t] = h
        if keep_cache:
            cache.append(layer_cache)
        inputs = outputs
    top = inputs[-1]
    if model.shape.output_layer:
        w, b = layout.output(model.weights)
        prediction = float(w @ top + b[0])
    else:
        prediction = float(top[0])
    return prediction, inputs, cache


def gru_forward(model: GruModel, sequence) -> float:
    """One-step-ahead prediction for a normalized input sequence."""
    prediction, _, _ = _forward(model, sequence, keep_cache=False)
    return prediction


def _backward(model: GruModel, sequence, target: float):
    """Gradient of the squared error (pred - target)^2 over the flat vector."""
    layout = model._layout
    prediction, top_outputs, cache = _forward(model, sequence, keep_cache=True)
    grad = np.zeros_like(model.weights)
    dy = 2.0 * (prediction - target)

    steps = model.shape.input_shape
    n_layers = len(model.shape.layers)
    # gradient w.r.t. each layer's per-step outputs, filled top-down
    d_outputs = [np.zeros((steps, h)) for h, _ in model.shape.layers]
    if model.shape.output_layer:
        w, _ = layout.output(model.weights)
        a, b = layout.out_w
        grad[a:b] = dy * top_outputs[-1]
        grad[layout.out_b] = dy
        d_outputs[-1][-1] = dy * w
    else:
        d_outputs[-1][-1, 0] = dy

    for l_index in range(n_layers - 1, -1, -1):
        h_size, i_size = model.shape.layers[l_index]
        (wz, wr, wh), _ = layout.layer(model.weights, l_index)
        gates, biases = layout.spans[l_index]
        g_wz = np.zeros((h_size, h_size + i_size))
        g_wr = np.zeros_like(g_wz)
        g_wh = np.zeros_like(g_wz)
        g_bz = np.zeros(h_size)
        g_br = np.zeros(h_size)
        g_bh = np.zeros(h_size)
        dh = np.zeros(h_size)
        d_below = np.zeros((steps, i_size))
        layer_cache = cache[l_index]
        for t in range(steps - 1, -1, -1):
            h_prev, x, z, r, hc, zin, cin = layer_cache[t]
            dh = dh + d_outputs[l_index][t]
            dz = dh * (hc - h_prev)
            dhc = dh * z
            dh_prev = dh * (1.0 - z)
            dhc_pre = dhc * (1.0 - hc * hc)
            g_wh += np.outer(dhc_pre, cin)
            g_bh += dhc_pre
            d_cin = wh.T @ dhc_pre
            d_rh = d_cin[:h_size]
            dx = d_cin[h_size:]
            dr = d_rh * h_prev
            dh_prev = dh_prev + d_rh * r
            dz_pre = dz * z * (1.0 - z)
            dr_pre = dr * r * (1.0 - r)
            g_wz += np.outer(dz_pre, zin)
            g_bz += dz_pre
            g_wr += np.outer(dr_pre, zin)
            g_br += dr_pre
            d_zin = wz.T @ dz_pre + wr.T @ dr_pre
            dh_prev = dh_prev + d_zin[:h_size]
            dx = dx + d_zin[h_size:]
            d_below[t] = dx
            dh = dh_prev
        for (span_a, span_b), mat in zip(gates, (g_wz, g_wr, g_wh)):
            grad[span_a:span_b] = mat.reshape(-1)
        for (span_a, span_b), vec in zip(biases, (g_bz, g_br, g_bh)):
            grad[span_a:span_b] = vec
        if l_index > 0:
            d_outputs[l_index - 1] = d_below
    return prediction, grad


def supervised_pairs(values, input_shape: int):
    """Sliding (sequence, next value) pairs over a chronological series."""
    values = list(values)
    if len(values) < input_shape + 1:
        raise TrainingError(
            f"need at least {input_shape + 1} samples, got {len(values)}"
        )
    return [
        (values[j:j + input_shape], values[j + input_shape])
        for j in range(len(values) - input_shape)
    ]


@dataclass
class TrainingResult:
    weights: np.ndarray
    epoch_losses: list


def train_values(model: GruModel, values, epochs: int, learning_rate: float,
                 dropout_rate: float = 0.0,
                 dropout_rng: random.Random | None = None) -> TrainingResult:
    """SGD over the window's supervised pairs, in chronological order.

    `values` must already be normalized. Dropout (when enabled) zeroes top
    hidden units during training only, with inverted scaling.
    """
    if epochs < 1:
        raise TrainingError("epochs must be >= 1")
    if dropout_rate and dropout_rng is None:
        raise TrainingError("dropout needs an RNG handle")
    pairs = supervised_pairs(values, model.shape.input_shape)
    work = model.copy()
    losses = []
    for _ in range(epochs):
        total = 0.0
        for seq, target in pairs:
            if dropout_rate:
                prediction, grad = _backward_with_dropout(
                    work, seq, target, dropout_rate, dropout_rng)
            else:
                prediction, grad = _backward(work, seq, target)
            if not math.isfinite(prediction):
                raise DivergenceError("training diverged: non-finite prediction")
            total += float(np.square(prediction - target))
            work.weights -= learning_rate * grad
        loss = total / len(pairs)
        if not math.isfinite(loss):
            raise DivergenceError(f"training loss diverged: {loss}")
        losses.append(loss)
    return TrainingResult(weights=work.weights, epoch_losses=losses)


def _backward_with_dropout(model, seq, target, rate, rng):
    # Dropout on the top hidden state, realized by scaling the output weights
    # for this sample; gradient flows through the scaled copy.
    layout = model._layout
    h_top = model.shape.layers[-1][0]
    mask = np.array([0.0 if rng.random() < rate else 1.0 / (1.0 - rate)
                     for _ in range(h_top)])
    scratch = model.copy()
    a, b = layout.out_w
    scratch.weights[a:b] *= mask
    prediction, grad = _backward(scratch, seq, target)
    grad[a:b] *= mask
    return prediction, grad
