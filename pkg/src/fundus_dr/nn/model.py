"""Layer specifications, the parameterised model and its on-disk format."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .._npz import write_npz
from . import ops

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Conv:
    filters: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    units: int


@dataclass(frozen=True)
class Dropout:
    rate: float


@dataclass(frozen=True)
class SoftmaxOutput:
    classes: int


_SPEC_TYPES = {cls.__name__.lower(): cls for cls in (Conv, ReLU, MaxPool, Flatten, Dense, Dropout, SoftmaxOutput)}


@dataclass(frozen=True)
class NetworkConfig:
    input_shape: tuple[int, int, int]  # (channels, height, width)
    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        shapes = self.shapes()
        if not self.layers or not isinstance(self.layers[-1], SoftmaxOutput):
            raise ValueError("the last layer must be SoftmaxOutput")
        if len(shapes[-1]) != 1:
            raise ValueError("SoftmaxOutput must follow a flat activation")

    @classmethod
    def default(cls, input_shape=(1, 32, 32), num_classes: int = 2, dropout: float = 0.5) -> "NetworkConfig":
        return cls(
            input_shape,
            (
                Conv(8), ReLU(), MaxPool(),
                Conv(16), ReLU(), MaxPool(),
                Flatten(),
                Dense(64), ReLU(), Dropout(dropout),
                SoftmaxOutput(num_classes),
            ),
        )

    @property
    def num_classes(self) -> int:
        return self.layers[-1].classes

    def shapes(self) -> list[tuple[int, ...]]:
        """Activation shape after every layer (index 0 is the input)."""
        shape: tuple[int, ...] = self.input_shape
        out = [shape]
        for spec in self.layers:
            if isinstance(spec, Conv):
                if len(shape) != 3:
                    raise ValueError("Conv needs a (C, H, W) input")
                shape = (spec.filters, shape[1], shape[2])
            elif isinstance(spec, MaxPool):
                if len(shape) != 3 or shape[1] % 2 or shape[2] % 2:
                    raise ValueError(f"MaxPool needs even spatial dims, got {shape}")
                shape = (shape[0], shape[1] // 2, shape[2] // 2)
            elif isinstance(spec, Flatten):
                shape = (int(np.prod(shape)),)
            elif isinstance(spec, (Dense, SoftmaxOutput)):
                if len(shape) != 1:
                    raise ValueError(f"{type(spec).__name__} needs a flat input; add Flatten")
                shape = (spec.units if isinstance(spec, Dense) else spec.classes,)
            elif isinstance(spec, Dropout):
                if not 0.0 <= spec.rate < 1.0:
                    raise ValueError(f"dropout rate must be in [0, 1), got {spec.rate}")
            out.append(shape)
        return out

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "layers": [{"type": type(s).__name__.lower(), **asdict(s)} for s in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        layers = []
        for item in d["layers"]:
            item = dict(item)
            layers.append(_SPEC_TYPES[item.pop("type")](**item))
        return cls(tuple(d["input_shape"]), tuple(layers))


class Model:
    """Parameters for a :class:`NetworkConfig` plus forward/backward passes.

    ``params`` maps ``"<layer index>.W"`` / ``"<layer index>.b"`` to arrays.
    Only ``.W`` entries are weight-decayed.  Inputs are standardized with
    the fixed scalars ``input_mean`` / ``input_std`` before the first layer.
    """

    def __init__(
        self,
        config: NetworkConfig,
        params: dict[str, np.ndarray],
        input_mean: float = 0.0,
        input_std: float = 1.0,
    ):
        self.config = config
        self.params = params
        self.input_mean = float(input_mean)
        self.input_std = float(input_std)
        self._cache: list = []

    @classmethod
    def initialize(cls, config: NetworkConfig, seed: int) -> "Model":
        """He-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        shapes = config.shapes()
        params = {}
        for i, spec in enumerate(config.layers):
            in_shape = shapes[i]
            if isinstance(spec, Conv):
                fan_in = in_shape[0] * 9
                wshape = (spec.filters, in_shape[0], 3, 3)
            elif isinstance(spec, (Dense, SoftmaxOutput)):
                fan_in = in_shape[0]
                wshape = (in_shape[0], shapes[i + 1][0])
            else:
                continue
            limit = np.sqrt(6.0 / fan_in)
            params[f"{i}.W"] = rng.uniform(-limit, limit, size=wshape)
            params[f"{i}.b"] = np.zeros(wshape[0] if isinstance(spec, Conv) else wshape[1])
        return cls(config, params)

    @property
    def weight_keys(self) -> list[str]:
        return [k for k in self.params if k.endswith(".W")]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def l2_penalty(self) -> float:
        return float(sum(np.sum(self.params[k] ** 2) for k in self.weight_keys))

    def to_nchw(self, features: np.ndarray) -> np.ndarray:
        """Rows of channel-interleaved pixels -> ``(N, C, H, W)``."""
        c, h, w = self.config.input_shape
        x = np.asarray(features, dtype=np.float64)
        if x.ndim == 4:
            return x
        if x.ndim == 1:
            x = x[None]
        if x.shape[1] != c * h * w:
            raise ValueError(f"feature width {x.shape[1]} does not match input shape {(c, h, w)}")
        x = x.reshape(-1, h, w, c).transpose(0, 3, 1, 2)
        if self.input_mean != 0.0 or self.input_std != 1.0:
            x = (x - self.input_mean) / self.input_std
        return x

    def forward(self, x: np.ndarray, train: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        """Logits for an ``(N, C, H, W)`` batch; keeps a cache for :meth:`backward`."""
        self._cache = []
        for i, spec in enumerate(self.config.layers):
            if isinstance(spec, Conv):
                x, cache = ops.conv2d_forward(x, self.params[f"{i}.W"], self.params[f"{i}.b"])
            elif isinstance(spec, ReLU):
                x, cache = ops.relu_forward(x)
            elif isinstance(spec, MaxPool):
                x, cache = ops.maxpool2_forward(x)
            elif isinstance(spec, Flatten):
                cache = x.shape
                x = x.reshape(x.shape[0], -1)
            elif isinstance(spec, (Dense, SoftmaxOutput)):
                x, cache = ops.dense_forward(x, self.params[f"{i}.W"], self.params[f"{i}.b"])
            elif isinstance(spec, Dropout):
                x, cache = ops.dropout_forward(x, spec.rate, train, rng)
            self._cache.append(cache)
        return x

    def backward(self, dlogits: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
        """Parameter gradients and input gradient for the last :meth:`forward`."""
        grads: dict[str, np.ndarray] = {}
        d = dlogits
        for i in range(len(self.config.layers) - 1, -1, -1):
            spec, cache = self.config.layers[i], self._cache[i]
            if isinstance(spec, Conv):
                d, grads[f"{i}.W"], grads[f"{i}.b"] = ops.conv2d_backward(d, self.params[f"{i}.W"], cache)
            elif isinstance(spec, ReLU):
                d = ops.relu_backward(d, cache)
            elif isinstance(spec, MaxPool):
                d = ops.maxpool2_backward(d, cache)
            elif isinstance(spec, Flatten):
                d = d.reshape(cache)
            elif isinstance(spec, (Dense, SoftmaxOutput)):
                d, grads[f"{i}.W"], grads[f"{i}.b"] = ops.dense_backward(d, self.params[f"{i}.W"], cache)
            elif isinstance(spec, Dropout):
                d = ops.dropout_backward(d, cache)
        return grads, d

    def loss_and_grads(self, x, labels, l2: float = 0.0, train: bool = False, rng=None):
        """Cross-entropy (+ ``l2 * sum ||W||^2``), gradients, and logits."""
        logits = self.forward(x, train=train, rng=rng)
        loss, dlogits = ops.softmax_cross_entropy(logits, labels)
        grads, _ = self.backward(dlogits)
        if l2:
            loss += l2 * self.l2_penalty()
            for k in self.weight_keys:
                grads[k] = grads[k] + 2.0 * l2 * self.params[k]
        return loss, grads, logits

    def predict(self, features, batch_size: int = 256) -> np.ndarray:
        """Softmax scores, ``n x K``; dropout is off."""
        x = self.to_nchw(features)
        out = [ops.softmax(self.forward(x[s : s + batch_size])) for s in range(0, x.shape[0], batch_size)]
        self._cache = []
        if not out:
            return np.zeros((0, self.config.num_classes))
        return np.vstack(out)

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()}, self.input_mean, self.input_std)

    def __eq__(self, other):
        if not isinstance(other, Model):
            return NotImplemented
        return (
            self.config == other.config
            and (self.input_mean, self.input_std) == (other.input_mean, other.input_std)
            and self.params.keys() == other.params.keys()
            and all(np.array_equal(self.params[k], other.params[k]) for k in self.params)
        )


def save_model(model: Model, path: str | os.PathLike) -> None:
    """Store config and parameters in an ``.npz`` archive (format version 1)."""
    meta = json.dumps(
        {
            "format_version": FORMAT_VERSION,
            "config": model.config.to_dict(),
            "input_mean": model.input_mean,
            "input_std": model.input_std,
        },
        sort_keys=True,
    )
    arrays = {"__meta__": np.frombuffer(meta.encode(), dtype=np.uint8), **model.params}
    write_npz(path, arrays)


def load_model(path: str | os.PathLike) -> Model:
    with np.load(path) as z:
        meta = json.loads(z["__meta__"].tobytes().decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {meta.get('format_version')}")
        params = {k: z[k].copy() for k in z.files if k != "__meta__"}
    config = NetworkConfig.from_dict(meta["config"])
    expected = Model.initialize(config, 0).params
    for k, v in expected.items():
        if k not in params or params[k].shape != v.shape:
            raise ValueError(f"parameter {k} missing or mis-shaped in {path}")
    return Model(config, params, meta.get("input_mean", 0.0), meta.get("input_std", 1.0))
