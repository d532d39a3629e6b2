"""Multi-layer perceptron classifier and its checkpoint format."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

CKPT_MAGIC = b"NOILCKPT"


class MlpClassifier:
    """ReLU MLP producing raw logits.

    Layer ``i`` maps ``x @ W_i + b_i``; ReLU sits between layers but not after
    the last one.
    """

    def __init__(self, layer_sizes, weights, biases, seed=None):
        self.layer_sizes = [int(s) for s in layer_sizes]
        self.weights = [Tensor(w, requires_grad=True) for w in weights]
        self.biases = [Tensor(b, requires_grad=True) for b in biases]
        self.seed = seed

    @classmethod
    def init(cls, layer_sizes, seed: int) -> "MlpClassifier":
        """He-style fan-in uniform weights, zero biases."""
        sizes = list(layer_sizes)
        if len(sizes) < 2:
            raise ValueError(f"need at least an input and an output size, got {sizes}")
        if any(int(s) <= 0 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(sizes, weights, biases, seed=seed)

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"layer{i}.weight", w))
            out.append((f"layer{i}.bias", b))
        return out

    def num_parameters(self) -> int:
        return int(np.sum([p.size for p in self.parameters()]))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def forward(self, x, frozen: bool = False) -> Tensor:
        """Logits for a batch ``x`` of shape (B, d).

        With ``frozen`` the parameters enter the graph as constants, so only
        gradients with respect to ``x`` get recorded.
        """
        x = T.as_tensor(x)
        if x.values.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"model expects inputs of shape (B, {self.input_dim}), got {x.shape}")
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if frozen:
                w, b = Tensor(w.values), Tensor(b.values)
            h = T.add(T.matmul(h, w), b)
            if i < last:
                h = T.relu(h)
        return h

    __call__ = forward

    def predict_logits(self, x: np.ndarray) -> np.ndarray:
        """Forward pass on raw arrays with nothing recorded."""
        h = np.asarray(x, dtype=np.float64)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.values + b.values
            if i < last:
                h = np.maximum(h, 0.0)
        return h

    def copy(self) -> "MlpClassifier":
        return MlpClassifier(
            self.layer_sizes,
            [w.values.copy() for w in self.weights],
            [b.values.copy() for b in self.biases],
            seed=self.seed,
        )

    def state(self) -> list[np.ndarray]:
        return [p.values.copy() for p in self.parameters()]


def save_checkpoint(model: MlpClassifier, path, config_hash: str = "", meta: dict | None = None) -> None:
    """Write ``model`` as magic + u32 header length + JSON header + f64 LE buffers."""
    named = model.named_parameters()
    header = {
        "format": 1,
        "layer_sizes": model.layer_sizes,
        "names": [n for n, _ in named],
        "shapes": [list(p.shape) for _, p in named],
        "seed": model.seed,
        "config_hash": config_hash,
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, p in named:
            f.write(np.ascontiguousarray(p.values, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[MlpClassifier, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    offset = 12 + hlen
    arrays = []
    for shape in header["shapes"]:
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(raw):
            raise ValueError(f"{path}: truncated parameter data")
        arrays.append(np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).astype(np.float64))
        offset = end
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    model = MlpClassifier(header["layer_sizes"], arrays[0::2], arrays[1::2], seed=header.get("seed"))
    return model, header


def parameter_digest(model: MlpClassifier) -> str:
    h = hashlib.sha256()
    for p in model.parameters():
        h.update(np.ascontiguousarray(p.values, dtype="<f8").tobytes())
    return h.hexdigest()
