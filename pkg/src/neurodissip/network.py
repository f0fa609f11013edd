"""Plain multilayer perceptrons as explicit weight/bias/activation stacks.

A network is a tuple of layers, each computing act(W h + b); a layer with
activation None is a linear readout.  "Depth L" throughout the package
means L activated layers with no extra readout, so a 1-layer relu network
is x -> relu(W x + b).

The JSON schema round-trips float64 weights losslessly::

    {"layers": [{"rows": 2, "cols": 2,
                 "weight": [...row-major...],
                 "bias": [...] | null,
                 "activation": "tanh" | null}]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .activations import Activation, get_activation

__all__ = ["Layer", "MlpNetwork", "save_network", "load_network"]


@dataclass(frozen=True, eq=False)
class Layer:
    """One affine map plus optional elementwise activation."""

    weight: np.ndarray
    bias: np.ndarray | None = None
    activation: str | None = None

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=float)
        if w.ndim != 2 or w.size == 0:
            raise ValueError(f"layer weight must be a non-empty matrix, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("layer weight contains non-finite entries")
        object.__setattr__(self, "weight", w)
        if self.bias is not None:
            b = np.asarray(self.bias, dtype=float)
            if b.shape != (w.shape[0],):
                raise ValueError(
                    f"bias shape {b.shape} does not match weight rows {w.shape[0]}"
                )
            if not np.all(np.isfinite(b)):
                raise ValueError("layer bias contains non-finite entries")
            object.__setattr__(self, "bias", b)
        if self.activation is not None:
            get_activation(self.activation)  # raises on unknown names

    @property
    def rows(self) -> int:
        return self.weight.shape[0]

    @property
    def cols(self) -> int:
        return self.weight.shape[1]

    @property
    def act(self) -> Activation | None:
        return None if self.activation is None else get_activation(self.activation)


@dataclass(frozen=True, eq=False)
class MlpNetwork:
    """A chain of layers with compatible dimensions."""

    layers: tuple[Layer, ...] = field(default_factory=tuple)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        for i in range(1, len(layers)):
            prev, cur = layers[i - 1], layers[i]
            if cur.cols != prev.rows:
                raise ValueError(
                    f"layer {i} expects {cur.cols} inputs but layer {i - 1} "
                    f"produces {prev.rows}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].cols

    @property
    def output_dim(self) -> int:
        return self.layers[-1].rows

    def forward(self, x) -> np.ndarray:
        """Evaluate the network at a single point."""
        return self.forward_trace(x)[0]

    def forward_trace(self, x):
        """Evaluate and return (output, pre-activations per layer).

        The trace holds z_l = W_l h_l + b_l for every layer, including an
        unactivated readout (whose z is the output itself).
        """
        h = np.asarray(x, dtype=float)
        if h.shape != (self.input_dim,):
            raise ValueError(
                f"input shape {h.shape} does not match network input "
                f"dimension {self.input_dim}"
            )
        zs = []
        for layer in self.layers:
            z = layer.weight @ h
            if layer.bias is not None:
                z = z + layer.bias
            zs.append(z)
            h = layer.act.fn(z) if layer.activation is not None else z
        return h, zs

    def forward_batch(self, x):
        """Evaluate a batch of points (n, input_dim) -> (outputs, traces)."""
        h = np.asarray(x, dtype=float)
        if h.ndim != 2 or h.shape[1] != self.input_dim:
            raise ValueError(
                f"batch shape {h.shape} does not match network input "
                f"dimension {self.input_dim}"
            )
        zs = []
        for layer in self.layers:
            z = h @ layer.weight.T
            if layer.bias is not None:
                z = z + layer.bias
            zs.append(z)
            h = layer.act.fn(z) if layer.activation is not None else z
        return h, zs

    def to_dict(self) -> dict:
        return {
            "layers": [
                {
                    "rows": layer.rows,
                    "cols": layer.cols,
                    "weight": layer.weight.reshape(-1).tolist(),
                    "bias": None if layer.bias is None else layer.bias.tolist(),
                    "activation": layer.activation,
                }
                for layer in self.layers
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MlpNetwork":
        try:
            raw_layers = data["layers"]
        except (KeyError, TypeError):
            raise ValueError("network document must contain a 'layers' list") from None
        layers = []
        for i, spec in enumerate(raw_layers):
            rows, cols = int(spec["rows"]), int(spec["cols"])
            weight = np.asarray(spec["weight"], dtype=float)
            if weight.size != rows * cols:
                raise ValueError(
                    f"layer {i}: weight has {weight.size} entries, expected "
                    f"{rows}x{cols}"
                )
            bias = spec.get("bias")
            layers.append(
                Layer(
                    weight=weight.reshape(rows, cols),
                    bias=None if bias is None else np.asarray(bias, dtype=float),
                    activation=spec.get("activation"),
                )
            )
        return cls(layers=tuple(layers))


def save_network(net: MlpNetwork, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(net.to_dict(), fh, indent=2)
        fh.write("\n")


def load_network(path) -> MlpNetwork:
    with open(path, "r", encoding="utf-8") as fh:
        return MlpNetwork.from_dict(json.load(fh))
