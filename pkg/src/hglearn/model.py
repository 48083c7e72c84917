"""Hypergraph convolution stacks, classification head, parameter accounting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, ShapeError, Tensor, ValidationError
from .hypergraph import Hypergraph, propagation_operator

__all__ = [
    "ACTIVATIONS",
    "STRATEGIES",
    "HGNNLayer",
    "HGNNStack",
    "ClassifierHead",
    "init_layer",
    "build_encoder",
    "build_decoder",
    "build_head",
    "hgnn_forward",
    "hgnn_forward_operator",
    "classify",
    "cross_entropy_masked",
    "count_tunable_params",
]

ACTIVATIONS = ("relu", "identity")

STRATEGIES = ("finetune", "linear_probe", "phgnn", "phgnn_no_structure", "gpf", "gpf_plus")


@dataclass
class HGNNLayer:
    weight: Parameter
    bias: Parameter
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        d_out = self.weight.value.shape[1]
        if self.bias.value.shape != (1, d_out):
            raise ShapeError(
                f"bias shape {self.bias.value.shape} does not match (1, {d_out})"
            )

    @property
    def d_in(self) -> int:
        return self.weight.value.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.value.shape[1]


class HGNNStack:
    """An ordered chain of hypergraph convolution layers."""

    def __init__(self, layers, frozen=False):
        self.layers = list(layers)
        if not self.layers:
            raise ValidationError("HGNNStack: needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.d_out != nxt.d_in:
                raise ShapeError(
                    f"layer dims do not chain: {prev.d_out} -> {nxt.d_in}"
                )
        self.frozen = False
        if frozen:
            self.freeze()

    @property
    def input_dim(self) -> int:
        return self.layers[0].d_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].d_out

    def parameters(self) -> list[Parameter]:
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    def freeze(self):
        for p in self.parameters():
            p.trainable = False
        self.frozen = True

    def copy(self, trainable: bool) -> "HGNNStack":
        layers = [
            HGNNLayer(l.weight.copy(trainable), l.bias.copy(trainable), l.activation)
            for l in self.layers
        ]
        return HGNNStack(layers, frozen=not trainable)


def init_layer(d_in, d_out, activation, rng, name) -> HGNNLayer:
    """Glorot-uniform weight in +-sqrt(6/(d_in+d_out)), zero bias."""
    bound = np.sqrt(6.0 / (d_in + d_out))
    w = rng.uniform(-bound, bound, size=(d_in, d_out))
    return HGNNLayer(
        Parameter(w, f"{name}.weight"),
        Parameter(np.zeros((1, d_out)), f"{name}.bias"),
        activation,
    )


def build_encoder(d_in, hidden_dims, d_z, rng, name="encoder") -> HGNNStack:
    """Relu on every layer except the last, which is linear."""
    dims = [d_in, *hidden_dims, d_z]
    layers = []
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        act = "identity" if i == len(dims) - 2 else "relu"
        layers.append(init_layer(a, b, act, rng, f"{name}.layer{i}"))
    return HGNNStack(layers)


def build_decoder(d_z, d_out, rng, name="decoder") -> HGNNStack:
    return HGNNStack([init_layer(d_z, d_out, "identity", rng, f"{name}.layer0")])


@dataclass
class ClassifierHead:
    weight: Parameter
    bias: Parameter

    def __post_init__(self):
        c = self.weight.value.shape[1]
        if c < 2:
            raise ValidationError(f"classifier needs >= 2 classes, got {c}")
        if self.bias.value.shape != (1, c):
            raise ShapeError(
                f"head bias shape {self.bias.value.shape} does not match (1, {c})"
            )

    @property
    def num_classes(self) -> int:
        return self.weight.value.shape[1]

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def copy(self, trainable=True) -> "ClassifierHead":
        return ClassifierHead(self.weight.copy(trainable), self.bias.copy(trainable))


def build_head(d_z, num_classes, rng=None, name="head") -> ClassifierHead:
    """Zero-initialized readout: logits start at zero for every strategy.

    The first optimizer steps then move the head along the class direction,
    which is what makes ranking metrics usable within short tuning budgets.
    """
    return ClassifierHead(
        Parameter(np.zeros((d_z, num_classes)), f"{name}.weight"),
        Parameter(np.zeros((1, num_classes)), f"{name}.bias"),
    )


def hgnn_forward_operator(operator: np.ndarray, X, stack: HGNNStack) -> Tensor:
    """Run the stack with a precomputed propagation matrix.

    Per layer: X <- act(operator @ X @ W + bias).
    """
    h = ad.const(X)
    if h.value.shape[1] != stack.input_dim:
        raise ShapeError(
            f"hgnn_forward: input dim {h.value.shape[1]} does not match "
            f"stack input dim {stack.input_dim}"
        )
    if operator.shape[0] != h.value.shape[0]:
        raise ShapeError(
            f"hgnn_forward: operator is {operator.shape[0]}-node, features have "
            f"{h.value.shape[0]} rows"
        )
    op = ad.const(operator)
    for layer in stack.layers:
        h = ad.matmul(ad.matmul(op, h), layer.weight.leaf())
        h = ad.broadcast_add_row(h, layer.bias.leaf())
        if layer.activation == "relu":
            h = ad.relu(h)
    return h


def hgnn_forward(G: Hypergraph, X, stack: HGNNStack) -> Tensor:
    return hgnn_forward_operator(propagation_operator(G), X, stack)


def classify(Z, head: ClassifierHead) -> Tensor:
    """Affine logits; no softmax (consumers take logits or probabilities)."""
    z = ad.const(Z)
    if z.value.shape[1] != head.weight.value.shape[0]:
        raise ShapeError(
            f"classify: latent dim {z.value.shape[1]} does not match head "
            f"input dim {head.weight.value.shape[0]}"
        )
    return ad.broadcast_add_row(ad.matmul(z, head.weight.leaf()), head.bias.leaf())


def cross_entropy_masked(logits, labels, mask) -> Tensor:
    """Mean negative log-likelihood over the masked rows."""
    return ad.softmax_cross_entropy(logits, labels, mask)


def count_tunable_params(strategy, encoder: HGNNStack, head: ClassifierHead, *,
                         feature_dim=None, num_prompts=None, gpf_basis=None):
    """Per-component trainable parameter counts for a tuning strategy.

    Returns (per_component dict, total). The classifier head is trainable,
    and counted, under every strategy.
    """
    if strategy not in STRATEGIES:
        raise ValidationError(f"unknown strategy {strategy!r}")
    head_count = sum(p.size for p in head.parameters())
    counts = {}
    if strategy == "finetune":
        counts["encoder"] = sum(p.size for p in encoder.parameters())
    elif strategy == "linear_probe":
        pass
    elif strategy in ("phgnn", "phgnn_no_structure"):
        if num_prompts is None or feature_dim is None:
            raise ValidationError(f"{strategy}: needs num_prompts and feature_dim")
        counts["prompt_tokens"] = int(num_prompts) * int(feature_dim)
    elif strategy == "gpf":
        if feature_dim is None:
            raise ValidationError("gpf: needs feature_dim")
        counts["prompt_vector"] = int(feature_dim)
    elif strategy == "gpf_plus":
        if gpf_basis is None or feature_dim is None:
            raise ValidationError("gpf_plus: needs gpf_basis and feature_dim")
        counts["prompt_basis"] = int(gpf_basis) * int(feature_dim)
    counts["head"] = head_count
    return counts, sum(counts.values())
