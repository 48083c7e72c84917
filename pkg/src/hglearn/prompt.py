"""Prompt sub-hypergraph learning and the baseline tuning strategies.

A prompt is a small set of learnable token vectors living in the fused
feature space. Tokens get their own k-NN hyperedge structure (recomputed
from the latest token values at the start of every epoch), and each token is
attached to the data hypergraph through one hyperedge covering all data
nodes. Tuning optimizes only the tokens and the classification head; the
pretrained encoder stays frozen.

The same epoch loop also drives the baselines: full fine-tuning, a linear
probe, and the additive feature-prompt baselines (a single shared vector, or
a basis with per-node softmax attention).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamWState, Parameter, ValidationError, adamw_step, forward_backward
from .hypergraph import Hypergraph, knn_hyperedges, propagation_operator
from .metrics import MetricsReport, evaluate_logits
from .model import (
    STRATEGIES,
    HGNNStack,
    build_head,
    classify,
    count_tunable_params,
    cross_entropy_masked,
    hgnn_forward_operator,
)

__all__ = [
    "PromptSet",
    "TuneConfig",
    "TuneResult",
    "default_prompt_k",
    "build_prompt_structure",
    "insert_prompt",
    "prompt_tune",
    "tune_with_strategy",
    "evaluate_snapshot",
    "snapshot_to_doc",
    "snapshot_from_doc",
]


def default_prompt_k(num_prompts: int) -> int:
    return min(3, num_prompts - 1)


@dataclass
class PromptSet:
    tokens: Parameter
    k_p: int
    structured: bool = True

    def __post_init__(self):
        if self.tokens.value.shape[0] < 1:
            raise ValidationError("prompt set needs at least one token")

    @property
    def size(self) -> int:
        return self.tokens.value.shape[0]


@dataclass
class TuneConfig:
    strategy: str = "phgnn"
    epochs: int = 200
    lr: float = 3e-4
    weight_decay: float = 1e-4
    seed: int = 0
    num_prompts: int = 16
    prompt_k: int = None
    gpf_basis: int = 32
    num_classes: int = 2

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}")
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.prompt_k is None:
            self.prompt_k = default_prompt_k(self.num_prompts)


@dataclass
class TuneResult:
    strategy: str
    snapshot: dict
    prompt_incidence: np.ndarray
    prompt_edge_weights: np.ndarray
    best_metrics: MetricsReport
    best_epoch: int
    train_losses: list = field(default_factory=list)
    val_bacc: list = field(default_factory=list)
    param_counts: dict = field(default_factory=dict)
    tunable_total: int = 0


def build_prompt_structure(tokens, k_p: int, structured: bool = True) -> Hypergraph:
    """k-NN hyperedges among the prompt tokens (Euclidean on token vectors).

    Unstructured mode keeps the tokens as independent prompts: a hypergraph
    with zero hyperedges.
    """
    t = ad.as_matrix(tokens, "tokens")
    p = t.shape[0]
    if not structured:
        return Hypergraph(p, np.zeros((p, 0)))
    if k_p >= p:
        raise ValidationError(f"prompt structure: k_p={k_p} must be < {p} tokens")
    return knn_hyperedges(t, k_p)


def insert_prompt(G: Hypergraph, X, G_p: Hypergraph, tokens):
    """Attach the prompt sub-hypergraph to the data hypergraph.

    The manipulated hypergraph keeps every original hyperedge, adds the
    prompt-internal hyperedges, and adds one insertion hyperedge per token
    containing that token plus all N data nodes. Features are stacked with
    the token rows appended. Returns (G_m, X_m).
    """
    X = ad.as_matrix(X, "features")
    t = tokens.value if isinstance(tokens, Parameter) else ad.as_matrix(tokens, "tokens")
    n, d = X.shape
    p = t.shape[0]
    if p == 0:
        return G, X
    if t.shape[1] != d:
        raise ValidationError(f"token dim {t.shape[1]} does not match feature dim {d}")
    if G_p.num_nodes != p:
        raise ValidationError(f"prompt structure covers {G_p.num_nodes} tokens, got {p}")
    e, e_p = G.num_edges, G_p.num_edges
    inc = np.zeros((n + p, e + e_p + p))
    inc[:n, :e] = G.incidence
    inc[n:, e : e + e_p] = G_p.incidence
    inc[:n, e + e_p :] = 1.0
    inc[n + np.arange(p), e + e_p + np.arange(p)] = 1.0
    weights = np.concatenate([G.edge_weights, G_p.edge_weights, np.ones(p)])
    return Hypergraph(n + p, inc, weights), np.vstack([X, t])


def _validate_masks(labels, train_mask, val_mask):
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    mt = np.asarray(train_mask, dtype=bool).reshape(-1)
    mv = np.asarray(val_mask, dtype=bool).reshape(-1)
    n = y.shape[0]
    if mt.shape[0] != n or mv.shape[0] != n:
        raise ValidationError("mask length does not match label count")
    if not mt.any():
        raise ValidationError("training mask selects no nodes")
    if not mv.any():
        raise ValidationError("validation mask selects no nodes")
    if (mt & mv).any():
        raise ValidationError("training and validation masks overlap")
    return y, mt, mv


class _StrategyState:
    """Owns the per-strategy extra parameters and the logits builder."""

    def __init__(self, strategy, G, X, encoder, head, config, rng):
        self.strategy = strategy
        self.G = G
        self.X = X
        self.encoder = encoder
        self.head = head
        self.config = config
        self.n = X.shape[0]
        d = X.shape[1]
        self.prompt = None
        self.gpf_vector = None
        self.gpf_basis = None
        if strategy in ("phgnn", "phgnn_no_structure"):
            tokens = rng.normal(0.0, 0.02, size=(config.num_prompts, d))
            self.prompt = PromptSet(
                Parameter(tokens, "prompt.tokens"),
                config.prompt_k,
                structured=strategy == "phgnn",
            )
            if config.num_prompts * 2 > self.n:
                warnings.warn(
                    f"{config.num_prompts} prompt tokens is large for {self.n} nodes"
                )
            if config.num_prompts >= encoder.output_dim:
                warnings.warn(
                    f"{config.num_prompts} prompt tokens is not small next to the "
                    f"latent dim {encoder.output_dim}"
                )
        elif strategy == "gpf":
            self.gpf_vector = Parameter(np.zeros((1, d)), "gpf.vector")
        elif strategy == "gpf_plus":
            basis = rng.normal(0.0, 0.02, size=(config.gpf_basis, d))
            self.gpf_basis = Parameter(basis, "gpf.basis")
        if strategy in ("phgnn", "phgnn_no_structure"):
            self.base_operator = None
        else:
            self.base_operator = propagation_operator(G)

    def trainables(self):
        params = []
        if self.strategy == "finetune":
            params.extend(self.encoder.parameters())
        if self.prompt is not None:
            params.append(self.prompt.tokens)
        if self.gpf_vector is not None:
            params.append(self.gpf_vector)
        if self.gpf_basis is not None:
            params.append(self.gpf_basis)
        params.extend(self.head.parameters())
        return params

    def epoch_structure(self):
        """Prompt-internal hyperedges from the latest token values."""
        if self.prompt is None:
            return None, self.base_operator
        G_p = build_prompt_structure(
            self.prompt.tokens.value, self.prompt.k_p, self.prompt.structured
        )
        G_m, _ = insert_prompt(self.G, self.X, G_p, self.prompt.tokens.value)
        return G_p, propagation_operator(G_m)

    def logits(self, operator):
        """Forward pass; rows beyond the first n belong to prompt tokens."""
        if self.prompt is not None:
            x_m = ad.concat_rows(self.X, self.prompt.tokens.leaf())
            z = hgnn_forward_operator(operator, x_m, self.encoder)
        elif self.strategy == "gpf":
            x = ad.broadcast_add_row(self.X, self.gpf_vector.leaf())
            z = hgnn_forward_operator(operator, x, self.encoder)
        elif self.strategy == "gpf_plus":
            basis = self.gpf_basis.leaf()
            attn = ad.row_softmax(ad.matmul(self.X, ad.transpose(basis)))
            x = ad.add(ad.const(self.X), ad.matmul(attn, basis))
            z = hgnn_forward_operator(operator, x, self.encoder)
        else:
            z = hgnn_forward_operator(operator, self.X, self.encoder)
        return classify(z, self.head)


def _snapshot_params(params) -> dict:
    return {p.name: p.value.copy() for p in params}


def tune_with_strategy(strategy, G, X, labels, train_mask, val_mask,
                       pretrained: HGNNStack, config: TuneConfig) -> TuneResult:
    """Shared epoch loop for every tuning strategy.

    Per epoch: (re)build the prompt structure where applicable, compute the
    training loss on the train mask, step AdamW over the strategy's trainable
    set, recompute predictions with the updated parameters, evaluate on the
    validation mask, and keep the best-validation snapshot (strictly better
    balanced accuracy; ties keep the earlier epoch).
    """
    if strategy not in STRATEGIES:
        raise ValidationError(f"unknown strategy {strategy!r}")
    X = ad.as_matrix(X, "features")
    y, mt, mv = _validate_masks(labels, train_mask, val_mask)
    if y.shape[0] != G.num_nodes or X.shape[0] != G.num_nodes:
        raise ValidationError("labels/features do not match the hypergraph node count")
    if strategy == "finetune":
        encoder = pretrained.copy(trainable=True)
    else:
        if not pretrained.frozen:
            raise ValidationError(f"{strategy}: encoder must be frozen")
        encoder = pretrained
    rng = np.random.default_rng(config.seed)
    head = build_head(encoder.output_dim, config.num_classes, rng)
    run = _StrategyState(strategy, G, X, encoder, head, config, rng)
    counts, total = count_tunable_params(
        strategy, encoder, head,
        feature_dim=X.shape[1],
        num_prompts=config.num_prompts,
        gpf_basis=config.gpf_basis,
    )
    params = run.trainables()
    assert total == sum(p.size for p in params)
    n, p_rows = X.shape[0], (config.num_prompts if run.prompt is not None else 0)
    y_pad = np.concatenate([y, np.zeros(p_rows, dtype=np.int64)])
    mt_pad = np.concatenate([mt, np.zeros(p_rows, dtype=bool)])
    state = AdamWState()
    result = TuneResult(
        strategy=strategy,
        snapshot=_snapshot_params(params),
        prompt_incidence=None,
        prompt_edge_weights=None,
        best_metrics=None,
        best_epoch=-1,
        param_counts=counts,
        tunable_total=total,
    )
    best_bacc = -1.0
    for epoch in range(config.epochs):
        G_p, operator = run.epoch_structure()
        loss = cross_entropy_masked(run.logits(operator), y_pad, mt_pad)
        result.train_losses.append(forward_backward(loss))
        adamw_step(params, state, config.lr, config.weight_decay)
        # post-update predictions on the same structure, per the tuning loop
        report = evaluate_logits(run.logits(operator).value[:n], y, mv)
        result.val_bacc.append(report.bacc)
        if report.bacc > best_bacc:
            best_bacc = report.bacc
            result.best_epoch = epoch
            result.best_metrics = report
            result.snapshot = _snapshot_params(params)
            if G_p is not None:
                result.prompt_incidence = G_p.incidence.copy()
                result.prompt_edge_weights = G_p.edge_weights.copy()
    return result


def prompt_tune(G, X, labels, train_mask, val_mask, encoder: HGNNStack,
                config: TuneConfig, structured: bool = True) -> TuneResult:
    """Prompt-token tuning against a frozen encoder."""
    strategy = "phgnn" if structured else "phgnn_no_structure"
    if not encoder.frozen:
        raise ValidationError("prompt_tune: encoder must be frozen")
    return tune_with_strategy(strategy, G, X, labels, train_mask, val_mask, encoder, config)


def evaluate_snapshot(result: TuneResult, G, X, labels, mask,
                      pretrained: HGNNStack, config: TuneConfig) -> MetricsReport:
    """Re-evaluate a stored snapshot on a mask, reproducing its metrics.

    The prompt structure saved with the snapshot is reused as-is (the epoch
    loop evaluates post-update token values under the structure built from
    the pre-update ones, so the structure is part of the snapshot).
    """
    X = ad.as_matrix(X, "features")
    n = X.shape[0]
    encoder = pretrained.copy(trainable=(result.strategy == "finetune"))
    rng = np.random.default_rng(config.seed)
    head = build_head(encoder.output_dim, config.num_classes, rng)
    run = _StrategyState(result.strategy, G, X, encoder, head, config, rng)
    for p in run.trainables():
        if p.name in result.snapshot:
            p.value[:] = result.snapshot[p.name]
    if run.prompt is not None:
        G_p = Hypergraph(
            config.num_prompts, result.prompt_incidence, result.prompt_edge_weights
        )
        G_m, _ = insert_prompt(G, X, G_p, run.prompt.tokens.value)
        operator = propagation_operator(G_m)
    else:
        operator = run.base_operator
    return evaluate_logits(run.logits(operator).value[:n], labels, mask)


def snapshot_to_doc(result: TuneResult) -> dict:
    """JSON-serializable form of a tuning snapshot (values plus structure)."""
    doc = {
        "format": "hglearn-snapshot",
        "version": 1,
        "strategy": result.strategy,
        "best_epoch": result.best_epoch,
        "params": {
            name: [[float(v) for v in row] for row in value]
            for name, value in sorted(result.snapshot.items())
        },
    }
    if result.prompt_incidence is not None:
        doc["prompt_incidence"] = [
            [int(v) for v in row] for row in result.prompt_incidence
        ]
        doc["prompt_edge_weights"] = [float(v) for v in result.prompt_edge_weights]
    return doc


def snapshot_from_doc(doc: dict) -> TuneResult:
    """Rebuild a restorable TuneResult from its serialized snapshot."""
    if doc.get("format") != "hglearn-snapshot" or doc.get("version") != 1:
        raise ValidationError("not a recognized tuning snapshot")
    incidence = None
    weights = None
    if "prompt_incidence" in doc:
        incidence = np.array(doc["prompt_incidence"], dtype=np.float64)
        if incidence.size == 0:
            incidence = incidence.reshape(len(doc["prompt_incidence"]), 0)
        weights = np.array(doc["prompt_edge_weights"], dtype=np.float64)
    return TuneResult(
        strategy=doc["strategy"],
        snapshot={k: np.array(v, dtype=np.float64) for k, v in doc["params"].items()},
        prompt_incidence=incidence,
        prompt_edge_weights=weights,
        best_metrics=None,
        best_epoch=doc["best_epoch"],
    )
