"""The graph kernel network: kernel responses -> per-filter aggregation ->
batch-normalized predictor, plus the training loop and the filter
perturbation hooks the model-level metrics rely on.

Aggregation modes: ``sum`` (plain column sums), ``negative_entropy``
(responses normalized by the response-matrix norm, contributions q*log q)
and ``max`` (column max with the attaining row recorded).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .data import Dataset, Split
from .errors import ShapeError, TrainingDivergedError
from .graphs import Graph, Rng
from .kernel import (
    FeatureEncoder,
    GraphFilter,
    SubgraphStack,
    build_subgraph_stack,
    combine_stacks,
    stack_responses,
)
from .numkit import Tensor

AGG_MODES = ("sum", "negative_entropy", "max")


@dataclass(frozen=True)
class ModelConfig:
    num_filters: int = 4
    filter_size: int = 6
    embed_dim: int = 16
    hop_radius: int = 2
    max_subgraph_size: int = 10
    agg_mode: str = "negative_entropy"
    predictor_depth: int = 1
    hidden_dim: int = 16
    walk_cap: int | None = None
    entropy_eps: float = 1e-8
    norm_scope: str = "global"
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.agg_mode not in AGG_MODES:
            raise ValueError(f"agg_mode must be one of {AGG_MODES}")
        if self.norm_scope not in ("global", "per_column"):
            raise ValueError("norm_scope must be 'global' or 'per_column'")
        if self.predictor_depth not in (1, 2):
            raise ValueError("predictor_depth must be 1 or 2")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    lr: float = 0.01
    weight_decay: float = 1e-4
    batch_size: int = 64
    seed: int = 0
    patience: int = 100

    def __post_init__(self):
        if not (0 < self.epochs <= 1000):
            raise ValueError("epochs must lie in 1..1000")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be nonnegative")
        if self.batch_size < 1 or self.patience < 1:
            raise ValueError("batch_size and patience must be positive")


class Predictor:
    """Batch normalization followed by one linear layer (or a 2-layer MLP)."""

    def __init__(self, in_dim: int, num_classes: int, depth: int, hidden_dim: int,
                 rng: Rng, bn_eps: float = 1e-5, bn_momentum: float = 0.1):
        self.bn_eps = bn_eps
        self.bn_momentum = bn_momentum
        self.gamma = Tensor(np.ones((1, in_dim)), requires_grad=True)
        self.beta = Tensor(np.zeros((1, in_dim)), requires_grad=True)
        self.running_mean = np.zeros((1, in_dim))
        self.running_var = np.ones((1, in_dim))
        self.layers = []
        dims = [in_dim, num_classes] if depth == 1 else [in_dim, hidden_dim, num_classes]
        for d_in, d_out in zip(dims, dims[1:]):
            w = Tensor(rng.normal(scale=1.0 / np.sqrt(d_in), size=(d_in, d_out)),
                       requires_grad=True)
            b = Tensor(np.zeros((1, d_out)), requires_grad=True)
            self.layers.append((w, b))

    @property
    def in_dim(self) -> int:
        return self.gamma.shape[1]

    def logits(self, z: Tensor, training: bool) -> Tensor:
        if z.shape[1] != self.in_dim:
            raise ShapeError(f"predictor expects width {self.in_dim}, got {z.shape[1]}")
        if training:
            batch = z.shape[0]
            mean = nk.tsum(z, axis=0) * Tensor(np.full((1, 1), 1.0 / batch))
            centered = z - mean
            var = nk.tsum(centered * centered, axis=0) * Tensor(np.full((1, 1), 1.0 / batch))
            mom = self.bn_momentum
            self.running_mean = (1 - mom) * self.running_mean + mom * mean.values
            self.running_var = (1 - mom) * self.running_var + mom * var.values
            normed = centered / nk.sqrt(var + Tensor(np.full((1, 1), self.bn_eps)))
        else:
            scale = 1.0 / np.sqrt(self.running_var + self.bn_eps)
            normed = (z - Tensor(self.running_mean)) * Tensor(scale)
        out = normed * self.gamma + self.beta
        for i, (w, b) in enumerate(self.layers):
            out = out @ w + b
            if i + 1 < len(self.layers):
                out = nk.relu(out)
        return out

    def parameters(self) -> list[Tensor]:
        params = [self.gamma, self.beta]
        for w, b in self.layers:
            params.extend([w, b])
        return params


@dataclass
class ForwardTrace:
    """Everything the explainer needs from one forward pass."""

    R: np.ndarray
    contributions: np.ndarray
    z: np.ndarray
    logits: np.ndarray
    predicted_class: int
    response_norm: float
    argmax_rows: np.ndarray | None = None


class XgknModel:
    def __init__(self, config: ModelConfig, encoder: FeatureEncoder,
                 filters: list[GraphFilter], predictor: Predictor, num_classes: int):
        self.config = config
        self.encoder = encoder
        self.filters = filters
        self.predictor = predictor
        self.num_classes = num_classes
        self.z_baseline = np.zeros(len(filters))

    @property
    def num_filters(self) -> int:
        return len(self.filters)

    def parameters(self) -> list[Tensor]:
        params = [self.encoder.weight]
        for f in self.filters:
            params.extend(f.parameters())
        params.extend(self.predictor.parameters())
        return params

    def snapshot(self) -> dict:
        return {
            "params": [p.values.copy() for p in self.parameters()],
            "running_mean": self.predictor.running_mean.copy(),
            "running_var": self.predictor.running_var.copy(),
            "z_baseline": self.z_baseline.copy(),
        }

    def restore(self, snap: dict) -> None:
        for p, values in zip(self.parameters(), snap["params"]):
            p.values = values.copy()
            p.grad = None
        self.predictor.running_mean = snap["running_mean"].copy()
        self.predictor.running_var = snap["running_var"].copy()
        self.z_baseline = snap["z_baseline"].copy()


def init_model(config: ModelConfig, feature_dim: int, num_classes: int, rng: Rng) -> XgknModel:
    encoder = FeatureEncoder.init(feature_dim, config.embed_dim, rng.derive("encoder"))
    filters = [GraphFilter.init(config.filter_size, config.embed_dim, rng.derive("filter", i))
               for i in range(config.num_filters)]
    predictor = Predictor(config.num_filters, num_classes, config.predictor_depth,
                          config.hidden_dim, rng.derive("predictor"),
                          bn_eps=config.bn_eps, bn_momentum=config.bn_momentum)
    return XgknModel(config, encoder, filters, predictor, num_classes)


def _aggregate_tensor(r: Tensor, mode: str, eps: float, seg: np.ndarray, num_graphs: int,
                      norm_scope: str = "global") -> tuple[Tensor, np.ndarray, np.ndarray | None]:
    """Batched aggregation; returns (z, contribution values, argmax rows)."""
    m = r.shape[1]
    if mode == "sum":
        z = nk.segment_sum_rows(r, seg, num_graphs)
        return z, r.values.copy(), None
    if mode == "negative_entropy":
        clamped = nk.clip_min(r, eps)
        squares = clamped * clamped
        col_sums = nk.segment_sum_rows(squares, seg, num_graphs)
        if norm_scope == "global":
            norm = nk.sqrt(col_sums @ Tensor(np.ones((m, 1))))
        else:
            norm = nk.sqrt(col_sums)
        q = clamped / nk.gather_rows(norm, seg)
        contrib = q * nk.log(q)
        z = nk.segment_sum_rows(contrib, seg, num_graphs)
        return z, contrib.values.copy(), None
    if mode == "max":
        z, argrow = nk.segment_col_max(r, seg, num_graphs)
        s_tilde = np.zeros_like(r.values)
        for s in range(num_graphs):
            for c in range(m):
                s_tilde[argrow[s, c], c] = z.values[s, c]
        return z, s_tilde, argrow
    raise ValueError(f"unknown aggregation mode {mode!r}")


def aggregate_responses(R: np.ndarray, mode: str, eps: float = 1e-8,
                        norm_scope: str = "global") -> tuple[np.ndarray, np.ndarray]:
    """Aggregate one response matrix into per-filter scores; also returns the
    additive per-row contributions (for max: one-hot rows at the argmax)."""
    r = Tensor(np.asarray(R, dtype=np.float64))
    seg = np.zeros(r.shape[0], dtype=np.int64)
    z, s_tilde, _ = _aggregate_tensor(r, mode, eps, seg, 1, norm_scope)
    return z.values.reshape(-1), s_tilde


def _batch_logits(model: XgknModel, stacks: list[SubgraphStack], training: bool):
    combined, graph_seg = combine_stacks(stacks)
    r = stack_responses(combined, model.filters, model.encoder, model.config.walk_cap)
    z, s_tilde, argrow = _aggregate_tensor(
        r, model.config.agg_mode, model.config.entropy_eps, graph_seg, len(stacks),
        model.config.norm_scope)
    logits = model.predictor.logits(z, training=training)
    return logits, z, r, s_tilde, argrow


def forward(model: XgknModel, g: Graph) -> ForwardTrace:
    """Inference pass for one graph; batch-norm statistics stay frozen."""
    stack = build_subgraph_stack(g, model.config.hop_radius, model.config.max_subgraph_size)
    logits, z, r, s_tilde, argrow = _batch_logits(model, [stack], training=False)
    logit_row = logits.values.reshape(-1)
    return ForwardTrace(
        R=r.values.copy(),
        contributions=s_tilde,
        z=z.values.reshape(-1).copy(),
        logits=logit_row.copy(),
        predicted_class=int(np.argmax(logit_row)),
        response_norm=float(np.linalg.norm(r.values)),
        argmax_rows=None if argrow is None else argrow.reshape(-1).copy(),
    )


def predict_class(model: XgknModel, g: Graph) -> int:
    return forward(model, g).predicted_class


def evaluate_accuracy(model: XgknModel, ds: Dataset, ids) -> float:
    correct = sum(predict_class(model, ds.graphs[i]) == ds.graphs[i].label for i in ids)
    return correct / len(list(ids))


def mean_aggregated_scores(model: XgknModel, graphs) -> np.ndarray:
    """Mean per-filter score vector over a collection of graphs."""
    zs = [forward(model, g).z for g in graphs]
    return np.mean(np.vstack(zs), axis=0)


def _score_matrix(model: XgknModel, stacks: list[SubgraphStack],
                  chunk: int = 128) -> np.ndarray:
    """Aggregated score vectors (one row per graph), batch-norm untouched."""
    rows = []
    for lo in range(0, len(stacks), chunk):
        part = stacks[lo:lo + chunk]
        combined, graph_seg = combine_stacks(part)
        r = stack_responses(combined, model.filters, model.encoder, model.config.walk_cap)
        z, _, _ = _aggregate_tensor(r, model.config.agg_mode, model.config.entropy_eps,
                                    graph_seg, len(part), model.config.norm_scope)
        rows.append(z.values)
    return np.vstack(rows)


def train(model: XgknModel, ds: Dataset, split: Split, cfg: TrainConfig):
    """Mini-batch Adam on the cross-entropy loss. Deterministic under
    ``cfg.seed``; early-stops on a training-loss plateau and returns the
    best-loss parameter snapshot. Also sets the explainer baseline (mean
    aggregated scores over the training split)."""
    train_ids = list(split.train_ids)
    stacks = [build_subgraph_stack(ds.graphs[i], model.config.hop_radius,
                                   model.config.max_subgraph_size) for i in train_ids]
    labels = np.array([ds.graphs[i].label for i in train_ids], dtype=np.int64)
    params = model.parameters()
    state = nk.adam_init(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    shuffle_rng = Rng(cfg.seed).derive("shuffle")
    history = []
    best = {"loss": np.inf, "epoch": -1, "snap": model.snapshot()}
    n = len(train_ids)
    for epoch in range(cfg.epochs):
        # snapshot before the updates so the best-loss bookkeeping stores the
        # parameters the epoch loss was actually computed at
        epoch_start = model.snapshot()
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        epoch_correct = 0
        for lo in range(0, n, cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            logits, _, _, _, _ = _batch_logits(model, [stacks[i] for i in batch],
                                               training=True)
            loss = nk.cross_entropy(logits, labels[batch])
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise TrainingDivergedError(epoch, history)
            nk.backward(loss)
            nk.adam_step(params, state)
            epoch_loss += loss_value * len(batch)
            epoch_correct += int((np.argmax(logits.values, axis=1) == labels[batch]).sum())
        epoch_loss /= n
        history.append({"epoch": epoch, "loss": epoch_loss, "accuracy": epoch_correct / n})
        if epoch_loss < best["loss"] - 1e-12:
            best = {"loss": epoch_loss, "epoch": epoch, "snap": epoch_start}
        elif epoch - best["epoch"] > cfg.patience:
            break
    model.restore(best["snap"])
    # recalibrate frozen batch-norm statistics on the training split so the
    # inference normalization matches the restored parameters exactly
    scores = _score_matrix(model, stacks)
    model.predictor.running_mean = scores.mean(axis=0, keepdims=True)
    model.predictor.running_var = scores.var(axis=0, keepdims=True)
    model.z_baseline = scores.mean(axis=0)
    return model, history


def clone_model(model: XgknModel) -> XgknModel:
    encoder = FeatureEncoder(Tensor(model.encoder.weight.values.copy(), requires_grad=True))
    filters = [GraphFilter(Tensor(f.adjacency_logits.values.copy(), requires_grad=True),
                           Tensor(f.features.values.copy(), requires_grad=True))
               for f in model.filters]
    predictor = Predictor(model.predictor.in_dim, model.num_classes,
                          1 if len(model.predictor.layers) == 1 else 2,
                          model.config.hidden_dim, Rng(0),
                          bn_eps=model.predictor.bn_eps,
                          bn_momentum=model.predictor.bn_momentum)
    for target, source in zip(predictor.parameters(), model.predictor.parameters()):
        target.values = source.values.copy()
    predictor.running_mean = model.predictor.running_mean.copy()
    predictor.running_var = model.predictor.running_var.copy()
    out = XgknModel(model.config, encoder, filters, predictor, model.num_classes)
    out.z_baseline = model.z_baseline.copy()
    return out


_SATURATED_LOGIT = 40.0


def perturb_filters(model: XgknModel, mode: str, delta: float, rng: Rng,
                    feature_pool: np.ndarray | None = None) -> XgknModel:
    """Deep-copied model with perturbed filters; every other parameter stays.

    ``features``: each filter node's embedding row is replaced, with
    probability ``delta``, by the encoding of a random raw feature row from
    ``feature_pool``. ``edges``: each node pair toggles (edge <-> no edge, at
    the 0.5 weight threshold) with probability ``delta``.
    """
    out = clone_model(model)
    if mode == "features":
        if feature_pool is None or len(feature_pool) == 0:
            raise ValueError("feature mode needs a nonempty feature pool")
        pool = np.asarray(feature_pool, dtype=np.float64)
        for filt in out.filters:
            hit = rng.random(filt.size) < delta
            for row in range(filt.size):
                if hit[row]:
                    raw = pool[int(rng.integers(0, pool.shape[0]))]
                    encoded = out.encoder.encode_rows(raw.reshape(1, -1))[0]
                    values = filt.features.values.copy()
                    values[row] = encoded
                    filt.features.values = values
    elif mode == "edges":
        for filt in out.filters:
            logits = filt.adjacency_logits.values.copy()
            effective = filt.adjacency_values()
            draws = rng.random((filt.size, filt.size))
            for u in range(filt.size):
                for v in range(u + 1, filt.size):
                    if draws[u, v] < delta:
                        flip = -_SATURATED_LOGIT if effective[u, v] >= 0.5 else _SATURATED_LOGIT
                        logits[u, v] = logits[v, u] = flip
            filt.adjacency_logits.values = logits
    else:
        raise ValueError(f"unknown filter perturbation mode {mode!r}")
    return out


# ---------------------------------------------------------------------------
# checkpoint serialization

CHECKPOINT_FORMAT = 1


def model_to_dict(model: XgknModel) -> dict:
    cfg = model.config
    return {
        "format": CHECKPOINT_FORMAT,
        "config": {
            "num_filters": cfg.num_filters, "filter_size": cfg.filter_size,
            "embed_dim": cfg.embed_dim, "hop_radius": cfg.hop_radius,
            "max_subgraph_size": cfg.max_subgraph_size, "agg_mode": cfg.agg_mode,
            "predictor_depth": cfg.predictor_depth, "hidden_dim": cfg.hidden_dim,
            "walk_cap": cfg.walk_cap, "entropy_eps": cfg.entropy_eps,
            "norm_scope": cfg.norm_scope, "bn_eps": cfg.bn_eps,
            "bn_momentum": cfg.bn_momentum,
        },
        "num_classes": model.num_classes,
        "feature_dim": model.encoder.weight.shape[0],
        "encoder_weight": model.encoder.weight.values.tolist(),
        "filters": [
            {"adjacency_logits": f.adjacency_logits.values.tolist(),
             "features": f.features.values.tolist()}
            for f in model.filters
        ],
        "predictor": {
            "gamma": model.predictor.gamma.values.tolist(),
            "beta": model.predictor.beta.values.tolist(),
            "running_mean": model.predictor.running_mean.tolist(),
            "running_var": model.predictor.running_var.tolist(),
            "layers": [{"w": w.values.tolist(), "b": b.values.tolist()}
                       for w, b in model.predictor.layers],
        },
        "z_baseline": model.z_baseline.tolist(),
    }


def model_from_dict(payload: dict) -> XgknModel:
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {payload.get('format')!r}")
    config = ModelConfig(**payload["config"])
    encoder = FeatureEncoder(Tensor(np.array(payload["encoder_weight"]), requires_grad=True))
    filters = [GraphFilter(Tensor(np.array(f["adjacency_logits"]), requires_grad=True),
                           Tensor(np.array(f["features"]), requires_grad=True))
               for f in payload["filters"]]
    predictor = Predictor(config.num_filters, payload["num_classes"],
                          config.predictor_depth, config.hidden_dim, Rng(0),
                          bn_eps=config.bn_eps, bn_momentum=config.bn_momentum)
    pred = payload["predictor"]
    predictor.gamma.values = np.array(pred["gamma"])
    predictor.beta.values = np.array(pred["beta"])
    predictor.running_mean = np.array(pred["running_mean"])
    predictor.running_var = np.array(pred["running_var"])
    for (w, b), layer in zip(predictor.layers, pred["layers"]):
        w.values = np.array(layer["w"])
        b.values = np.array(layer["b"])
    model = XgknModel(config, encoder, filters, predictor, payload["num_classes"])
    model.z_baseline = np.array(payload["z_baseline"])
    return model
