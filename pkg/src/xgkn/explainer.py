"""Instance-level explanations: exact Shapley attribution over the per-filter
scores, propagation back onto input nodes, softmax importance maps,
percentile thresholding and threshold selection.

Shapley values are computed by full subset enumeration of the predictor's
characteristic game (coordinates outside the coalition are reset to the
baseline, the training-split mean score vector), so the efficiency identity
phi_0 + sum(phi) = predicted logit holds exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import CapacityError, MissingGroundTruthError, ShapeError
from .graphs import Graph, NodeSet, Rng, induced_subgraph, iou_nodes
from .model import ForwardTrace, XgknModel, forward
from .numkit import Tensor, softmax

MAX_EXACT_PLAYERS = 20


@dataclass(frozen=True)
class Attribution:
    """Per-concept Shapley attribution of one prediction."""

    phi0: float
    phi: np.ndarray
    target_logit: float
    target_class: int

    def efficiency_gap(self) -> float:
        return abs(self.phi0 + float(self.phi.sum()) - self.target_logit)


@dataclass(frozen=True)
class Explanation:
    """Importance map plus the thresholded induced subgraph for one input."""

    importance: np.ndarray
    selected: NodeSet
    threshold: float
    subgraph: Graph


def exact_shapley(model: XgknModel, z: np.ndarray, baseline: np.ndarray,
                  target_class: int) -> Attribution:
    """Exact Shapley values of the predictor's target logit over the score
    coordinates, by enumerating all 2^m coalitions."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    baseline = np.asarray(baseline, dtype=np.float64).reshape(-1)
    m = z.size
    if baseline.size != m:
        raise ShapeError(f"baseline size {baseline.size} != {m}")
    if m > MAX_EXACT_PLAYERS:
        raise CapacityError(
            f"{m} concepts exceed the exact enumeration cap of {MAX_EXACT_PLAYERS}")
    masks = np.arange(1 << m, dtype=np.int64)
    membership = ((masks[:, None] >> np.arange(m)) & 1).astype(bool)
    coalition_scores = np.where(membership, z, baseline)
    logits = model.predictor.logits(Tensor(coalition_scores), training=False).values
    game = logits[:, target_class]
    sizes = membership.sum(axis=1)
    fact = [math.factorial(i) for i in range(m + 1)]
    weight_by_size = np.array([fact[s] * fact[m - 1 - s] / fact[m] for s in range(m)])
    phi = np.zeros(m)
    for i in range(m):
        without = masks[~membership[:, i]]
        w = weight_by_size[sizes[without]]
        phi[i] = float((w * (game[without | (1 << i)] - game[without])).sum())
    return Attribution(
        phi0=float(game[0]),
        phi=phi,
        target_logit=float(game[-1]),
        target_class=int(target_class),
    )


def propagate_to_nodes(attr: Attribution, trace: ForwardTrace, agg_mode: str,
                       eps: float = 1e-12) -> tuple[np.ndarray, tuple[int, ...]]:
    """Spread concept attributions onto input nodes.

    Additive modes distribute phi_i proportionally to each node's share of the
    concept score; max routes phi_i entirely to the argmax node. Returns the
    node weights and the indices of concepts skipped because their score was
    numerically zero.
    """
    m = attr.phi.size
    if trace.contributions.shape[1] != m:
        raise ShapeError(
            f"trace has {trace.contributions.shape[1]} concepts, attribution has {m}")
    n = trace.contributions.shape[0]
    w = np.zeros(n)
    if agg_mode == "max":
        if trace.argmax_rows is None:
            raise ShapeError("max-mode propagation needs argmax rows in the trace")
        for i in range(m):
            w[trace.argmax_rows[i]] += attr.phi[i]
        return w, ()
    inactive = tuple(i for i in range(m) if abs(trace.z[i]) <= eps)
    for i in range(m):
        if i in inactive:
            continue
        w += attr.phi[i] * trace.contributions[:, i] / trace.z[i]
    return w, inactive


def node_importance(model: XgknModel, g: Graph) -> np.ndarray:
    """Softmax importance map over the nodes of ``g`` for the model's own
    prediction; deterministic for a frozen model."""
    trace = forward(model, g)
    attr = exact_shapley(model, trace.z, model.z_baseline, trace.predicted_class)
    weights, _ = propagate_to_nodes(attr, trace, model.config.agg_mode)
    return softmax(weights)


def threshold_explanation(g: Graph, importance: np.ndarray, p: float) -> Explanation:
    """Select the nodes above the percentile threshold ``p``.

    Nodes are sorted by ascending importance; the largest prefix whose
    cumulative mass stays <= p is excluded. Nodes tied with the boundary value
    are all selected, and the selection is never empty (top-1 fallback).
    """
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"threshold must lie in [0, 1], got {p}")
    importance = np.asarray(importance, dtype=np.float64).reshape(-1)
    if importance.shape[0] != g.n:
        raise ShapeError(f"importance length {importance.shape[0]} != {g.n} nodes")
    order = sorted(range(g.n), key=lambda pos: (importance[pos], pos))
    prefix_len = 0
    cumulative = 0.0
    for pos in order:
        if cumulative + importance[pos] <= p + 1e-12:
            cumulative += importance[pos]
            prefix_len += 1
        else:
            break
    excluded = order[:prefix_len]
    if 0 < prefix_len < g.n:
        # never split a tie group across the boundary: nodes tied with the
        # lowest selected value are all selected
        boundary = importance[order[prefix_len]]
        excluded = [pos for pos in excluded if importance[pos] < boundary - 1e-12]
    selected_pos = sorted(set(range(g.n)) - set(excluded))
    if not selected_pos:
        selected_pos = [int(np.argmax(importance))]
    selected = NodeSet(tuple(int(g.node_ids[pos]) for pos in selected_pos))
    return Explanation(
        importance=importance.copy(),
        selected=selected,
        threshold=float(p),
        subgraph=induced_subgraph(g, selected),
    )


def explain_graph(model: XgknModel, g: Graph, p: float) -> Explanation:
    return threshold_explanation(g, node_importance(model, g), p)


DEFAULT_THRESHOLD_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))


@dataclass(frozen=True)
class ThresholdSelection:
    p: float
    criterion: str
    scores: dict


def _a1_score(ds: Dataset, explanations: list[Explanation]) -> float:
    if ds.gt_instance_masks is None:
        raise MissingGroundTruthError("threshold criterion a1 needs ground-truth masks")
    values = []
    for i, expl in enumerate(explanations):
        mask = ds.gt_instance_masks[i]
        if mask is None or len(mask) == 0:
            continue
        values.append(iou_nodes(expl.selected, NodeSet(mask.ids)))
    if not values:
        raise MissingGroundTruthError("no graph carries a usable ground-truth mask")
    return float(np.mean(values))


def criterion_score(model: XgknModel, ds: Dataset, importances: list[np.ndarray],
                    p: float, criterion: str, cfg=None, rng: Rng | None = None) -> float:
    """Score one candidate threshold under the selection criterion."""
    explanations = [threshold_explanation(g, imp, p)
                    for g, imp in zip(ds.graphs, importances)]
    if criterion == "a1":
        return _a1_score(ds, explanations)
    if criterion == "i1+i2":
        from . import metrics  # deferred: metrics builds on this module
        if cfg is None:
            cfg = metrics.AimConfig()
        if rng is None:
            rng = Rng(0)
        i1 = metrics.metric_sufficiency_necessity(
            model, ds, explanations, "I1", cfg, rng.derive("i1", int(p * 100)))
        i2 = metrics.metric_sufficiency_necessity(
            model, ds, explanations, "I2", cfg, rng.derive("i2", int(p * 100)))
        return i1.value + i2.value
    raise ValueError(f"unknown threshold criterion {criterion!r}")


def select_threshold(model: XgknModel, ds: Dataset, criterion: str,
                     grid=DEFAULT_THRESHOLD_GRID, cfg=None,
                     rng: Rng | None = None,
                     importances: list[np.ndarray] | None = None) -> ThresholdSelection:
    """Pick the grid threshold maximizing the criterion (ties -> smallest p).

    ``importances`` may carry precomputed maps (the map itself is
    threshold-independent); they are recomputed otherwise.
    """
    if not grid:
        raise ValueError("threshold grid must be nonempty")
    if importances is None:
        importances = [node_importance(model, g) for g in ds.graphs]
    scores = {}
    for p in sorted(grid):
        scores[p] = criterion_score(model, ds, importances, p, criterion, cfg, rng)
    best_score = max(scores.values())
    best_p = min(p for p in scores if scores[p] >= best_score)
    return ThresholdSelection(p=best_p, criterion=criterion, scores=scores)


# ---------------------------------------------------------------------------
# explanation export (line-delimited records)

def explanation_record(graph_id: int, expl: Explanation) -> dict:
    return {
        "graph_id": int(graph_id),
        "importance": [float(x) for x in expl.importance],
        "selected": [int(i) for i in expl.selected.ids],
        "threshold": float(expl.threshold),
    }


def write_explanations(path: str, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_explanations(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
