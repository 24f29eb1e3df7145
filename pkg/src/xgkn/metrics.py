"""The ten explanation-quality metrics (A1, A2, I1-I5, M1-M3) plus cross-seed
aggregation into a report with pairwise significance tests.

All metrics land in [0, 1] with higher = better: the model-level family and A2
measure a discrepancy gamma and are reported as 1 - gamma. Monte-Carlo metrics
are seed-deterministic; samples that cannot be realized (empty subgraphs,
perturbations that flip the prediction too often) are skipped and counted, and
a metric with more than half its samples skipped is flagged invalid instead of
silently averaged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import (
    AlignmentError,
    MissingGroundTruthError,
    UndefinedMetricError,
)
from .explainer import Explanation, node_importance, threshold_explanation
from .ged import binarize_filter, ged_normalized
from .graphs import (
    Graph,
    NodeSet,
    Rng,
    induced_subgraph,
    iou_nodes,
    perturb_edges,
    perturb_features,
)
from .model import XgknModel, forward, perturb_filters
from .numkit import spearman_abs, welch_ttest

AIM_METRIC_ORDER = ("A1", "A2", "I1", "I2", "I3", "I4", "I5", "M1", "M2", "M3")

REPORT_NOTES = (
    "A2, M1, M2 and M3 are reported as 1 - gamma so higher is better",
    "M3 averages over the m(m-1)/2 unordered filter pairs",
    "I5 is measured across models retrained under different seeds",
    "Shapley baseline: mean aggregated score vector over the training split",
)


@dataclass(frozen=True)
class AimConfig:
    """Perturbation and sampling knobs for the metric suite."""

    samples_per_graph: int = 10
    inclusion_probability: float = 0.5
    delta_feature_robustness: float = 0.1
    delta_edge_remove: float = 0.1
    edge_add_scale: float = 0.1
    delta_edge_add: float | None = None
    delta_filter_features: float = 0.5
    delta_filter_edges: float = 0.5
    max_retries: int = 10
    alpha: float = 0.05
    feature_pool_scope: str = "dataset"

    def __post_init__(self):
        for name in ("inclusion_probability", "delta_feature_robustness",
                     "delta_edge_remove", "delta_filter_features", "delta_filter_edges"):
            p = getattr(self, name)
            if not (0.0 < p < 1.0):
                raise ValueError(f"{name} must lie in (0, 1), got {p}")
        if self.samples_per_graph < 1:
            raise ValueError("samples_per_graph must be >= 1")
        if self.feature_pool_scope not in ("dataset", "train"):
            raise ValueError("feature_pool_scope must be 'dataset' or 'train'")

    def resolve_edge_add(self, ds: Dataset) -> float:
        if self.delta_edge_add is not None:
            return self.delta_edge_add
        return self.edge_add_scale * ds.average_density()


@dataclass(frozen=True)
class MetricResult:
    name: str
    value: float
    n_used: int
    n_skipped: int = 0
    valid: bool = True

    def __post_init__(self):
        if self.valid and not (-1e-9 <= self.value <= 1.0 + 1e-9):
            raise UndefinedMetricError(
                f"{self.name} produced {self.value}, outside [0, 1]")
        object.__setattr__(self, "value", float(min(max(self.value, 0.0), 1.0)))


def _result(name: str, values: list[float], n_skipped: int = 0,
            intended: int | None = None) -> MetricResult:
    intended = intended if intended is not None else len(values) + n_skipped
    valid = bool(values) and (n_skipped <= 0.5 * max(intended, 1))
    value = float(np.mean(values)) if values else 0.0
    return MetricResult(name=name, value=value if valid else 0.0,
                        n_used=len(values), n_skipped=n_skipped, valid=valid)


def _check_alignment(explanations, ds: Dataset) -> None:
    if len(explanations) != len(ds.graphs):
        raise AlignmentError(
            f"{len(explanations)} explanations for {len(ds.graphs)} graphs")


# ---------------------------------------------------------------------------
# accuracy metrics

def metric_a1(explanations: list[Explanation], ds: Dataset,
              count_empty_masks: bool = False) -> MetricResult:
    """Mean IoU between selected explanation nodes and ground-truth masks.

    Graphs with empty masks are excluded unless ``count_empty_masks`` is set
    (then a nonempty explanation against an empty mask scores 0).
    """
    _check_alignment(explanations, ds)
    if ds.gt_instance_masks is None:
        raise MissingGroundTruthError("A1 needs per-graph ground-truth masks")
    values = []
    for i, expl in enumerate(explanations):
        mask = ds.gt_instance_masks[i]
        if mask is None:
            continue
        if len(mask) == 0 and not count_empty_masks:
            continue
        values.append(iou_nodes(expl.selected, NodeSet(mask.ids)))
    if not values:
        raise MissingGroundTruthError("no graph carries a usable ground-truth mask")
    return _result("A1", values)


def metric_a2(model: XgknModel, ds: Dataset, edge_threshold: float = 0.5) -> MetricResult:
    """1 - mean over ground-truth motifs of the best (minimum) normalized edit
    distance achieved by any binarized filter."""
    if not ds.gt_motifs:
        raise MissingGroundTruthError("A2 needs ground-truth motif graphs")
    feature_rows = None
    dims = {m.feature_dim for m in ds.gt_motifs}
    if dims == {ds.feature_dim}:
        pool = ds.feature_pool()
        if np.unique(pool, axis=0).shape[0] > 1:
            feature_rows = pool
    discrete = [binarize_filter(f, edge_threshold, feature_rows, model.encoder)
                for f in model.filters]
    gammas = []
    for motif in ds.gt_motifs:
        gammas.append(min(ged_normalized(d, motif) for d in discrete))
    return _result("A2", [1.0 - float(np.mean(gammas))])


# ---------------------------------------------------------------------------
# instance-level metrics

def metric_sufficiency_necessity(model: XgknModel, ds: Dataset,
                                 explanations: list[Explanation], mode: str,
                                 cfg: AimConfig, rng: Rng) -> MetricResult:
    """I1: prediction preserved on random supergraphs of the explanation.
    I2: prediction changed on random subgraphs that exclude the explanation."""
    if mode not in ("I1", "I2"):
        raise ValueError("mode must be 'I1' or 'I2'")
    _check_alignment(explanations, ds)
    values = []
    skipped = 0
    intended = len(ds.graphs) * cfg.samples_per_graph
    for gi, g in enumerate(ds.graphs):
        g_rng = rng.derive(mode, gi)
        predicted = forward(model, g).predicted_class
        explanation_ids = set(explanations[gi].selected.ids)
        others = [int(i) for i in g.node_ids if int(i) not in explanation_ids]
        hits = []
        for s in range(cfg.samples_per_graph):
            chosen = None
            for _ in range(cfg.max_retries):
                include = g_rng.random(len(others)) < cfg.inclusion_probability
                picked = [v for v, keep in zip(others, include) if keep]
                if mode == "I1":
                    candidate = sorted(explanation_ids) + picked
                else:
                    candidate = picked
                if candidate:
                    chosen = sorted(candidate)
                    break
            if chosen is None:
                skipped += 1
                continue
            sub = induced_subgraph(g, NodeSet(tuple(chosen)))
            sub_predicted = forward(model, sub).predicted_class
            hits.append(float(sub_predicted == predicted) if mode == "I1"
                        else float(sub_predicted != predicted))
        if hits:
            values.append(float(np.mean(hits)))
    return _result(mode, values, n_skipped=skipped, intended=intended)


def _explanation_edges(g: Graph, selected: NodeSet) -> set[tuple[int, int]]:
    ids = set(selected.ids)
    return {(a, b) for a, b in g.edge_list() if a in ids and b in ids}


def metric_robustness(model: XgknModel, ds: Dataset, explanations: list[Explanation],
                      mode: str, cfg: AimConfig, rng: Rng,
                      feature_pool: np.ndarray | None = None) -> MetricResult:
    """Explanation stability under input edits that keep the prediction:
    I3 resamples node features outside the explanation, I4 rewires edges
    outside it. Scores IoU(h(perturbed), h(original)) under identity node
    mapping (perturbations preserve node ids).

    ``feature_pool`` defaults to the rows of ``ds``; callers evaluating on a
    subset pass the configured pool (full dataset or training split).
    """
    if mode not in ("I3", "I4"):
        raise ValueError("mode must be 'I3' or 'I4'")
    _check_alignment(explanations, ds)
    pool = ds.feature_pool() if feature_pool is None else feature_pool
    delta_add = cfg.resolve_edge_add(ds)
    values = []
    skipped = 0
    for gi, g in enumerate(ds.graphs):
        g_rng = rng.derive(mode, gi)
        predicted = forward(model, g).predicted_class
        expl = explanations[gi]
        accepted = None
        for _ in range(cfg.max_retries):
            if mode == "I3":
                perturbed = perturb_features(g, cfg.delta_feature_robustness, pool,
                                             g_rng, exclude=expl.selected)
            else:
                perturbed = perturb_edges(g, delta_add, cfg.delta_edge_remove, g_rng,
                                          protected=_explanation_edges(g, expl.selected))
            if forward(model, perturbed).predicted_class == predicted:
                accepted = perturbed
                break
        if accepted is None:
            skipped += 1
            continue
        new_importance = node_importance(model, accepted)
        new_expl = threshold_explanation(accepted, new_importance, expl.threshold)
        values.append(iou_nodes(new_expl.selected, expl.selected))
    return _result(mode, values, n_skipped=skipped, intended=len(ds.graphs))


def metric_consistency(run_a: list[Explanation], run_b: list[Explanation]) -> MetricResult:
    """Mean IoU between two runs' selected node sets on the same graphs."""
    if len(run_a) != len(run_b):
        raise AlignmentError(
            f"runs cover {len(run_a)} vs {len(run_b)} graphs")
    values = [iou_nodes(NodeSet(a.selected.ids), NodeSet(b.selected.ids))
              for a, b in zip(run_a, run_b)]
    return _result("I5", values)


# ---------------------------------------------------------------------------
# model-level metrics

def metric_correctness(model: XgknModel, ds: Dataset, explanations: list[Explanation],
                       mode: str, cfg: AimConfig, rng: Rng,
                       feature_pool: np.ndarray | None = None) -> MetricResult:
    """1 - mean IoU between explanations before and after perturbing the
    filters (M1: feature resampling, M2: edge toggling)."""
    if mode not in ("M1", "M2"):
        raise ValueError("mode must be 'M1' or 'M2'")
    _check_alignment(explanations, ds)
    if mode == "M1":
        pool = ds.feature_pool() if feature_pool is None else feature_pool
        perturbed_model = perturb_filters(model, "features", cfg.delta_filter_features,
                                          rng, feature_pool=pool)
    else:
        perturbed_model = perturb_filters(model, "edges", cfg.delta_filter_edges, rng)
    overlaps = []
    for gi, g in enumerate(ds.graphs):
        importance = node_importance(perturbed_model, g)
        new_expl = threshold_explanation(g, importance, explanations[gi].threshold)
        overlaps.append(iou_nodes(new_expl.selected, explanations[gi].selected))
    return _result(mode, [1.0 - float(np.mean(overlaps))])


def metric_redundancy(model: XgknModel, ds: Dataset) -> MetricResult:
    """1 - mean absolute rank correlation between per-filter score streams."""
    m = model.num_filters
    if m < 2:
        raise UndefinedMetricError("redundancy needs at least 2 filters")
    streams = np.vstack([forward(model, g).z for g in ds.graphs])
    correlations = []
    for i in range(m):
        for j in range(i + 1, m):
            correlations.append(spearman_abs(streams[:, i], streams[:, j]))
    gamma = float(np.mean(correlations))
    return _result("M3", [1.0 - gamma])


# ---------------------------------------------------------------------------
# aggregation

@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float
    values: tuple[float, ...]
    n_samples: int

    @staticmethod
    def from_values(values, n_samples: int = 0) -> "MetricSummary":
        arr = np.asarray(list(values), dtype=np.float64)
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        return MetricSummary(mean=float(arr.mean()), std=std,
                             values=tuple(float(v) for v in arr),
                             n_samples=n_samples)


@dataclass(frozen=True)
class AimReport:
    metrics: dict
    config: dict
    notes: tuple[str, ...]
    ttests: tuple[dict, ...] = ()
    invalid: tuple[str, ...] = ()

    def radar_series(self) -> list[tuple[str, float]]:
        return [(name, self.metrics[name].mean)
                for name in AIM_METRIC_ORDER if name in self.metrics]

    def to_dict(self) -> dict:
        return {
            "metrics": {
                name: {"mean": s.mean, "std": s.std, "values": list(s.values),
                       "n_samples": s.n_samples}
                for name, s in self.metrics.items()
            },
            "config": self.config,
            "notes": list(self.notes),
            "ttests": list(self.ttests),
            "invalid": list(self.invalid),
        }


def aim_report(values_by_metric: dict, comparisons: dict | None = None,
               config: dict | None = None, alpha: float = 0.05,
               sample_counts: dict | None = None,
               invalid: tuple[str, ...] = ()) -> AimReport:
    """Aggregate per-seed metric values into mean/std summaries and, when a
    comparison run is supplied, a pairwise Welch t-test table."""
    metrics = {}
    for name, values in values_by_metric.items():
        count = (sample_counts or {}).get(name, 0)
        metrics[name] = MetricSummary.from_values(values, n_samples=count)
    ttests = []
    for other_name, other_values in (comparisons or {}).items():
        for name in values_by_metric:
            if name not in other_values:
                continue
            ours = list(values_by_metric[name])
            theirs = list(other_values[name])
            if len(ours) < 2 or len(theirs) < 2:
                continue
            if np.var(ours, ddof=1) == 0.0 and np.var(theirs, ddof=1) == 0.0:
                identical = np.allclose(np.mean(ours), np.mean(theirs))
                ttests.append({"metric": name, "against": other_name,
                               "t": 0.0 if identical else float("inf"),
                               "df": float(len(ours) + len(theirs) - 2),
                               "p_value": 1.0 if identical else 0.0,
                               "significant": not identical})
                continue
            res = welch_ttest(ours, theirs, alpha=alpha)
            ttests.append({"metric": name, "against": other_name, "t": res.t,
                           "df": res.df, "p_value": res.p_value,
                           "significant": res.significant})
    return AimReport(metrics=metrics, config=config or {}, notes=REPORT_NOTES,
                     ttests=tuple(ttests), invalid=tuple(invalid))
