import numpy as np
import pytest

from xgkn.data import Dataset
from xgkn.errors import CapacityError, MissingGroundTruthError
from xgkn.explainer import (
    Attribution,
    exact_shapley,
    explain_graph,
    explanation_record,
    node_importance,
    propagate_to_nodes,
    read_explanations,
    select_threshold,
    threshold_explanation,
    write_explanations,
)
from xgkn.graphs import Graph, NodeSet, Rng
from xgkn.model import ForwardTrace, ModelConfig, init_model
from xgkn.numkit import Tensor

from conftest import cycle_graph, random_graph
from oracles import shapley_permutation_oracle


def make_model(m=4, depth=1, seed=0, num_classes=2, agg="negative_entropy"):
    cfg = ModelConfig(num_filters=m, filter_size=3, embed_dim=4, hop_radius=1,
                      max_subgraph_size=6, predictor_depth=depth, agg_mode=agg)
    model = init_model(cfg, 1, num_classes, Rng(seed))
    model.z_baseline = Rng(seed).derive("bl").normal(size=m)
    return model


def game_fn(model, z, baseline, target):
    def value(coalition):
        mixed = np.array([z[i] if i in coalition else baseline[i] for i in range(len(z))])
        return model.predictor.logits(Tensor(mixed.reshape(1, -1)), training=False) \
            .values[0, target]
    return value


class TestExactShapley:
    def test_linear_predictor_closed_form(self):
        model = make_model(m=3, depth=1, seed=1)
        rng = Rng(2)
        z = rng.normal(size=3)
        baseline = rng.normal(size=3)
        attr = exact_shapley(model, z, baseline, target_class=1)
        # the frozen batch-norm + linear head is affine, so the Shapley value
        # of coordinate i is its effective weight times (z_i - baseline_i)
        pred = model.predictor
        scale = (pred.gamma.values / np.sqrt(pred.running_var + pred.bn_eps)).reshape(-1)
        w_eff = scale * pred.layers[0][0].values[:, 1]
        assert np.allclose(attr.phi, w_eff * (z - baseline), atol=1e-9)

    def test_baseline_input_gives_zero_attributions(self):
        model = make_model(m=4, seed=3)
        baseline = Rng(4).normal(size=4)
        attr = exact_shapley(model, baseline, baseline, target_class=0)
        assert np.allclose(attr.phi, 0.0, atol=1e-12)
        assert attr.phi0 == pytest.approx(attr.target_logit)

    def test_matches_permutation_oracle_on_mlp(self):
        model = make_model(m=4, depth=2, seed=5)
        rng = Rng(6)
        z = rng.normal(size=4)
        baseline = rng.normal(size=4)
        attr = exact_shapley(model, z, baseline, target_class=1)
        expected = shapley_permutation_oracle(game_fn(model, z, baseline, 1), 4)
        assert np.allclose(attr.phi, expected, atol=1e-9)

    def test_efficiency_on_random_instances(self):
        rng = Rng(7)
        for trial in range(20):
            m = int(rng.integers(2, 6))
            model = make_model(m=m, depth=1 + trial % 2, seed=trial)
            z = rng.normal(size=m)
            baseline = rng.normal(size=m)
            attr = exact_shapley(model, z, baseline, target_class=trial % 2)
            assert attr.efficiency_gap() < 1e-9

    def test_capacity_cap(self):
        model = make_model(m=4)
        with pytest.raises(CapacityError):
            exact_shapley(model, np.zeros(21), np.zeros(21), 0)

    def test_null_concept_gets_zero_attribution(self):
        # a coordinate equal to its baseline never changes any coalition
        model = make_model(m=3, seed=21)
        rng = Rng(22)
        z = rng.normal(size=3)
        baseline = rng.normal(size=3)
        baseline[1] = z[1]
        attr = exact_shapley(model, z, baseline, target_class=0)
        assert attr.phi[1] == 0.0


class TestPropagate:
    def trace_for(self, contributions, z, argmax_rows=None):
        return ForwardTrace(R=contributions, contributions=contributions,
                            z=z, logits=np.array([1.0, 0.0]), predicted_class=0,
                            response_norm=1.0, argmax_rows=argmax_rows)

    def test_single_carrier(self):
        attr = Attribution(phi0=0.5, phi=np.array([0.25, 0.25]),
                           target_logit=1.0, target_class=0)
        trace = self.trace_for(np.array([[2.0, 3.0]]), np.array([2.0, 3.0]))
        w, inactive = propagate_to_nodes(attr, trace, "sum")
        assert w == pytest.approx([0.5])
        assert inactive == ()

    def test_uniform_columns_spread_evenly(self):
        n = 4
        z = np.array([2.0, -1.0])
        contributions = np.vstack([z / n] * n)
        attr = Attribution(phi0=0.1, phi=np.array([0.6, 0.3]),
                           target_logit=1.0, target_class=0)
        w, _ = propagate_to_nodes(attr, self.trace_for(contributions, z), "sum")
        assert np.allclose(w, (attr.phi.sum()) / n)

    def test_random_trace_conservation_and_expansion(self, rng):
        for trial in range(10):
            contributions = rng.normal(size=(4, 3)) + 2.0
            z = contributions.sum(axis=0)
            phi = rng.normal(size=3)
            attr = Attribution(phi0=0.0, phi=phi, target_logit=float(phi.sum()),
                               target_class=0)
            w, inactive = propagate_to_nodes(attr, self.trace_for(contributions, z), "sum")
            assert inactive == ()
            assert w.sum() == pytest.approx(phi.sum(), abs=1e-9)
            expected = sum(phi[i] * contributions[:, i] / z[i] for i in range(3))
            assert np.allclose(w, expected, atol=1e-12)

    def test_zero_score_column_is_flagged_and_skipped(self):
        contributions = np.array([[1.0, 0.0], [1.0, 0.0]])
        z = np.array([2.0, 0.0])
        attr = Attribution(phi0=0.0, phi=np.array([1.0, 5.0]),
                           target_logit=6.0, target_class=0)
        w, inactive = propagate_to_nodes(attr, self.trace_for(contributions, z), "sum")
        assert inactive == (1,)
        assert w.sum() == pytest.approx(1.0)

    def test_max_mode_routes_to_argmax_rows(self):
        contributions = np.array([[5.0, 0.0], [0.0, 3.0]])
        z = np.array([5.0, 3.0])
        attr = Attribution(phi0=0.0, phi=np.array([0.7, 0.2]),
                           target_logit=0.9, target_class=0)
        trace = self.trace_for(contributions, z, argmax_rows=np.array([0, 1]))
        w, _ = propagate_to_nodes(attr, trace, "max")
        assert np.allclose(w, [0.7, 0.2])


class TestNodeImportance:
    def test_uniform_on_vertex_transitive_graph(self):
        model = make_model(seed=1)
        importance = node_importance(model, cycle_graph(6).with_label(0))
        assert np.allclose(importance, 1.0 / 6.0, atol=1e-9)

    def test_single_node_graph(self):
        model = make_model(seed=2)
        g = Graph(np.zeros((1, 1)), np.ones((1, 1)), np.arange(1), label=0)
        assert node_importance(model, g) == pytest.approx([1.0])

    def test_sums_to_one(self, rng):
        model = make_model(seed=3)
        for trial in range(5):
            g = random_graph(7, 0.4, rng.derive(trial)).with_features(np.ones((7, 1)))
            importance = node_importance(model, g)
            assert importance.sum() == pytest.approx(1.0, abs=1e-9)

    def test_permutation_equivariance(self, rng):
        model = make_model(seed=4)
        g = random_graph(7, 0.5, rng.derive("pe")).with_features(np.ones((7, 1)))
        order = rng.permutation(7)
        permuted = Graph(g.adjacency[np.ix_(order, order)], g.features[order],
                         np.arange(7))
        a = node_importance(model, g)
        b = node_importance(model, permuted)
        assert np.allclose(b, a[order], atol=1e-9)

    def test_deterministic(self, rng):
        model = make_model(seed=5)
        g = random_graph(6, 0.5, rng.derive("det")).with_features(np.ones((6, 1)))
        a = node_importance(model, g)
        b = node_importance(model, g)
        assert np.array_equal(a, b)


class TestThresholdExplanation:
    def test_zero_threshold_selects_all(self):
        g = cycle_graph(4)
        expl = threshold_explanation(g, np.array([0.4, 0.3, 0.2, 0.1]), 0.0)
        assert expl.selected.ids == (0, 1, 2, 3)

    def test_uniform_importance_selects_all(self):
        g = cycle_graph(10)
        expl = threshold_explanation(g, np.full(10, 0.1), 0.5)
        assert len(expl.selected) == 10

    def test_hand_walkthrough(self):
        g = cycle_graph(3)
        expl = threshold_explanation(g, np.array([0.7, 0.2, 0.1]), 0.25)
        assert expl.selected.ids == (0, 1)

    def test_boundary_ties_all_selected(self):
        g = cycle_graph(4)
        expl = threshold_explanation(g, np.array([0.2, 0.2, 0.2, 0.4]), 0.25)
        # prefix holds one 0.2 node, but its two ties must also be selected
        assert expl.selected.ids == (0, 1, 2, 3)

    def test_subgraph_is_induced_selection(self, rng):
        g = random_graph(8, 0.5, rng.derive("sub"))
        importance = np.asarray([0.3, 0.2, 0.15, 0.1, 0.1, 0.05, 0.05, 0.05])
        expl = threshold_explanation(g, importance, 0.4)
        assert set(int(i) for i in expl.subgraph.node_ids) == set(expl.selected.ids)
        assert len(expl.selected) >= 1

    def test_never_empty_across_random_maps(self, rng):
        g = cycle_graph(6)
        for trial in range(20):
            raw = rng.random(6) + 1e-6
            importance = raw / raw.sum()
            for p in (0.1, 0.5, 0.9, 1.0):
                expl = threshold_explanation(g, importance, p)
                assert len(expl.selected) >= 1

    def test_relabeling_preserves_selection(self):
        adj = cycle_graph(4).adjacency
        importance = np.array([0.4, 0.3, 0.2, 0.1])
        g1 = Graph(adj, np.ones((4, 1)), np.array([0, 1, 2, 3]))
        g2 = Graph(adj, np.ones((4, 1)), np.array([10, 20, 30, 40]))
        e1 = threshold_explanation(g1, importance, 0.25)
        e2 = threshold_explanation(g2, importance, 0.25)
        mapping = {0: 10, 1: 20, 2: 30, 3: 40}
        assert tuple(mapping[i] for i in e1.selected.ids) == e2.selected.ids


class TestSelectThreshold:
    def test_single_point_grid(self, rng):
        model = make_model(seed=6)
        graphs = tuple(random_graph(6, 0.5, rng.derive(i)).with_features(np.ones((6, 1)))
                       .with_label(0) for i in range(3))
        masks = tuple(NodeSet((0, 1), root=i) for i in range(3))
        ds = Dataset(graphs=graphs, num_classes=1, gt_instance_masks=masks)
        sel = select_threshold(model, ds, "a1", grid=(0.3,))
        assert sel.p == 0.3

    def test_recovers_perfect_threshold_on_constructed_fixture(self, rng):
        model = make_model(seed=7)
        graphs = []
        masks = []
        for i in range(4):
            g = random_graph(6, 0.5, rng.derive("fix", i)).with_features(
                np.ones((6, 1))).with_label(0)
            importance = node_importance(model, g)
            top2 = np.argsort(importance)[-2:]
            graphs.append(g)
            masks.append(NodeSet(tuple(int(v) for v in top2), root=i))
        ds = Dataset(graphs=tuple(graphs), num_classes=1,
                     gt_instance_masks=tuple(masks))
        sel = select_threshold(model, ds, "a1")
        assert max(sel.scores.values()) == sel.scores[sel.p]
        ties = [p for p, s in sel.scores.items() if s >= sel.scores[sel.p]]
        assert sel.p == min(ties)

    def test_missing_masks_rejected(self, rng):
        model = make_model(seed=8)
        graphs = (random_graph(5, 0.5, rng.derive("nm")).with_features(
            np.ones((5, 1))).with_label(0),)
        ds = Dataset(graphs=graphs, num_classes=1)
        with pytest.raises(MissingGroundTruthError):
            select_threshold(model, ds, "a1")


class TestExplanationExport:
    def test_round_trip(self, tmp_path, rng):
        model = make_model(seed=9)
        g = random_graph(5, 0.5, rng.derive("exp")).with_features(np.ones((5, 1)))
        expl = explain_graph(model, g, 0.4)
        records = [explanation_record(0, expl)]
        path = tmp_path / "expl.jsonl"
        write_explanations(str(path), records)
        back = read_explanations(str(path))
        assert back == records
        assert back[0]["threshold"] == 0.4
        assert sum(back[0]["importance"]) == pytest.approx(1.0, abs=1e-9)
