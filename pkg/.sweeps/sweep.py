import sys, time
import numpy as np
from xgkn.data import generate_ba2motifs, stratified_split
from xgkn.graphs import Rng
from xgkn.model import ModelConfig, TrainConfig, init_model, train, evaluate_accuracy
from xgkn.explainer import node_importance, select_threshold, threshold_explanation
from xgkn.metrics import metric_a1

name, agg, m, shift = sys.argv[1], sys.argv[2], int(sys.argv[3]), float(sys.argv[4])
for seed in range(5):
    ds = generate_ba2motifs(200, Rng(7))
    split = stratified_split(ds, 0.2, 1, seed=seed)[0]
    cfg = ModelConfig(agg_mode=agg, num_filters=m, hop_radius=4, max_subgraph_size=20)
    model = init_model(cfg, ds.feature_dim, ds.num_classes, Rng(seed))
    if shift:
        for f in model.filters:
            f.adjacency_logits.values = f.adjacency_logits.values + shift
    t0 = time.time()
    model, hist = train(model, ds, split, TrainConfig(epochs=1000, seed=seed, patience=200))
    train_t = time.time() - t0
    acc = evaluate_accuracy(model, ds, split.test_ids)
    first95 = next((h["epoch"] for h in hist if h["accuracy"] >= 0.95), -1)
    test_ds = ds.subset(split.test_ids)
    imps = [node_importance(model, g) for g in test_ds.graphs]
    sel = select_threshold(model, test_ds, "a1", importances=imps)
    expl = [threshold_explanation(g, i, sel.p) for g, i in zip(test_ds.graphs, imps)]
    a1 = metric_a1(expl, test_ds).value
    print(f"{name} seed={seed}: epochs={len(hist)} t={train_t:.0f}s acc={acc:.3f} "
          f"first95@{first95} A1={a1:.3f} p={sel.p}", flush=True)
