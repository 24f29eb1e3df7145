import sys, time
import numpy as np
from xgkn.data import generate_ba2motifs, stratified_split
from xgkn.graphs import Rng
from xgkn.model import ModelConfig, TrainConfig, init_model, train, evaluate_accuracy
from xgkn.explainer import node_importance, select_threshold, threshold_explanation
from xgkn.metrics import metric_a1

name, agg, m, depth = sys.argv[1], sys.argv[2], int(sys.argv[3]), int(sys.argv[4])
ds = generate_ba2motifs(200, Rng(7))
for seed in range(5):
    split = stratified_split(ds, 0.2, 1, seed=seed)[0]
    cfg = ModelConfig(agg_mode=agg, num_filters=m, hop_radius=2, max_subgraph_size=5,
                      predictor_depth=depth)
    model = init_model(cfg, ds.feature_dim, ds.num_classes, Rng(seed))
    t0 = time.time()
    model, hist = train(model, ds, split, TrainConfig(epochs=1000, seed=seed, patience=300))
    acc = evaluate_accuracy(model, ds, split.test_ids)
    test_ds = ds.subset(split.test_ids)
    imps = [node_importance(model, g) for g in test_ds.graphs]
    sel = select_threshold(model, test_ds, "a1", importances=imps)
    curve = {p: round(s, 3) for p, s in sel.scores.items()}
    print(f"{name} seed={seed}: t={time.time()-t0:.0f}s acc={acc:.3f} p={sel.p} curve={curve}",
          flush=True)
