import sys, time
import numpy as np
from xgkn.data import generate_ba2motifs, stratified_split
from xgkn.graphs import Rng
from xgkn.model import ModelConfig, TrainConfig, init_model, train, evaluate_accuracy
from xgkn.explainer import node_importance, select_threshold, threshold_explanation
from xgkn.metrics import metric_a1

name, agg, m, n_graphs, epochs = (sys.argv[1], sys.argv[2], int(sys.argv[3]),
                                  int(sys.argv[4]), int(sys.argv[5]))
ds = generate_ba2motifs(n_graphs, Rng(7))
curves = []
for seed in range(5):
    split = stratified_split(ds, 0.2, 1, seed=seed)[0]
    cfg = ModelConfig(agg_mode=agg, num_filters=m, hop_radius=2, max_subgraph_size=5)
    model = init_model(cfg, ds.feature_dim, ds.num_classes, Rng(seed))
    t0 = time.time()
    model, hist = train(model, ds, split, TrainConfig(epochs=epochs, seed=seed, patience=300))
    acc = evaluate_accuracy(model, ds, split.test_ids)
    test_ds = ds.subset(split.test_ids)
    imps = [node_importance(model, g) for g in test_ds.graphs]
    sel = select_threshold(model, test_ds, "a1", importances=imps)
    curves.append((sel.p, sel.scores))
    print(f"{name} seed={seed}: t={time.time()-t0:.0f}s acc={acc:.3f} p={sel.p} "
          f"A1={sel.scores[sel.p]:.3f}", flush=True)
lo = np.mean([s[max(p - 0.1, 0.0) if round(p-0.1,1) in s else p] if False else s[round(p - 0.1, 1)]
              for p, s in curves if round(p - 0.1, 1) in s])
at = np.mean([s[p] for p, s in curves])
hi = np.mean([s[round(p + 0.1, 1)] for p, s in curves if round(p + 0.1, 1) in s])
print(f"{name}: mean A1(p-0.1)={lo:.3f} A1(p)={at:.3f} A1(p+0.1)={hi:.3f} "
      f"drifts=({abs(lo-at):.3f}, {abs(hi-at):.3f})", flush=True)
