"""The full unsupervised detection pipeline on one split.

Kernel -> kPCA to 10 dimensions -> k-means with k=2 on the training
embedding -> kNN (k=5) cluster assignment for test samples -> clustering
F1 against the held-out labels.  The same embedding also feeds the
supervised kNN baseline for comparison.
"""
import numpy as np

from mtsk.cluster import dump_embedding, kmeans, knn_assign, kpca_fit, kpca_project
from mtsk.cohort import (
    Missingness, MissingnessSpec, apply_missingness, generate_synthetic_cohort,
    train_test_split, truncate_window,
)
from mtsk.evaluate import clustering_f1, f1
from mtsk.tck import tck_test, tck_train

cohort = generate_synthetic_cohort(50, 150, 5, 20, 1.5, seed=0)
masked = apply_missingness(cohort, MissingnessSpec(Missingness.MAR, 0.3, seed=1))

for window in (7, 14, 20):
    train, test = train_test_split(masked, 0.8, seed=2)
    tr, te = truncate_window(train, window), truncate_window(test, window)

    km, model = tck_train(tr, seed=3)
    cross = tck_test(model, te).cross

    kpca, emb_tr = kpca_fit(km.gram, d=10, ids=tr.ids())
    emb_te = kpca_project(kpca, cross, ids=te.ids())
    clusters = kmeans(emb_tr, k=2, restarts=20, seed=4)

    y_tr = np.array(tr.labels(), dtype=int)
    y_te = np.array(te.labels(), dtype=int)
    pred_te = knn_assign(emb_tr, clusters.labels, emb_te, k=5)
    sup_te = knn_assign(emb_tr, y_tr, emb_te, k=5)

    print(f"window {window:2d}: train F1 {clustering_f1(clusters.labels, y_tr):.3f}  "
          f"test F1 {clustering_f1(pred_te, y_te):.3f}  "
          f"supervised test F1 {f1(sup_te, y_te):.3f}")

    if window == 20:
        dump_embedding("embedding_tck_w20.csv", emb_tr, tr.labels(), clusters.labels)
        print("          wrote embedding_tck_w20.csv "
              "(id,label,cluster,e1..e10; plot e1 vs e2 for the 2-D view)")
