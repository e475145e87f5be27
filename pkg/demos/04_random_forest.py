"""
Random forest
=============

Fit a Gini forest on a binary table and score unseen rows.
"""

import numpy as np

from rxpipe.evaluate import auc
from rxpipe.forest import ForestParams, best_split, predict_many, train_forest

rng = np.random.default_rng(5)
X = (rng.random((400, 50)) < 0.2).astype(float)
y = (X[:, 7] + X[:, 11] + rng.random(400) > 1.2).astype(int)

# One split: the informative columns win.
print("best split:", best_split(X, y, range(400), range(50)))

params = ForestParams(n_trees=200, mtry_fraction=0.10, seed=1)
forest = train_forest(X[:300], y[:300], params)
scores = predict_many(forest, X[300:])
print("held-out AUC:", round(auc(scores, y[300:]), 3))

# Each tree has its own random stream, so retraining gives the same forest.
assert train_forest(X[:300], y[:300], params) == forest
print("nodes in first tree:", len(forest.trees[0]))
