"""
Cross-validated AUC and its density
===================================

Ten pair-preserving folds per model, then a kernel density over model AUCs.
"""

import numpy as np

from rxpipe import synth
from rxpipe.cohort import clean_patients, match_controls
from rxpipe.evaluate import cross_validate, kde_curve, make_folds, roc_curve
from rxpipe.forest import ForestParams
from rxpipe.tabulate import build_table, prevalence_filter

config = synth.SynthConfig(n_patients=2000, n_generics=3, case_fraction=0.08)
patients, store, _ = synth.generate(config, seed=6)
patients, store = clean_patients(patients, store)

aucs = []
for generic in store.generics:
    cohort = match_controls(store, patients, generic)
    table = prevalence_filter(build_table(cohort, store, 0))
    plan = make_folds(len(cohort), k=10, seed=generic)
    result = cross_validate(table, table.labels, plan, ForestParams(n_trees=50, seed=generic),
                            generic=generic, window_days=0)
    print(f"generic {generic}: AUC {result.mean_auc:.3f} +/- {result.std_auc:.3f}")
    aucs.append(result.mean_auc)

# Tied scores count half, so a constant score gives exactly 0.5.
fpr, tpr = roc_curve([0.5] * 4, [1, 0, 1, 0])
print("ROC of a constant score:", list(zip(fpr.tolist(), tpr.tolist())))

curve = kde_curve(np.r_[aucs, np.random.default_rng(0).uniform(0.6, 0.9, 30)])
print(f"bandwidth {curve.bandwidth:.4f}, mass {curve.integral():.4f}")
