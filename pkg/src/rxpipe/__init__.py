"""High-throughput prescription prediction from EHR event streams.

Per generic drug and truncation window: match controls to first-prescription
cases, censor the pre-index history, tabulate binary features, and score a
random forest by pair-preserving cross-validated AUC.
"""

from .cohort import CasePair, Cohort, check_cohort, clean_patients, eligible_generics, match_controls
from .ehr import (Band, Event, EventStore, Kind, Patient, PatientTable, Sex, first_prescriptions,
                  parse_events, parse_patients)
from .evaluate import (FoldPlan, KdeCurve, ModelResult, auc, cross_validate, flag_separable,
                       kde_curve, make_folds, roc_curve, window_summary)
from .forest import (Forest, ForestParams, best_split, gini_impurity, predict_many, predict_proba,
                     train_forest)
from .pipeline import Job, Manifest, RunConfig, plan_jobs, report, resume, run
from .synth import GroundTruth, SynthConfig, band_continuous, deidentify, generate
from .tabulate import FeatureMatrix, build_table, leakage_scan, prevalence_filter, truncate_pair

__version__ = "0.1.0"
