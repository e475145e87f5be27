"""
Case-control matching
=====================

Clean a population, pick drugs with enough cases and match one control per case.
"""

from rxpipe import synth
from rxpipe.cohort import check_cohort, clean_patients, eligible_generics, match_controls

patients, store, _ = synth.generate(synth.SynthConfig(n_patients=1500, n_generics=4), seed=3)

# Patients need at least four diagnoses on at least two distinct dates.
patients, store = clean_patients(patients, store)
print(len(patients), "patients after cleaning")

generics = eligible_generics(store, min_cases=40)
print("eligible generics:", generics)

# Controls share sex, were born within 30 days and were still in contact at the index date.
cohort = match_controls(store, patients, generics[0])
check_cohort(cohort, store, patients)
print(len(cohort), "pairs,", cohort.n_unmatched, "cases without a control")
print(cohort.to_csv().splitlines()[:4])
