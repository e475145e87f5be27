"""
Checkpointed batch runs
=======================

Run every (drug, window) job, interrupt it, resume, and write the reports.
The same flow is available as ``rxpipe synth``, ``rxpipe run``, ``rxpipe resume``
and ``rxpipe report``.
"""

import tempfile
from pathlib import Path

from rxpipe import ehr, pipeline, synth

work = Path(tempfile.mkdtemp())
_, store, _ = synth.generate(synth.SynthConfig(n_patients=1200, n_generics=3, case_fraction=0.1), 7)
ehr.save(store, work / "patients.csv", work / "events.csv")

config = pipeline.RunConfig(
    patients_path=str(work / "patients.csv"), events_path=str(work / "events.csv"),
    out_dir=str(work / "run"), windows=(30, 182), min_cases=40, n_trees=30, seed=1,
)

# Stop after two jobs, as if the process had been killed.
partial = pipeline.start(config, max_jobs=2)
print([job.status.value for job in partial.jobs])

final = pipeline.resume(config.out_dir)
print([job.status.value for job in final.jobs])
for window, summary in final.summaries().items():
    print(f"window {window}: mean AUC {summary['mean_auc']:.3f} over {summary['n_models']} models")

for path in pipeline.report(final, config.out_dir):
    print("wrote", path.name)
