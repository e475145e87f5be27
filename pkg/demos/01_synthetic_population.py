"""
Synthetic EHR populations
=========================

Generate a seeded population with a planted prodrome, then de-identify it.
"""

from rxpipe import synth

# A small population; every patient is a case of each drug with probability 0.05.
config = synth.SynthConfig(n_patients=500, n_generics=3, prodrome_days=30, signal_strength=0.9)
patients, store, truth = synth.generate(config, seed=1)
print(store)
print("generics:", store.generics)

# The ground truth records which codes were planted before each case's index date.
generic = store.generics[0]
print("signal diagnoses for", generic, "->", truth.signal_dx[generic])
print("cases:", len(truth.cases[generic]))

# De-identification remaps every code and shifts each patient's dates.
patients, shifted, codemap = synth.deidentify(patients, store, seed=2)
print("first remapped generic:", codemap.forward["P"][generic])
print("intervals preserved:", [e.date for e in shifted.events(1)][:3])

# Same seed, same population.
assert synth.generate(config, seed=1)[1] == store
