"""Fitness-weighted fusion of per-frequency health indicators.

Two frequencies see the same degradation; one of them is much noisier.
Fusion leans on the cleaner one because its F_all is higher, though a
poor frequency still pulls the fused score below the best single one.
"""

import numpy as np

from gwhi import criteria
from gwhi.datamodel import HICurve
from gwhi.ensemble import FrequencyBundle, wae_fuse

rng = np.random.default_rng(3)
t = np.linspace(0, 1, 30)
rates = (1.0, 1.3, 0.8)


def frequency(noise):
    return [HICurve(s, "f", t * 1e5, t ** r + noise * rng.standard_normal(t.size)) for s, r in enumerate(rates, 1)]


clean, noisy = frequency(0.02), frequency(0.25)
result = wae_fuse([FrequencyBundle(100, clean), FrequencyBundle(250, noisy)])
print(result.dumps())

for name, curves in (("100 kHz", clean), ("250 kHz", noisy), ("fused", result.curves)):
    print(f"{name:8s} F_all {criteria.fitness(curves)[0]:.3f}")
