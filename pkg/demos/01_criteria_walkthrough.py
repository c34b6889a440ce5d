"""Prognostic criteria on hand-made health-indicator curves.

Run with ``python demos/01_criteria_walkthrough.py``.
"""

import numpy as np

from gwhi import criteria
from gwhi.datamodel import HICurve

t = np.arange(6, dtype=float)

# three specimens that degrade at slightly different rates
good = [HICurve(s, "demo", t, (t / 5) ** p) for s, p in ((1, 1.0), (2, 1.2), (3, 0.9))]
report = criteria.evaluate(good)
print("smooth curves:      ", f"Mo={report.mo:.3f} Pr={report.pr:.3f} Tr={report.tr:.3f} F_all={report.f_all:.3f}")

# same shapes, but one specimen fails at a much lower HI: prognosability drops
shifted = good[:2] + [good[2].with_values(0.4 * good[2].values)]
report = criteria.evaluate(shifted)
print("scattered failures: ", f"Mo={report.mo:.3f} Pr={report.pr:.3f} Tr={report.tr:.3f} F_all={report.f_all:.3f}")

# noisy curves lose monotonicity first
rng = np.random.default_rng(0)
noisy = [c.with_values(c.values + 0.15 * rng.standard_normal(len(t))) for c in good]
report = criteria.evaluate(noisy)
print("noisy curves:       ", f"Mo={report.mo:.3f} Pr={report.pr:.3f} Tr={report.tr:.3f} F_all={report.f_all:.3f}")

# held-out specimen: the test scores judge it against the training curves
report = criteria.evaluate(good, test_id=3)
print("specimen 3 held out:", f"Mo_test={report.mo_test:.3f} Pr_test={report.pr_test:.3f} F_test={report.f_test:.3f}")
