"""Empirical check of the noisy access pattern.

Two neighbouring inputs are looked up many times; the auditor compares how
often each table key shows up and reports the worst likelihood ratio.
"""

import math

import numpy as np

from lutmpc.dxpriv import GeometricParams, audit_trace, mechanism_trace

rng = np.random.default_rng(0)
for eps in (0.1, 0.5, 1.0):
    p = GeometricParams(eps)
    groups, order = mechanism_trace([0, 1], p, 100_000, rng)
    rep = audit_trace(groups, p, min_count=10_000, order=order)
    print(f"eps={eps}: max_ratio={rep.max_ratio:.4f} bound=e^eps={math.exp(eps):.4f} "
          f"sets={rep.sets_compared}")
