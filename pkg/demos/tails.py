"""
Sub-Gaussian tails of sign sums
===============================

Estimate psi_2 norms from samples and check the Chernoff tail bound. A
bound that is too small by a factor of two is caught.
"""

import math

import numpy as np

from alloyloc.randomness import chernoff_check, estimate_orlicz, rademacher_sum_bound

rng = np.random.default_rng(0)
for n in (1, 4, 16, 64):
    x = 2.0 * rng.binomial(n, 0.5, 100_000) - n
    ts = np.linspace(0.25, 4.0, 16) * math.sqrt(n)
    bound = rademacher_sum_bound(n)
    ok = chernoff_check(x, bound, thresholds=ts)["violations"]
    bad = chernoff_check(x, bound / 2, thresholds=ts)["violations"]
    print(f"n={n:2d}  psi_2 estimate {estimate_orlicz(x).norm_estimate:.3f}  bound {bound:.3f}  "
          f"violations {ok} (halved bound: {bad})")
