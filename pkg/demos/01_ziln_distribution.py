"""
Zero-inflated lognormal outcomes
================================

Most accounts never buy, and the few that do spend amounts spread over
several orders of magnitude. A ZILN variable captures both facts: a point
mass at zero plus a lognormal for the converters.
"""

import numpy as np

from ziln_uplift.distributions import ZilnParams, expected_value, log_density, sample

# 17% conversion, median spend exp(2) ~ 7.4, wide spread
params = ZilnParams(pi=0.17, mu=2.0, sigma=0.8)
print("expected value:", expected_value(params))

# draws are exactly zero with probability 1 - pi
rng = np.random.default_rng(0)
y = sample(params, rng, 200_000)
print("zero fraction :", np.mean(y == 0))
print("sample mean   :", y.mean())
print("largest draws :", np.sort(y)[-3:])

# log_density mixes a log-mass at 0 with a log-density above 0
print("log P(y = 0)  :", log_density(params, 0.0))
print("log p(y = 10) :", log_density(params, 10.0))

# the mean grows fast with sigma: the tail carries the revenue
for s in (0.5, 1.0, 1.5, 2.0):
    print(f"sigma={s:.1f}  E[y]={expected_value(ZilnParams(0.17, 2.0, s)):8.3f}")
