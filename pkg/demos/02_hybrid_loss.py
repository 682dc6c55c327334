"""
Focal propensity, ZILN regression and value-weighted ranking
============================================================

The hybrid objective has three parts. The focal term trains the
conversion probability and down-weights easy examples, the regression
term fits the log-spend of converters, and the ranking term orders
predicted uplifts by a transformed outcome, weighting each pair by how
far apart the two outcomes are.
"""

import math

import numpy as np

from ziln_uplift.losses import (
    FocalConfig, RankPair, focal_propensity_loss, pair_weight, value_ranking_loss,
    ziln_regression_loss,
)

# gamma=0 is alpha-weighted cross-entropy; larger gamma discounts confident hits
p = np.array([0.05, 0.5, 0.95])
for gamma in (0.0, 1.0, 2.0):
    cfg = FocalConfig(gamma=gamma, alpha=0.25)
    print(f"gamma={gamma}: converted {focal_propensity_loss(p, True, cfg).round(4)}"
          f"  not converted {focal_propensity_loss(p, False, cfg).round(4)}")

# regression is the Gaussian NLL of log y
print("regression loss at the mode:", ziln_regression_loss(math.log(20.0), 1.0, 20.0))

# pair weight grows with the outcome gap, so whales dominate the ranking term
for gap in (0.0, 1.0, 10.0, 100.0):
    print(f"|z_i - z_j| = {gap:5.1f}  weight {pair_weight(0.0, gap):.4f}")

# a misordered whale pair costs more than a misordered small pair
small = RankPair(z_i=1.0, z_j=0.0, tau_hat_i=-1.0, tau_hat_j=1.0)
whale = RankPair(z_i=50.0, z_j=0.0, tau_hat_i=-1.0, tau_hat_j=1.0)
print("small pair loss:", value_ranking_loss([small]))
print("whale pair loss:", value_ranking_loss([whale]))
