"""
Uplift curves, Qini and Kendall's tau
=====================================

Sort accounts by score, then for each prefix measure the treated-minus-
control mean outcome times the prefix size. A good ranking front-loads
the incremental value; random targeting follows the straight line.
"""

import numpy as np

from ziln_uplift.datagen import GenConfig, generate
from ziln_uplift.metrics import auuc, krcc, lift_at, qini, uplift_curve

data = generate(GenConfig(n_accounts=20_000, seed=3))
y, t = data.outcome, data.treatment
rng = np.random.default_rng(0)

rankings = {
    "oracle": data.true_uplift,
    "noisy oracle": data.true_uplift + rng.normal(0, data.true_uplift.std(), len(y)),
    "random": rng.random(len(y)),
}
for name, s in rankings.items():
    c = uplift_curve(s, y, t)
    print(f"{name:>12}: auuc/n={auuc(c, normalize=True):.4f}  qini/n={qini(c, normalize=True):.4f}"
          f"  lift@30%={lift_at(c, 0.3):9.1f}  krcc={krcc(s, data.true_uplift):+.3f}")

# the curve itself, every tenth point
c = uplift_curve(data.true_uplift, y, t)
for f, v, b in list(zip(c.fractions, c.incremental_value, c.random_baseline))[::10]:
    print(f"{f:4.2f}  {v:9.1f}  {b:9.1f}")
