"""Cross-validated robustification constants.

Each tau is a constant C times a rate in n and p. The constant is chosen by
K-fold cross-validation over a log grid and can be saved and reused.

Run: python demos/03_tuning.py
"""

import numpy as np

from farmtest import CvPlan, RobustConfig, calibrate_config, farmtest, robustification_rate
from farmtest.simulation import Scenario, generate

X, _ = generate(Scenario(error="lognormal", n=150, p=100, seed=3))
n, p = X.shape
for kind in ("mean", "variance", "utype_cov", "factor"):
    print(f"rate[{kind:9s}] = {robustification_rate(kind, n, p):9.3f}")

cal = calibrate_config(X, CvPlan(folds=5, seed=1))
print("constants:", {k: round(v, 3) for k, v in cal.to_dict().items()
                     if k.startswith("c_")})
print("taus:", {k: round(v, 3) for k, v in cal.taus().items()})

# Reusing the constants skips cross-validation and gives the same result.
fixed = RobustConfig(c_mean=cal.c_mean, c_cov=cal.c_cov, c_var=cal.c_var,
                     c_utype=cal.c_utype, c_factor=cal.c_factor)
print("rejections with fixed constants:", farmtest(X, fixed).num_rejections)
