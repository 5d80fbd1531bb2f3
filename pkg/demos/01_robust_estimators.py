"""Huber location and robust covariance on heavy-tailed data.

Run: python demos/01_robust_estimators.py
"""

import math

import numpy as np

from farmtest import (adaptive_huber_covariance, huber_location, sample_covariance,
                      utype_covariance)

rng = np.random.default_rng(0)

# A t(2) sample has infinite variance, so its mean wanders; the Huber
# location with a moderate tau stays near the center.
x = rng.standard_t(2, size=200) + 1.0
print(f"sample mean       {x.mean():8.4f}")
for tau in (0.5, 2.0, 10.0, math.inf):
    print(f"huber tau={tau:<6} {huber_location(x, tau).value:8.4f}")

# Covariance of p=30 scaled t(3) columns (true covariance = identity).
n, p = 100, 30
X = rng.standard_t(3, size=(n, p)) / math.sqrt(3.0)
for name, S in [("sample", sample_covariance(X)),
                ("U-type", utype_covariance(X, tau=40.0)),
                ("adaptive Huber", adaptive_huber_covariance(X, tau_mean=2.0, tau_cov=6.0))]:
    err = np.linalg.norm(S - np.eye(p), 2)
    print(f"{name:15s} spectral error {err:6.3f}")
