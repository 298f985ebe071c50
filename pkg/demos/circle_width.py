"""Gaussian width of a sampled circle, the manifold bound, and the suggested m."""
import math

import numpy as np

from terminal_embed import (ManifoldParams, gaussian_width_mc, manifold_width_bound,
                            target_dimension, unit_secants)

# 120 points on the unit circle in R^2
t = np.linspace(0, 2 * np.pi, 120, endpoint=False)
X = np.column_stack([np.cos(t), np.sin(t)])

# secants of points on a circle are again unit vectors in its plane
S = unit_secants(X, dedup_tol=1e-9)
print("distinct secant directions:", len(S))

w, se = gaussian_width_mc(S, trials=4000, seed=0)
print(f"MC width {w:.4f} +- {se:.4f}   (E||g|| in 2-D = {math.sqrt(math.pi / 2):.4f})")

# the same circle lifted into R^50 by a random orthonormal pair of axes
Q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((50, 2)))
w50, se50 = gaussian_width_mc(unit_secants(X @ Q.T, dedup_tol=1e-9), trials=4000, seed=0)
print(f"same circle in R^50: {w50:.4f} +- {se50:.4f}  (width ignores ambient dimension)")

# worst-case bound from reach and length alone
bound = manifold_width_bound(ManifoldParams(d=1, tau=1.0, volume=2 * np.pi))
print(f"manifold bound for the unit circle: {bound:.3f}")

for eps in (0.5, 0.25, 0.1):
    print(f"eps={eps:<5} m(MC width)={target_dimension(w, eps, 0.01):>6}"
          f"   m(bound)={target_dimension(bound, eps, 0.01):>8}")
