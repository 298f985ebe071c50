"""One query, step by step: anchor, extension program, embedded point."""
import numpy as np

from terminal_embed import (PointSet, SolverConfig, TerminalModel, constraint_violation,
                            extension_objective, sample_jl, solve_extension)
from terminal_embed.reference import reference_solve

rng = np.random.default_rng(3)
X = PointSet(rng.standard_normal((12, 8)))
A = sample_jl(4, 8, seed=3)
y = rng.standard_normal(8)

for objective in ("LINEAR_BYPASS", "INNER_PROD", "QUADRATIC"):
    # LINEAR_BYPASS ignores the slabs, so its violation is informative only
    model = TerminalModel(X, A, SolverConfig(eps=0.3, objective=objective))
    r = solve_extension(model, y)
    a = X.points[r.anchor_index]
    radius = np.linalg.norm(y - a)
    print(f"\n{objective}")
    print(f"  anchor {r.anchor_index}, ||y - a|| = {radius:.4f}")
    print(f"  ||y'|| = {np.linalg.norm(r.y_prime):.4f}, last coordinate {r.embedded[-1]:.4f}")
    print(f"  slab violation at eps_used={r.eps_used}: "
          f"{constraint_violation(model, y, r.y_prime, r.eps_used):.2e}")
    if objective != "LINEAR_BYPASS":
        ref = reference_solve(model, y, eps=r.eps_used)
        print(f"  objective {r.objective:.6f}  vs Dykstra reference "
              f"{extension_objective(model, y, ref):.6f}  ({r.iterations} ADMM iterations)")

# distances from f(y) to every embedded training point, against the originals
model = TerminalModel(X, A, SolverConfig(eps=0.3))
fy = solve_extension(model, y).embedded
fX = np.hstack([model.phi_images, np.zeros((len(X), 1))])
ratios = np.linalg.norm(fX - fy, axis=1) / np.linalg.norm(X.points - y, axis=1)
print("\nratio ||f(y)-f(x)|| / ||y-x|| over x:", np.round(ratios, 3))
