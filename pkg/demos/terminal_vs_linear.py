"""Compressive nearest-neighbour accuracy on two noisy circles: terminal vs linear."""
import numpy as np

from terminal_embed import SolverConfig, run_experiment
from terminal_embed.datasets import two_circles_benchmark
from terminal_embed.harness import summarize

train, test = two_circles_benchmark(seed=1)
print(f"{len(train)} training and {len(test)} test points in R^{train.dim}")

reports = run_experiment(train, test, [3, 5, 10, 20], ["IDENTITY", "LINEAR", "LINEAR_BYPASS",
                                                       "QUADRATIC"],
                         SolverConfig(eps=0.1), seed=0, trials=3)

print(f"\n{'variant':<14}{'m':>4}{'acc %':>8}{'MaxDist':>9}{'MinDist':>9}{'nonlin %':>10}")
for row in summarize(reports):
    nl = row["mean_nonlinearity_pct"]
    print(f"{row['variant']:<14}{row['m']:>4}{row['accuracy_pct']:>8.2f}{row['max_dist']:>9.3f}"
          f"{row['min_dist']:>9.3f}{'' if nl is None or np.isnan(nl) else f'{nl:.1f}':>10}")
