"""Regenerates mean_square_demo.csv: a contaminated normal sample whose
misspecification of mean_square_match is of the same order as sampling noise."""
import numpy as np

rng = np.random.default_rng(20240916)
n = 500
outlier = rng.random(n) < 0.03
x = 1.0 + np.where(outlier, 0.5, 0.01) * rng.normal(size=n)
with open("mean_square_demo.csv", "w") as f:
    f.write("x\n")
    for v in x:
        f.write(f"{v:.6f}\n")
