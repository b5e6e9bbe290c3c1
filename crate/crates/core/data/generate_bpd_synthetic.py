"""Regenerates bpd_synthetic.csv, a synthetic stand-in for a small neonatal
cohort (binary outcome, birth weight, risk-factor indicators, treatment
days, and the week of first bacterial detection)."""

import numpy as np

rng = np.random.default_rng(20210)
n = 100
weight = np.clip(rng.normal(1050, 280, n), 450, 1750).round()
sga = (rng.random(n) < 0.12).astype(int)
sex = (rng.random(n) < 0.55).astype(int)
mult = (rng.random(n) < 0.3).astype(int)
steroid = rng.integers(0, 8, n)
anti = np.minimum(rng.geometric(0.12, n) - 1, 30)
x = rng.choice(np.arange(1, 7), size=n, p=[0.28, 0.24, 0.17, 0.13, 0.1, 0.08])
eta = (-0.9 - 0.004 * (weight - 1050) + 1.4 * sga + 0.9 * sex + 0.4 * mult
       - 0.12 * steroid + 0.05 * anti - 0.3 * (x - 2.5))
y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(int)

with open("bpd_synthetic.csv", "w") as f:
    f.write("y,weight,sga,sex,mult,steroid,anti,x\n")
    for row in zip(y, weight.astype(int), sga, sex, mult, steroid, anti, x):
        f.write(",".join(str(int(v)) for v in row) + "\n")
