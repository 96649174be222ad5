"""The hypothesis-testing pipeline on synthetic sweep outcomes.

Builds a gain-grid outcome table with a compliant-overdamped success
advantage and a stiff-overdamped error penalty at the published effect
sizes, then runs the full chain: logistic regression, Barnard's exact
test, OLS on log errors, Mann-Whitney U, all with Bonferroni-adjusted
levels.
"""

import math

import numpy as np

from gainlab import stats
from gainlab.control import default_grid
from gainlab.stats import SweepOutcome, bonferroni

rng = np.random.default_rng(1)
grid = default_grid()


def regime(kp, kd):
    zeta = kd / (2.0 * math.sqrt(kp))
    return ("C" if kp < grid.stiffness_split else "S") + \
        ("O" if zeta >= 1.0 else "U")


rows = []
for kp, kd in grid.cells():
    p = 0.851 if regime(kp, kd) == "CO" else 0.390
    err = (0.043 if regime(kp, kd) == "SO" else 0.010) \
        * float(rng.lognormal(0.0, 0.25))
    rows.append(SweepOutcome(kp=kp, kd=kd,
                             successes=int(rng.binomial(100, p)), trials=100,
                             scalar_error=err, region=regime(kp, kd)))

fit = stats.logistic_fit(rows)
print("binomial logistic regression on (log2 Kp, log2 Kd):")
for name, c, se in zip(("intercept", "beta_kp", "beta_kd"), fit.coef,
                       fit.stderr):
    print(f"  {name:9s} {c:+.4f}  (se {se:.4f})")

rep = stats.region_test(rows, "CO", "success", alternative="greater",
                        alpha=0.05, m=6)
print(f"\nBarnard one-sided, CO vs rest (alpha_adj = "
      f"{bonferroni(0.05, 6):.4f}):")
print(f"  region {rep.detail['region_rate']:.1%} vs complement "
      f"{rep.detail['complement_rate']:.1%}, p = {rep.p_value:.3g} "
      f"-> reject: {rep.reject}")

ofit = stats.ols_log_fit(rows)
print("\nOLS on log trajectory error:")
for name, c, se in zip(("intercept", "beta_kp", "beta_kd"), ofit.coef,
                       ofit.stderr):
    print(f"  {name:9s} {c:+.4f}  (se {se:.4f})")

rep_e = stats.region_test(rows, "SO", "error", alternative="greater",
                          alpha=0.05, m=3)
print(f"\nMann-Whitney one-sided, SO errors vs rest (alpha_adj = "
      f"{bonferroni(0.05, 3):.4f}):")
print(f"  medians {rep_e.detail['region_median']:.4f} vs "
      f"{rep_e.detail['complement_median']:.4f}, p = {rep_e.p_value:.3g} "
      f"-> reject: {rep_e.reject}")

u, p = stats.mannwhitney_u([1, 2, 3], [4, 5, 6], side="less")
print(f"\nexact Mann-Whitney sanity: U = {u:g}, "
      f"p = {p:.3f} (= 1/C(6,3) = {1 / math.comb(6, 3):.3f})")
