"""
Nash gains and attenuation levels
=================================

Solve the coupled Riccati recursions of a small robust mean-field game, check
which attenuation levels gamma are viable, and see how much stricter the
certificate gets for a finite population.
"""

import numpy as np

from robust_mftg import (check_viability_finite, check_viability_mf, find_min_viable_gamma,
                         finite_population_gap, random_model, solve_riccati)

# %%
# A scalar game first. With A = B = Q = 1 and gamma = 10 the recursion can be
# done by hand: Lambda_0 = 1 + (1 - 0.01) * 1 = 1.99 and M_0 = 1 + 1/1.99.
from robust_mftg.model import LqMftgModel

one = [[1.0]]
zero = [[0.0]]
scalar = LqMftgModel(horizon=1, state_dim=1, control_dim=1, a=[one], a_bar=[zero], b=[one],
                     b_bar=[zero], q=[one, one], q_bar=[one, one], sigma=one, sigma_bar=zero,
                     sigma0=one, sigma0_bar=zero, gamma=10.0)
sol = solve_riccati(scalar)
print("M_0      =", sol.m_seq[0][0, 0], " (hand value", 1 + 1 / 1.99, ")")
print("K1*, K2* =", sol.nash_gains.k1[0][0, 0], sol.nash_gains.k2[0][0, 0])
print("value    =", sol.nash_value)

# %%
# The viability margin must be non-positive. Here the gamma^2 terms dominate.
print(check_viability_mf(scalar, sol))

# The smallest viable level of this instance is the golden ratio: the margin
# 2 - g^2 + 1/(2 - g^-2) vanishes exactly there.
print("min gamma:", find_min_viable_gamma(scalar, 1.0, 5.0, 1e-10), (1 + 5**0.5) / 2)

# %%
# A random two-dimensional game over five steps.
model = random_model(7, horizon=5, m=2, p=2)
sol = solve_riccati(model)
print("gamma =", model.gamma, "cond1 holds:", sol.cond1_holds)
for t, k1 in enumerate(sol.nash_gains.k1):
    print(f"t={t} K1* =", np.array2string(k1, precision=3))

# %%
# With N agents the certificate pays an extra C T / N. On this game the
# mean-field boundary is set by cond1 (the margin is still clearly negative
# there), so large populations change nothing and only N = 10 moves gamma*.
g_mf = find_min_viable_gamma(model, 1e-2, 1e2, 1e-8)
print(f"mean field: gamma* = {g_mf:.7f}")
for n in (1000, 100, 10):
    g_n = find_min_viable_gamma(model, 1e-2, 1e2, 1e-8, n_agents=n)
    print(f"N = {n:4d}:    gamma* = {g_n:.7f}")

near = model.with_gamma(g_mf * 1.001)
s = solve_riccati(near)
gap = finite_population_gap(near, s)
print("just above the mean-field level:", check_viability_mf(near, s),
      check_viability_finite(near, s, gap, 10))
