"""
Learning the Nash gains
=======================

Backward-in-time descent-ascent (one receding-horizon problem per step)
against simultaneous descent-ascent on the whole horizon, both with exact
gradients, then a short zero-order run that only sees simulated costs.
"""

import numpy as np

from robust_mftg import random_model, solve_riccati
from robust_mftg.grad import SmoothingParams
from robust_mftg.learn import RgdaConfig, baseline_gda, nash_gap, rgda
from robust_mftg.sim import SimConfig

# %%
# A time-invariant game on which simultaneous descent-ascent first moves away
# from the equilibrium.
base = random_model(0, horizon=5, a_scale=1.2, b_scale=1.5, gamma_margin=1.1)
cfg = RgdaConfig(inner_iters=70, lr=0.025, gradient_mode="exact")
for T in (2, 3, 4, 5):
    model = base.with_horizon(T)
    sol = solve_riccati(model)
    p_r, _ = rgda(model, cfg, sol, record_gains=False)
    p_b, tr_b = baseline_gda(model, cfg, sol, record_gains=False)
    errs = np.maximum(tr_b.column("err_k"), tr_b.column("err_l"))
    print(f"T={T}: baseline starts at {max(tr_b.initial_err[-1]):.2f}, peaks at "
          f"{errs.max():.2f}, ends at {nash_gap(p_b, sol).max:.2f}; "
          f"backward GDA ends at {nash_gap(p_r, sol).max:.2e}")

# %%
# Zero-order learning. Each gradient is estimated from simulated costs of 100
# agents at perturbed gains; the "moments" sampler draws the same statistics
# as simulating the agents but at a cost independent of M.
model = random_model(1, horizon=3, m=2, p=2, a_scale=2.0, b_scale=3.0, q_range=(2.0, 4.0))
sol = solve_riccati(model)
cfg = RgdaConfig(inner_iters=200, lr=0.001, gradient_mode="zero_order",
                 smoothing=SmoothingParams(1.0, 1000, antithetic=True),
                 sim=SimConfig(100, method="moments"), seed=3)
policy, trace = rgda(model, cfg, sol, record_gains=False)
gap = nash_gap(policy, sol)
print("zero-order gaps per step, K:", np.round(gap.err_k, 4), "L:", np.round(gap.err_l, 4))
print("initial gaps:", {t: tuple(round(x, 3) for x in v) for t, v in trace.initial_err.items()})

try:
    import matplotlib.pyplot as plt
except ImportError:
    plt = None

if plt is not None:
    for t in range(model.horizon):
        plt.semilogy(trace.column("err_k", t), label=f"t={t}")
    plt.xlabel("inner iteration")
    plt.ylabel("max_j ||K_j - K_j*||")
    plt.legend()
    plt.savefig("zero_order_learning.png", dpi=120)
