# %% [markdown]
# Quick tour of the dcbm package. Run as a script (`python3 demos/quickstart.py`)
# or open the `# %%` cells in an editor that understands them.

# %%
import numpy as np

from dcbm import Gains, scenario
from dcbm.analysis import find_alpha_boundary, jury_test
from dcbm.attacks import binomial_ci, fgsm_flash
from dcbm.harness import simulate_batch
from dcbm.policies import DCBM, Threshold
from dcbm.world import World, WorldParams

# %% [markdown]
# Price volatility of each policy in the high-volatility preset.

# %%
for policy in ("no_buyback", "fixed_rate", "threshold", "dcbm"):
    c = scenario("high_vol", runs=50, horizon=500, seed=0).with_policy(policy)
    world, _ = simulate_batch(c, range(c.runs))
    m = world.metrics()
    print(f"{policy:>11}  sigma_P {m['sigma_p'].mean():.4f}  treasury {m['treasury_growth_pct'].mean():+.1f}%")

# %% [markdown]
# Stability of the linearised loop. `stable` is the quadratic's root verdict;
# the causal verdict uses the one-epoch-delayed cubic.

# %%
g = Gains(15.0, 0.3, 1.0)
v = jury_test(g, 0.05)
print("roots", np.round(v.magnitudes, 4), "stable", v.stable, "causal", v.causal_stable)
print("causal boundary", find_alpha_boundary(g, 1e-6, 1e3, verdict="causal"))

# %% [markdown]
# One-block flash attack against the threshold rule and the PID controller.

# %%
for name, policy in (("threshold", Threshold()), ("dcbm", DCBM())):
    w = World(WorldParams(), policy, 100, 0, range(200)).run(60)
    out = fgsm_flash(w, 0.01)
    s = int(out.success.sum())
    print(f"{name:>9}  ASR {s / 200:.3f}  95% CI {np.round(binomial_ci(s, 200), 3)}")
