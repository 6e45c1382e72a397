# %% [markdown]
# # A small Monte-Carlo risk table for Binomial odds
#
# Scenario B1 mixes a point mass at q=1/2 with a Beta prior on q. Each
# estimator is scored by its risk relative to NEB with the ARE bandwidth,
# so NEB itself reads 1.00.

# %%
from nebayes.simulation import render_table, run_scenario, scenario

spec = scenario("B1")
table = run_scenario(spec, 1, [300, 1000], 5, seed=3)
print(render_table(table, "text"))

# %% [markdown]
# ## Bandwidths picked across replications
#
# The grid runs from 10 to 100 in steps of 10.

# %%
for n, lams in table.lam_hat.items():
    print(n, lams)
