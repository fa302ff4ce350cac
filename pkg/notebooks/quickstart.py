# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Quickstart
#
# Sample an algorithm structure, run it under default and random
# configurations, then train a tiny configurator and compare the three.

# %%
import numpy as np

from modular_dac import env as E
from modular_dac.evaluation import TaskSet, build_task_sets, normalized_metric, run_baseline
from modular_dac.problems import make_instance
from modular_dac.structure import from_names, generate, serialize
from modular_dac.trainer import TrainConfig, train

# %% [markdown]
# ## Structures
#
# `generate` draws a valid structure from one of the spaces (`DE`, `PSO_GA`, `ALL`).

# %%
rng = np.random.default_rng(0)
for _ in range(3):
    print(generate("DE", rng).describe())
    print()

# %%
s = from_names(["Uniform", "DE/rand/1", "Binomial", "BC_Clip", "Sel_DE-like", "Completed"], "DE")
print(serialize(s))

# %% [markdown]
# ## One episode
#
# A step is one generation. Passing `None` uses the default configuration.

# %%
state, obs = E.reset(s, make_instance("rastrigin", 10, 0), H=50, rng=0)
print("active tokens:", obs.n_active)
total = 0.0
while not state.done:
    state, obs, r, done = E.step(state, None)
    total += r
print(f"return {total:.3f}, best f {state.f_best:.4g}")

# %% [markdown]
# ## Train a tiny configurator
#
# A few epochs on a slice of the training split. The real runs use 20 epochs on all 32 tasks.

# %%
splits = build_task_sets(0)
result = train(splits["train"].tasks[:4], TrainConfig(epochs=2, H=30, batch_size=4), None)
for row in result.log:
    print(row["epoch"], round(row["mean_return"], 3))

# %% [markdown]
# ## Compare baselines on a few held-in tasks
#
# Curves share random numbers across baselines, so differences come from the configuration only.

# %%
mini = TaskSet("mini", "test_in", splits["test_in"].tasks[:4])
curves = {b: run_baseline(b, mini, runs=2, H=30, policy=result.policy if b == "configx" else None, seed=0)
          for b in ("configx", "random", "original")}
table = normalized_metric(curves, task_set=mini)
for b in curves:
    mean, std = table.summary(b)
    print(f"{b:9s} {mean:.3f} ± {std:.3f}")
