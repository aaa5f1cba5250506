# %% [markdown]
# # A crowd walking down a corridor
#
# The bundled `corridor` scenario puts a Gaussian crowd in a horizontal
# corridor. People walk toward the far end and drift away from crowded
# spots. This script runs it, checks the invariants, and shows how the
# density moves and spreads.

# %%
from __future__ import annotations

import numpy as np

from crowdflow import invariant_report, load_bundled, run

sc = load_bundled("corridor")
print(sc.name, "M =", sc.M, "dt =", sc.dt, "steps =", sc.steps)

# %% [markdown]
# ## Run and check the invariants

# %%
result = run(sc)
report = invariant_report(result)
for name, ok in report.checks().items():
    print(f"{'PASS' if ok else 'FAIL'}  {name}")
print(f"worst relative mass drift {report.mass_drift.max():.2e}")

# %% [markdown]
# ## Centre of mass and spread over time

# %%
for n, t, f in result.snapshots:
    X, Y = f.grid.centers()
    m = f.cell_measures()
    total = m.sum()
    cx, cy = (m * X).sum() / total, (m * Y).sum() / total
    sx = np.sqrt((m * (X - cx) ** 2).sum() / total)
    print(f"t = {t:4.1f}  centre ({cx:.3f}, {cy:.3f})  sigma_x {sx:.3f}  peak {f.rho.max():6.2f}")

# %% [markdown]
# ## Final density, coarse text view

# %%
shades = " .:-=+*#%@"
rho = result.final.rho
levels = np.minimum((rho / rho.max() * (len(shades) - 1)).round().astype(int), len(shades) - 1)
for j in reversed(range(sc.M)):
    print("".join(shades[levels[i, j]] for i in range(sc.M)))
