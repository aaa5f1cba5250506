# %% [markdown]
# # Grid convergence
#
# Pure translation along the grid axes is exact: the aligned scenario
# moves exactly one cell per step, so its error is zero at every
# resolution. A diagonal, non-aligned translation smears the density,
# but the error shrinks as the grid is refined. For nonlinear scenarios
# there is no closed form, so the reference is a finer run of the same
# scheme (self-convergence).

# %%
from __future__ import annotations

from crowdflow import convergence_study, load_bundled
from crowdflow.diagnostics import is_monotone_decreasing, rows_to_csv

for name in ("aligned_translation", "diagonal_translation"):
    rows = convergence_study(load_bundled(name), [16, 32, 64])
    print(name, "monotone:", is_monotone_decreasing(rows))
    print(rows_to_csv(rows))

# %% [markdown]
# ## Self-convergence of a nonlinear scenario
#
# The reference is computed at twice the finest level, with the cell
# measures summed back onto each coarser grid.

# %%
sc = load_bundled("obstacle_waypoint").replace(steps=50)
rows = convergence_study(sc, [16, 32, 64])
for r in rows:
    print(f"M = {r.M:3d}  max localisation error {r.loc_error_max:.3e}  ({r.reference})")
print("monotone:", is_monotone_decreasing(rows))
