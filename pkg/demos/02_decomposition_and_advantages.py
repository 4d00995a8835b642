"""From one rollout group to per-sample advantages, next to the trajectory-level baseline."""

import numpy as np

from growlab import baselines, envsuite, growcore, policy
from growlab.rollout import collect_group

task = envsuite.get_task("nav-5x5")
layout = policy.make_layout(envsuite.obs_dim(task.family), [16], envsuite.action_count(task.family))
params = policy.init_params(0, layout)

group = collect_group(task, params, G=8, seed=3)
print("lengths", group.lengths.tolist())
print("returns", group.returns.astype(int).tolist())

sg = growcore.decompose(group, gamma=0.9)
print(f"\n{len(sg)} state-action samples, mu={sg.mu:.4f} sigma={sg.sigma:.4f}")

grow = growcore.normalize_advantages(sg)
grpo = baselines.grpo_batch(sg)
np.set_printoptions(precision=2, suppress=True)
for i in range(group.G):
    sel = sg.traj_index == i
    print(f"\ntrajectory {i} (H={sg.lengths[i]}, R={int(sg.returns[i])})")
    print("  reward    ", sg.rewards[sel])
    print("  GROW adv  ", grow.advantages[sel])
    print("  GRPO adv  ", grpo.advantages[sel])

print("\nwith gamma = 1 and equal lengths the two coincide:")
equal = collect_group(envsuite.get_task("craft-4").with_horizon(6), policy.init_params(
    0, policy.make_layout(envsuite.obs_dim("chaincraft"), [16], 7)), G=8, seed=1)
sg1 = growcore.decompose(equal, 1.0)
diff = growcore.normalize_advantages(sg1).advantages - baselines.grpo_batch(sg1).advantages
print("  lengths", equal.lengths.tolist(), " max |difference|", float(np.max(np.abs(diff))))

print("\nclipped objective at the snapshot equals the mean advantage:",
      growcore.clipped_objective(grow, params, 0.2))
