"""Tour of the three task families and their scripted near-optimal policies."""

import numpy as np

from growlab import envsuite

print("== registered tasks ==")
for task in envsuite.list_tasks():
    print(f"  {task.task_id:<12} {task.family:<11} cap={task.horizon_cap:<3} "
          f"obs={envsuite.obs_dim(task.family):<4} actions={envsuite.action_count(task.family)}")

print("\n== one navigation episode ==")
task = envsuite.get_task("nav-key-7x7")
ep = envsuite.run_episode(task, episode_seed=0)
agent, goal, key, _ = ep.states[0].data
print(f"  start {agent}, key {key}, goal {goal}")
print(f"  actions {ep.actions}")
print(f"  success={ep.final_state.success} in {ep.length} steps")

print("\n== chaincraft: furnace stages stretch the episode ==")
task = envsuite.get_task("craft-8")
recipe, traps, smelt = envsuite.craft_recipe(task)
print(f"  recipe {recipe}, smelting stages {sorted(smelt)}")
for seed in range(3):
    ep = envsuite.run_episode(task, seed)
    print(f"  seed {seed}: {ep.length} steps, waits {ep.states[0].data[2]}")

print("\n== step-length spread of the scripted policy (30 seeds) ==")
for task in envsuite.list_tasks():
    lengths = np.array([envsuite.run_episode(task, s).length for s in range(30)])
    print(f"  {task.task_id:<12} mean {lengths.mean():5.1f}  cv {lengths.std() / lengths.mean():.3f}")

print("\n== a random policy rarely succeeds ==")
rng = np.random.default_rng(0)
for tid in ("nav-7x7", "craft-8", "pursuit-9"):
    task = envsuite.get_task(tid)
    A = envsuite.action_count(task.family)
    wins = sum(envsuite.run_episode(task, s, lambda st: int(rng.integers(A))).final_state.success
               for s in range(50))
    print(f"  {tid:<10} random success {wins}/50")
