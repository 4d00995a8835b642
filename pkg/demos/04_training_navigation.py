"""Train on the 7x7 navigation task and watch the greedy success rate climb."""

from growlab.trainer import TrainConfig, train

cfg = TrainConfig(algorithm="grow", tasks=["nav-7x7"], updates=300, eval_interval=50, eval_episodes=50)
result = train(cfg, seed=1)

print("update  group success  greedy ASR  steps")
for rec in result.records:
    if rec["kind"] == "eval":
        upd = rec["update"]
        s = next(r["success_rate"] for r in result.records if r["kind"] == "update" and r["update"] == upd)
        print(f"{upd + 1:>6}  {s:>13.3f}  {rec['asr']:>10.2f}  {rec['steps']:>5.2f}")

ups = [r for r in result.records if r["kind"] == "update"]
print(f"\ndegenerate groups: {sum(r['degenerate'] for r in ups)}/{len(ups)}; "
      f"max clip fraction {max(r['clip_fraction'] for r in ups):.3f}")
