"""``growlab`` command line: train, eval, verify, ablate.

Exit codes: 0 success, 1 verification failure, 2 usage or config error,
3 numeric failure during a run.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import tomli_w

from . import __version__, checks, config, envsuite, policy, trainer
from .errors import ConfigError, GrowError, NumericError, UsageError

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
MANIFEST_SCHEMA = "growlab.manifest/1"


def out_root() -> Path:
    return Path(os.environ.get("GROW_OUT_DIR", "out"))


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _err(msg: str) -> None:
    print(f"growlab: error: {msg}", file=sys.stderr)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


# -- train ----------------------------------------------------------------------


def run_training(cfg: trainer.TrainConfig, seed: int, out: Path) -> dict:
    """One run into ``out``: config copy, metrics, curve, checkpoints, manifest."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(config.config_to_toml(cfg))
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "config_hash": config.config_hash(cfg),
        "seed": seed,
        "started": _now(),
        "finished": None,
        "status": "running",
        "tool_version": __version__,
        "revision": config.revision(),
        "paths": {},
    }
    try:
        result = trainer.train(cfg, seed=seed, out_dir=out)
        manifest["status"] = "ok"
    except NumericError as exc:
        manifest["status"] = f"numeric error: {exc}"
        result = None
    manifest["finished"] = _now()
    manifest["paths"] = {
        "config": "config.toml",
        "metrics": "metrics.jsonl",
        "curve": "curve.csv" if (out / "curve.csv").exists() else None,
        "checkpoints": sorted(p.relative_to(out).as_posix() for p in (out / "checkpoints").glob("*.ckpt"))
        if (out / "checkpoints").exists() else [],
    }
    _write_json(out / "manifest.json", manifest)
    return {"manifest": manifest, "result": result}


def cmd_train(args) -> int:
    cfg = config.load_config(args.config, args.set)
    seed = int(args.seed if args.seed is not None else cfg.seeds[0])
    out = Path(args.out_dir) if args.out_dir else out_root() / f"{Path(args.config).stem}-seed{seed}"
    run = run_training(cfg, seed, out)
    if run["result"] is None:
        _err(run["manifest"]["status"])
        return EXIT_NUMERIC
    for tid, res in run["result"].final_eval.items():
        print(f"{tid}: asr={res.asr:.3f}±{res.asr_std:.3f} steps={res.steps:.2f}")
    print(f"run written to {out}")
    return EXIT_OK


# -- eval -----------------------------------------------------------------------


def _family_for(layout) -> str:
    for fam in envsuite.FAMILIES:
        if envsuite.obs_dim(fam) == layout.input_dim and envsuite.action_count(fam) == layout.output_dim:
            return fam
    raise ConfigError(f"checkpoint layout {layout.input_dim}->{layout.output_dim} matches no task family")


def cmd_eval(args) -> int:
    if args.episodes < 3:
        raise UsageError("episodes must be >= 3")
    params = policy.load_policy(args.checkpoint)
    family = _family_for(params.layout)
    ids = [t for part in args.tasks for t in part.split(",") if t] if args.tasks else \
        [t.task_id for t in envsuite.list_tasks() if t.family == family]
    tasks = [envsuite.get_task(t) for t in ids]
    for t in tasks:
        if t.family != family:
            raise ConfigError(f"task {t.task_id} is {t.family}, checkpoint is {family}")
    results = trainer.evaluate(params, tasks, args.episodes, args.seed)
    out = Path(args.out_dir) if args.out_dir else out_root() / "eval"
    out.mkdir(parents=True, exist_ok=True)
    with (out / "eval.csv").open("w", newline="") as fh:
        fh.write("# growlab.eval/1\n")
        w = csv.writer(fh)
        w.writerow(["task_id", "episodes", "asr", "asr_std", "steps"])
        for tid, res in results.items():
            w.writerow([tid, res.episodes, repr(res.asr), repr(res.asr_std), repr(res.steps)])
            print(f"{tid}: asr={res.asr:.3f}±{res.asr_std:.3f} steps={res.steps:.2f}")
    print(f"wrote {out / 'eval.csv'}")
    return EXIT_OK


# -- verify ---------------------------------------------------------------------


def cmd_verify(args) -> int:
    if args.sizes <= 0:
        raise UsageError("--sizes must be positive")
    results = checks.run_all(args.seed, args.sizes, inject_fault=args.inject_fault)
    for r in results:
        print(r.line())
    report = checks.report_json(results, args.seed, args.sizes)
    failed = [r for r in results if not r.passed]
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify_report.json").write_text(report + "\n")
    if failed:
        replay = json.dumps({"schema": "growlab.verify-failure/1", "seed": args.seed, "sizes": args.sizes,
                             "failures": [{"check": r.name, "instance": r.failing_instance} for r in failed]},
                            sort_keys=True, default=float)
        print(replay)
        if args.out_dir:
            (Path(args.out_dir) / "verify_failures.json").write_text(replay + "\n")
        return EXIT_VERIFY
    print("all checks passed")
    return EXIT_OK


# -- ablate ---------------------------------------------------------------------


def _cell_name(cell: dict) -> str:
    extra = "".join(f"_{k}{cell[k]}" for k in sorted(cell) if k not in ("algorithm", "gamma"))
    gamma = cell.get("gamma")
    return f"{cell['algorithm']}" + (f"_g{gamma}" if gamma is not None else "") + extra


def ablation_plan(grid: dict) -> list[dict]:
    """Expand the grid into validated (cell, family, seed) runs, in a fixed order."""
    base = dict(grid["base"])
    task_ids = base.pop("tasks", [t.task_id for t in envsuite.list_tasks()])
    seeds = base.pop("seeds", [1])
    by_family: dict[str, list[str]] = {}
    for tid in task_ids:
        by_family.setdefault(envsuite.get_task(tid).family, []).append(tid)
    plan = []
    for cell in grid["cells"]:
        for family, tids in by_family.items():
            for seed in seeds:
                doc = {**base, **cell, "tasks": tids, "seeds": [int(seed)]}
                doc["horizons"] = {k: v for k, v in doc.get("horizons", {}).items() if k in tids}
                cfg = config.config_from_doc(doc)
                plan.append({"cell": _cell_name(cell), "algorithm": cfg.algorithm, "gamma": cfg.gamma,
                             "family": family, "seed": int(seed), "config": cfg})
    return plan


def _run_cell(item: dict, out: Path) -> list[dict]:
    run_dir = out / item["cell"] / item["family"] / f"seed{item['seed']}"
    run = run_training(item["config"], item["seed"], run_dir)
    status = run["manifest"]["status"]
    rows = []
    for tid in item["config"].tasks:
        res = run["result"].final_eval.get(tid) if run["result"] else None
        rows.append({"cell": item["cell"], "algorithm": item["algorithm"], "gamma": item["gamma"],
                     "family": item["family"], "task_id": tid, "seed": item["seed"], "status": status,
                     "asr": None if res is None else res.asr, "steps": None if res is None else res.steps,
                     "run_dir": run_dir.relative_to(out).as_posix()})
    return rows


def summarize(rows: list[dict]) -> tuple[list[str], list[list]]:
    """One row per cell: algorithm, gamma, then ASR mean/std and steps per task."""
    cells = list(dict.fromkeys(r["cell"] for r in rows))
    tasks = list(dict.fromkeys(r["task_id"] for r in rows))
    header = ["algorithm", "gamma"]
    for tid in tasks:
        header += [f"{tid}_asr_mean", f"{tid}_asr_std", f"{tid}_steps_mean"]
    header += ["runs", "failed"]
    table = []
    for cell in cells:
        mine = [r for r in rows if r["cell"] == cell]
        line = [mine[0]["algorithm"], repr(mine[0]["gamma"])]
        for tid in tasks:
            ok = [r for r in mine if r["task_id"] == tid and r["status"] == "ok"]
            if ok:
                asr = np.array([r["asr"] for r in ok])
                steps = np.array([r["steps"] for r in ok])
                line += [repr(float(asr.mean())), repr(float(asr.std())), repr(float(steps.mean()))]
            else:
                line += ["", "", ""]
        runs = {(r["family"], r["seed"]) for r in mine}
        failed = {(r["family"], r["seed"]) for r in mine if r["status"] != "ok"}
        table.append(line + [len(runs), len(failed)])
    return header, table


def cmd_ablate(args) -> int:
    grid = config.load_ablation(args.config, args.set)
    plan = ablation_plan(grid)
    out = Path(args.out_dir) if args.out_dir else out_root() / f"ablate-{Path(args.config).stem}"
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            batches = list(pool.map(_run_cell, plan, [out] * len(plan)))
    else:
        batches = [_run_cell(item, out) for item in plan]
    rows = [r for batch in batches for r in batch]
    with (out / "per_seed.csv").open("w", newline="") as fh:
        fh.write("# growlab.ablation-runs/1\n")
        w = csv.writer(fh)
        keys = ["cell", "algorithm", "gamma", "family", "task_id", "seed", "status", "asr", "steps", "run_dir"]
        w.writerow(keys)
        for r in rows:
            w.writerow(["" if r[k] is None else (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in keys])
    header, table = summarize(rows)
    with (out / "summary.csv").open("w", newline="") as fh:
        fh.write("# growlab.ablation/1\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(table)
    n_failed = len({(r["cell"], r["family"], r["seed"]) for r in rows if r["status"] != "ok"})
    _write_json(out / "manifest.json", {
        "schema": MANIFEST_SCHEMA, "kind": "ablation", "started": started, "finished": _now(),
        "tool_version": __version__, "revision": config.revision(), "runs": len(plan), "failed": n_failed,
        "config_hashes": sorted({config.config_hash(p["config"]) for p in plan}),
        "paths": {"summary": "summary.csv", "per_seed": "per_seed.csv"},
    })
    for line in table:
        print(",".join(str(x) for x in line))
    print(f"wrote {out / 'summary.csv'}")
    return EXIT_NUMERIC if n_failed else EXIT_OK


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="growlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"growlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required):
        sp.add_argument("--config", required=config_required, help="TOML config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable); dotted keys reach tables")
        sp.add_argument("--out-dir", help="output directory (default under $GROW_OUT_DIR or ./out)")

    t = sub.add_parser("train", help="train one policy")
    common(t, True)
    t.add_argument("--seed", type=int, help="run seed (default: first entry of seeds)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="greedy evaluation of a policy checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--tasks", nargs="*", help="task ids (default: every task of the checkpoint's family)")
    e.add_argument("--episodes", type=int, default=50)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out-dir")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="run the randomized invariant suite")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--sizes", type=float, default=1.0, help="scale on the number of random instances per check")
    v.add_argument("--out-dir")
    v.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)

    a = sub.add_parser("ablate", help="run an algorithm x gamma grid over seeds")
    common(a, True)
    a.add_argument("--jobs", type=int, default=1, help="run cells in parallel processes")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    except NumericError as exc:
        _err(str(exc))
        return EXIT_NUMERIC
    except GrowError as exc:
        _err(str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
