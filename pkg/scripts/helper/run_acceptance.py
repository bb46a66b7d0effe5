#!/usr/bin/env python3
"""
Desk-scale acceptance runs: the SAC-BC bandit check, tokenizer ordering,
rerun determinism and the directional training checks (BC vs untrained,
joint vs trajectory-only supervision, SAC-BC vs BC, post-tuning safety).

Usage:
    python scripts/helper/run_acceptance.py --only bandit tokenizers
    python scripts/helper/run_acceptance.py --config configs/default.json --seeds 0 1 2 --jobs 4
"""

import argparse
import logging
import os
import shutil
import sys
from argparse import Namespace
from pathlib import Path

import numpy as np

# Add project root to Python path
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

from bev_quantizer import load_codebook  # noqa: E402
from main import (  # noqa: E402
    CHECKPOINT_NAME,
    CODEBOOK_NAME,
    _closed_loop_policy,
    cmd_eval,
    cmd_gen_data,
    cmd_train_bc,
    cmd_train_sacbc,
    eval_scenes,
)
from offline_rl import EnumerableBandit, train_bandit  # noqa: E402
from planner import init_model, load_checkpoint  # noqa: E402
from reports import write_json  # noqa: E402
from run_config import RunConfig, load_run_config  # noqa: E402
from sim_world import closed_loop_eval, load_dataset, open_loop_eval  # noqa: E402
from traj_tokens import get_scheme  # noqa: E402
from traj_tokens.benchmark import recon_benchmark, synthetic_windows  # noqa: E402

logger = logging.getLogger(__name__)

CHECKS = ("bandit", "tokenizers", "determinism", "training")
ADE_HORIZON_S = 4.0
BC_ADE_RATIO = 0.5


def check_bandit(seeds=range(5)) -> dict:
    """Greedy SAC-BC policy recovers every state's best action within 2000 steps."""
    solved = {}
    for seed in seeds:
        result = train_bandit(EnumerableBandit.random(seed=seed), seed=seed)
        solved[seed] = result.solved_at
        print(f"   seed {seed}: {'solved at step ' + str(result.solved_at) if result.solved else 'not solved'}")
    return {"passed": all(v is not None for v in solved.values()), "solved_at": solved}


def check_tokenizers(n_windows: int = 2000, seed: int = 0, jobs: int = 1) -> dict:
    windows = synthetic_windows(n_windows, 8, seed)
    ade = {}
    for name in ("fb-xy-A", "dct-xy-B", "fb-ka-B", "fb-ka-D"):
        ade[name] = recon_benchmark(windows, get_scheme(name), (ADE_HORIZON_S,), (0.95,), jobs).ade(ADE_HORIZON_S)
        print(f"   {name:<9} ADE@{ADE_HORIZON_S:.0f}s {ade[name]:.4f} m")
    passed = ade["dct-xy-B"] < ade["fb-xy-A"] and ade["fb-ka-D"] <= ade["fb-ka-B"]
    return {"passed": bool(passed), "ade_m": ade}


def _tree_bytes(root: str) -> dict:
    files = {}
    for base, _, names in os.walk(root):
        for name in names:
            path = os.path.join(base, name)
            with open(path, "rb") as f:
                files[os.path.relpath(path, root)] = f.read()
    return files


def _pipeline(cfg: RunConfig) -> None:
    quiet = Namespace(quiet=True)
    cmd_gen_data(cfg, quiet)
    cmd_train_bc(cfg, quiet)
    cmd_train_sacbc(cfg, quiet)
    cmd_eval(cfg, Namespace(quiet=True, mode="open", policy="planner", posttune=False, checkpoint=None))
    cmd_eval(cfg, Namespace(quiet=True, mode="closed", policy="planner", posttune=False, checkpoint=None))


def check_determinism(config: str, out_root: str, jobs: int) -> dict:
    """Two full runs with the same config and seed must produce identical files."""
    trees = []
    for name in ("run_a", "run_b"):
        cfg = load_run_config(config, jobs=jobs, out_dir=os.path.join(out_root, "determinism", name))
        _pipeline(cfg)
        trees.append(_tree_bytes(cfg.out_dir))
    differing = sorted(k for k in set(trees[0]) | set(trees[1]) if trees[0].get(k) != trees[1].get(k))
    for path in differing:
        print(f"   differs: {path}")
    return {"passed": not differing, "n_files": len(trees[0]), "differing": differing}


def _heldout_ade(cfg: RunConfig, model, codebook) -> float:
    dataset = load_dataset(os.path.join(cfg.out_dir, "data"), cfg.dataset_hash)
    episodes = dataset.split("heldout") or dataset.episodes
    rows = open_loop_eval(model, episodes, codebook, cfg.action_scheme(), (ADE_HORIZON_S,), cfg.eval.window_stride,
                          bev=cfg.bev, route_length=cfg.sim.route_length)
    return rows[0]["ade_m"]


def _codebook(cfg: RunConfig):
    if cfg.model.bev_tokens_per_frame == 0:
        return None
    return load_codebook(os.path.join(cfg.out_dir, "bc", CODEBOOK_NAME), cfg.bev.codebook_size)


def _closed_loop(cfg: RunConfig, checkpoint: str, posttune: bool = False) -> dict:
    policy = _closed_loop_policy(cfg, "planner", posttune, checkpoint)
    results, summary = closed_loop_eval(policy, eval_scenes(cfg), cfg.action_scheme(), cfg.eval.steps, cfg.bev,
                                        cfg.rewards, cfg.jobs)
    summary["collisions"] = float(sum(1.0 - r.nc for r in results))
    return summary


def _training_seed(config: str, seed: int, out_root: str, jobs: int) -> dict:
    cfg = load_run_config(config, seed=seed, jobs=jobs, out_dir=os.path.join(out_root, "training", f"seed_{seed}"))
    quiet = Namespace(quiet=True)
    cmd_gen_data(cfg, quiet)
    bc_ckpt = cmd_train_bc(cfg, quiet)
    rl_ckpt = cmd_train_sacbc(cfg, quiet)

    codebook = _codebook(cfg)
    untrained = _heldout_ade(cfg, init_model(cfg.model, cfg.stream("init")), codebook)
    trained = _heldout_ade(cfg, load_checkpoint(bc_ckpt)[0], codebook)

    traj_only = RunConfig.model_validate(
        {
            **cfg.model_dump(),
            "model": {**cfg.model.model_dump(), "bev_tokens_per_frame": 0},
            "out_dir": cfg.out_dir + "_traj_only",
        }
    )
    shutil.copytree(os.path.join(cfg.out_dir, "data"), os.path.join(traj_only.out_dir, "data"), dirs_exist_ok=True)
    traj_only_ckpt = cmd_train_bc(traj_only, quiet)
    ablation = _heldout_ade(traj_only, load_checkpoint(traj_only_ckpt)[0], None)

    bc = _closed_loop(cfg, bc_ckpt)
    rl = _closed_loop(cfg, rl_ckpt)
    tuned = _closed_loop(cfg, rl_ckpt, posttune=True)
    print(f"   seed {seed}: ADE untrained {untrained:.3f} / BC {trained:.3f} / traj-only {ablation:.3f} m; "
          f"reward BC {bc['mean_reward']:.3f} -> SAC-BC {rl['mean_reward']:.3f}")
    return {
        "ade_untrained": untrained,
        "ade_bc": trained,
        "ade_traj_only": ablation,
        "bc": bc,
        "sacbc": rl,
        "sacbc_posttune": tuned,
        "checkpoints": {"bc": bc_ckpt, "sacbc": rl_ckpt, "traj_only": os.path.join(traj_only.out_dir, "bc", CHECKPOINT_NAME)},
    }


def check_training(config: str, seeds, out_root: str, jobs: int) -> dict:
    runs = {seed: _training_seed(config, seed, out_root, jobs) for seed in seeds}

    def mean(key, sub=None):
        return float(np.mean([r[key][sub] if sub else r[key] for r in runs.values()]))

    label = "pdms_style"
    criteria = {
        "bc_halves_ade": all(r["ade_bc"] <= BC_ADE_RATIO * r["ade_untrained"] for r in runs.values()),
        "joint_beats_traj_only": mean("ade_bc") <= mean("ade_traj_only"),
        "sacbc_improves_reward": mean("sacbc", "mean_reward") > mean("bc", "mean_reward"),
        "sacbc_improves_score": mean("sacbc", label) > mean("bc", label),
        "posttune_keeps_comfort": mean("sacbc_posttune", "comfort") >= mean("sacbc", "comfort"),
        "posttune_no_new_collisions": mean("sacbc_posttune", "collisions") <= mean("sacbc", "collisions"),
    }
    for name, ok in criteria.items():
        print(f"   {'✅' if ok else '❌'} {name}")
    return {"passed": all(criteria.values()), "criteria": criteria, "runs": runs}


def main() -> int:
    parser = argparse.ArgumentParser(
        description="Desk-scale acceptance checks",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Fast checks only
  python scripts/helper/run_acceptance.py --only bandit tokenizers

  # Everything, three training seeds
  python scripts/helper/run_acceptance.py --seeds 0 1 2 --jobs 4
        """,
    )
    parser.add_argument("--config", default=str(project_root / "configs" / "default.json"))
    parser.add_argument("--determinism-config", default=str(project_root / "configs" / "smoke.json"))
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--out", default="runs/acceptance")
    parser.add_argument("--only", nargs="+", choices=CHECKS, default=list(CHECKS))
    args = parser.parse_args()
    logging.basicConfig(level=logging.WARNING)

    report = {}
    if "bandit" in args.only:
        print("🎯 Enumerable bandit (5 seeds)")
        report["bandit"] = check_bandit()
    if "tokenizers" in args.only:
        print("📏 Tokenizer ordering")
        report["tokenizers"] = check_tokenizers(jobs=args.jobs)
    if "determinism" in args.only:
        print("🔁 Rerun determinism")
        report["determinism"] = check_determinism(args.determinism_config, args.out, args.jobs)
    if "training" in args.only:
        print(f"🚗 Desk-scale training on seeds {args.seeds}")
        report["training"] = check_training(args.config, args.seeds, args.out, args.jobs)

    write_json(os.path.join(args.out, "acceptance.json"), report)
    failed = [name for name, result in report.items() if not result["passed"]]
    print(f"{'❌ Failed: ' + ', '.join(failed) if failed else '✅ All checks passed'}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
