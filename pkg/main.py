"""
Discrete-token autoregressive driving planner: command-line entry point.

Usage:
    python main.py gen-data --config configs/default.json
    python main.py train-bc
    python main.py train-sacbc
    python main.py eval --mode closed --posttune
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

import numpy as np
from dotenv import load_dotenv

from bev_quantizer import BevGrid, fit_from_grids, load_codebook, save_codebook
from errors import PlannerError, UsageError, ValidationError
from offline_rl import SacBcTrainer, build_critic, concat_rl_windows, rl_windows, write_rl_log
from planner import Trainer, episode_windows, init_model, load_checkpoint, make_optimizer, save_checkpoint, write_training_log
from planner.checkpoint import read_header
from posttune import LaneLikelihoodMap, posttune_pipeline
from reports import read_csv, write_csv, write_json
from run_config import RunConfig, load_run_config, log_level
from sim_world import (
    SCORE_LABEL,
    ExpertPolicy,
    PlannerPolicy,
    PosttunedPlannerPolicy,
    RandomPolicy,
    StopPolicy,
    build_scene,
    closed_loop_eval,
    generate_dataset,
    load_dataset,
    open_loop_eval,
    tokenize_episode,
)
from sim_world.evaluation import OPEN_LOOP_COLUMNS, REFINED_COLUMNS
from sim_world.metrics import RESULT_COLUMNS
from sim_world.policies import local_reference
from traj_tokens import get_scheme
from traj_tokens.benchmark import horizon_steps, recon_benchmark, synthetic_windows, write_benchmark, write_error_quantiles
from traj_tokens.fixed_bin import to_global_frame, to_local_frame

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.bin"
CODEBOOK_NAME = "codebook.bin"
POSTTUNE_MARGIN = 10.0
POSTTUNE_SIGMA = 0.5
POLICIES = ("planner", "expert", "stop", "random", "replay")


def _paths(cfg: RunConfig):
    root = cfg.out_dir
    return {
        "data": os.path.join(root, "data"),
        "bc": os.path.join(root, "bc"),
        "sacbc": os.path.join(root, "sacbc"),
        "eval": os.path.join(root, "eval"),
        "tok_bench": os.path.join(root, "tok_bench"),
        "posttune": os.path.join(root, "posttune"),
    }


def _show_progress(args) -> bool:
    return not getattr(args, "quiet", False) and sys.stderr.isatty()


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------


def cmd_gen_data(cfg: RunConfig, args=None) -> str:
    out = _paths(cfg)["data"]
    base = cfg.stream("data")
    seeds = [base + i for i in range(cfg.sim.n_episodes)]
    print(f"🚗 Simulating {len(seeds)} episodes into {out}...")
    manifest = generate_dataset(
        out, seeds, cfg.sim, cfg.bev, cfg.rewards, cfg.dataset_hash, cfg.seed, cfg.jobs, _show_progress(args)
    )
    print(f"💾 Manifest: {manifest}")
    return manifest


# ---------------------------------------------------------------------------
# train-bc
# ---------------------------------------------------------------------------


def _checkpoint_extra(cfg: RunConfig, stage: str, step: int, epoch: int):
    return {
        "stage": stage,
        "checkpoint_hash": cfg.checkpoint_hash,
        "dataset_hash": cfg.dataset_hash,
        "config_hash": cfg.hash,
        "seed": cfg.seed,
        "step": step,
        "epoch": epoch,
    }


def _check_checkpoint(cfg: RunConfig, path: str) -> dict:
    header, _, _ = read_header(path)
    if header.get("checkpoint_hash") != cfg.checkpoint_hash:
        raise ValidationError(
            f"{path}: checkpoint was trained with config {header.get('checkpoint_hash')}, "
            f"current model/tokenizer config is {cfg.checkpoint_hash}"
        )
    return header


def _episode_tokens(cfg: RunConfig, episodes, codebook):
    M = cfg.model.bev_tokens_per_frame
    return [tokenize_episode(ep, codebook, M) for ep in episodes]


def _fit_codebook(cfg: RunConfig, episodes):
    if cfg.model.bev_tokens_per_frame == 0:
        return None
    grids = [BevGrid(frame, cfg.bev.resolution) for ep in episodes for frame in ep.bev[: ep.n_steps]]
    return fit_from_grids(grids, cfg.bev, cfg.stream("codebook"))


def _load_codebook(cfg: RunConfig, directory: str):
    if cfg.model.bev_tokens_per_frame == 0:
        return None
    return load_codebook(os.path.join(directory, CODEBOOK_NAME), cfg.bev.codebook_size)


def cmd_train_bc(cfg: RunConfig, args=None) -> str:
    paths = _paths(cfg)
    out = paths["bc"]
    ckpt_path = os.path.join(out, CHECKPOINT_NAME)
    dataset = load_dataset(paths["data"], cfg.dataset_hash)
    episodes = dataset.split("train")
    print(f"📊 Loaded {len(episodes)} training episodes")

    resume = getattr(args, "resume", None)
    if resume:
        header = _check_checkpoint(cfg, resume)
        model, optimizer, _ = load_checkpoint(resume, lambda m: make_optimizer(m, cfg.train))
        codebook = _load_codebook(cfg, os.path.dirname(resume))
        step, epoch = int(header["step"]), int(header["epoch"])
        print(f"🔁 Resuming from {resume} at epoch {epoch}, step {step}")
    else:
        model, optimizer, step, epoch = init_model(cfg.model, cfg.stream("init")), None, 0, 0
        codebook = _fit_codebook(cfg, episodes)
        if codebook is not None:
            save_codebook(codebook, os.path.join(out, CODEBOOK_NAME))

    parts = [episode_windows(t, cfg.model) for t in _episode_tokens(cfg, episodes, codebook)]
    inputs = np.concatenate([p[0] for p in parts]) if parts else np.zeros((0, cfg.model.seq_len), dtype=np.int64)
    targets = np.concatenate([p[1] for p in parts]) if parts else inputs.copy()
    print(f"📊 {len(inputs)} training windows of {cfg.model.seq_len} tokens")

    trainer = Trainer(model, cfg.train, cfg.stream("data"), cfg.stream("sampling"), optimizer, step, epoch)

    def checkpoint(t: Trainer) -> None:
        save_checkpoint(ckpt_path, t.model, t.optimizer, _checkpoint_extra(cfg, "bc", t.step, t.epoch))

    records = trainer.fit(inputs, targets, getattr(args, "epochs", None), _show_progress(args), checkpoint)
    if trainer.epoch == epoch:
        checkpoint(trainer)
    write_training_log(records, os.path.join(out, "train_log.csv"), cfg.hash, cfg.seed)
    print(f"✅ Stage-I training done: {trainer.epoch} epochs, {trainer.step} steps")
    print(f"💾 Checkpoint: {ckpt_path}")
    return ckpt_path


# ---------------------------------------------------------------------------
# train-sacbc
# ---------------------------------------------------------------------------


def cmd_train_sacbc(cfg: RunConfig, args=None) -> str:
    paths = _paths(cfg)
    source = getattr(args, "checkpoint", None) or os.path.join(paths["bc"], CHECKPOINT_NAME)
    _check_checkpoint(cfg, source)
    model, _, _ = load_checkpoint(source)
    codebook = _load_codebook(cfg, os.path.dirname(source))
    dataset = load_dataset(paths["data"], cfg.dataset_hash)
    tokens = _episode_tokens(cfg, dataset.split("train"), codebook)
    data = concat_rl_windows([rl_windows(t, cfg.model, cfg.train.n_step) for t in tokens])
    print(f"📊 {len(data['inputs'])} RL windows, {data['actions'].shape[1]} transition(s) each")

    rl_seed = cfg.stream("rl")
    critic = build_critic(cfg.model.d_model, cfg.model.vocab.n_traj, cfg.sacbc.critic_hidden, rl_seed)
    trainer = SacBcTrainer(model, critic, cfg.sacbc, rl_seed)
    records = trainer.fit(data, getattr(args, "epochs", None), _show_progress(args))

    out = paths["sacbc"]
    ckpt_path = os.path.join(out, CHECKPOINT_NAME)
    save_checkpoint(ckpt_path, model, trainer.policy_opt, _checkpoint_extra(cfg, "sacbc", trainer.step, 0))
    if codebook is not None:
        save_codebook(codebook, os.path.join(out, CODEBOOK_NAME))
    write_rl_log(records, os.path.join(out, "rl_log.csv"), cfg.hash, cfg.seed)
    print(f"✅ SAC-BC fine-tuning done: {trainer.step} steps")
    print(f"💾 Checkpoint: {ckpt_path}")
    return ckpt_path


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _default_checkpoint(cfg: RunConfig) -> str:
    paths = _paths(cfg)
    tuned = os.path.join(paths["sacbc"], CHECKPOINT_NAME)
    return tuned if os.path.exists(tuned) else os.path.join(paths["bc"], CHECKPOINT_NAME)


def _load_planner(cfg: RunConfig, path: Optional[str]):
    path = path or _default_checkpoint(cfg)
    _check_checkpoint(cfg, path)
    model, _, _ = load_checkpoint(path)
    return model, _load_codebook(cfg, os.path.dirname(path))


def _closed_loop_policy(cfg: RunConfig, name: str, posttune: bool, checkpoint: Optional[str]):
    scheme = cfg.action_scheme()
    if name == "expert":
        return ExpertPolicy(scheme)
    if name == "stop":
        return StopPolicy(scheme)
    if name == "random":
        return RandomPolicy(scheme.codebook_size, cfg.stream("eval"))
    if name != "planner":
        raise UsageError(f"policy '{name}' is not available in closed loop")
    model, codebook = _load_planner(cfg, checkpoint)
    if posttune:
        return PosttunedPlannerPolicy(model, codebook, scheme, cfg.posttune, cfg.eval.plan_steps,
                                      mode=cfg.eval.mode, seed=cfg.stream("sampling"))
    return PlannerPolicy(model, codebook, cfg.eval.mode, seed=cfg.stream("sampling"))


def eval_scenes(cfg: RunConfig):
    base = cfg.stream("eval")
    kinds = cfg.eval.difficulties
    return [build_scene(base + i, kinds[i % len(kinds)], cfg.sim.route_length) for i in range(cfg.eval.n_scenes)]


def cmd_eval(cfg: RunConfig, args=None) -> str:
    mode = getattr(args, "mode", "closed")
    policy_name = getattr(args, "policy", "planner")
    posttune = bool(getattr(args, "posttune", False))
    checkpoint = getattr(args, "checkpoint", None)
    out = _paths(cfg)["eval"]
    scheme = cfg.action_scheme()

    if mode == "open":
        if policy_name not in ("planner", "replay"):
            raise UsageError("open-loop evaluation supports the planner and replay policies")
        dataset = load_dataset(_paths(cfg)["data"], cfg.dataset_hash)
        episodes = dataset.split("heldout") or dataset.episodes
        replay = policy_name == "replay"
        model, codebook = (None, None) if replay else _load_planner(cfg, checkpoint)
        rows = open_loop_eval(
            model, episodes, codebook, scheme, cfg.eval.horizons_s, cfg.eval.window_stride, replay,
            cfg.posttune if posttune else None, cfg.bev, cfg.sim.route_length,
        )
        columns = OPEN_LOOP_COLUMNS + (REFINED_COLUMNS if posttune else [])
        path = write_csv(os.path.join(out, "open_loop.csv"), columns, rows, cfg.hash, cfg.seed)
        for row in rows:
            print(f"📊 {row['horizon_s']:.1f}s  ADE {row['ade_m']:.3f} m  FDE {row['fde_m']:.3f} m  AHE {row['ahe_rad']:.4f} rad")
        print(f"💾 Open-loop report: {path}")
        return path

    if mode != "closed":
        raise UsageError(f"unknown evaluation mode '{mode}', expected 'open' or 'closed'")
    policy = _closed_loop_policy(cfg, policy_name, posttune, checkpoint)
    results, summary = closed_loop_eval(
        policy, eval_scenes(cfg), scheme, cfg.eval.steps, cfg.bev, cfg.rewards, cfg.jobs, _show_progress(args)
    )
    path = write_csv(os.path.join(out, "closed_loop.csv"), RESULT_COLUMNS, [r.as_row() for r in results], cfg.hash, cfg.seed)
    write_json(
        os.path.join(out, "closed_loop_summary.json"),
        {"policy": policy.name, "n_scenes": len(results), "score_label": SCORE_LABEL, "mean": summary},
        cfg.hash,
        cfg.seed,
    )
    if summary:
        print(f"📊 {policy.name}: {SCORE_LABEL} {summary[SCORE_LABEL]:.4f}  NC {summary['nc']:.3f}  DAC {summary['dac']:.3f}"
              f"  EP {summary['ep']:.3f}  mean reward {summary['mean_reward']:.3f}")
    print(f"💾 Closed-loop report: {path}")
    return path


# ---------------------------------------------------------------------------
# tok-bench
# ---------------------------------------------------------------------------


def cmd_tok_bench(cfg: RunConfig, args=None) -> str:
    names = getattr(args, "schemes", None) or cfg.tokenizer.bench_schemes
    schemes = [get_scheme(name, dt=cfg.sim.dt) for name in names]
    horizon = max(horizon_steps(h, cfg.sim.dt) for h in cfg.tokenizer.horizons_s)
    windows = synthetic_windows(cfg.tokenizer.n_windows, horizon, cfg.stream("data"), cfg.sim.dt)
    out = _paths(cfg)["tok_bench"]

    results = []
    for scheme in schemes:
        result = recon_benchmark(windows, scheme, cfg.tokenizer.horizons_s, cfg.tokenizer.ci_levels, cfg.jobs,
                                 _show_progress(args))
        results.append(result)
        print(f"📊 {scheme.name:<10} |V|={scheme.codebook_size:<8} ADE@{cfg.tokenizer.horizons_s[-1]:.0f}s "
              f"{result.ade(cfg.tokenizer.horizons_s[-1]):.4f} m")
    sizes = [{"scheme": name, "codebook_size": s.codebook_size, "description": s.description} for name, s in zip(names, schemes)]
    write_csv(os.path.join(out, "codebook_sizes.csv"), ["scheme", "codebook_size", "description"], sizes, cfg.hash, cfg.seed)
    write_error_quantiles(results, os.path.join(out, "error_quantiles.csv"), cfg.hash, cfg.seed)
    path = write_benchmark(results, os.path.join(out, "reconstruction.csv"), cfg.hash, cfg.seed)
    print(f"💾 Benchmark: {path}")
    return path


# ---------------------------------------------------------------------------
# posttune
# ---------------------------------------------------------------------------


def read_trajectory(path: str) -> np.ndarray:
    rows = read_csv(path)
    if not rows:
        raise ValidationError(f"{path}: no waypoints")
    try:
        return np.array([[float(r["x"]), float(r["y"]), float(r.get("yaw") or 0.0)] for r in rows])
    except (KeyError, ValueError) as e:
        raise ValidationError(f"{path}: expected numeric x,y[,yaw] columns ({e})") from e


def cmd_posttune(cfg: RunConfig, args=None) -> str:
    if not getattr(args, "input", None):
        raise UsageError("posttune needs --input with an x,y,yaw trajectory CSV")
    poses = read_trajectory(args.input)
    scene = build_scene(args.scene_seed, args.difficulty, cfg.sim.route_length)
    origin = poses[0]
    local = to_local_frame(origin, poses)
    reference = local_reference(scene, origin)
    lo, hi = local[:, :2].min(axis=0) - POSTTUNE_MARGIN, local[:, :2].max(axis=0) + POSTTUNE_MARGIN
    lane_map = LaneLikelihoodMap.from_reference(reference, (lo[0], hi[0]), (lo[1], hi[1]), cfg.bev.resolution, POSTTUNE_SIGMA)
    result = posttune_pipeline(local, lane_map, reference, cfg.posttune, initial_yaw=float(local[0, 2]))
    refined = to_global_frame(origin, result.poses)

    out = _paths(cfg)["posttune"]
    rows = [{"x": float(p[0]), "y": float(p[1]), "yaw": float(p[2])} for p in refined]
    path = write_csv(os.path.join(out, "refined.csv"), ["x", "y", "yaw"], rows, cfg.hash, cfg.seed)
    write_json(
        os.path.join(out, "diagnostics.json"),
        {"scene_seed": args.scene_seed, "difficulty": args.difficulty, "n_waypoints": len(rows), **result.diagnostics},
        cfg.hash,
        cfg.seed,
    )
    print(f"✅ Refined {len(rows)} waypoints (max displacement {result.diagnostics['max_displacement']:.3f} m)")
    print(f"💾 Refined trajectory: {path}")
    return path


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-bc": cmd_train_bc,
    "train-sacbc": cmd_train_sacbc,
    "eval": cmd_eval,
    "tok-bench": cmd_tok_bench,
    "posttune": cmd_posttune,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Discrete-token autoregressive driving planner",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Simulate the expert dataset
  python main.py gen-data --config configs/default.json

  # Stage I: supervised training, then stage II: offline SAC-BC
  python main.py train-bc
  python main.py train-sacbc

  # Closed-loop PDMS-style scores with post-tuned trajectories
  python main.py eval --mode closed --posttune

  # Open-loop ADE/FDE/AHE on held-out episodes
  python main.py eval --mode open

  # Tokenizer reconstruction benchmark
  python main.py tok-bench --schemes fb-ka-B fb-ka-D dct-xy-B

Exit codes: 0 success, 2 usage, 3 validation, 4 IO, 5 numeric failure.
        """,
    )
    parser.add_argument("--config", type=str, help="Run configuration JSON (see configs/SCHEMA.md)")
    parser.add_argument("--seed", type=int, help="Root seed (overrides config and DAP_SEED)")
    parser.add_argument("--jobs", type=int, help="Worker processes (overrides config and DAP_JOBS)")
    parser.add_argument("--out", type=str, help="Output directory (overrides config and DAP_OUT_DIR)")
    parser.add_argument("--quiet", action="store_true", help="Disable progress bars")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", help="Simulate expert episodes and write the dataset")

    bc = sub.add_parser("train-bc", help="Stage-I supervised training with scheduled sampling")
    bc.add_argument("--resume", type=str, help="Checkpoint to continue from")
    bc.add_argument("--epochs", type=int, help="Train this many more epochs instead of up to train.epochs")

    rl = sub.add_parser("train-sacbc", help="Stage-II offline SAC-BC fine-tuning")
    rl.add_argument("--checkpoint", type=str, help="Stage-I checkpoint (default: <out>/bc/checkpoint.bin)")
    rl.add_argument("--epochs", type=int, help="Override sacbc.epochs")

    ev = sub.add_parser("eval", help="Open- or closed-loop evaluation")
    ev.add_argument("--mode", choices=("open", "closed"), default="closed")
    ev.add_argument("--policy", choices=POLICIES, default="planner",
                    help="Policy to evaluate (replay: logged tokens, open loop only)")
    ev.add_argument("--posttune", action="store_true", help="Refine planned trajectories before scoring")
    ev.add_argument("--checkpoint", type=str, help="Planner checkpoint (default: latest stage)")

    tb = sub.add_parser("tok-bench", help="Trajectory tokenizer reconstruction benchmark")
    tb.add_argument("--schemes", nargs="+", help="Scheme names (default: tokenizer.bench_schemes)")

    pt = sub.add_parser("posttune", help="Refine a trajectory CSV against a scene's lane")
    pt.add_argument("--input", type=str, required=True, help="CSV with x,y,yaw columns")
    pt.add_argument("--scene-seed", type=int, default=0)
    pt.add_argument("--difficulty", type=str, default="medium")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    load_dotenv()
    logging.basicConfig(level=log_level(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_run_config(args.config, args.seed, args.jobs, args.out)
        COMMANDS[args.command](cfg, args)
    except PlannerError as e:
        print(f"❌ {type(e).__name__}: {e}")
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
