"""Operator command line: data generation, training, evaluation, ablations,
and qualitative episode rendering.

Every command writes its fully resolved configuration (with the exact
invocation echoed in a comment header) next to its outputs. Exit codes:
0 success, 1 usage or configuration error, 2 I/O error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import episodes, figures, metrics, trainer
from .config import ConfigError, RunConfig, apply_overrides, load_config, to_text
from .tensor import NumericError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage errors are exit 1
        raise UsageError(message)


def _write_resolved(out_dir: str, cfg: RunConfig) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved_config.cfg"), "w", encoding="utf-8") as fh:
        fh.write("# argv: " + " ".join(sys.argv) + "\n")
        fh.write(to_text(cfg))


def _load(args) -> RunConfig:
    path = args.config or os.environ.get("WAKE_CONFIG")
    return load_config(path, args.set or [])


def cmd_gen_data(args) -> int:
    cfg = _load(args)
    records, stats = episodes.build_dataset(args.episodes, args.seed, args.split,
                                            cfg.world)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    _write_resolved(out_dir, cfg)
    episodes.write_episode_file(args.out, records, dt=cfg.world.dt)
    print(f"wrote {stats.episodes} episodes to {args.out} "
          f"(rejection rate {stats.rejection_rate:.3f})")
    for name in sorted(stats.scenario_counts):
        print(f"  {name}: {stats.scenario_counts[name]}")
    return 0


def cmd_train(args) -> int:
    cfg = _load(args)
    if args.heads:
        apply_overrides(cfg, [f"train.heads={args.heads}"])
    records = episodes.read_episode_file(args.data)
    os.makedirs(args.out, exist_ok=True)
    _write_resolved(args.out, cfg)
    log_path = os.path.join(args.out, "train_log.txt")

    def log_hook(report):
        if report.step % 50 == 0 or report.step + 1 == cfg.train.steps:
            print(report.line(), flush=True)

    model, reports = trainer.train(cfg, records, out_dir=args.out,
                                   resume=args.resume, log_hook=log_hook)
    print(f"finished {len(reports)} steps; checkpoints in {args.out}")
    return 0


def cmd_eval(args) -> int:
    model, cfg, _, _ = trainer.load_checkpoint(args.checkpoint)
    if args.set:
        apply_overrides(cfg, args.set)
    records = episodes.read_episode_file(args.data)
    if cfg.metrics.eval_episodes and len(records) > cfg.metrics.eval_episodes:
        records = records[: cfg.metrics.eval_episodes]
    os.makedirs(args.out, exist_ok=True)
    _write_resolved(args.out, cfg)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [0]

    model.reset_counters()
    per_seed = []
    for seed in seeds:
        per_seed.append(metrics.evaluate_split(model, records, args.which, cfg, seed=seed))
    report = {key: float(np.mean([r[key] for r in per_seed])) for key in per_seed[0]}
    if len(seeds) > 1:
        for key in per_seed[0]:
            report[key + ".stddev"] = float(np.std([r[key] for r in per_seed]))
    calls = model.denoiser_calls()
    report["calls.depth"] = float(calls["depth"])
    report["calls.video"] = float(calls["video"])
    report["calls.action"] = float(calls["action"])
    path = os.path.join(args.out, "report.txt")
    metrics.write_report(path, report)
    for key in sorted(report):
        print(f"{key} = {report[key]:.6g}")
    if args.which == "plan" and (calls["depth"] or calls["video"]):
        print("error: planning-only mode touched depth/video denoisers", file=sys.stderr)
        return 3
    print(f"report written to {path}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load(args)
    train_records = episodes.read_episode_file(args.data)
    eval_records = episodes.read_episode_file(args.eval_data)
    if cfg.metrics.eval_episodes and len(eval_records) > cfg.metrics.eval_episodes:
        eval_records = eval_records[: cfg.metrics.eval_episodes]
    os.makedirs(args.out, exist_ok=True)
    _write_resolved(args.out, cfg)
    seeds = [int(s) for s in args.seeds.split(",")]
    if args.matrix == "heads":
        variants = trainer.ABLATION_VARIANTS
    elif args.matrix == "queries":
        variants = trainer.QUERY_VARIANTS
    else:
        variants = {**trainer.ABLATION_VARIANTS, **trainer.QUERY_VARIANTS}

    def progress(row):
        print(f"variant={row['variant']} seed={row['seed']} "
              f"pdms={row.get('plan.pdms', float('nan')):.4f}", flush=True)

    rows = trainer.run_ablation_matrix(cfg, variants, seeds, train_records,
                                       eval_records, progress=progress)
    summary = trainer.summarize_ablation(rows)
    table_path = os.path.join(args.out, "ablation_table.txt")
    _write_ablation_table(table_path, summary)
    with open(table_path, "r", encoding="utf-8") as fh:
        print(fh.read())

    pdms_series = {s["variant"]: [r["plan.pdms"] for r in rows
                                  if r["variant"] == s["variant"]] for s in summary}
    figures.write_ppm(os.path.join(args.out, "pdms_by_variant.ppm"),
                      figures.bar_chart([s["variant"] for s in summary],
                                        [s.get("plan.pdms", 0.0) for s in summary]))
    figures.write_ppm(os.path.join(args.out, "pdms_per_seed.ppm"),
                      figures.line_chart(pdms_series))
    return 0


def _write_ablation_table(path: str, summary: list[dict]) -> None:
    columns = ["variant", "seeds", "plan.nc", "plan.dac", "plan.ttc", "plan.comfort",
               "plan.ep", "plan.pdms", "depth.absrel", "video.psnr"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("wake-ablation v1\n")
        fh.write("\t".join(columns) + "\n")
        for row in summary:
            cells = []
            for col in columns:
                value = row.get(col)
                if value is None:
                    cells.append("-")
                elif isinstance(value, float):
                    cells.append(f"{value:.4f}")
                else:
                    cells.append(str(value))
            fh.write("\t".join(cells) + "\n")


def cmd_render_episode(args) -> int:
    model, cfg, _, _ = trainer.load_checkpoint(args.checkpoint)
    records = episodes.read_episode_file(args.data)
    if not 0 <= args.episode < len(records):
        raise UsageError(f"episode index {args.episode} out of range (n={len(records)})")
    rec = records[args.episode]
    os.makedirs(args.out, exist_ok=True)
    _write_resolved(args.out, cfg)

    gen_depth = model.generate_depth(rec, seed=args.seed)
    gen_video = model.generate_video(rec, seed=args.seed)
    traj = model.generate_trajectory(rec, seed=args.seed)
    gt_future = metrics.future_ground_truth(rec, model.cfg.video.horizon, cfg.world)

    d_max = cfg.world.d_max
    depth_img = figures.side_by_side([figures.colorize_depth(rec.depth, d_max),
                                      figures.colorize_depth(gen_depth, d_max)])
    video_img = figures.stack_rows_image([
        figures.side_by_side(list(gt_future)),
        figures.side_by_side(list(gen_video)),
    ])
    overlay = figures.overhead_overlay(rec.scene, rec.expert_traj, traj)

    paths = {
        "depth.ppm": depth_img,
        "video.ppm": video_img,
        "trajectory.ppm": overlay,
    }
    for name, img in paths.items():
        figures.write_ppm(os.path.join(args.out, name), img)
        print(f"wrote {os.path.join(args.out, name)}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="wake", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="run configuration file")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a config value")

    p = sub.add_parser("gen-data", help="generate an episode dataset file")
    common(p)
    p.add_argument("--split", choices=("train", "test"), required=True)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train the model on an episode file")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--heads", default=None, help="comma list: depth,video,action")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--which", choices=("plan", "depth", "video", "all"), default="all")
    p.add_argument("--seeds", default="0", help="comma list of evaluation seeds")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train and score ablation variants")
    common(p)
    p.add_argument("--data", required=True, help="training episode file")
    p.add_argument("--eval-data", required=True, help="held-out episode file")
    p.add_argument("--matrix", choices=("heads", "queries", "all"), default="heads")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("render-episode", help="emit qualitative artifacts")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--episode", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_render_episode)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (IOError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
