"""Command-line entry point.

Exit codes: 0 on success, 1 for configuration or input errors, 2 for
numerical failures (including a failed gradient check).
"""

import argparse
import json
from pathlib import Path
import sys

from .config import ConfigError, ExperimentConfig, load_config
from .diffusion import edit
from .gradcheck import run_suite
from .pipeline import (StageError, build_components, evaluate_pair, run_protect, source_video,
                       stage, sweep_budget, sweep_lambda)
from .stage1 import NumericalError
from .videoio import load_video, write_ppm_frames, write_video

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2
DEFAULT_BUDGETS = (4.0, 8.0, 16.0, 32.0)
DEFAULT_LAMBDAS = (0.01, 2.0, 5.0, 50.0, 100.0)


def _u64(text):
    value = int(text, 0)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="videoguard",
                                     description="Protect videos against diffusion-based editing.")
    parser.add_argument("--config", help="JSON experiment config (defaults when omitted)")
    parser.add_argument("--out", help="output directory (overrides the config's 'out')")
    parser.add_argument("--seed", type=_u64, help="PSO seed (overrides pso.seed)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render the configured synthetic video")
    p.add_argument("--ppm", action="store_true", help="also write PPM frames")
    sub.add_parser("protect", help="run both stages and write the immunized video and report")
    p = sub.add_parser("edit", help="edit a video with the configured prompt")
    p.add_argument("input", help="VGT file or PPM frame directory")
    p = sub.add_parser("evaluate", help="report for an existing source / immunized pair")
    p.add_argument("source")
    p.add_argument("immunized")
    p = sub.add_parser("sweep-budget", help="protect at several pixel budgets")
    p.add_argument("--budgets", type=float, nargs="+", default=list(DEFAULT_BUDGETS),
                   help="budgets in 1/255 units")
    p = sub.add_parser("sweep-lambda", help="stage 1 at several motion weights")
    p.add_argument("--lambdas", type=float, nargs="+", default=list(DEFAULT_LAMBDAS))
    p = sub.add_parser("gradcheck", help="verify the stage-1 gradient")
    p.add_argument("--probes", type=int, default=10)
    return parser


def _load(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.out:
        cfg.out = args.out
    if args.seed is not None:
        cfg.pso.seed = args.seed
    return cfg


def _outdir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_table(path, rows):
    keys = list(rows[0])
    lines = ["\t".join(keys)]
    lines += ["\t".join(f"{r[k]:.6g}" for k in keys) for r in rows]
    text = "\n".join(lines) + "\n"
    path.write_text(text)
    return text


def cmd_synth(cfg, args):
    v = source_video(cfg)
    out = _outdir(cfg)
    write_video(out / "source.vgt", v)
    if args.ppm:
        write_ppm_frames(out / "frames", v)
    print(f"wrote {out / 'source.vgt'}")


def cmd_protect(cfg, args):
    run = run_protect(cfg)
    if run.violation > 0.0:
        raise StageError("verify", NumericalError(
            f"immunized video breaks the budget by {run.violation:.3g}"))
    out = _outdir(cfg)
    write_video(out / "source.vgt", run.source)
    write_video(out / "immunized.vgt", run.protection.immunized)
    write_video(out / "clean_edit.vgt", run.clean_edit)
    write_video(out / "protected_edit.vgt", run.protected_edit)
    (out / "report.txt").write_text(run.report.to_text())
    meta = {
        "config": cfg.to_dict(),
        "resolution": cfg.resolution,
        "scale_factor": cfg.scale_factor,
        "budget_l2": run.protection.l2,
        "budget_linf": run.protection.linf,
        "stage1_best_iteration": run.anchor.best_iteration,
        "stage1_ball_distance": run.anchor.final_ball_distance,
        "stage2_initial_objective": run.protection.initial_objective,
    }
    (out / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(run.report.to_text())


def cmd_edit(cfg, args):
    comp = build_components(cfg)
    with stage("load"):
        v = load_video(args.input)
    with stage("edit"):
        result = edit(comp.sched, comp.denoiser, v, comp.prompt)
    out = _outdir(cfg)
    write_video(out / "edited.vgt", result)
    print(f"wrote {out / 'edited.vgt'}")


def cmd_evaluate(cfg, args):
    with stage("load"):
        src, imm = load_video(args.source), load_video(args.immunized)
    report = evaluate_pair(cfg, src, imm)
    out = _outdir(cfg)
    (out / "report.txt").write_text(report.to_text())
    sys.stdout.write(report.to_text())


def cmd_sweep_budget(cfg, args):
    rows = sweep_budget(cfg, args.budgets)
    sys.stdout.write(_write_table(_outdir(cfg) / "sweep_budget.tsv", rows))


def cmd_sweep_lambda(cfg, args):
    rows = sweep_lambda(cfg, args.lambdas)
    sys.stdout.write(_write_table(_outdir(cfg) / "sweep_lambda.tsv", rows))


def cmd_gradcheck(cfg, args):
    results = run_suite(seed=cfg.denoiser.seed, probes=args.probes)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: max relative error {r.max_error:.3e} (tol {r.tolerance:g})")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise StageError("gradcheck", NumericalError(f"{len(failed)} check(s) failed"))


COMMANDS = {
    "synth": cmd_synth,
    "protect": cmd_protect,
    "edit": cmd_edit,
    "evaluate": cmd_evaluate,
    "sweep-budget": cmd_sweep_budget,
    "sweep-lambda": cmd_sweep_lambda,
    "gradcheck": cmd_gradcheck,
}


def _is_numerical(exc):
    return isinstance(exc, (NumericalError, FloatingPointError, ArithmeticError))


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"videoguard: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        kind = "numerical failure" if _is_numerical(exc.cause) else "error"
        print(f"videoguard: {kind} in stage {exc.stage}: {exc.cause}", file=sys.stderr)
        return EXIT_NUMERICAL if _is_numerical(exc.cause) else EXIT_CONFIG
    except OSError as exc:
        print(f"videoguard: I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
