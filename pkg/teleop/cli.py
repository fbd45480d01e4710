"""
Command-line entry point: one subcommand per pipeline stage.

    synth -> fit-shape -> retarget -> train-privileged -> filter -> train -> eval -> plot

Every stage prints a one-line JSON summary on stdout. Failures print
{"error", "message", "exit_code"} on stderr and exit with 2 (config),
3 (input) or 4 (divergence).
"""
import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from teleop.config import OBS_MODES, ConfigError, PipelineConfig, config_hash, load_pipeline_config, settings
from teleop.dynamics import SimulationDivergedError, SimulationError
from teleop.kinematics import HumanoidModel, HumanSkeleton, KinematicsError, load_humanoid
from teleop.metrics import MetricsError, ReferenceReplayTracker, evaluate_policy
from teleop.motiondata import (
    RETARGETED_STATUSES, DatasetError, MotionDataset, MotionFormatError, MotionValidationError, Status, write_suite,
)
from teleop.plotting import plot_report
from teleop.policy import CheckpointError, ObservationError, PolicyParams, load_checkpoint
from teleop.ppo import TrainingDivergedError, TrainingError, train
from teleop.reports import ReportValidationError, report_row, write_report, write_sequence_detail
from teleop.retarget import RetargetDivergenceError, ShapeFitError, fit_shape
from teleop.rewards import RewardShapeError
from teleop.schemas import ShapeDoc
from teleop.sim2data import FilterError, filter_dataset, load_candidates, train_privileged
from teleop.terrain import TerrainError
from worker.pool import resolve_threads, run_jobs
from worker.tasks import retarget_job

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
SHAPE_FORMAT = "teleop-shape"
SHAPE_VERSION = 1

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_DIVERGED = 4


class UsageError(Exception):
    """Custom exception for command-line usage errors"""
    pass


CONFIG_ERRORS = (ConfigError, UsageError)
DIVERGENCE_ERRORS = (RetargetDivergenceError, SimulationDivergedError, TrainingDivergedError, ShapeFitError)
INPUT_ERRORS = (
    MotionFormatError, MotionValidationError, DatasetError, KinematicsError, SimulationError, TerrainError,
    RewardShapeError, ObservationError, CheckpointError, TrainingError, FilterError, MetricsError,
    ReportValidationError, FileNotFoundError,
)


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, CONFIG_ERRORS):
        return EXIT_CONFIG
    if isinstance(error, DIVERGENCE_ERRORS):
        return EXIT_DIVERGED
    if isinstance(error, INPUT_ERRORS):
        return EXIT_INPUT
    return EXIT_ERROR


class CLIParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting on bad usage"""

    def error(self, message):
        raise UsageError(message)


@dataclass
class StageContext:
    args: argparse.Namespace
    cfg: PipelineConfig
    config_hash: str
    seed: int
    threads: int
    data_root: Path
    _model: Optional[HumanoidModel] = None

    @property
    def model(self) -> HumanoidModel:
        if self._model is None:
            self._model = load_humanoid(self.args.humanoid or settings.humanoid_config)
        return self._model


def _emit(result: Dict) -> None:
    print(json.dumps(result, sort_keys=True, default=str))


# ---------------------------------------------------------------------------
# Shape file
# ---------------------------------------------------------------------------

def save_shape(report, path, chash: str = "") -> None:
    doc = {
        "format": SHAPE_FORMAT,
        "version": SHAPE_VERSION,
        "beta": [float(b) for b in report.beta_prime],
        "initial_error": float(report.initial_error),
        "final_error": float(report.final_error),
        "iterations": int(report.iterations),
        "config_hash": chash,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_shape(path) -> np.ndarray:
    """
    Raises:
        MotionFormatError: If the shape file is missing or invalid
    """
    path = Path(path)
    try:
        doc = ShapeDoc(**json.loads(path.read_text()))
    except OSError as e:
        raise MotionFormatError(f"Cannot read shape file {path}: {str(e)}") from e
    except json.JSONDecodeError as e:
        raise MotionFormatError(f"{path} line {e.lineno}: {e.msg}") from e
    except (ValidationError, TypeError) as e:
        raise MotionFormatError(f"Invalid shape file {path}: {str(e)}") from e
    return np.array(doc.beta)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def cmd_synth(ctx: StageContext) -> Dict:
    args, cfg = ctx.args, ctx.cfg
    out = Path(args.out) if args.out else ctx.data_root / "raw"
    suite = args.suite or cfg.motion.suite
    duration = args.duration or cfg.motion.synth_duration_s
    dataset = write_suite(suite, out, duration, cfg.motion.synth_fps, seed_offset=ctx.seed,
                          config_hash=ctx.config_hash)
    return {"stage": "synth", "suite": suite, "sequences": len(dataset), "manifest": str(dataset.manifest_path)}


def cmd_fit_shape(ctx: StageContext) -> Dict:
    args, cfg = ctx.args, ctx.cfg
    out = Path(args.out) if args.out else ctx.data_root / "shape.json"
    iters = args.iters if args.iters is not None else cfg.retarget.shape_iters
    report = fit_shape(HumanSkeleton.default(), ctx.model, cfg.retarget.shape_lr, iters)
    save_shape(report, out, ctx.config_hash)
    return {"stage": "fit-shape", "shape": str(out), "initial_error": report.initial_error,
            "final_error": report.final_error}


def write_rejection_report(results: List[Dict], path) -> None:
    """JSON lines {id, rule, frame, value}, one per rejected sequence in id order"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        json.dumps({k: r[k] for k in ("id", "rule", "frame", "value")}, sort_keys=True, separators=(",", ":"))
        for r in sorted(results, key=lambda r: r["id"]) if r["status"] == Status.REJECTED_HEURISTIC.value
    ]
    path.write_text("".join(line + "\n" for line in lines))


def cmd_retarget(ctx: StageContext) -> Dict:
    args, cfg = ctx.args, ctx.cfg
    raw = MotionDataset.load(args.input or ctx.data_root / "raw")
    out = Path(args.out) if args.out else ctx.data_root / "retargeted"
    skeleton = HumanSkeleton.default()
    if args.shape:
        beta_prime = load_shape(args.shape)
    else:
        beta_prime = fit_shape(skeleton, ctx.model, cfg.retarget.shape_lr, cfg.retarget.shape_iters).beta_prime

    jobs = [
        (seq_id, raw.path_of(seq_id), out / f"{seq_id}.json", beta_prime, ctx.model, skeleton, cfg.retarget,
         cfg.motion.target_fps, ctx.config_hash, not args.no_heuristics)
        for seq_id in raw.with_status(Status.RAW)
    ]
    results = run_jobs(retarget_job, jobs, ctx.threads, label="retarget jobs")

    dataset = MotionDataset.create(out, config_hash=ctx.config_hash)
    for result in results:
        dataset.add(result["id"], result["filename"], Status.RAW)
        dataset.set_status(result["id"], Status.RETARGETED)
        if result["status"] == Status.REJECTED_HEURISTIC.value:
            dataset.set_status(result["id"], Status.REJECTED_HEURISTIC,
                               reason=f"{result['rule']} at frame {result['frame']}")
    dataset.save()

    report = Path(args.report) if args.report else out / "rejections.jsonl"
    write_rejection_report(results, report)
    rejected = sum(r["status"] == Status.REJECTED_HEURISTIC.value for r in results)
    return {"stage": "retarget", "sequences": len(results), "rejected": rejected,
            "manifest": str(dataset.manifest_path), "report": str(report)}


def _eval_fn(pairs, ctx: StageContext) -> Callable[[PolicyParams], Dict]:
    def evaluate(params: PolicyParams) -> Dict:
        split = evaluate_policy(params, pairs, ctx.model, ctx.cfg, seed=ctx.seed, threads=ctx.threads).split("all")
        return {"succ": split.succ, "g_mpjpe": split.g_mpjpe}
    return evaluate


def cmd_train_privileged(ctx: StageContext) -> Dict:
    args = ctx.args
    dataset = MotionDataset.load(args.data or ctx.data_root / "retargeted")
    out = Path(args.out) if args.out else ctx.data_root / "policies" / "privileged"
    pairs = load_candidates(dataset, ctx.model)
    result = train_privileged([m for _, m in pairs], ctx.cfg, ctx.model, seed=ctx.seed, out_dir=out,
                              eval_fn=_eval_fn(pairs, ctx))
    return {"stage": "train-privileged", "policy": str(out / "policy.npz"), "sequences": len(pairs),
            "iterations": len(result.log)}


def cmd_filter(ctx: StageContext) -> Dict:
    args = ctx.args
    policy = load_checkpoint(args.policy or ctx.data_root / "policies" / "privileged" / "policy.npz")
    dataset = MotionDataset.load(args.data or ctx.data_root / "retargeted")
    report = Path(args.report) if args.report else dataset.root / "filter_report.jsonl"
    clean, decisions = filter_dataset(policy, dataset, ctx.model, ctx.cfg, trials_per_seq=args.trials,
                                      threads=ctx.threads, report_path=report)
    return {"stage": "filter", "clean": len(clean), "rejected": len(decisions) - len(clean),
            "manifest": str(dataset.manifest_path), "report": str(report)}


def training_ids(dataset: MotionDataset, include_unfiltered: bool, fraction: float, seed: int) -> List[str]:
    """Clean ids (or every retargeted id), optionally a random fraction of them"""
    statuses = RETARGETED_STATUSES if include_unfiltered else (Status.CLEAN,)
    ids = dataset.with_status(*statuses)
    if fraction != 1.0:
        ids = dataset.subset(fraction, np.random.default_rng(seed), ids)
    return ids


def cmd_train(ctx: StageContext) -> Dict:
    args, tcfg = ctx.args, ctx.cfg.train
    dataset = MotionDataset.load(args.data or ctx.data_root / "retargeted")
    obs_mode = args.obs_mode
    dr_enabled = args.dr
    fraction = args.fraction if args.fraction is not None else tcfg.dataset_fraction
    include_unfiltered = args.include_unfiltered or tcfg.include_unfiltered
    out = Path(args.out) if args.out else ctx.data_root / "policies" / obs_mode

    ids = training_ids(dataset, include_unfiltered, fraction, ctx.seed)
    pairs = [(seq_id, m) for seq_id, m in load_candidates(dataset, ctx.model, RETARGETED_STATUSES) if seq_id in ids]
    logger.info(f"Training {obs_mode} on {len(pairs)} sequences (fraction {fraction}, "
                f"{'unfiltered' if include_unfiltered else 'clean only'})")
    result = train([m for _, m in pairs], obs_mode, dr_enabled, ctx.cfg, ctx.model, seed=ctx.seed, out_dir=out,
                   eval_fn=_eval_fn(pairs, ctx))
    return {"stage": "train", "obs_mode": obs_mode, "dr": dr_enabled, "policy": str(out / "policy.npz"),
            "sequences": len(pairs), "iterations": len(result.log)}


def cmd_eval(ctx: StageContext) -> Dict:
    args = ctx.args
    dataset = MotionDataset.load(args.data or ctx.data_root / "retargeted")
    statuses = (Status.CLEAN,) if args.split == "clean" else RETARGETED_STATUSES
    pairs = load_candidates(dataset, ctx.model, statuses)

    if args.oracle:
        tracker, state_dim, sim2real, method = ReferenceReplayTracker(), 0, False, args.method or "reference"
    else:
        if not args.policy:
            raise UsageError("eval needs --policy unless --oracle is given")
        tracker = load_checkpoint(args.policy)
        state_dim = tracker.obs_dim
        sim2real = bool(tracker.metadata.get("dr_enabled", False))
        method = args.method or tracker.obs_mode

    report = evaluate_policy(tracker, pairs, ctx.model, ctx.cfg, episodes_per_seq=args.episodes, method=method,
                             expected_mode=args.obs_mode, seed=ctx.seed, threads=ctx.threads)
    out = Path(args.report) if args.report else ctx.data_root / "reports" / "report.csv"
    row = report_row(report, state_dim, sim2real, ctx.config_hash, fraction=args.fraction)
    rows = write_report([row], out, append=args.append)
    detail = Path(args.detail) if args.detail else out.with_name(f"{out.stem}_{method}.jsonl")
    write_sequence_detail(report, detail)
    return {"stage": "eval", "method": method, "succ": report.succ, "sequences": len(report.rows),
            "report": str(out), "rows": len(rows), "detail": str(detail)}


def cmd_plot(ctx: StageContext) -> Dict:
    args = ctx.args
    report = Path(args.report) if args.report else ctx.data_root / "reports" / "report.csv"
    out = Path(args.out) if args.out else report.parent / "plots"
    files = plot_report(report, out, ctx.cfg.plot)
    return {"stage": "plot", "files": [str(f) for f in files]}


def cmd_validate_config(ctx: StageContext) -> Dict:
    model = ctx.model
    return {"stage": "validate-config", "config_hash": ctx.config_hash, "humanoid": model.name,
            "num_dof": model.num_dof, "num_links": model.num_links}


COMMANDS = {
    "synth": cmd_synth,
    "fit-shape": cmd_fit_shape,
    "retarget": cmd_retarget,
    "train-privileged": cmd_train_privileged,
    "filter": cmd_filter,
    "train": cmd_train,
    "eval": cmd_eval,
    "plot": cmd_plot,
    "validate-config": cmd_validate_config,
}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> CLIParser:
    common = CLIParser(add_help=False)
    common.add_argument("--config", default=None,
                        help="Pipeline config YAML (default: TELEOP_CONFIG_PATH or config/default.yaml)")
    common.add_argument("--seed", type=int, default=None, help="Overrides the config seed")
    common.add_argument("--threads", type=int, default=None, help="Worker cap (default: TELEOP_THREADS)")
    common.add_argument("--humanoid", default=None, help="Humanoid model YAML")
    common.add_argument("--log-level", default=None, help="Logging level (default: TELEOP_LOG_LEVEL)")

    parser = CLIParser(prog="teleop", description="Human-to-humanoid motion tracking pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="Write a synthetic motion suite")
    p.add_argument("--suite", choices=["default", "feasible", "extended"], default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--duration", type=float, default=None, help="Seconds per sequence")

    p = sub.add_parser("fit-shape", parents=[common], help="Fit the human shape to the humanoid")
    p.add_argument("--out", default=None)
    p.add_argument("--iters", type=int, default=None)

    p = sub.add_parser("retarget", parents=[common], help="Retarget raw motions to the humanoid")
    p.add_argument("--in", dest="input", default=None, help="Raw dataset directory or manifest")
    p.add_argument("--out", default=None)
    p.add_argument("--shape", default=None, help="Shape file from fit-shape (fitted on the fly if omitted)")
    p.add_argument("--report", default=None, help="Rejection report (JSON lines)")
    p.add_argument("--no-heuristics", action="store_true", help="Keep every retargeted sequence")

    p = sub.add_parser("train-privileged", parents=[common], help="Train the privileged filtering policy")
    p.add_argument("--data", default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("filter", parents=[common], help="Sim-to-data filtering with a privileged policy")
    p.add_argument("--policy", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--report", default=None)

    p = sub.add_parser("train", parents=[common], help="Train a tracking policy")
    p.add_argument("--data", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--obs-mode", choices=OBS_MODES, default="deploy")
    p.add_argument("--dr", action=argparse.BooleanOptionalAction, default=True,
                   help="Domain randomization (default: on)")
    p.add_argument("--fraction", type=float, default=None, help="Fraction of the training set to use")
    p.add_argument("--include-unfiltered", action="store_true",
                   help="Train on every retargeted sequence, ignoring the sim-to-data verdict")

    p = sub.add_parser("eval", parents=[common], help="Evaluate a policy and write a report row")
    p.add_argument("--policy", default=None)
    p.add_argument("--oracle", action="store_true", help="Evaluate the reference replay tracker instead")
    p.add_argument("--data", default=None)
    p.add_argument("--split", choices=["retargeted", "clean"], default="retargeted")
    p.add_argument("--report", default=None)
    p.add_argument("--detail", default=None, help="Per-sequence JSON lines")
    p.add_argument("--method", default=None)
    p.add_argument("--obs-mode", choices=OBS_MODES, default=None, help="Fail unless the policy uses this mode")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--fraction", type=float, default=None, help="Training-set fraction column")
    p.add_argument("--append", action="store_true", help="Add the row to an existing report")

    p = sub.add_parser("plot", parents=[common], help="Render report figures and summary")
    p.add_argument("--report", default=None)
    p.add_argument("--out", default=None)

    sub.add_parser("validate-config", parents=[common], help="Validate the pipeline and humanoid configs")
    return parser


def _context(args: argparse.Namespace) -> StageContext:
    cfg = load_pipeline_config(args.config or settings.config_path)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    return StageContext(
        args=args,
        cfg=cfg,
        config_hash=config_hash(cfg),
        seed=cfg.seed,
        threads=resolve_threads(args.threads),
        data_root=Path(settings.data_root),
    )


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and return its exit code"""
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    except UsageError as e:
        return _fail(e)

    logging.basicConfig(level=(args.log_level or settings.log_level).upper(), format=LOG_FORMAT)
    try:
        ctx = _context(args)
        result = COMMANDS[args.command](ctx)
    except Exception as e:
        return _fail(e)
    _emit(result)
    return EXIT_OK


def _fail(error: BaseException) -> int:
    code = exit_code_for(error)
    if code == EXIT_ERROR:
        logger.exception(f"Unexpected error: {str(error)}")
    else:
        logger.error(f"{type(error).__name__}: {str(error)}")
    report = {"error": type(error).__name__, "message": str(error), "exit_code": code}
    print(json.dumps(report, sort_keys=True), file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run())
