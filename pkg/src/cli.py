"""
Command-line interface: solve, profile and check
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from src.bal.dataset import BaProblem, load_problem, preprocess
from src.bal.synthetic import make_synthetic_problem
from src.core.config import PreprocessConfig, ProfileConfig, RunManifest, SolverConfig
from src.core.errors import BalFormatError, ConfigError, DegenerateProblemError, MissingTraceError
from src.core.logging import get_logger, set_level
from src.evaluation.outputs import save_profile
from src.evaluation.profiles import alpha_grid, performance_profile
from src.evaluation.traces import load_trace
from src.runner import BenchmarkRunner
from src.solvers.equivalence import run_equivalence_check

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2


def _csv_list(raw: Optional[str]) -> Optional[List[str]]:
    if raw is None:
        return None
    return [item.strip() for item in raw.split(",") if item.strip()]


def _synthetic(sizes: str, seed: int) -> BaProblem:
    try:
        n_cameras, n_landmarks = (int(v) for v in sizes.split(","))
    except ValueError:
        raise ConfigError(f"--synthetic expects N_CAMERAS,N_LANDMARKS, got '{sizes}'")
    return make_synthetic_problem(n_cameras, n_landmarks, seed=seed)


def build_manifest(args: argparse.Namespace) -> RunManifest:
    """Manifest from --manifest (if given) with command-line overrides applied"""
    manifest = RunManifest.from_file(args.manifest) if args.manifest else RunManifest()
    base = SolverConfig.from_file(args.config) if args.config else SolverConfig.from_env()
    if manifest.solvers and not args.config:
        base = manifest.solvers[0]
    overrides = dict(
        max_outer_iterations=args.max_iters,
        function_tolerance=args.ftol,
        initial_lambda=args.lambda0,
        cg_max_iterations=args.cg_max,
        huber_delta=args.huber,
        thread_count=args.threads,
        seed=args.seed,
        memory_limit_bytes=args.memory_limit,
    )
    backends = _csv_list(args.backend) or sorted({s.backend for s in manifest.solvers}) or [base.backend]
    precisions = _csv_list(args.precision) or sorted({s.precision for s in manifest.solvers}) or [base.precision]
    manifest.solvers = [
        base.with_overrides(backend=b, precision=p, **overrides) for b in backends for p in precisions
    ]
    if args.problems:
        manifest.problems = list(args.problems)
    if args.out:
        manifest.output_dir = args.out
    if args.seed is not None:
        manifest.seed = args.seed
    pre = manifest.preprocess
    manifest.preprocess = PreprocessConfig(
        sigma=pre.sigma if args.sigma is None else args.sigma,
        seed=pre.seed if args.seed is None else args.seed,
        z_min=pre.z_min if args.zmin is None else args.zmin,
        normalize=pre.normalize,
    )
    if args.synthetic and not manifest.problems:
        manifest.problems = [f"synthetic:{args.synthetic}"]
    return manifest


def cmd_solve(manifest: RunManifest, problems: Optional[Sequence[BaProblem]] = None) -> int:
    """Run every cell of the manifest; 0 if all completed, 1 otherwise"""
    manifest.validate()
    result = BenchmarkRunner(manifest, problems).run()
    for failure in result["failures"]:
        logger.error(f"failed: {failure['problem']} / {failure['solver']}: {failure['error']}")
    logger.info(f"{len(result['traces'])} trace(s) written to {manifest.output_dir}")
    return EXIT_OK if result["success"] else EXIT_PARTIAL


def cmd_profile(trace_dir: str, taus: Sequence[float], out_dir: Optional[str] = None,
                config: Optional[ProfileConfig] = None) -> int:
    """Performance profiles for every tau from the traces under trace_dir"""
    config = config or ProfileConfig(taus=tuple(taus))
    config.validate()
    paths = sorted(Path(trace_dir).rglob("*.csv"))
    traces = []
    for path in paths:
        try:
            traces.append(load_trace(path))
        except (ValueError, KeyError):
            logger.debug(f"Skipping {path}: not a trace file")
    if not traces:
        raise MissingTraceError([(str(trace_dir), "<any solver>")])
    alphas = alpha_grid(config.alpha_points, config.alpha_max)
    written = []
    for tau in config.taus:
        profile = performance_profile(traces, tau, alphas)
        written.extend(save_profile(profile, out_dir or trace_dir))
    logger.info(f"Wrote {len(written)} profile files")
    return EXIT_OK


def cmd_check(problem: BaProblem, lmbda: float = 1e-4, precision: str = "double", huber_delta: float = 1.0) -> int:
    """Equivalence report on the first linearization; 1 if a double-precision check fails"""
    report = run_equivalence_check(problem, lmbda, precision, huber_delta)
    for name, value in report["deviations"].items():
        print(f"{name:26s} {value:.3e}")
    if report["passed"] is None:
        print(f"max deviation {report['max_deviation']:.3e} (single precision, informational)")
        return EXIT_OK
    print(f"max deviation {report['max_deviation']:.3e}: {'PASS' if report['passed'] else 'FAIL'}")
    return EXIT_OK if report["passed"] else EXIT_PARTIAL


def _add_solver_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="YAML file with SolverConfig fields")
    parser.add_argument("--backend", help="comma list of sqrt_ba, explicit_sc")
    parser.add_argument("--precision", help="comma list of single, double")
    parser.add_argument("--max-iters", type=int, dest="max_iters")
    parser.add_argument("--ftol", type=float)
    parser.add_argument("--lambda0", type=float)
    parser.add_argument("--cg-max", type=int, dest="cg_max")
    parser.add_argument("--huber", type=float)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--sigma", type=float, help="perturbation std")
    parser.add_argument("--zmin", type=float, help="minimum camera-frame depth")
    parser.add_argument("--memory-limit", type=int, dest="memory_limit", help="bytes, 0 = unlimited")
    parser.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqrtba", description="Square-root bundle adjustment benchmarks")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ...")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run problems x solvers and write traces")
    solve.add_argument("problems", nargs="*", help="BAL files (.txt, .bz2, .gz)")
    solve.add_argument("--manifest", help="YAML run manifest")
    solve.add_argument("--synthetic", help="N_CAMERAS,N_LANDMARKS: solve a generated problem")
    _add_solver_flags(solve)

    profile = sub.add_parser("profile", help="performance profiles from a trace directory")
    profile.add_argument("trace_dir")
    profile.add_argument("--taus", default="0.1,0.01,0.001")
    profile.add_argument("--out")

    check = sub.add_parser("check", help="compare QR and Schur complement elimination on one problem")
    check.add_argument("problem", nargs="?")
    check.add_argument("--synthetic", help="N_CAMERAS,N_LANDMARKS")
    check.add_argument("--precision", default="double")
    check.add_argument("--lambda", type=float, default=1e-4, dest="lmbda")
    check.add_argument("--huber", type=float, default=1.0)
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--raw", action="store_true", help="skip preprocessing")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.log_level:
        set_level(args.log_level)
    try:
        if args.command == "solve":
            manifest = build_manifest(args)
            problems = None
            if args.synthetic:
                problems = [preprocess(_synthetic(args.synthetic, manifest.seed), manifest.preprocess)]
            return cmd_solve(manifest, problems)
        if args.command == "profile":
            taus = [float(t) for t in _csv_list(args.taus)]
            return cmd_profile(args.trace_dir, taus, args.out)
        if args.command == "check":
            if args.synthetic:
                problem = _synthetic(args.synthetic, args.seed)
            elif args.problem:
                problem = load_problem(args.problem)
            else:
                raise ConfigError("check needs a problem file or --synthetic")
            if not args.raw:
                problem = preprocess(problem, PreprocessConfig(seed=args.seed))
            return cmd_check(problem, args.lmbda, args.precision, args.huber)
    except MissingTraceError as e:
        logger.error(str(e))
        return EXIT_PARTIAL
    except (ConfigError, BalFormatError, DegenerateProblemError, FileNotFoundError) as e:
        logger.error(str(e))
        return EXIT_CONFIG
    except ValueError as e:
        logger.error(f"Invalid argument: {e}")
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
