"""Command-line entry point: `python -m app.cli <command> ...`."""
from pathlib import Path
from typing import List, Optional, Sequence
import argparse
import logging
import sys

from app.core.config import settings
from app.core.exceptions import InfeasibleAttackError, WorkbenchError
from app.services.grid import (
    dc_jacobian,
    load_case,
    read_measurements_csv,
    sample_measurements,
    snr_noise_std,
    write_case,
    write_measurements_csv,
)
from app.services.harness import ScenarioRunner, compare_methods, load_scenario
from app.services.observability import affected_states, assess_sets, format_report
from app.services.subspace_attack import (
    estimate_dimension,
    estimate_subspace,
    format_plan,
    framing_attack_full,
    framing_attack_partial,
    parse_plan,
    spectrum_csv,
    unobservable_attack_full,
    unobservable_attack_partial,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _labels(text: Optional[str]) -> Optional[List[str]]:
    if text is None:
        return None
    return [item.strip() for item in text.split(",") if item.strip()]


def _emit(text: str, out: Optional[str]):
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    logger.info(f"Wrote {path}")


def _scenario(path: str, seed: Optional[int], runs: Optional[int]):
    scenario = load_scenario(path)
    update = {}
    if seed is not None:
        update["seed"] = seed
    if runs is not None:
        update["runs"] = runs
    return scenario.model_copy(update=update) if update else scenario


def cmd_run(args) -> int:
    runner = ScenarioRunner(_scenario(args.scenario, args.seed, args.runs))
    if args.plan:
        runner.use_plan(parse_plan(Path(args.plan).read_text(), runner.case))
    _emit(runner.run().to_csv(), args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    scenarios = [_scenario(path, args.seed, args.runs) for path in args.scenarios]
    _emit(compare_methods(scenarios).to_csv(), args.out)
    return EXIT_OK


def cmd_check(args) -> int:
    case = load_case(args.case)
    if args.reference is not None:
        case = case.with_reference(args.reference)
    report = assess_sets(case, _labels(args.adversary), _labels(args.observed), _labels(args.critical))
    _emit(format_report(report), args.out)
    return EXIT_OK


def _training_window(args, case, rows):
    if args.samples_in:
        values, labels = read_measurements_csv(args.samples_in)
        if len(values) < args.samples:
            raise ValueError(f"{args.samples_in} holds {len(values)} samples, {args.samples} requested")
        return values[: args.samples], case.sensor_indices(labels), labels
    labels = [case.sensors[r].label for r in rows]
    samples = sample_measurements(case, args.samples, snr_noise_std(case, args.snr_db), seed=args.seed, sensors=rows)
    if args.samples_out:
        write_measurements_csv(samples.values, labels, args.samples_out)
        logger.info(f"Wrote training window to {args.samples_out}")
    return samples.values, rows, labels


def _plan(args, basis):
    adversary, framed = _labels(args.adversary), _labels(args.framed) or []
    if args.observed:
        if framed:
            return framing_attack_partial(basis, adversary, framed=framed)
        return unobservable_attack_partial(basis, adversary)
    if framed:
        return framing_attack_full(basis, adversary, framed)
    return unobservable_attack_full(basis, adversary)


def cmd_train(args) -> int:
    case = load_case(args.case)
    if args.reference is not None:
        case = case.with_reference(args.reference)
    framed = set(case.sensor_indices(_labels(args.framed) or []))
    if args.observed:
        rows = [r for r in case.sensor_indices(_labels(args.observed)) if r not in framed]
    else:
        rows = list(range(case.n_sensors))
    values, rows, labels = _training_window(args, case, rows)

    if args.dim is not None:
        dim = args.dim
    elif args.observed:
        dim = len(affected_states(dc_jacobian(case, rows).entries))
    else:
        dim = case.dc_dimension
    basis = estimate_subspace(values, min(dim, len(rows)), labels=labels, rows=rows)
    logger.info(f"Estimated subspace dimension from the spectrum: {estimate_dimension(basis.singular_values)} "
                f"(using {basis.dimension})")
    _emit(spectrum_csv(basis), args.out)

    if args.plan_out:
        if not args.adversary:
            raise ValueError("--plan-out needs --adversary")
        _emit(format_plan(_plan(args, basis)), args.plan_out)
    return EXIT_OK


def cmd_convert(args) -> int:
    case = load_case(f"pypower:{args.name}")
    write_case(case, args.out)
    logger.info(f"Converted {args.name}: {case.n_buses} buses, {len(case.lines)} lines")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="workbench", description=settings.PROJECT_NAME)
    parser.add_argument("--log-level", default=settings.LOG_LEVEL)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run one scenario file and write its metrics CSV")
    run.add_argument("scenario")
    run.add_argument("--seed", type=int)
    run.add_argument("--runs", type=int)
    run.add_argument("--plan", help="replay a plan file written by train-subspace")
    run.add_argument("--out")
    run.set_defaults(handler=cmd_run)

    compare = sub.add_parser("compare", help="run several scenarios and join their metrics per magnitude")
    compare.add_argument("scenarios", nargs="+")
    compare.add_argument("--seed", type=int)
    compare.add_argument("--runs", type=int)
    compare.add_argument("--out")
    compare.set_defaults(handler=cmd_compare)

    check = sub.add_parser("check-observability", help="observability and feasibility verdicts for sensor sets")
    check.add_argument("case")
    check.add_argument("--adversary", help="comma-separated sensor labels")
    check.add_argument("--observed")
    check.add_argument("--critical")
    check.add_argument("--reference", type=int)
    check.add_argument("--out")
    check.set_defaults(handler=cmd_check)

    train = sub.add_parser("train-subspace", help="estimate the measurement subspace and dump its spectrum")
    train.add_argument("case")
    train.add_argument("samples", type=int)
    train.add_argument("--dim", type=int)
    train.add_argument("--observed")
    train.add_argument("--adversary", help="comma-separated sensor labels to build a plan for")
    train.add_argument("--framed")
    train.add_argument("--reference", type=int)
    train.add_argument("--snr-db", type=float, default=settings.SNR_DB)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--out")
    train.add_argument("--plan-out")
    train.add_argument("--samples-in", help="read the training window from a measurement CSV")
    train.add_argument("--samples-out", help="write the sampled training window as CSV")
    train.set_defaults(handler=cmd_train)

    convert = sub.add_parser("convert-case", help="convert a pypower case into the case-file format")
    convert.add_argument("name")
    convert.add_argument("out")
    convert.set_defaults(handler=cmd_convert)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except InfeasibleAttackError as e:
        logger.error(f"Infeasible attack: {str(e)}")
        return EXIT_INFEASIBLE
    except (WorkbenchError, OSError, ValueError) as e:
        logger.error(f"{args.command} failed: {str(e)}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
