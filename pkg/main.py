"""Main entry point for the SHSR toolkit."""

import argparse
import itertools
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import pandas as pd

from baselines import ArrParams, KnnArrPolicy, RandomEliminationPolicy, chance_of_keeping_optimal
from config import Config
from errors import InvalidValue, ShsrError
from evaluation import IdentityPolicy, ShsrPolicy, sweep
from metafeatures import (CLASSIFICATION, REGRESSION, extract_all, load_tabular_dataset, meta_features_csv,
                          read_meta_features)
from reports import RunManifest, atomic_write_text, input_digests, json_text, write_evaluation
from runs import GroupCatalog, build_matrices, init_active, load_run_records
from shsr import apply_filter, describe_sequence, fit_shsr, kept_configurations, load_sequence, save_sequence
from version import get_version_string, print_version_info

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


def setup_logging(verbose: bool = False):
    """Log to stderr and, when SHSR_LOG_FILE is set, to that file."""
    handlers = [logging.StreamHandler()]
    if Config.LOG_FILE:
        handlers.append(logging.FileHandler(Config.LOG_FILE))
    logging.basicConfig(
        level=logging.DEBUG if verbose else Config.LOG_LEVEL,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
    )


class UsageError(Exception):
    """Raised instead of exiting when the command line does not parse."""


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _float_list(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> List[int]:
    try:
        return [int(item) for item in text.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _add_corpus_args(parser: argparse.ArgumentParser):
    parser.add_argument('--runs', required=True, help='Run-record CSV')
    parser.add_argument('--meta', required=True, help='Meta-feature CSV')
    parser.add_argument('--seed', type=int, default=Config.SEED, help=f'Random seed (default: {Config.SEED})')


def _add_protocol_args(parser: argparse.ArgumentParser):
    parser.add_argument('--repeats', type=int, default=Config.REPEATS,
                        help=f'Holdout repeats (default: {Config.REPEATS})')
    parser.add_argument('--test-frac', type=float, default=Config.TEST_FRACTION,
                        help=f'Fraction of datasets held out (default: {Config.TEST_FRACTION})')
    parser.add_argument('-o', '--out', required=True, help='Report JSON; plot and result CSVs are written next to it')


def build_parser() -> CliParser:
    parser = CliParser(prog='shsr', description='Sequential hyper-parameter space reduction toolkit')
    parser.add_argument('--version', action='version', version=get_version_string())
    parser.add_argument('-v', '--verbose', action='store_true', help='Debug logging')

    subparsers = parser.add_subparsers(dest='command', parser_class=CliParser, help='Available commands')

    subparsers.add_parser('version', help='Show detailed version information and resolved settings')

    extract_parser = subparsers.add_parser('extract-meta', help='Compute meta-features of dataset CSVs')
    extract_parser.add_argument('--data', nargs='+', required=True, help='Dataset CSV files (id = file stem)')
    extract_parser.add_argument('--target', help='Target column name')
    extract_parser.add_argument('--task', choices=[CLASSIFICATION, REGRESSION], help='Task kind of the target')
    extract_parser.add_argument('--categorical', nargs='*', default=[], help='Columns to treat as categorical')
    extract_parser.add_argument('--seed', type=int, default=Config.SEED, help=f'Random seed (default: {Config.SEED})')
    extract_parser.add_argument('-o', '--out', required=True, help='Meta-feature CSV to write')

    fit_parser = subparsers.add_parser('fit', help='Fit a filter sequence')
    _add_corpus_args(fit_parser)
    fit_parser.add_argument('--threshold', type=float, default=Config.THRESHOLD,
                            help=f'Tolerance threshold T (default: {Config.THRESHOLD})')
    fit_parser.add_argument('--workers', type=int, default=Config.FIT_WORKERS, help='Parallel group fits')
    fit_parser.add_argument('-o', '--out', required=True, help='Model JSON to write')

    apply_parser = subparsers.add_parser('apply', help='Apply a filter sequence to new datasets')
    apply_parser.add_argument('--model', required=True, help='Model JSON from fit')
    apply_parser.add_argument('--meta', required=True, help='Meta-feature CSV of the new datasets')
    apply_parser.add_argument('-o', '--out', help='Optional decisions JSON')

    show_parser = subparsers.add_parser('show', help='Print the rules of a filter sequence')
    show_parser.add_argument('--model', required=True, help='Model JSON from fit')

    evaluate_parser = subparsers.add_parser('evaluate', help='Holdout evaluation of SHSR')
    _add_corpus_args(evaluate_parser)
    evaluate_parser.add_argument('--threshold', type=_float_list, default=list(Config.THRESHOLDS),
                                 help='Comma-separated thresholds (default: the sweep preset)')
    evaluate_parser.add_argument('--frac', type=_float_list, default=[1.0],
                                 help='Comma-separated training subsample fractions (default: 1.0)')
    evaluate_parser.add_argument('--partial-sweep', action='store_true',
                                 help='Use the configured subsample fractions (SHSR_SUBSAMPLE_FRACTIONS) for --frac')
    evaluate_parser.add_argument('--with-identity', action='store_true', help='Also report the keep-everything policy')
    evaluate_parser.add_argument('--workers', type=int, default=Config.FIT_WORKERS, help='Parallel group fits')
    _add_protocol_args(evaluate_parser)

    baseline_parser = subparsers.add_parser('baseline', help='Evaluate a comparison policy')
    baselines = baseline_parser.add_subparsers(dest='baseline', parser_class=CliParser)

    random_parser = baselines.add_parser('random', help='Random configuration elimination')
    _add_corpus_args(random_parser)
    random_parser.add_argument('--frac', type=_float_list, default=list(Config.RANDOM_FRACTIONS),
                               help='Comma-separated elimination fractions (default: the preset)')
    _add_protocol_args(random_parser)

    knn_parser = baselines.add_parser('knn', help='KNN + adjusted ratio of ratios ranking')
    _add_corpus_args(knn_parser)
    knn_parser.add_argument('--neighbors', type=_int_list, default=list(Config.KNN_NEIGHBORS),
                            help='Comma-separated neighbor counts')
    knn_parser.add_argument('--accd', type=_float_list, default=list(Config.KNN_ACC_D),
                            help='Comma-separated AccD values')
    knn_parser.add_argument('--top-m', type=_int_list, help='Comma-separated top-m values (default: task preset)')
    knn_parser.add_argument('--task', choices=[CLASSIFICATION, REGRESSION], default=CLASSIFICATION,
                            help='Selects the top-m preset')
    _add_protocol_args(knn_parser)

    return parser


def _manifest(command: str, args: argparse.Namespace, inputs: Sequence[str]) -> RunManifest:
    parameters = {
        key: value for key, value in vars(args).items()
        if key not in ('command', 'baseline', 'out', 'verbose', 'func') and value is not None
    }
    return RunManifest(command=command, parameters=parameters,
                       input_digests=input_digests(inputs), seed=getattr(args, 'seed', Config.SEED))


def run_extract_meta(args) -> int:
    rows = []
    for path in args.data:
        dataset = load_tabular_dataset(path, target=args.target, task=args.task, categorical=args.categorical)
        logger.info(f"Extracting meta-features for {dataset.name}")
        rows.append(extract_all(dataset, args.seed))

    table = pd.DataFrame(rows)
    table.index = [Path(path).stem for path in args.data]
    if table.index.duplicated().any():
        raise InvalidValue(f"dataset file stems must be unique: {sorted(table.index[table.index.duplicated()])}")

    atomic_write_text(args.out, meta_features_csv(table))
    atomic_write_text(f"{args.out}.manifest.json", json_text(_manifest('extract-meta', args, args.data).to_dict()))
    print(f"Meta-features for {len(table)} datasets written to {args.out}")
    return EXIT_OK


def run_fit(args) -> int:
    records = load_run_records(args.runs)
    meta = read_meta_features(args.meta)
    catalog = GroupCatalog.from_records(records)
    P, E = build_matrices(records, catalog, datasets={record.dataset_id for record in records})
    sequence = fit_shsr(P, E, meta, args.threshold, init_active(P), args.seed,
                        catalog=catalog, workers=args.workers)
    manifest = _manifest('fit', args, [args.runs, args.meta])
    atomic_write_text(args.out, save_sequence(sequence, {'manifest': manifest.to_dict()}))

    order = ', '.join(step.group_id for step in sequence.steps) or '(empty)'
    print(f"Filter sequence: {order}")
    print(f"Model written to {args.out}")
    return EXIT_OK


def run_apply(args) -> int:
    sequence = load_sequence(args.model)
    meta = read_meta_features(args.meta)

    decisions = []
    for dataset_id, row in meta.iterrows():
        decision = apply_filter(sequence, row)
        configs = kept_configurations(decision.kept, sequence.catalog)
        note = ' (safeguard triggered)' if decision.safeguard_triggered else ''
        print(f"{dataset_id}: kept {{{','.join(decision.kept)}}} dropped {{{','.join(decision.dropped)}}}{note}")
        decisions.append({
            'dataset_id': dataset_id,
            'kept_groups': list(decision.kept),
            'dropped_groups': list(decision.dropped),
            'safeguard_triggered': decision.safeguard_triggered,
            'kept_configurations': sorted(configs),
        })

    if args.out:
        manifest = _manifest('apply', args, [args.model, args.meta])
        atomic_write_text(args.out, json_text({'decisions': decisions, 'manifest': manifest.to_dict()}))
    return EXIT_OK


def run_version(args) -> int:
    print_version_info()
    for key, value in Config.get_display_config().items():
        print(f"  {key}: {value}")
    return EXIT_OK


def run_show(args) -> int:
    print(describe_sequence(load_sequence(args.model)))
    return EXIT_OK


def _run_policies(args, command: str, policies, subsamples=(1.0,)) -> int:
    records = load_run_records(args.runs)
    meta = read_meta_features(args.meta)
    reports = sweep(records, meta, policies, repeats=args.repeats, test_fraction=args.test_frac,
                    seed=args.seed, subsamples=subsamples)
    write_evaluation(reports, args.out, _manifest(command, args, [args.runs, args.meta]))

    print(f"{'policy':<10} {'param':<28} {'perf ratio':>18} {'time ratio':>18}")
    for report in reports:
        perf_ci = f"±{report.perf_ci:.4f}" if report.perf_ci is not None else ''
        time_ci = f"±{report.time_ci:.4f}" if report.time_ci is not None else ''
        print(f"{report.policy:<10} {report.param:<28} {report.perf_mean:>10.4f}{perf_ci:>8} "
              f"{report.time_mean:>10.4f}{time_ci:>8}")
    return EXIT_OK


def run_evaluate(args) -> int:
    policies = [ShsrPolicy(threshold, workers=args.workers) for threshold in args.threshold]
    if args.with_identity:
        policies.insert(0, IdentityPolicy())
    subsamples = list(Config.SUBSAMPLE_FRACTIONS) if args.partial_sweep else args.frac
    return _run_policies(args, 'evaluate', policies, subsamples=subsamples)


def run_baseline_random(args) -> int:
    policies = [RandomEliminationPolicy(fraction) for fraction in args.frac]
    print("Chance that random elimination keeps an optimal configuration "
          "(10000 configurations, 9000 removed):")
    for n_optimal in (50, 25):
        chance = chance_of_keeping_optimal(10000, n_optimal, 9000)
        print(f"  {n_optimal} optimal: 1 - {1 - n_optimal / 10000:g}^1000 = {chance:.4%}")
    return _run_policies(args, 'baseline random', policies)


def run_baseline_knn(args) -> int:
    top_m = args.top_m or list(Config.get_top_m(args.task))
    policies = [
        KnnArrPolicy(ArrParams(n_neighbors=n, acc_d=acc_d, top_m=m))
        for n, acc_d, m in itertools.product(args.neighbors, args.accd, top_m)
    ]
    return _run_policies(args, 'baseline knn', policies)


COMMANDS = {
    'extract-meta': run_extract_meta,
    'fit': run_fit,
    'apply': run_apply,
    'show': run_show,
    'version': run_version,
    'evaluate': run_evaluate,
    ('baseline', 'random'): run_baseline_random,
    ('baseline', 'knn'): run_baseline_knn,
}


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; 0 on success, 1 on validation errors, 2 on I/O errors."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"shsr: error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_OK

    setup_logging(args.verbose)
    key = (args.command, args.baseline) if args.command == 'baseline' else args.command
    handler = COMMANDS.get(key)
    if handler is None:
        parser.print_help()
        return EXIT_VALIDATION

    try:
        return handler(args)
    except ShsrError as e:
        logger.error(f"Validation error: {e}")
        return EXIT_VALIDATION
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO


def main():
    """Main entry point."""
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
