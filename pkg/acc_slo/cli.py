"""
Command Line Front End
python -m acc_slo {run,profile,compare,validate,list}
"""

import argparse
import json
import logging
import os
import sys

from django.core.exceptions import ValidationError

from . import settings
from .harness import compare_runs, comparison_table, run_many, run_scenario
from .models import MODE_CHOICES
from .profiler import run_sweep
from .scenarios import (
    accelerator_fixture,
    library_names,
    load_document,
    load_scenario,
    resolve_fixtures,
    with_overrides,
)
from .serializers import ScenarioSerializer, accelerator_from_document, format_errors, sweep_plan_from_document
from .storage_backends import ProfileStorage, ReportStorage
from .utils import organize_output_path, us_to_cycles

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1


def parse_load_overrides(values):
    """['2=0.3', ...] -> {2: 0.3}"""
    loads = {}
    for value in values or []:
        flow_id, sep, load = value.partition('=')
        if not sep:
            raise argparse.ArgumentTypeError(f'Expected FLOW_ID=LOAD, got {value!r}')
        loads[int(flow_id)] = float(load)
    return loads


def _print_summary(report):
    for flow in report.flows:
        attainment = flow['attainment']
        if not flow['admitted']:
            status = f"rejected ({flow['reject_reason']})"
        else:
            status = 'met' if attainment and attainment['met'] else 'violated'
        print(f"flow {flow['flow_id']} [{flow['vm_id']} -> {flow['acc_id']}, {flow['path']}]: "
              f"{flow['delivered_gbps']:.3f} Gbps, {flow['delivered_iops']:.0f} IOPS, "
              f"p99 {flow['latency_ns']['p99']} ns, {status}")


def cmd_run(args):
    loads = parse_load_overrides(args.set)
    specs = []
    for name in args.scenario:
        spec = load_scenario(name, seed=args.seed, mode=args.mode, loads=loads)
        if args.duration_us is not None:
            spec = with_overrides(spec, duration_cycles=us_to_cycles(args.duration_us, spec.cycle_ns))
        specs.append(spec)

    profiles = ProfileStorage().load_table(os.path.abspath(args.profile)) if args.profile else None
    storage = ReportStorage(location=args.out) if args.out else ReportStorage()

    if len(specs) == 1:
        trace = [] if args.trace else None
        reports = [run_scenario(specs[0], profiles=profiles, trace=trace)]
    else:
        if args.trace:
            logger.warning('--trace is only recorded for single-scenario runs')
        trace = None
        reports = run_many(specs, profiles=profiles)

    for spec, report in zip(specs, reports):
        directory = organize_output_path('', spec.name, spec.mode, spec.seed)
        written = storage.save_report(directory, report, trace_lines=trace)
        print(f"{spec.name} ({spec.mode}, seed {spec.seed}): {written['report.json']}")
        _print_summary(report)
    return EXIT_OK


def cmd_profile(args):
    with open(args.plan, encoding='utf-8') as handle:
        document = resolve_fixtures(json.load(handle))
    if args.seed is not None:
        document['seed'] = args.seed
    plan, accelerators = sweep_plan_from_document(document)
    if plan.acc_id not in accelerators:
        accelerators[plan.acc_id] = accelerator_from_document(accelerator_fixture(plan.acc_id))

    out = os.path.abspath(args.out) if args.out else ProfileStorage().path(f'{plan.acc_id}.json')
    table = run_sweep(plan, accelerators, artifact_path=out)
    print(f'{len(table)} profile entries for {plan.acc_id} written to {out}')
    return EXIT_OK


def cmd_compare(args):
    comparison = compare_runs(_load_report(args.report_a), _load_report(args.report_b))
    print(comparison_table(comparison))
    if args.out:
        storage, name = ReportStorage().at(os.path.abspath(args.out))
        storage.save_document(name, comparison)
    return EXIT_OK


def _load_report(path):
    storage, name = ReportStorage().at(os.path.abspath(path))
    return storage.load_report(name)


def cmd_validate(args):
    document = load_document(args.scenario)
    serializer = ScenarioSerializer(data=document)
    if serializer.is_valid():
        print('OK')
        return EXIT_OK
    print(format_errors(serializer.errors))
    return EXIT_CONFIG


def cmd_list(_args):
    for name in library_names():
        print(name)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog='acc_slo', description='Accelerator SLO simulator')
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help='Run one or more scenarios')
    run.add_argument('scenario', nargs='+', help='Scenario file or library name')
    run.add_argument('--seed', type=int, default=None)
    run.add_argument('--duration-us', type=float, default=None)
    run.add_argument('--mode', default=None, choices=[mode for mode, _label in MODE_CHOICES])
    run.add_argument('--profile', default=None, help='Profile artifact for arcus admission')
    run.add_argument('--out', default=None, help=f'Output root (default {settings.OUTPUT_DIR})')
    run.add_argument('--trace', action='store_true', help='Write trace.log')
    run.add_argument('--set', action='append', metavar='FLOW_ID=LOAD', help='Override a flow load')
    run.set_defaults(handler=cmd_run)

    profile = sub.add_parser('profile', help='Run an offline profiling sweep')
    profile.add_argument('plan', help='Sweep plan document')
    profile.add_argument('--out', default=None, help=f'Artifact path (default {settings.PROFILE_DIR}/<acc>.json)')
    profile.add_argument('--seed', type=int, default=None)
    profile.set_defaults(handler=cmd_profile)

    compare = sub.add_parser('compare', help='Compare two run reports')
    compare.add_argument('report_a')
    compare.add_argument('report_b')
    compare.add_argument('--out', default=None, help='Write the comparison document here')
    compare.set_defaults(handler=cmd_compare)

    validate = sub.add_parser('validate', help='Validate a scenario document')
    validate.add_argument('scenario')
    validate.set_defaults(handler=cmd_validate)

    listing = sub.add_parser('list', help='List shipped scenarios')
    listing.set_defaults(handler=cmd_list)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=settings.LOG_LEVEL, format='%(asctime)s %(levelname)s %(name)s: %(message)s')

    try:
        return args.handler(args)
    except argparse.ArgumentTypeError as e:
        parser.error(str(e))
    except ValidationError as e:
        logger.error('; '.join(e.messages))
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f'{type(e).__name__}: {e}')
        return EXIT_CONFIG


if __name__ == '__main__':
    sys.exit(main())
