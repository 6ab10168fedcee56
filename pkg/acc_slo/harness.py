"""
Experiment Harness
Runs scenarios end to end (profiles included) and compares finished reports
"""

import logging
from collections import defaultdict

from . import settings
from .control import role_for
from .dataplane import Simulation
from .metrics import SAMPLE_PERCENTILES, MetricsReport
from .models import MODE_ARCUS
from .profiler import ProfileKey, ProfileTable, SweepPlan, run_sweep, setting_key
from .validators import ConfigurationError, ProfileMissingError

logger = logging.getLogger(__name__)

COMPARE_SCHEMA = 'acc-slo-compare/1'


def required_combinations(spec):
    """
    Role combinations arcus admission will look up, per accelerator

    Registrations are replayed in timeline order (stops free their slot),
    assuming every flow is admitted.

    Returns:
        dict: acc_id -> sorted list of role tuples
    """
    known = {model.acc_id for model in spec.accelerators}
    timeline = []
    for flow in spec.flows:
        if flow.acc_id not in known:
            continue
        timeline.append((flow.start_cycle, 1, flow.flow_id, flow))
        if flow.stop_cycle is not None:
            timeline.append((flow.stop_cycle, 0, flow.flow_id, flow))

    live = defaultdict(dict)
    combos = defaultdict(set)
    for _cycle, is_start, flow_id, flow in sorted(timeline, key=lambda entry: entry[:3]):
        if not is_start:
            live[flow.acc_id].pop(flow_id, None)
            continue
        live[flow.acc_id][flow_id] = role_for(flow, spec.reference_gbps)
        combos[flow.acc_id].add(tuple(sorted(live[flow.acc_id].values())))
    return {acc_id: sorted(roles) for acc_id, roles in sorted(combos.items())}


def missing_profile_keys(spec, profiles):
    """Keys whose lookup (nearest neighbor included) finds nothing"""
    setting = setting_key(spec.channel, spec.port)
    missing = []
    for acc_id, combos in required_combinations(spec).items():
        for roles in combos:
            if profiles.lookup(acc_id, roles, setting) is None:
                missing.append(ProfileKey(acc_id, roles, setting).as_string())
    return missing


def auto_profile(spec, parallel=True):
    """Profile exactly the combinations the scenario needs"""
    table = ProfileTable()
    accelerators = {model.acc_id: model for model in spec.accelerators}
    for acc_id, combos in required_combinations(spec).items():
        plan = SweepPlan(
            acc_id=acc_id,
            sizes=(), loads=(), flow_counts=(), paths=(),
            system_settings=((spec.channel, spec.port),),
            mixes=tuple(combos),
            run_cycles=settings.PROFILE_RUN_CYCLES,
            reference_gbps=spec.reference_gbps,
            seed=spec.seed,
            cycle_ns=spec.cycle_ns,
        )
        table.merge(run_sweep(plan, accelerators, parallel=parallel))
    return table


def resolve_profiles(spec, profiles=None):
    """
    Profile table for an arcus run: the given table, the scenario's artifact,
    or a fresh sweep of the needed combinations

    Raises:
        ProfileMissingError: an explicit table or artifact lacks needed keys
    """
    if profiles is None and spec.profile:
        from .storage_backends import ProfileStorage
        profiles = ProfileStorage().load_table(spec.profile)

    if profiles is None:
        logger.info(f'No profile artifact for {spec.name}; profiling the needed combinations')
        return auto_profile(spec)

    missing = missing_profile_keys(spec, profiles)
    if missing:
        raise ProfileMissingError(missing)
    return profiles


def run_scenario(spec, profiles=None, trace=None):
    """
    Run a scenario and return its MetricsReport

    Args:
        spec (ScenarioSpec): scenario to run
        profiles (ProfileTable): arcus capacity profiles (optional)
        trace (list): when given, the event trace lines are appended to it

    Raises:
        ProfileMissingError: arcus mode with a profile table lacking needed keys
    """
    if spec.mode == MODE_ARCUS:
        profiles = resolve_profiles(spec, profiles)

    simulation = Simulation(spec, profiles=profiles, record_trace=trace is not None)
    stats = simulation.run()
    if trace is not None:
        trace.extend(simulation.sim.trace_lines)
    return simulation.report(stats)


def run_many(specs, profiles=None, parallel=True):
    """
    Run independent scenarios, fanned out as Celery tasks

    Returns:
        list: MetricsReport per spec, in input order
    """
    from .serializers import scenario_to_document
    from .tasks import run_scenario_task

    # profile up front so no task waits on a nested sweep
    if profiles is None and any(spec.mode == MODE_ARCUS for spec in specs):
        profiles = ProfileTable()
        for spec in specs:
            if spec.mode == MODE_ARCUS:
                profiles.merge(resolve_profiles(spec))
    profile_document = profiles.to_document() if profiles is not None else None
    signatures = [run_scenario_task.s(scenario_to_document(spec), profile_document) for spec in specs]
    if parallel:
        from celery import group
        results = group(signatures).apply_async().join()
    else:
        results = [signature() for signature in signatures]

    reports = []
    for spec, result in zip(specs, results):
        if result.get('status') != 'success':
            raise ConfigurationError(f"Scenario {spec.name} failed: {result.get('message')}", code='run')
        reports.append(MetricsReport.from_dict(result['report']))
    return reports


def _delta(a, b):
    return {'a': a, 'b': b, 'delta': (b - a) if a is not None and b is not None else None}


def _attainment_field(entry, name):
    attainment = entry.get('attainment')
    return attainment.get(name) if attainment else None


def compare_runs(a, b):
    """
    Per-flow deltas between two reports (b minus a)

    Raises:
        ConfigurationError: the reports cover different flows
    """
    ids_a = sorted(entry['flow_id'] for entry in a.flows)
    ids_b = sorted(entry['flow_id'] for entry in b.flows)
    if ids_a != ids_b:
        raise ConfigurationError(f'Reports cover different flows: {ids_a} vs {ids_b}', code='mismatched-flows')

    rows = []
    for flow_id in ids_a:
        fa, fb = a.flow(flow_id), b.flow(flow_id)
        rows.append({
            'flow_id': flow_id,
            'admitted': [fa['admitted'], fb['admitted']],
            'met': [_attainment_field(fa, 'met'), _attainment_field(fb, 'met')],
            'attainment_ratio': _delta(_attainment_field(fa, 'ratio'), _attainment_field(fb, 'ratio')),
            'delivered_gbps': _delta(fa['delivered_gbps'], fb['delivered_gbps']),
            'delivered_iops': _delta(fa['delivered_iops'], fb['delivered_iops']),
            'slo_percentile_latency_ns': _delta(fa['slo_percentile_latency_ns'], fb['slo_percentile_latency_ns']),
            'sample_deviation': {
                name: _delta(fa['sample_deviation'][name], fb['sample_deviation'][name])
                for name, _p in SAMPLE_PERCENTILES
            },
        })

    return {
        'schema': COMPARE_SCHEMA,
        'a': {'scenario': a.scenario, 'mode': a.mode, 'seed': a.seed},
        'b': {'scenario': b.scenario, 'mode': b.mode, 'seed': b.seed},
        'flows': rows,
        'fairness': {name: _delta(a.fairness.get(name), b.fairness.get(name))
                     for name in ('min_max_ratio', 'jain_index')},
    }


def _fmt(value, spec='.4f'):
    if value is None:
        return '-'
    if isinstance(value, bool):
        return 'yes' if value else 'no'
    return format(value, spec)


def comparison_table(comparison):
    """Plain-text rendering of compare_runs output"""
    names = [name for name, _p in SAMPLE_PERCENTILES]
    header = ['flow', 'met a', 'met b', 'gbps a', 'gbps b', 'd gbps'] + [f'dev {n} a/b' for n in names]
    lines = ['  '.join(header)]
    for row in comparison['flows']:
        cells = [
            str(row['flow_id']),
            _fmt(row['met'][0]),
            _fmt(row['met'][1]),
            _fmt(row['delivered_gbps']['a'], '.3f'),
            _fmt(row['delivered_gbps']['b'], '.3f'),
            _fmt(row['delivered_gbps']['delta'], '+.3f'),
        ]
        for name in names:
            dev = row['sample_deviation'][name]
            cells.append(f"{_fmt(dev['a'], '+.2%')}/{_fmt(dev['b'], '+.2%')}")
        lines.append('  '.join(cells))
    fairness = comparison['fairness']
    lines.append(f"fairness min/max: {_fmt(fairness['min_max_ratio']['a'])} -> "
                 f"{_fmt(fairness['min_max_ratio']['b'])}, jain: {_fmt(fairness['jain_index']['a'])} -> "
                 f"{_fmt(fairness['jain_index']['b'])}")
    return '\n'.join(lines)
