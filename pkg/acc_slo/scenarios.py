"""
Scenario Library
Shipped scenario documents (acc_slo/scenarios/*.json) and the accelerator
fixtures they reference by name
"""

import copy
import json
import logging
import os
from dataclasses import replace
from functools import lru_cache

from .models import FlowSpec, SloTarget
from .serializers import scenario_from_document
from .validators import ConfigurationError

logger = logging.getLogger(__name__)

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'scenarios')
FIXTURE_FILE = 'accelerators.json'

# VM2 loads swept by the two-tenant reproductions
VM2_LOADS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


def _read_json(path):
    with open(path, encoding='utf-8') as handle:
        return json.load(handle)


@lru_cache(maxsize=None)
def _fixtures():
    return _read_json(os.path.join(SCENARIO_DIR, FIXTURE_FILE))


def accelerator_fixture(name):
    """Accelerator document shipped under name"""
    fixtures = _fixtures()
    if name not in fixtures:
        raise ConfigurationError(f'Unknown accelerator fixture {name!r}', code='unknown-fixture')
    return copy.deepcopy(fixtures[name])


def fixture_names():
    return sorted(_fixtures())


def library_names():
    return sorted(
        name[:-len('.json')] for name in os.listdir(SCENARIO_DIR)
        if name.endswith('.json') and name != FIXTURE_FILE
    )


def resolve_fixtures(document):
    """
    Replace accelerator references with fixture documents

    An entry may be a fixture name, or {"fixture": name, ...overrides}
    (typically a new acc_id for a second copy of the same model).
    """
    document = copy.deepcopy(document)
    resolved = []
    for entry in document.get('accelerators', []):
        if isinstance(entry, str):
            resolved.append(accelerator_fixture(entry))
        elif isinstance(entry, dict) and 'fixture' in entry:
            overrides = {key: value for key, value in entry.items() if key != 'fixture'}
            resolved.append({**accelerator_fixture(entry['fixture']), **overrides})
        else:
            resolved.append(entry)
    document['accelerators'] = resolved
    return document


def load_document(name_or_path):
    """
    Scenario document from a file path or a library name, fixtures resolved

    Raises:
        ConfigurationError: neither a readable file nor a library entry
    """
    if os.path.isfile(name_or_path):
        path = name_or_path
    elif name_or_path in library_names():
        path = os.path.join(SCENARIO_DIR, f'{name_or_path}.json')
    else:
        raise ConfigurationError(f'No scenario file or library entry named {name_or_path!r}', code='unknown-scenario')

    try:
        document = _read_json(path)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f'{path} is not valid JSON: {e}', code='invalid-document')
    return resolve_fixtures(document)


def load_scenario(name_or_path, **overrides):
    """Build a ScenarioSpec from a file or library name, then apply overrides"""
    spec = scenario_from_document(load_document(name_or_path))
    return with_overrides(spec, **overrides)


def with_overrides(spec, seed=None, duration_cycles=None, mode=None, loads=None):
    """
    Copy of a scenario with run-time overrides

    Args:
        loads (dict): flow_id -> injection load
    """
    changes = {}
    if seed is not None:
        changes['seed'] = seed
    if duration_cycles is not None:
        changes['duration_cycles'] = duration_cycles
    if mode is not None:
        changes['mode'] = mode
    if loads:
        unknown = sorted(set(loads) - {flow.flow_id for flow in spec.flows})
        if unknown:
            raise ConfigurationError(f'Load override for unknown flows {unknown}', code='unknown-flow')
        changes['flows'] = tuple(
            replace(flow, pattern=replace(flow.pattern, load=loads[flow.flow_id])) if flow.flow_id in loads else flow
            for flow in spec.flows
        )
    return replace(spec, **changes) if changes else spec


def load_sweep(name_or_path, flow_id=2, loads=VM2_LOADS, **overrides):
    """One scenario per load of flow_id (the VM2 sweep of the two-tenant cases)"""
    base = load_scenario(name_or_path, **overrides)
    return [with_overrides(base, loads={flow_id: load}) for load in loads]


def scale_scenario(num_flows, **overrides):
    """
    The scalability template with its offered load split over num_flows
    equal flows, each holding an equal share of the SLO
    """
    if num_flows < 1:
        raise ConfigurationError('Need at least one flow', code='flow-count')
    base = load_scenario('scale-1-to-16-flows', **overrides)
    template = base.flows[0]
    flows = tuple(
        FlowSpec(
            flow_id=index,
            vm_id=f'vm{index}',
            acc_id=template.acc_id,
            path=template.path,
            pattern=replace(template.pattern, load=template.pattern.load / num_flows),
            slo=SloTarget(template.slo.metric, template.slo.value / num_flows, template.slo.percentile,
                          template.slo.window_requests),
        )
        for index in range(1, num_flows + 1)
    )
    return replace(base, flows=flows, name=f'{base.name}-{num_flows}')
