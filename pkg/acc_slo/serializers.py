"""
Django REST Framework Serializers for Scenario Documents
Scenario files, sweep plans and profile points are JSON documents; these
serializers validate them and convert them to and from the domain dataclasses
"""

from rest_framework import serializers

from . import settings
from .models import (
    INJECTION_CHOICES,
    MODE_ARCUS,
    MODE_CHOICES,
    PATH_MODE_CHOICES,
    SERVICE_DIST_CHOICES,
    SIZE_DIST_CHOICES,
    SLO_METRIC_CHOICES,
    AcceleratorModel,
    AccPath,
    ChannelConfig,
    ControlConfig,
    EgressRatio,
    FlowSpec,
    PathMode,
    PortConfig,
    ScenarioSpec,
    ServiceTimeDistribution,
    SizeDistribution,
    SloMetric,
    SloTarget,
    TrafficPattern,
)
from .profiler import ProfilePoint, RoleKey, SweepPlan, quantize_load
from .validators import (
    ConfigurationError,
    validate_curve,
    validate_load,
    validate_percentile,
    validate_positive,
    validate_scenario_name,
)


class SizeDistributionSerializer(serializers.Serializer):
    """Serializer for message-size distributions"""

    kind = serializers.ChoiceField(choices=SIZE_DIST_CHOICES, default='fixed')
    size = serializers.IntegerField(min_value=1, required=False)
    low = serializers.IntegerField(min_value=1, required=False)
    high = serializers.IntegerField(min_value=1, required=False)
    small = serializers.IntegerField(min_value=1, required=False)
    large = serializers.IntegerField(min_value=1, required=False)
    p_small = serializers.FloatField(min_value=0, max_value=1, default=0.5)

    REQUIRED = {'fixed': ('size',), 'uniform': ('low', 'high'), 'bimodal': ('small', 'large')}

    def validate(self, attrs):
        missing = [name for name in self.REQUIRED[attrs['kind']] if name not in attrs]
        if missing:
            raise serializers.ValidationError(
                f"{attrs['kind']} distribution needs {', '.join(missing)}")
        if attrs['kind'] == 'uniform' and attrs['low'] > attrs['high']:
            raise serializers.ValidationError('Uniform low must not exceed high')
        return attrs


class TrafficPatternSerializer(serializers.Serializer):
    """Serializer for a flow's injected traffic"""

    msg_size_dist = SizeDistributionSerializer()
    load = serializers.FloatField(validators=[validate_load])
    burstiness = serializers.IntegerField(min_value=1, default=1)
    injection = serializers.ChoiceField(choices=INJECTION_CHOICES, default='poisson')


class SloSerializer(serializers.Serializer):
    metric = serializers.ChoiceField(choices=SLO_METRIC_CHOICES)
    value = serializers.FloatField(validators=[validate_positive])
    percentile = serializers.FloatField(default=0.99, validators=[validate_percentile])
    window_requests = serializers.IntegerField(min_value=1, default=settings.WINDOW_REQUESTS)


class EgressRatioSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=[('proportional', 'Proportional'), ('fixed_output', 'Fixed output')],
                                   default='proportional')
    ratio = serializers.FloatField(default=1.0, validators=[validate_positive])
    fixed_bytes = serializers.IntegerField(min_value=0, default=0)

    def validate(self, attrs):
        if attrs['kind'] == 'fixed_output' and attrs['fixed_bytes'] < 1:
            raise serializers.ValidationError('Fixed output needs fixed_bytes >= 1')
        return attrs


class ServiceTimeSerializer(serializers.Serializer):
    """Serializer for per-message compute latency (cycles)"""

    kind = serializers.ChoiceField(choices=SERVICE_DIST_CHOICES, default='fixed')
    cycles = serializers.IntegerField(min_value=0, default=0)
    low = serializers.IntegerField(min_value=0, default=0)
    high = serializers.IntegerField(min_value=0, default=0)
    small = serializers.IntegerField(min_value=0, default=0)
    large = serializers.IntegerField(min_value=0, default=0)
    p_small = serializers.FloatField(min_value=0, max_value=1, default=0.5)
    mean = serializers.FloatField(min_value=0, default=0.0)

    def validate(self, attrs):
        if attrs['kind'] == 'uniform' and attrs['low'] > attrs['high']:
            raise serializers.ValidationError('Uniform low must not exceed high')
        return attrs


class AcceleratorSerializer(serializers.Serializer):
    """Serializer for accelerator timing models"""

    acc_id = serializers.CharField(max_length=64)
    capacity_curve = serializers.ListField(
        child=serializers.ListField(child=serializers.FloatField(), min_length=2, max_length=2),
        validators=[validate_curve],
    )
    egress_ratio = EgressRatioSerializer(required=False)
    service_time_dist = ServiceTimeSerializer(required=False)
    max_capacity_gbps = serializers.FloatField(required=False, allow_null=True, validators=[validate_positive])

    def validate(self, attrs):
        peak = max(gbps for _size, gbps in attrs['capacity_curve'])
        cap = attrs.get('max_capacity_gbps')
        if cap is not None and peak > cap:
            raise serializers.ValidationError('Capacity curve exceeds max_capacity_gbps')
        return attrs


class FlowSerializer(serializers.Serializer):
    flow_id = serializers.IntegerField(min_value=0)
    vm_id = serializers.CharField(max_length=64)
    acc_id = serializers.CharField(max_length=64)
    path = serializers.ChoiceField(choices=PATH_MODE_CHOICES, default=PathMode.FUNCTION_CALL.value)
    pattern = TrafficPatternSerializer()
    slo = SloSerializer()
    priority = serializers.IntegerField(min_value=0, default=0)
    weight = serializers.IntegerField(min_value=1, default=1)
    start_cycle = serializers.IntegerField(min_value=0, default=0)
    stop_cycle = serializers.IntegerField(min_value=0, required=False, allow_null=True, default=None)

    def validate(self, attrs):
        stop = attrs.get('stop_cycle')
        if stop is not None and stop < attrs['start_cycle']:
            raise serializers.ValidationError(f"Flow {attrs['flow_id']} stops before it starts")
        return attrs


class ChannelSerializer(serializers.Serializer):
    bw_h2d_gbps = serializers.FloatField(default=64.0, validators=[validate_positive])
    bw_d2h_gbps = serializers.FloatField(default=64.0, validators=[validate_positive])
    credits = serializers.IntegerField(min_value=1, default=settings.CREDITS)
    tlp_bytes = serializers.IntegerField(min_value=1, default=settings.TLP_BYTES)
    bw_p2p_gbps = serializers.FloatField(required=False, allow_null=True, default=None)
    tlp_overhead_bytes = serializers.IntegerField(min_value=0, default=0)


class PortSerializer(serializers.Serializer):
    buffer = serializers.IntegerField(min_value=1, default=settings.PORT_BUFFER)
    flow_depth = serializers.IntegerField(min_value=1, default=settings.PORT_BUFFER)
    host_depth = serializers.IntegerField(min_value=1, default=settings.HOST_QUEUE_DEPTH)
    egress_depth = serializers.IntegerField(min_value=1, default=settings.EGRESS_QUEUE_DEPTH)


class ControlSerializer(serializers.Serializer):
    tick_us = serializers.FloatField(default=settings.CONTROL_TICK_US, validators=[validate_positive])
    damping_ticks = serializers.IntegerField(min_value=1, default=settings.VIOLATION_DAMPING_TICKS)
    hysteresis = serializers.FloatField(min_value=0, default=settings.PATH_HYSTERESIS)
    slo_tolerance = serializers.FloatField(min_value=0, max_value=1, default=settings.SLO_TOLERANCE)
    reconfig_latency_cycles = serializers.IntegerField(min_value=0, default=settings.RECONFIG_LATENCY_CYCLES)


class AccPathSerializer(serializers.Serializer):
    path_id = serializers.CharField(max_length=128)
    location = serializers.CharField(max_length=128)
    mode = serializers.ChoiceField(choices=PATH_MODE_CHOICES)


class ScenarioSerializer(serializers.Serializer):
    """
    Serializer for a scenario document

    Validates the flow timeline against the duration, flow id uniqueness,
    accelerator references and the software timer jitter bound.
    """

    name = serializers.CharField(max_length=128, validators=[validate_scenario_name])
    description = serializers.CharField(required=False, allow_blank=True, default='')
    accelerators = AcceleratorSerializer(many=True)
    flows = FlowSerializer(many=True)
    channel = ChannelSerializer(required=False)
    port = PortSerializer(required=False)
    mode = serializers.ChoiceField(choices=MODE_CHOICES, default=MODE_ARCUS)
    seed = serializers.IntegerField(min_value=0, default=1)
    duration_cycles = serializers.IntegerField(min_value=1, default=250_000)
    reference_gbps = serializers.FloatField(default=100.0, validators=[validate_positive])
    cycle_ns = serializers.IntegerField(min_value=1, default=settings.CYCLE_NS)
    acc_paths = serializers.DictField(child=AccPathSerializer(many=True), required=False, default=dict)
    control = ControlSerializer(required=False)
    soft_timer_ns = serializers.IntegerField(min_value=1, default=settings.SOFT_TIMER_NS)
    soft_jitter_ns = serializers.IntegerField(min_value=0, default=settings.SOFT_JITTER_NS)
    profile = serializers.CharField(required=False, allow_null=True, default=None)

    def validate_accelerators(self, value):
        ids = [acc['acc_id'] for acc in value]
        if len(ids) != len(set(ids)):
            raise serializers.ValidationError('Duplicate accelerator ids')
        return value

    def validate_flows(self, value):
        ids = [flow['flow_id'] for flow in value]
        if len(ids) != len(set(ids)):
            raise serializers.ValidationError('Duplicate flow ids')
        return value

    def validate(self, attrs):
        duration = attrs['duration_cycles']
        for flow in attrs['flows']:
            if flow['start_cycle'] > duration:
                raise serializers.ValidationError(
                    f"Flow {flow['flow_id']} starts after the scenario ends ({duration} cycles)")
            if flow['stop_cycle'] is not None and flow['stop_cycle'] > duration:
                raise serializers.ValidationError(
                    f"Flow {flow['flow_id']} stops after the scenario ends ({duration} cycles)")

        # arcus rejects unknown accelerators at admission; baselines cannot run them at all
        known = {acc['acc_id'] for acc in attrs['accelerators']}
        if attrs['mode'] != MODE_ARCUS:
            unknown = sorted({flow['acc_id'] for flow in attrs['flows']} - known)
            if unknown:
                raise serializers.ValidationError(f"Unknown accelerators: {', '.join(unknown)}")

        if 2 * attrs['soft_jitter_ns'] >= attrs['soft_timer_ns']:
            raise serializers.ValidationError('Software timer jitter must be below half the timer period')
        return attrs


class RoleSerializer(serializers.Serializer):
    size = serializers.IntegerField(min_value=1)
    load = serializers.FloatField(validators=[validate_load])
    path = serializers.ChoiceField(choices=PATH_MODE_CHOICES, default=PathMode.FUNCTION_CALL.value)


class SystemSettingSerializer(serializers.Serializer):
    channel = ChannelSerializer(required=False)
    port = PortSerializer(required=False)


class SweepPlanSerializer(serializers.Serializer):
    """Serializer for an offline profiling sweep"""

    acc_id = serializers.CharField(max_length=64)
    accelerators = AcceleratorSerializer(many=True, required=False)
    sizes = serializers.ListField(child=serializers.IntegerField(min_value=1), default=settings.PROFILE_SIZES)
    loads = serializers.ListField(child=serializers.FloatField(validators=[validate_load]),
                                  default=settings.PROFILE_LOADS)
    flow_counts = serializers.ListField(child=serializers.IntegerField(min_value=1), default=[1, 2])
    paths = serializers.ListField(child=serializers.ChoiceField(choices=PATH_MODE_CHOICES),
                                  default=[PathMode.FUNCTION_CALL.value])
    system_settings = SystemSettingSerializer(many=True, required=False)
    mixes = serializers.ListField(child=RoleSerializer(many=True), default=list)
    run_cycles = serializers.IntegerField(min_value=1, default=settings.PROFILE_RUN_CYCLES)
    reference_gbps = serializers.FloatField(default=100.0, validators=[validate_positive])
    seed = serializers.IntegerField(min_value=0, default=1)
    cycle_ns = serializers.IntegerField(min_value=1, default=settings.CYCLE_NS)


class ProfilePointSerializer(serializers.Serializer):
    acc_id = serializers.CharField(max_length=64)
    roles = RoleSerializer(many=True)
    channel = ChannelSerializer(required=False)
    port = PortSerializer(required=False)
    reference_gbps = serializers.FloatField(default=100.0)
    run_cycles = serializers.IntegerField(min_value=1)
    seed = serializers.IntegerField(min_value=0, default=1)
    cycle_ns = serializers.IntegerField(min_value=1, default=settings.CYCLE_NS)


def run_serializer(serializer_class, document, what):
    """
    Validate a document, raising ConfigurationError with the field errors

    Returns:
        dict: validated data
    """
    serializer = serializer_class(data=document)
    if not serializer.is_valid():
        raise ConfigurationError(f'Invalid {what}: {format_errors(serializer.errors)}', code='invalid-document')
    return serializer.validated_data


def format_errors(errors, prefix=''):
    """Flatten DRF's nested error structure into 'path: message' lines"""
    lines = []
    if isinstance(errors, dict):
        for key, value in errors.items():
            lines.extend(format_errors(value, f'{prefix}.{key}' if prefix else str(key)).split('\n'))
    elif isinstance(errors, list):
        for index, value in enumerate(errors):
            if isinstance(value, (dict, list)):
                lines.extend(format_errors(value, f'{prefix}[{index}]').split('\n'))
            else:
                lines.append(f'{prefix or "document"}: {value}')
    else:
        lines.append(f'{prefix or "document"}: {errors}')
    return '\n'.join(line for line in lines if line)


# document -> dataclass

def _size_dist(data):
    return SizeDistribution(**{k: data[k] for k in ('kind', 'size', 'low', 'high', 'small', 'large', 'p_small')
                               if k in data})


def _pattern(data):
    return TrafficPattern(msg_size_dist=_size_dist(data['msg_size_dist']), load=data['load'],
                          burstiness=data['burstiness'], injection=data['injection'])


def _slo(data):
    return SloTarget(metric=SloMetric(data['metric']), value=data['value'], percentile=data['percentile'],
                     window_requests=data['window_requests'])


def _channel(data):
    return ChannelConfig(**data) if data else ChannelConfig()


def _port(data):
    return PortConfig(**data) if data else PortConfig()


def _accelerator(data):
    return AcceleratorModel(
        acc_id=data['acc_id'],
        capacity_curve=tuple((int(size), float(gbps)) for size, gbps in data['capacity_curve']),
        egress_ratio=EgressRatio(**data['egress_ratio']) if data.get('egress_ratio') else EgressRatio(),
        service_time_dist=(ServiceTimeDistribution(**data['service_time_dist'])
                           if data.get('service_time_dist') else ServiceTimeDistribution()),
        max_capacity_gbps=data.get('max_capacity_gbps'),
    )


def _flow(data):
    return FlowSpec(
        flow_id=data['flow_id'],
        vm_id=data['vm_id'],
        acc_id=data['acc_id'],
        path=PathMode(data['path']),
        pattern=_pattern(data['pattern']),
        slo=_slo(data['slo']),
        priority=data['priority'],
        weight=data['weight'],
        start_cycle=data['start_cycle'],
        stop_cycle=data.get('stop_cycle'),
    )


def _role(data):
    return RoleKey(size=data['size'], load=quantize_load(data['load']), path=data['path'])


def accelerator_from_document(document):
    return _accelerator(run_serializer(AcceleratorSerializer, document, 'accelerator'))


def scenario_from_document(document):
    """
    Build a ScenarioSpec from a scenario document

    Raises:
        ConfigurationError: field errors, flattened
    """
    data = run_serializer(ScenarioSerializer, document, 'scenario')
    acc_paths = {
        acc_id: tuple(AccPath(p['path_id'], p['location'], PathMode(p['mode'])) for p in entries)
        for acc_id, entries in data.get('acc_paths', {}).items()
    }
    return ScenarioSpec(
        name=data['name'],
        description=data.get('description', ''),
        accelerators=tuple(_accelerator(acc) for acc in data['accelerators']),
        flows=tuple(sorted((_flow(flow) for flow in data['flows']), key=lambda f: f.flow_id)),
        channel=_channel(data.get('channel')),
        port=_port(data.get('port')),
        mode=data['mode'],
        seed=data['seed'],
        duration_cycles=data['duration_cycles'],
        reference_gbps=data['reference_gbps'],
        cycle_ns=data['cycle_ns'],
        acc_paths=acc_paths,
        control=ControlConfig(**data['control']) if data.get('control') else ControlConfig(),
        soft_timer_ns=data['soft_timer_ns'],
        soft_jitter_ns=data['soft_jitter_ns'],
        profile=data.get('profile'),
    )


def sweep_plan_from_document(document):
    """
    Returns:
        tuple: (SweepPlan, dict of AcceleratorModel embedded in the plan)
    """
    data = run_serializer(SweepPlanSerializer, document, 'sweep plan')
    system_settings = tuple(
        (_channel(entry.get('channel')), _port(entry.get('port'))) for entry in data.get('system_settings') or []
    ) or ((ChannelConfig(), PortConfig()),)
    plan = SweepPlan(
        acc_id=data['acc_id'],
        sizes=tuple(data['sizes']),
        loads=tuple(data['loads']),
        flow_counts=tuple(data['flow_counts']),
        paths=tuple(data['paths']),
        system_settings=system_settings,
        mixes=tuple(tuple(sorted(_role(role) for role in mix)) for mix in data['mixes']),
        run_cycles=data['run_cycles'],
        reference_gbps=data['reference_gbps'],
        seed=data['seed'],
        cycle_ns=data['cycle_ns'],
    )
    accelerators = {acc['acc_id']: _accelerator(acc) for acc in data.get('accelerators') or []}
    return plan, accelerators


def point_from_document(document):
    data = run_serializer(ProfilePointSerializer, document, 'profile point')
    return ProfilePoint(
        acc_id=data['acc_id'],
        roles=tuple(RoleKey(role['size'], role['load'], role['path']) for role in data['roles']),
        channel=_channel(data.get('channel')),
        port=_port(data.get('port')),
        reference_gbps=data['reference_gbps'],
        run_cycles=data['run_cycles'],
        seed=data['seed'],
        cycle_ns=data['cycle_ns'],
    )


# dataclass -> document

def _size_dist_document(dist):
    document = {'kind': dist.kind, 'p_small': dist.p_small}
    for name in SizeDistributionSerializer.REQUIRED[dist.kind]:
        document[name] = getattr(dist, name)
    return document


def _pattern_document(pattern):
    return {
        'msg_size_dist': _size_dist_document(pattern.msg_size_dist),
        'load': pattern.load,
        'burstiness': pattern.burstiness,
        'injection': pattern.injection,
    }


def _slo_document(slo):
    return {'metric': slo.metric.value, 'value': slo.value, 'percentile': slo.percentile,
            'window_requests': slo.window_requests}


def channel_to_document(channel):
    return {
        'bw_h2d_gbps': channel.bw_h2d_gbps,
        'bw_d2h_gbps': channel.bw_d2h_gbps,
        'credits': channel.credits,
        'tlp_bytes': channel.tlp_bytes,
        'bw_p2p_gbps': channel.bw_p2p_gbps,
        'tlp_overhead_bytes': channel.tlp_overhead_bytes,
    }


def port_to_document(port):
    return {'buffer': port.buffer, 'flow_depth': port.flow_depth, 'host_depth': port.host_depth,
            'egress_depth': port.egress_depth}


def accelerator_to_document(model):
    egress = model.egress_ratio
    service = model.service_time_dist
    return {
        'acc_id': model.acc_id,
        'capacity_curve': [[size, gbps] for size, gbps in model.capacity_curve],
        'egress_ratio': {'kind': egress.kind, 'ratio': egress.ratio, 'fixed_bytes': egress.fixed_bytes},
        'service_time_dist': {
            'kind': service.kind, 'cycles': service.cycles, 'low': service.low, 'high': service.high,
            'small': service.small, 'large': service.large, 'p_small': service.p_small, 'mean': service.mean,
        },
        'max_capacity_gbps': model.max_capacity_gbps,
    }


def flow_to_document(flow):
    return {
        'flow_id': flow.flow_id,
        'vm_id': flow.vm_id,
        'acc_id': flow.acc_id,
        'path': flow.path.value,
        'pattern': _pattern_document(flow.pattern),
        'slo': _slo_document(flow.slo),
        'priority': flow.priority,
        'weight': flow.weight,
        'start_cycle': flow.start_cycle,
        'stop_cycle': flow.stop_cycle,
    }


def scenario_to_document(spec):
    control = spec.control
    return {
        'name': spec.name,
        'description': spec.description,
        'accelerators': [accelerator_to_document(model) for model in spec.accelerators],
        'flows': [flow_to_document(flow) for flow in spec.flows],
        'channel': channel_to_document(spec.channel),
        'port': port_to_document(spec.port),
        'mode': spec.mode,
        'seed': spec.seed,
        'duration_cycles': spec.duration_cycles,
        'reference_gbps': spec.reference_gbps,
        'cycle_ns': spec.cycle_ns,
        'acc_paths': {
            acc_id: [{'path_id': p.path_id, 'location': p.location, 'mode': p.mode.value} for p in entries]
            for acc_id, entries in spec.acc_paths.items()
        },
        'control': {
            'tick_us': control.tick_us,
            'damping_ticks': control.damping_ticks,
            'hysteresis': control.hysteresis,
            'slo_tolerance': control.slo_tolerance,
            'reconfig_latency_cycles': control.reconfig_latency_cycles,
        },
        'soft_timer_ns': spec.soft_timer_ns,
        'soft_jitter_ns': spec.soft_jitter_ns,
        'profile': spec.profile,
    }


def point_to_document(point):
    return {
        'acc_id': point.acc_id,
        'roles': [{'size': r.size, 'load': r.load, 'path': r.path} for r in point.roles],
        'channel': channel_to_document(point.channel),
        'port': port_to_document(point.port),
        'reference_gbps': point.reference_gbps,
        'run_cycles': point.run_cycles,
        'seed': point.seed,
        'cycle_ns': point.cycle_ns,
    }


