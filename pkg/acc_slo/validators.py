"""
Validators for Scenario, Register and Model Configuration
"""

import re

from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _


class ConfigurationError(ValidationError):
    """Invalid accelerator, register or scenario configuration"""

    def __init__(self, message, code='invalid', params=None):
        super().__init__(message, code=code, params=params)
        self.code = code

    def __str__(self):
        return '; '.join(self.messages)


class UnachievableRateError(ConfigurationError):
    """Shaping target cannot be expressed at the clock granularity"""

    def __init__(self, message, closest_rate):
        super().__init__(message, code='unachievable-rate')
        self.closest_rate = closest_rate


class ProfileMissingError(ConfigurationError):
    """Arcus mode needs profile entries that the artifact does not hold"""

    def __init__(self, missing_keys):
        self.missing_keys = list(missing_keys)
        super().__init__(
            'Profile artifact is missing keys: %(keys)s',
            code='missing-profile',
            params={'keys': ', '.join(self.missing_keys)},
        )


CURVE_DOMAIN = (64, 1 << 20)  # 64 B .. 1 MiB


def validate_positive(value):
    """
    Validate a strictly positive number
    """
    if value is None or value <= 0:
        raise ValidationError(
            _('Value must be positive, got %(value)s'),
            params={'value': value},
        )


def validate_load(value):
    """
    Validate an injection load is a fraction of the reference line rate
    """
    if value < 0 or value > 1:
        raise ValidationError(
            _('Load %(value)s is outside [0, 1]'),
            params={'value': value},
        )


def validate_percentile(value):
    if not 0 < value < 1:
        raise ValidationError(
            _('Percentile %(value)s is outside (0, 1)'),
            params={'value': value},
        )


def validate_curve(knots):
    """
    Validate capacity curve knots: non-empty, whole-byte sorted sizes, positive throughput,
    and covering the 64 B .. 1 MiB domain
    """
    if not knots:
        raise ConfigurationError(_('Capacity curve is empty'), code='empty-curve')

    for size, _gbps in knots:
        if size != int(size):
            raise ConfigurationError(
                _('Curve knot size %(size)s is not a whole number of bytes'),
                code='curve-size',
                params={'size': size},
            )

    sizes = [size for size, _gbps in knots]
    if sizes != sorted(sizes) or len(set(sizes)) != len(sizes):
        raise ConfigurationError(_('Curve knot sizes must be strictly increasing'), code='curve-order')

    for size, gbps in knots:
        if size <= 0 or gbps <= 0:
            raise ConfigurationError(
                _('Curve knot (%(size)s, %(gbps)s) must be positive'),
                code='curve-knot',
                params={'size': size, 'gbps': gbps},
            )

    if sizes[0] > CURVE_DOMAIN[0] or sizes[-1] < CURVE_DOMAIN[1]:
        raise ConfigurationError(
            _('Curve must cover %(lo)s..%(hi)s bytes'),
            code='curve-domain',
            params={'lo': CURVE_DOMAIN[0], 'hi': CURVE_DOMAIN[1]},
        )


def validate_registers(bkt_size, refill_rate, interval):
    """
    Validate shaper registers: bkt_size >= refill_rate >= 1, interval >= 1
    """
    if refill_rate < 1:
        raise ConfigurationError(_('Refill_Rate must be at least 1'), code='registers')
    if bkt_size < refill_rate:
        raise ConfigurationError(
            _('Bkt_Size %(bkt)s is smaller than Refill_Rate %(rate)s'),
            code='registers',
            params={'bkt': bkt_size, 'rate': refill_rate},
        )
    if interval < 1:
        raise ConfigurationError(_('Interval must be at least 1 cycle'), code='registers')


def validate_scenario_name(name):
    """
    Validate a scenario name is safe to use as an output directory name
    """
    if not name or name.startswith('.'):
        raise ValidationError(_('Invalid scenario name'))
    if not re.fullmatch(r'[\w\-.]+', name):
        raise ValidationError(
            _('Scenario name contains invalid characters: %(name)s'),
            params={'name': name},
        )


def sanitize_name(name):
    """
    Sanitize a free-form name into a directory-safe token
    """
    name = name.split('/')[-1].split('\\')[-1]
    name = name.replace(' ', '_')
    name = re.sub(r'[^\w\-.]', '', name)

    if name.startswith('.'):
        name = 'scenario' + name

    return name or 'scenario'
