"""
Utility functions for unit conversion, percentiles and output layout
"""

import hashlib
import json
import math
import os
from fractions import Fraction

import numpy as np

from .validators import sanitize_name


def bytes_to_cycles(num_bytes, gbps, cycle_ns):
    """Exact number of cycles needed to move num_bytes at gbps"""
    return Fraction(num_bytes * 8) / (as_fraction(gbps) * cycle_ns)


def as_fraction(value):
    """Rational view of a config number; floats are limited to a sane denominator"""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    return Fraction(str(value)).limit_denominator(1_000_000)


def us_to_cycles(us, cycle_ns):
    return int(round(us * 1000 / cycle_ns))


def nearest_rank(values, percentile):
    """
    Nearest-rank percentile over the complete population

    Args:
        values (sequence): samples
        percentile (float): fraction in (0, 1]

    Returns:
        float: the sample at rank ceil(p * n), or None for an empty population
    """
    if len(values) == 0:
        return None
    ordered = np.sort(np.asarray(values, dtype=float))
    rank = max(1, math.ceil(percentile * len(ordered)))
    return float(ordered[rank - 1])


def cdf_points(values):
    """
    Empirical CDF as (value, cumulative fraction) pairs, non-decreasing, ending at 1.0
    """
    if len(values) == 0:
        return []
    ordered = np.sort(np.asarray(values, dtype=float))
    n = len(ordered)
    return [(float(v), (i + 1) / n) for i, v in enumerate(ordered)]


def stable_key(*parts):
    """Deterministic integer key for seeding per-flow random streams"""
    digest = hashlib.sha256('|'.join(str(p) for p in parts).encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'big')


def canonical_json(document):
    """Byte-stable JSON text for reports and artifacts"""
    return json.dumps(document, sort_keys=True, indent=2, separators=(',', ': ')) + '\n'


def organize_output_path(base_dir, scenario_name, mode, seed):
    """
    Generate organized output directory for a scenario run

    Args:
        base_dir (str): Root output directory
        scenario_name (str): Scenario name
        mode (str): Run mode (arcus, baseline-rr, ...)
        seed (int): Simulation seed

    Returns:
        str: Directory path <base>/<scenario>/<mode>/seed_<seed>
    """
    return os.path.join(base_dir, sanitize_name(scenario_name), sanitize_name(mode), f'seed_{seed}')
