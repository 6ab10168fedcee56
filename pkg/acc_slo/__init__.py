"""
Accelerator SLO Simulator
Discrete-event model of multi-tenant accelerator sharing with per-flow
hardware traffic shaping, offline contention profiling and an SLO control plane
"""

__version__ = '1.0.0'

from .settings import configure_django

configure_django()

from .celery import app as celery_app  # noqa: E402

__all__ = ['celery_app', 'configure_django']
