"""
Simulator Settings
Defaults read from the environment / .env through python-decouple
"""

from decouple import config


# Clock
CYCLE_NS = config('ACC_SLO_CYCLE_NS', default=4, cast=int)  # 250 MHz datapath
RECONFIG_LATENCY_CYCLES = config('ACC_SLO_RECONFIG_LATENCY_CYCLES', default=2500, cast=int)  # 10us

# Shaper
DEFAULT_INTERVAL_CYCLES = config('ACC_SLO_DEFAULT_INTERVAL_CYCLES', default=64, cast=int)
MAX_INTERVAL_CYCLES = config('ACC_SLO_MAX_INTERVAL_CYCLES', default=2 ** 20, cast=int)
DEFAULT_BUCKET_REFILLS = config('ACC_SLO_DEFAULT_BUCKET_REFILLS', default=4, cast=int)
SOFT_TIMER_NS = config('ACC_SLO_SOFT_TIMER_NS', default=50000, cast=int)
SOFT_JITTER_NS = config('ACC_SLO_SOFT_JITTER_NS', default=10000, cast=int)

# Fabric
CREDITS = config('ACC_SLO_CREDITS', default=64, cast=int)
TLP_BYTES = config('ACC_SLO_TLP_BYTES', default=256, cast=int)
PORT_BUFFER = config('ACC_SLO_PORT_BUFFER', default=64, cast=int)
HOST_QUEUE_DEPTH = config('ACC_SLO_HOST_QUEUE_DEPTH', default=1024, cast=int)
EGRESS_QUEUE_DEPTH = config('ACC_SLO_EGRESS_QUEUE_DEPTH', default=64, cast=int)

# Control plane
CONTROL_TICK_US = config('ACC_SLO_CONTROL_TICK_US', default=100, cast=float)
VIOLATION_DAMPING_TICKS = config('ACC_SLO_VIOLATION_DAMPING_TICKS', default=3, cast=int)
WINDOW_REQUESTS = config('ACC_SLO_WINDOW_REQUESTS', default=500, cast=int)
PATH_HYSTERESIS = config('ACC_SLO_PATH_HYSTERESIS', default=0.10, cast=float)
SLO_TOLERANCE = config('ACC_SLO_SLO_TOLERANCE', default=0.02, cast=float)
ADMISSION_TOLERANCE = config('ACC_SLO_ADMISSION_TOLERANCE', default=0.01, cast=float)
# Latency-bound flows are shaped above their offered rate with a deep bucket
LATENCY_RATE_HEADROOM = config('ACC_SLO_LATENCY_RATE_HEADROOM', default=2.0, cast=float)
LATENCY_BUCKET_BURSTS = config('ACC_SLO_LATENCY_BUCKET_BURSTS', default=8, cast=int)
# Flows offering no more than their SLO get rate and burst headroom
DEMAND_RATE_HEADROOM = config('ACC_SLO_DEMAND_RATE_HEADROOM', default=1.05, cast=float)
DEMAND_BUCKET_MESSAGES = config('ACC_SLO_DEMAND_BUCKET_MESSAGES', default=8, cast=int)

# Profiler
WARMUP_FRACTION = config('ACC_SLO_WARMUP_FRACTION', default=0.10, cast=float)
DRIFT_BOUND = config('ACC_SLO_DRIFT_BOUND', default=0.05, cast=float)
PROFILE_SIZES = [64, 256, 1500, 4096, 65536]
PROFILE_LOADS = [0.1, 0.3, 0.5, 0.7, 0.9]
PROFILE_RUN_CYCLES = config('ACC_SLO_PROFILE_RUN_CYCLES', default=250_000, cast=int)  # 1 ms

# Output
OUTPUT_DIR = config('ACC_SLO_OUTPUT_DIR', default='./out')
PROFILE_DIR = config('ACC_SLO_PROFILE_DIR', default='./profiles')
LOG_LEVEL = config('ACC_SLO_LOG_LEVEL', default='INFO')

# Celery
CELERY_BROKER_URL = config('CELERY_BROKER_URL', default='memory://')
CELERY_RESULT_BACKEND = config('CELERY_RESULT_BACKEND', default='cache+memory://')
CELERY_TASK_ALWAYS_EAGER = config('CELERY_TASK_ALWAYS_EAGER', default=True, cast=bool)
CELERY_TASK_EAGER_PROPAGATES = True
CELERY_ACCEPT_CONTENT = ['json']
CELERY_TASK_SERIALIZER = 'json'
CELERY_RESULT_SERIALIZER = 'json'


def configure_django():
    """
    Bootstrap Django standalone so DRF serializers can validate documents.
    No database, no installed apps.
    """
    import django
    from django.conf import settings

    if settings.configured:
        return

    settings.configure(
        DEBUG=False,
        USE_I18N=False,
        USE_TZ=True,
        INSTALLED_APPS=[],
        DATABASES={},
        REST_FRAMEWORK={
            'UNAUTHENTICATED_USER': None,
        },
    )
    django.setup()
