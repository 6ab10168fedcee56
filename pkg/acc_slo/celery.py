"""
Celery Application
Profile points and scenario runs fan out as tasks. With the default
memory broker and CELERY_TASK_ALWAYS_EAGER they execute in-process; point
CELERY_BROKER_URL at redis to spread them over workers.
"""

from celery import Celery

app = Celery('acc_slo')
app.config_from_object('acc_slo.settings', namespace='CELERY')
app.autodiscover_tasks(['acc_slo'])
