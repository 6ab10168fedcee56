"""
Celery Tasks for Profiling and Scenario Runs
Each task builds a private simulation from JSON documents and returns a
JSON-serializable result dict
"""

import logging

from celery import shared_task

from .validators import ConfigurationError

logger = logging.getLogger(__name__)


@shared_task
def profile_point_task(point_document, accelerator_document):
    """
    Profile one pattern combination

    Args:
        point_document (dict): ProfilePoint document
        accelerator_document (dict): accelerator model document

    Returns:
        dict: {'status': 'success', 'key': ..., 'profile': ...} or an error dict
    """
    from .profiler import profile_point
    from .serializers import accelerator_from_document, point_from_document

    try:
        point = point_from_document(point_document)
        accelerator = accelerator_from_document(accelerator_document)
        profile = profile_point(point, accelerator)
        logger.info(f'Profiled {point.key.as_string()}: {profile.total_gbps:.3f} Gbps')
        return {
            'status': 'success',
            'key': point.key.as_string(),
            'profile': profile.as_dict(),
        }

    except ConfigurationError as e:
        logger.error(f"Profile point {point_document.get('acc_id')} failed: {e}")
        return {'status': 'error', 'message': str(e)}


@shared_task
def run_scenario_task(scenario_document, profile_document=None):
    """
    Run one scenario

    Args:
        scenario_document (dict): scenario document
        profile_document (dict): profile artifact document, optional

    Returns:
        dict: {'status': 'success', 'report': ...} or an error dict
    """
    from .harness import run_scenario
    from .profiler import ProfileTable
    from .serializers import scenario_from_document

    try:
        scenario = scenario_from_document(scenario_document)
        profiles = ProfileTable.from_document(profile_document) if profile_document else None
        report = run_scenario(scenario, profiles=profiles)
        return {
            'status': 'success',
            'scenario': scenario.name,
            'report': report.as_dict(),
        }

    except ConfigurationError as e:
        logger.error(f"Scenario {scenario_document.get('name')} failed: {e}")
        return {'status': 'error', 'message': str(e)}
