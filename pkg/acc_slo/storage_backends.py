"""
Artifact Storage Backends
Local filesystem storage for run reports, CSV tables, traces and profile
artifacts. Every write is atomic: a temp file in the target directory is
renamed over the destination.
"""

import csv
import io
import json
import logging
import os
import tempfile

from django.core.files.storage import FileSystemStorage

from . import settings
from .metrics import LATENCY_PERCENTILES, SAMPLE_PERCENTILES, MetricsReport
from .profiler import ProfileTable
from .utils import canonical_json

logger = logging.getLogger(__name__)


class AtomicFileStorage(FileSystemStorage):
    """FileSystemStorage whose text writes replace the destination atomically"""

    default_location = '.'

    def __init__(self, location=None, **kwargs):
        super().__init__(location=location or self.default_location, **kwargs)

    def at(self, path):
        """
        Storage and name for a path; absolute paths get a storage rooted at
        their own directory

        Returns:
            tuple: (storage, name)
        """
        if os.path.isabs(path):
            directory, name = os.path.split(path)
            return type(self)(location=directory), name
        return self, path

    def write_text(self, name, text):
        """
        Write text to name atomically

        Returns:
            str: absolute path written
        """
        target = self.path(name)
        directory = os.path.dirname(target)
        os.makedirs(directory, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(prefix='.tmp-', dir=directory)
        try:
            with os.fdopen(fd, 'w', encoding='utf-8', newline='') as handle:
                handle.write(text)
            os.replace(tmp_path, target)
        except OSError as e:
            logger.error(f'Failed to write {target}: {e}')
            if os.path.exists(tmp_path):
                os.remove(tmp_path)
            raise
        return target

    def read_text(self, name):
        with self.open(name, 'r') as handle:
            return handle.read()


class ReportStorage(AtomicFileStorage):
    """
    Run outputs: report.json plus flat CSV tables, organized by
    <scenario>/<mode>/seed_<seed> below OUTPUT_DIR
    """

    default_location = settings.OUTPUT_DIR

    def save_report(self, directory, report, trace_lines=None):
        """
        Write report.json, samples.csv, percentiles.csv, cdf.csv (and trace.log)

        Args:
            directory (str): run directory relative to the storage root
            report (MetricsReport): finished run
            trace_lines (list): event trace, written when given

        Returns:
            dict: file name -> absolute path
        """
        written = {
            'report.json': self.write_text(os.path.join(directory, 'report.json'), canonical_json(report.as_dict())),
            'samples.csv': self.write_text(os.path.join(directory, 'samples.csv'), samples_csv(report)),
            'percentiles.csv': self.write_text(os.path.join(directory, 'percentiles.csv'), percentiles_csv(report)),
            'cdf.csv': self.write_text(os.path.join(directory, 'cdf.csv'), cdf_csv(report)),
        }
        if trace_lines is not None:
            text = '\n'.join(trace_lines) + ('\n' if trace_lines else '')
            written['trace.log'] = self.write_text(os.path.join(directory, 'trace.log'), text)
        logger.info(f'Report for {report.scenario} written to {self.path(directory)}')
        return written

    def save_document(self, name, document):
        return self.write_text(name, canonical_json(document))

    def load_report(self, name):
        document = json.loads(self.read_text(name))
        return MetricsReport.from_dict(document)


class ProfileStorage(AtomicFileStorage):
    """Versioned profile artifacts below PROFILE_DIR"""

    default_location = settings.PROFILE_DIR

    def save_table(self, table, path):
        storage, name = self.at(path)
        written = storage.write_text(name, canonical_json(table.to_document()))
        logger.info(f'Profile artifact with {len(table)} entries written to {written}')
        return written

    def load_table(self, path):
        storage, name = self.at(path)
        return ProfileTable.from_document(json.loads(storage.read_text(name)))


def _csv_text(header, rows):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def samples_csv(report):
    rows = []
    for flow in report.flows:
        for index, sample in enumerate(flow['samples']):
            rows.append([flow['flow_id'], index, sample['end_cycle'], repr(sample['gbps']), repr(sample['iops'])])
    return _csv_text(['flow_id', 'sample', 'end_cycle', 'gbps', 'iops'], rows)


def percentiles_csv(report):
    latency_names = [name for name, _p in LATENCY_PERCENTILES]
    deviation_names = [name for name, _p in SAMPLE_PERCENTILES]
    header = (['flow_id', 'admitted']
              + [f'latency_{name}_ns' for name in latency_names]
              + [f'deviation_{name}' for name in deviation_names])
    rows = []
    for flow in report.flows:
        rows.append([flow['flow_id'], flow['admitted']]
                    + [flow['latency_ns'][name] for name in latency_names]
                    + [flow['sample_deviation'][name] for name in deviation_names])
    return _csv_text(header, rows)


def cdf_csv(report):
    rows = [[flow['flow_id'], repr(value), repr(fraction)]
            for flow in report.flows for value, fraction in flow['cdf']]
    return _csv_text(['flow_id', 'value', 'fraction'], rows)
