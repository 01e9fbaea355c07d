"""The runlogs module writes and reads line-delimited JSON run logs: one
object per line, keys sorted, so reports rebuilt from them never drift.

Functions: write_records, append_record, read_records
"""

import json
import logging
import os
from os.path import dirname, isfile

import numpy as np

from .errors import MissingArtifactError


logger = logging.getLogger(__name__)


def _plain(value):
	"""Turns nested namedtuples into dictionaries."""
	if hasattr(value, '_asdict'):
		return {k: _plain(v) for k, v in value._asdict().items()}
	if isinstance(value, dict):
		return {k: _plain(v) for k, v in value.items()}
	if isinstance(value, (list, tuple)):
		return [_plain(v) for v in value]
	return value


def _default(value):
	if isinstance(value, np.ndarray):
		return value.tolist()
	if isinstance(value, np.generic):
		return value.item()
	raise TypeError('{0!r} is not JSON serializable'.format(type(value)))


def _line(record) -> str:
	return json.dumps(_plain(record), sort_keys=True, default=_default) + '\n'


def write_records(path: str, records: list) -> str:
	"""Writes records as a run log, replacing any previous one.

	Parameters
	----------
	path: str -- the log file, parents are created
	records: list -- JSON-serializable dictionaries

	Returns: str -- the path
	"""
	if dirname(path):
		os.makedirs(dirname(path), exist_ok=True)
	with open(path, 'w', encoding='utf-8') as handle:
		for record in records:
			handle.write(_line(record))
	logger.info('wrote %d records to %s', len(records), path)
	return path


def append_record(path: str, record: dict):
	if dirname(path):
		os.makedirs(dirname(path), exist_ok=True)
	with open(path, 'a', encoding='utf-8') as handle:
		handle.write(_line(record))


def read_records(path: str, producer: str=None) -> list:
	"""Reads a run log.

	Parameters
	----------
	path: str -- the log file
	producer: str -- the subcommand writing it, named when it is missing
	(default None)

	Returns: list -- the records in file order

	Throws MissingArtifactError
	"""
	if not isfile(path):
		raise MissingArtifactError(path, producer or 'an earlier run')
	with open(path, encoding='utf-8') as handle:
		return [json.loads(line) for line in handle if line.strip()]
