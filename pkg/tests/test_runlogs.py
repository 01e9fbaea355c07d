"""Collection of unit tests for egohome.runlogs module's functions.

Classes: RunLogTests
"""

import os
import tempfile
import unittest

import numpy as np

from egohome import runlogs
from egohome.errors import MissingArtifactError
from egohome.models import CurvePoint


class RunLogTests(unittest.TestCase):
	"""Set of unit tests to validate line-delimited JSON run logs.

	Tests: test_write_read, test_append, test_missing
	"""
	def setUp(self):
		self.tmp = tempfile.TemporaryDirectory()
		self.path = os.path.join(self.tmp.name, 'logs', 'run.jsonl')

	def tearDown(self):
		self.tmp.cleanup()

	def test_write_read(self):
		"""Steps:
		1 - Writes records holding numpy values and a namedtuple
		2 - Verify they are read back as plain JSON values
		3 - Verify keys are written sorted
		"""
		records = [{'b': np.float32(0.5), 'a': np.arange(3)},
				   {'curve': CurvePoint(1, 2.0, None)}]
		runlogs.write_records(self.path, records)

		self.assertEqual(runlogs.read_records(self.path), [
			{'a': [0, 1, 2], 'b': 0.5},
			{'curve': {'epoch': 1, 'loss': 2.0, 'aux': None}}])
		with open(self.path) as handle:
			self.assertTrue(handle.readline().startswith('{"a"'))

	def test_append(self):
		"""Steps:
		1 - Appends two records to a new log
		2 - Verify both are read in order
		3 - Verify writing replaces the log
		"""
		runlogs.append_record(self.path, {'episode': 0})
		runlogs.append_record(self.path, {'episode': 1})
		self.assertEqual([r['episode'] for r in runlogs.read_records(
			self.path)], [0, 1])

		runlogs.write_records(self.path, [{'episode': 2}])
		self.assertEqual(runlogs.read_records(self.path), [{'episode': 2}])

	def test_missing(self):
		"""Steps:
		1 - Verify a missing log raises error naming its producer
		2 - Verify an unserializable value raises error
		"""
		with self.assertRaises(MissingArtifactError) as res:
			runlogs.read_records(self.path, 'run-tasks')
		self.assertEqual(res.exception.producer, 'run-tasks')

		with self.assertRaises(TypeError):
			runlogs.write_records(self.path, [{'x': object()}])


if __name__ == 'main':
	unittest.main()
