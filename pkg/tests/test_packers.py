"""Collection of unit tests for egohome.packers module's classes and
functions.

Classes: DataFramePackerTests, CsvPackerTests
"""

import os
import tempfile
import unittest

import pandas as pd

import egohome.models as models
import egohome.packers as packers


MOCK_ROWS = (
	models.SuccessRow('oracle/task_1', 'oracle', 1, 10, 10, 1.0, 0.69, 1.0),
	models.SuccessRow('random/task_1', 'random', 1, 10, 2, 0.2, 0.02, 0.56)
)


class DataFramePackerTests(unittest.TestCase):
	"""Set of unit tests to validate an instance of a DataFramePacker and
	its methods.

	Tests: test_pack, test_pack_empty
	"""
	def test_pack(self):
		"""Steps:
		1 - Instantiates a DataFramePacker
		2 - Uses pack(MOCK_ROWS) and verify response
		"""
		packer = packers.DataFramePacker()
		res = packer.pack(MOCK_ROWS)
		self.assertIsInstance(res, pd.DataFrame)
		self.assertEqual(len(res.columns), 7)
		self.assertEqual(len(res.index), 2)
		self.assertEqual(res.index.name, 'key')
		self.assertEqual(res.loc['random/task_1', 'successes'], 2)

	def test_pack_empty(self):
		"""Steps:
		1 - Uses pack(()) with the record fields and verify the empty table
		2 - Uses pack(()) without fields and verify if it raises error
		"""
		res = packers.DataFramePacker(models.SuccessRow._fields).pack(())
		self.assertEqual(len(res.index), 0)
		self.assertEqual(list(res.columns), list(models.SuccessRow._fields[1:]))

		with self.assertRaises(ValueError):
			packers.DataFramePacker().pack(())


class CsvPackerTests(unittest.TestCase):
	"""Set of unit tests to validate an instance of a CsvPacker and its
	methods.

	Tests: test_pack
	"""
	def test_pack(self):
		"""Steps:
		1 - Instantiates a CsvPacker over a temporary file
		2 - Uses pack(MOCK_ROWS) and read the table back
		3 - Packs again and verify the file is byte-identical
		"""
		with tempfile.TemporaryDirectory() as tmp:
			path = os.path.join(tmp, 'rates.csv')
			self.assertEqual(packers.CsvPacker(path).pack(MOCK_ROWS), path)
			table = pd.read_csv(path, index_col=0)
			self.assertEqual(list(table.index), ['oracle/task_1',
												 'random/task_1'])
			self.assertAlmostEqual(table.loc['random/task_1', 'rate'], 0.2)

			with open(path, 'rb') as f:
				first = f.read()
			packers.CsvPacker(path).pack(MOCK_ROWS)
			with open(path, 'rb') as f:
				self.assertEqual(f.read(), first)


if __name__ == 'main':
	unittest.main()
