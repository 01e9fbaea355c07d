"""The packers module holds all classes and functions related to turning
records into tables.

ABCs: Packer

Classes: DataFramePacker, CsvPacker
"""

import abc

import pandas as pd


class Packer(abc.ABC):
	"""An abstract base class for other packer classes to implement.

	Methods: pack
	"""
	@abc.abstractmethod
	def pack(self, models: tuple):
		"""Builds a data structure out of a list of records.

		Parameters
		----------
		models: tuple -- the records, all of the same namedtuple type

		Returns -- the data structure with the data
		"""
		pass


class DataFramePacker(Packer):
	"""A packer class specialized in building data frames out of records.
	The first field of the record becomes the index.

	Extends: Packer

	Methods: pack
	"""
	def __init__(self, fields: tuple=None):
		"""DataFramePacker's constructor.

		Parameters
		----------
		fields: tuple -- the record fields, used to shape an empty table
		(default None)
		"""
		self.fields = fields

	def pack(self, models: tuple) -> pd.DataFrame:
		"""Builds a data frame out of a list of records.

		Parameters @Packer
		Returns @Packer
		"""
		models = list(models)
		if not models:
			if self.fields is None:
				raise ValueError('cannot shape an empty table without fields')
			frame = pd.DataFrame(columns=list(self.fields[1:]))
			frame.index.name = self.fields[0]
			return frame

		idxs = [i[0] for i in models]
		data = [list(i[1:]) for i in models]
		columns = list(models[0]._fields[1:])

		frame = pd.DataFrame(data, index=idxs, columns=columns)
		frame.index.name = models[0]._fields[0]
		return frame


class CsvPacker(Packer):
	"""A packer class that writes records as a CSV table.

	Extends: Packer

	Methods: pack
	"""
	def __init__(self, path: str, fields: tuple=None):
		"""CsvPacker's constructor.

		Parameters
		----------
		path: str -- the CSV file to be written
		fields: tuple -- the record fields, used for empty tables
		(default None)
		"""
		self.path = path
		self._frames = DataFramePacker(fields)

	def pack(self, models: tuple) -> str:
		"""Writes the records and returns the file path.

		Parameters @Packer
		Returns: str -- the written CSV path
		"""
		self._frames.pack(models).to_csv(self.path, float_format='%.10g')
		return self.path
