"""The config module reads egohome's layered key-value configuration files.

	A configuration file holds `key = value` lines grouped under `[section]`
or `[section.sub]` headers. An `include = other.cfg` line at the top level
merges another file first, so later keys override included ones. Values are
decoded as JSON scalars or lists when possible and kept as strings otherwise.

NamedTuples: RunConfig

Functions: parse_text, parse_file, apply_overrides, load_run_config,
default_config_path
"""

import collections
import copy
import json
import logging
from os.path import abspath, dirname, isfile, join

from .errors import ConfigError
from .version import __version__


logger = logging.getLogger(__name__)

RESOURCES = join(dirname(__file__), 'resources')

PATH_KEYS = ('dataset', 'checkpoints', 'reports')


def default_config_path(name: str='default') -> str:
	"""Gets the path of one of the configuration files shipped with the
	package.

	Parameters
	----------
	name: str -- the config name without extension (default 'default')

	Returns: str -- absolute path to the file
	"""
	return join(RESOURCES, 'configs', '{0}.cfg'.format(name))


def _decode(raw: str):
	try:
		return json.loads(raw)
	except ValueError:
		return raw


def _merge(base: dict, other: dict) -> dict:
	for key, value in other.items():
		if isinstance(value, dict) and isinstance(base.get(key), dict):
			_merge(base[key], value)
		else:
			base[key] = copy.deepcopy(value)
	return base


def _section(tree: dict, dotted: str) -> dict:
	node = tree
	for part in dotted.split('.'):
		node = node.setdefault(part, {})
		if not isinstance(node, dict):
			raise ConfigError('"{0}" is both a value and a section'.format(
				dotted))
	return node


def parse_text(text: str, base_dir: str='.', _seen: frozenset=frozenset(),
			   source: str='<text>') -> dict:
	"""Parses the content of a configuration file into a nested dictionary.

	Parameters
	----------
	text: str -- the configuration content
	base_dir: str -- directory used to resolve includes (default '.')
	source: str -- name used in error messages (default '<text>')

	Returns: dict -- sections as nested dictionaries

	Throws ConfigError
	"""
	tree = {}
	current = tree
	for number, line in enumerate(text.splitlines(), 1):
		line = line.split('#', 1)[0].strip()
		if not line:
			continue

		if line.startswith('['):
			if not line.endswith(']') or len(line) < 3:
				raise ConfigError('{0}:{1}: malformed section header'.format(
					source, number))
			current = _section(tree, line[1:-1].strip())
			continue

		if '=' not in line:
			raise ConfigError('{0}:{1}: expected "key = value"'.format(
				source, number))

		key, raw = (x.strip() for x in line.split('=', 1))
		if not key:
			raise ConfigError('{0}:{1}: empty key'.format(source, number))

		if key == 'include' and current is tree:
			included = parse_file(join(base_dir, _decode(raw)), _seen)
			tree = _merge(included, tree)
			current = tree
			continue

		current[key] = _decode(raw)

	return tree


def parse_file(path: str, _seen: frozenset=frozenset()) -> dict:
	"""Parses a configuration file, following its includes.

	Parameters
	----------
	path: str -- the file path

	Returns: dict -- sections as nested dictionaries

	Throws ConfigError
	"""
	path = abspath(path)
	if path in _seen:
		raise ConfigError('circular include of {0}'.format(path))
	if not isfile(path):
		raise ConfigError('config file not found: {0}'.format(path))

	with open(path) as f:
		text = f.read()

	logger.debug('parsing config %s', path)
	return parse_text(text, dirname(path), _seen | {path}, path)


def apply_overrides(tree: dict, overrides: list) -> dict:
	"""Applies `section.key=value` overrides on a copy of a parsed tree.

	Parameters
	----------
	tree: dict -- the parsed configuration
	overrides: list -- strings in the `section.key=value` form

	Returns: dict -- the overridden copy

	Throws ConfigError
	"""
	tree = copy.deepcopy(tree)
	for item in overrides or ():
		if '=' not in item:
			raise ConfigError('override "{0}" lacks "="'.format(item))
		dotted, raw = (x.strip() for x in item.split('=', 1))
		if '.' in dotted:
			section, key = dotted.rsplit('.', 1)
			node = _section(tree, section)
		else:
			key, node = dotted, tree
		node[key] = _decode(raw)
	return tree


class RunConfig(collections.namedtuple('RunConfig', [
		'seed', 'paths', 'sections'])):
	"""Fully resolved run configuration. sections maps module names to their
	key-value dictionaries.
	"""
	__slots__ = ()

	def section(self, name: str) -> dict:
		"""Gets a copy of one configuration section, empty when absent.

		Parameters
		----------
		name: str -- the section name, dotted for subsections

		Returns: dict -- the section values
		"""
		node = self.sections
		for part in name.split('.'):
			node = node.get(part, {})
			if not isinstance(node, dict):
				raise ConfigError('"{0}" is not a section'.format(name))
		return copy.deepcopy(node)

	def path(self, name: str) -> str:
		"""Gets one of the artifact directories.

		Throws ConfigError
		"""
		try:
			return self.paths[name]
		except KeyError:
			raise ConfigError('missing paths.{0} in config'.format(name))

	def as_dict(self) -> dict:
		return {'seed': self.seed, 'paths': dict(self.paths),
				'sections': self.sections}

	def echo(self) -> str:
		"""Serializes the configuration and the package version in canonical
		JSON form, embedded in every artifact.

		Returns: str -- the config echo
		"""
		payload = dict(self.as_dict(), version=__version__)
		return json.dumps(payload, sort_keys=True, separators=(',', ':'))


def load_run_config(path: str=None, overrides: list=None) -> RunConfig:
	"""Builds a RunConfig out of a file plus command line overrides.

	Parameters
	----------
	path: str -- the config file, the shipped default when None
	overrides: list -- `section.key=value` strings (default None)

	Returns: RunConfig -- the resolved configuration

	Throws ConfigError
	"""
	tree = apply_overrides(parse_file(path or default_config_path()),
						   overrides)

	try:
		seed = int(tree.pop('seed', 0))
	except (TypeError, ValueError):
		raise ConfigError('seed must be an integer')

	paths = tree.pop('paths', {})
	missing = [key for key in PATH_KEYS if key not in paths]
	if missing:
		raise ConfigError('missing paths.{0} in config'.format(missing[0]))

	return RunConfig(seed=seed, paths=paths, sections=tree)
