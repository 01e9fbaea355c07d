"""The checkpoints module writes and reads the single-file archives learned
models are persisted in: the state dict, the hyperparameters needed to
rebuild the network, the config echo and the tool version.

Functions: save_checkpoint, load_checkpoint
"""

import logging
import os
from os.path import dirname, isfile

import torch

from .errors import MissingArtifactError, ModelError
from .version import __version__


logger = logging.getLogger(__name__)


def save_checkpoint(path: str, kind: str, state: dict, hyper: dict,
					echo: str=None, extra: dict=None) -> str:
	"""Writes a checkpoint archive.

	Parameters
	----------
	path: str -- the archive path, parents are created
	kind: str -- the model family stored, checked at load
	state: dict -- the state dict
	hyper: dict -- constructor arguments of the network
	echo: str -- the config echo of the producing run (default None)
	extra: dict -- further arrays or records to be kept (default None)

	Returns: str -- the path
	"""
	if dirname(path):
		os.makedirs(dirname(path), exist_ok=True)

	torch.save({'kind': kind, 'state': state, 'hyper': dict(hyper),
				'echo': echo, 'version': __version__,
				'extra': dict(extra or {})}, path)
	logger.info('saved %s checkpoint to %s', kind, path)
	return path


def load_checkpoint(path: str, kind: str, producer: str) -> dict:
	"""Reads a checkpoint archive.

	Parameters
	----------
	path: str -- the archive path
	kind: str -- the model family expected
	producer: str -- the CLI subcommand that writes this archive

	Returns: dict -- kind, state, hyper, echo, version and extra

	Throws MissingArtifactError, ModelError
	"""
	if not isfile(path):
		raise MissingArtifactError(path, producer)

	archive = torch.load(path, map_location='cpu', weights_only=False)
	if archive.get('kind') != kind:
		raise ModelError('{0} holds a {1} checkpoint, expected {2}'.format(
			path, archive.get('kind'), kind))
	if archive.get('version') != __version__:
		logger.warning('%s was written by version %s, running %s', path,
					   archive.get('version'), __version__)
	return archive
