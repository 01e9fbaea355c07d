"""
Egohome: world-model planning in a procedurally generated home
==============================================================

__license__ = MIT
"""

from .version import __version__


__all__ = ['adapters', 'checkpoints', 'cli', 'config', 'datasets', 'dynamics',
		   'errors', 'evaluation', 'flows', 'houses', 'matchers', 'models',
		   'navigation', 'networks', 'packers', 'pipeline', 'planners',
		   'predictors', 'renderers', 'reports', 'requesters', 'runlogs',
		   'skills']
