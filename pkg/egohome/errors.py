"""Source of exception classes for egohome's simulator, learners, planner and
harness.

Classes: EgohomeError, ConfigError, LayoutError, InfeasibleSkillError,
FrameError, FlowError, DatasetError, MissingArtifactError, ModelError,
TrainingDivergenceError, PlanningError, LmmError, LmmTransportError,
LmmAuthError, LmmParseError, EvaluationError
"""


class EgohomeError(Exception):
	"""Generic error to be implemented by further classes in order to uncouple
	egohome's exceptions from others.
	"""
	pass


class ConfigError(EgohomeError):
	"""Error to be raised whenever a configuration file, flag or environment
	variable is missing or malformed.
	"""
	pass


class LayoutError(EgohomeError):
	"""Error to be raised whenever a house layout configuration is below the
	supported minimums or cannot be generated.
	"""
	pass


class InfeasibleSkillError(EgohomeError):
	"""Error to be raised whenever a skill is stepped while one of its
	preconditions does not hold. The violated precondition is kept on the
	instance.
	"""
	def __init__(self, skill, precondition: str):
		self.skill = skill
		self.precondition = precondition
		super().__init__('skill {0} is infeasible: {1}'.format(
			skill, precondition))


class FrameError(EgohomeError):
	"""Error to be raised whenever frames are combined in a way that breaks
	their invariants (shape mismatch, non-consecutive timesteps).
	"""
	pass


class FlowError(EgohomeError):
	"""Error to be raised whenever a flow computation receives inconsistent
	inputs or has no valid pixels to work with.
	"""
	pass


class DatasetError(EgohomeError):
	"""Error to be raised whenever a dataset artifact is missing, truncated or
	violates the sample schema. The offending path is kept on the instance.
	"""
	def __init__(self, message: str, path: str=None):
		self.path = path
		if path is not None:
			message = '{0} ({1})'.format(message, path)
		super().__init__(message)


class MissingArtifactError(EgohomeError):
	"""Error to be raised whenever a pipeline stage needs an artifact that has
	not been produced yet. Names the subcommand that produces it.
	"""
	def __init__(self, artifact: str, producer: str):
		self.artifact = artifact
		self.producer = producer
		super().__init__('missing artifact {0}; run "{1}" first'.format(
			artifact, producer))


class ModelError(EgohomeError):
	"""Error to be raised whenever a learned model is used outside of its
	contract (unknown verb, wrong conditioning mode, double attachment).
	"""
	pass


class TrainingDivergenceError(EgohomeError):
	"""Error to be raised whenever training produces a non-finite loss or
	diverges. The offending batch or window id is kept on the instance.
	"""
	def __init__(self, message: str, batch_id=None):
		self.batch_id = batch_id
		super().__init__('{0} (batch {1})'.format(message, batch_id))


class PlanningError(EgohomeError):
	"""Error to be raised whenever the planner cannot decompose an instruction
	or no candidate action survives imagination.
	"""
	pass


class LmmError(EgohomeError):
	"""Base error of the optional chat-endpoint backend."""
	pass


class LmmTransportError(LmmError):
	"""Error to be raised whenever the chat endpoint cannot be reached. The
	number of retries performed is kept on the instance.
	"""
	def __init__(self, message: str, retries: int=0):
		self.retries = retries
		super().__init__('{0} after {1} retries'.format(message, retries))


class LmmAuthError(LmmError):
	"""Error to be raised whenever the chat endpoint rejects the credential."""
	pass


class LmmParseError(LmmError):
	"""Error to be raised whenever a chat endpoint reply cannot be parsed into
	a ranking or a subgoal list.
	"""
	pass


class EvaluationError(EgohomeError):
	"""Error to be raised whenever a metric receives degenerate inputs (too few
	samples, non-PSD covariances, mismatched dimensions).
	"""
	pass
