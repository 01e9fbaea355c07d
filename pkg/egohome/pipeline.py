"""The pipeline module chains the stages dataset generation is made of. It is
composed of a producer, a series of stages and a consumer.

	For egohome the producer rolls a skill out in the micro-simulator,
turning a generation job into a trajectory of frames.

	The middle stage annotates the trajectory, pairing consecutive frames
with their ground-truth flows and prompt phrases.

	The consumer writes the annotated samples to disk and reports what was
written so the manifest can be assembled.

	A job whose stage raises an EgohomeError does not abort the whole
generation: the pipeline hands the job and the error to its failure handler
and returns what the handler makes of them.

Classes: Pipeline
"""

import logging

from .errors import EgohomeError


logger = logging.getLogger(__name__)


class Pipeline(object):
	"""The Pipeline class follows a Pipeline design pattern proposed by
	Lorenzo Bolla (https://lbolla.info/pipelines-in-python). Each stage is a
	coroutine that applies its callable to what it receives and sends the
	result down the chain; the last one returns it.

	Methods: run

	Static Methods: link
	"""
	def __init__(self, *args, on_error=None):
		"""Pipeline's constructor.

		Parameters
		----------
		*args -- the callables used to build the pipeline, producer first
		on_error -- callable taking (job, error) whose result stands in for
		the consumer's when a stage raises an EgohomeError; errors propagate
		when None (default None)
		"""
		if len(args) < 3:
			raise ValueError(
				'the minimum number of arguments to build a pipeline is 3')

		if not all(callable(x) for x in args):
			raise ValueError('all arguments should be functions or methods')

		if on_error is not None and not callable(on_error):
			raise ValueError('on_error should be a function or method')

		self._funcs = args
		self.on_error = on_error

	@staticmethod
	def link(func, downstream=None):
		"""Creates one primed link of the chain.

		Parameters
		----------
		func -- the function applied to the received item
		downstream -- the primed link the result is sent to, None for the
		consumer (default None)

		Returns -- the primed coroutine, which stops with the consumer's
		result as its value
		"""
		def coroutine():
			result = func((yield))
			if downstream is None:
				return result
			try:
				downstream.send(result)
			except StopIteration as res:
				return res.value

		stage = coroutine()
		next(stage)
		return stage

	def run(self, job):
		"""Sends one job through fresh links of the chain.

		Returns -- the result of the consumer, or of on_error for a failed
		job

		Throws EgohomeError when no on_error handler is set
		"""
		head = None
		for func in reversed(self._funcs):
			head = Pipeline.link(func, head)

		try:
			head.send(job)
		except StopIteration as res:
			return res.value
		except EgohomeError as err:
			if self.on_error is None:
				raise
			logger.warning('job %r failed: %s', job, err)
			return self.on_error(job, err)
		finally:
			head.close()
