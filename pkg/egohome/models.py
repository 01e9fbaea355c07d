"""The models that hold the records exchanged between egohome's simulator,
dataset, learners, planner and evaluation harness.

NamedTuples: ObjectInstance, AgentPose, CameraPose, Skill, StyleParams,
WorldState, Frame, Trajectory, FlowField, PromptRecord, Sample,
DatasetManifest, NoiseSchedule, CurvePoint, VqLoss, LoraParams, Subgoal,
SubgoalPlan, Observation, Imagination, StepLog, EpisodeResult, Task,
FeatureStats, MetricRow, SuccessRow, AeeRow, QualityRow
"""

import collections
import math


SKILL_VERBS = ('walk_forward', 'turn_left', 'turn_right', 'walk_through',
			   'open', 'close', 'grab', 'put_back', 'put_in', 'switch_on',
			   'switch_off', 'sit', 'stand_up')

TARGETED_VERBS = frozenset(('open', 'close', 'grab', 'put_back', 'put_in',
							'switch_on', 'switch_off', 'sit'))

# walk_to only names navigation subgoals, it is never stepped.
PHRASE_VERBS = SKILL_VERBS + ('walk_to', )

OBJECT_KINDS = ('fridge', 'microwave', 'cabinet', 'door', 'light', 'stove',
				'toaster', 'pc', 'plate', 'bread', 'pillow', 'juice', 'bench',
				'sofa')

OPENABLE_KINDS = frozenset(('fridge', 'microwave', 'cabinet', 'door'))
SWITCHABLE_KINDS = frozenset(('light', 'stove', 'toaster', 'pc'))
GRABBABLE_KINDS = frozenset(('plate', 'bread', 'pillow', 'juice'))
SEAT_KINDS = frozenset(('bench', 'sofa'))

STATE_DOMAINS = {
	'open': ('open', 'closed'),
	'switch': ('on', 'off'),
	'grab': ('held', 'placed'),
	'none': ('n/a', )
}


def state_domain(kind: str) -> tuple:
	"""Gets the binary states an object kind may assume.

	Parameters
	----------
	kind: str -- one of OBJECT_KINDS

	Returns: tuple -- the allowed binary_state values
	"""
	if kind in OPENABLE_KINDS:
		return STATE_DOMAINS['open']
	if kind in SWITCHABLE_KINDS:
		return STATE_DOMAINS['switch']
	if kind in GRABBABLE_KINDS:
		return STATE_DOMAINS['grab']
	return STATE_DOMAINS['none']


ObjectInstance = collections.namedtuple('ObjectInstance', [
	'id', 'kind', 'cell', 'binary_state', 'container_contents'
])


class AgentPose(collections.namedtuple('AgentPose', [
		'position', 'heading', 'held_object', 'posture'])):
	"""Continuous agent pose. position is (x, y) in cell units with x along
	the grid columns and y along the grid rows.
	"""
	__slots__ = ()

	@property
	def cell(self) -> tuple:
		return (int(math.floor(self.position[1])),
				int(math.floor(self.position[0])))


CameraPose = collections.namedtuple('CameraPose', ['x', 'y', 'z', 'heading'])


class Skill(collections.namedtuple('Skill', ['verb', 'target'])):
	"""A discrete skill. target is an object id or None."""
	__slots__ = ()

	def sort_key(self) -> tuple:
		return (SKILL_VERBS.index(self.verb),
				-1 if self.target is None else self.target)

	def __str__(self):
		if self.target is None:
			return self.verb
		return '{0}({1})'.format(self.verb, self.target)


class StyleParams(collections.namedtuple('StyleParams', [
		'palette', 'texture_noise', 'motion_scale', 'frames_per_skill'])):
	"""Rendering style. palette is a tuple of (class name, (r, g, b)) pairs so
	the record stays hashable.
	"""
	__slots__ = ()

	def color(self, name: str) -> tuple:
		for key, rgb in self.palette:
			if key == name:
				return rgb
		raise KeyError(name)

	def colors(self) -> dict:
		return dict(self.palette)


WorldState = collections.namedtuple('WorldState', [
	'house_id', 'grid', 'objects', 'agent', 'style', 'rng_seed', 'timestep'
])


Frame = collections.namedtuple('Frame', [
	'rgb', 'depth', 'seg', 'pose', 'timestep'
])


Trajectory = collections.namedtuple('Trajectory', [
	'start_frame', 'start_scene', 'frames', 'scenes', 'next_state'
])


FlowField = collections.namedtuple('FlowField', ['u', 'v', 'valid'])


PromptRecord = collections.namedtuple('PromptRecord', [
	'next_phrase', 'goal_phrase'
])


Sample = collections.namedtuple('Sample', [
	'x_t', 'action_text', 'x_next', 'flow', 'flow_color', 'path',
	'prev_flow', 'prompt'
])


DatasetManifest = collections.namedtuple('DatasetManifest', [
	'root', 'splits', 'stats', 'navigation_stats', 'max_mag', 'skipped',
	'config_echo', 'version'
])


NoiseSchedule = collections.namedtuple('NoiseSchedule', [
	'K', 'betas', 'alpha_bars'
])


CurvePoint = collections.namedtuple('CurvePoint', ['epoch', 'loss', 'aux'])


VqLoss = collections.namedtuple('VqLoss', [
	'total', 'recon', 'codebook_term', 'commit_term'
])


LoraParams = collections.namedtuple('LoraParams', ['layers', 'rank', 'alpha'])


Subgoal = collections.namedtuple('Subgoal', ['text', 'image', 'error'])


SubgoalPlan = collections.namedtuple('SubgoalPlan', [
	'instruction', 'subgoals', 'cursor'
])


Observation = collections.namedtuple('Observation', [
	'frame', 'state', 'prev_flow'
])


Imagination = collections.namedtuple('Imagination', [
	'skill', 'image', 'state'
])


StepLog = collections.namedtuple('StepLog', [
	'step', 'subgoal', 'feasible', 'scores', 'chosen', 'seed', 'notes'
])


EpisodeResult = collections.namedtuple('EpisodeResult', [
	'success', 'steps_taken', 'steps', 'completions', 'error'
])


Task = collections.namedtuple('Task', [
	'uid', 'rooms', 'instruction', 'subgoals'
])


FeatureStats = collections.namedtuple('FeatureStats', [
	'mean', 'covariance', 'count'
])


MetricRow = collections.namedtuple('MetricRow', [
	'model', 'frechet_mean', 'frechet_variance', 'correctness_mean',
	'correctness_variance', 'inconclusive', 'failures'
])


SuccessRow = collections.namedtuple('SuccessRow', [
	'key', 'method', 'task', 'episodes', 'successes', 'rate', 'ci_low',
	'ci_high'
])


AeeRow = collections.namedtuple('AeeRow', [
	'setting', 'pairs', 'predicted_aee', 'previous_aee', 'p_value', 'failures'
])


QualityRow = collections.namedtuple('QualityRow', [
	'verb', 'samples', 'generated_rate', 'reference_rate', 'failures'
])
