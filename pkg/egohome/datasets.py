"""The datasets module generates, writes and loads transition datasets rolled
out of the micro-simulator.

	Every trajectory is addressed by a hierarchical path of the form
/<action>/house_<h>/<agent>/<index>_<object> and holds one sample directory
per consecutive pair of emitted frames, named after the pair index. A sample
directory stores both frames (rgb.png, next_rgb.png, depth.bin, seg.bin,
next_depth.bin, next_seg.bin), the raw ground-truth flow (flow.bin), the
flow of the preceding pair (prev_flow.bin), the flow color image
(flow_color.png), frame metadata (meta.json) and the two prompt phrases
(prompt.json). Navigation subgoal records hold a start and a goal image.

NamedTuples: DatasetConfig, Job

Classes: TrajectoryRoller, SampleAnnotator, SampleWriter, DatasetGenerator,
SampleReader, TransitionDataset, FlowPairDataset, SubgoalDataset

Functions: load_synonyms, trajectory_path, parse_trajectory_path,
make_phrases, parse_phrase, phrase_indices, object_name, prepare_start,
write_sample, load_sample, write_manifest, read_manifest, generate_dataset,
dataset_config, subgoal_records
"""

import collections
import json
import logging
import os
import re
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from os.path import dirname, isdir, isfile, join

import numpy as np
import torch
from cachetools import cachedmethod, LRUCache
from cachetools.keys import hashkey
from PIL import Image
from unidecode import unidecode

from . import flows, houses
from .errors import DatasetError, MissingArtifactError
from .models import (OBJECT_KINDS, PHRASE_VERBS, SKILL_VERBS, TARGETED_VERBS,
					 CameraPose, DatasetManifest, Frame,
					 PromptRecord, Sample, Skill)
from .navigation import PoseGraph
from .pipeline import Pipeline
from .renderers import RaycastRenderer, to_unit
from .skills import feasible_skills, rollout, transition
from .version import __version__


logger = logging.getLogger(__name__)

SYNONYMS_PATH = join(dirname(__file__), 'resources', 'synonyms.txt')
MANIFEST_NAME = 'manifest.json'

NEXT_PREFIX = 'next timestep:'
GOAL_PREFIX = 'the goal state:'

INFEASIBLE_REASON = 'no feasible start state'

SAFE_COMPONENT = re.compile(r'^[A-Za-z0-9_-]+$')

NO_OBJECT = len(OBJECT_KINDS)

FRAME_FILES = {
	'x_t': ('rgb.png', 'depth.bin', 'seg.bin'),
	'x_next': ('next_rgb.png', 'next_depth.bin', 'next_seg.bin')
}


def load_synonyms(path: str=SYNONYMS_PATH) -> dict:
	"""Loads the verb synonym table.

	Parameters
	----------
	path: str -- the table, one `verb: syn | syn` line per verb
	(default the shipped table)

	Returns: dict -- verb to tuple of synonyms, canonical phrasing first
	"""
	table = {}
	with open(path) as f:
		for line in f:
			line = line.split('#', 1)[0].strip()
			if not line:
				continue
			verb, rest = (x.strip() for x in line.split(':', 1))
			table[verb] = tuple(s.strip() for s in rest.split('|')
								if s.strip())
	return table


SYNONYMS = load_synonyms()


def _check_component(name: str, value: str):
	if not value or not SAFE_COMPONENT.match(value):
		raise ValueError('path component {0}={1!r} is empty or unsafe'.format(
			name, value))


def trajectory_path(action: str, house: int, agent: str, index: int,
					obj: str=None) -> str:
	"""Builds the hierarchical path of a trajectory.

	Parameters
	----------
	action: str -- the skill verb
	house: int -- the house id
	agent: str -- the agent name
	index: int -- the trajectory index, non-negative
	obj: str -- the object name, omitted for object-free skills
	(default None)

	Returns: str -- "/<action>/house_<h>/<agent>/<index>[_<object>]"

	Throws ValueError
	"""
	_check_component('action', action)
	_check_component('agent', agent)
	if int(house) < 0 or int(index) < 0:
		raise ValueError('house and index must be non-negative')

	leaf = str(int(index))
	if obj is not None:
		_check_component('object', obj)
		leaf = '{0}_{1}'.format(leaf, obj)
	return '/{0}/house_{1}/{2}/{3}'.format(action, int(house), agent, leaf)


def parse_trajectory_path(path: str) -> tuple:
	"""Inverts trajectory_path.

	Returns: tuple -- (action, house, agent, index, object or None)

	Throws ValueError
	"""
	parts = path.strip('/').split('/')
	if len(parts) != 4 or not parts[1].startswith('house_'):
		raise ValueError('malformed trajectory path {0!r}'.format(path))

	action, house, agent, leaf = parts
	index, _, obj = leaf.partition('_')
	return (action, int(house[len('house_'):]), agent, int(index),
			obj or None)


def make_phrases(skill: Skill, object_name: str, template_seed: int
				 ) -> PromptRecord:
	"""Builds the next-timestep and goal-state phrases of a skill by a
	seeded choice among its verb synonyms.

	Parameters
	----------
	skill: Skill -- the skill, walk_to accepted for navigation goals
	object_name: str -- the object noun, None for object-free skills
	template_seed: int -- seed of the synonym choice

	Returns: PromptRecord -- the two phrases

	Throws ValueError
	"""
	takes_object = skill.verb in TARGETED_VERBS or skill.verb == 'walk_to'
	if (object_name is not None) != takes_object:
		raise ValueError('object name must be given iff {0} takes one'.format(
			skill.verb))

	choices = SYNONYMS[skill.verb]
	rng = np.random.default_rng(int(template_seed))
	verb = choices[int(rng.integers(len(choices)))]

	if object_name is None:
		return PromptRecord('{0} {1}'.format(NEXT_PREFIX, verb),
							'{0} {1}'.format(GOAL_PREFIX, verb))
	return PromptRecord(
		'{0} {1} the {2}'.format(NEXT_PREFIX, verb, object_name),
		'{0} {1} {2}'.format(GOAL_PREFIX, verb, object_name))


def _synonym_index() -> list:
	pairs = [(syn, verb) for verb, syns in SYNONYMS.items() for syn in syns]
	return sorted(pairs, key=lambda p: -len(p[0]))


SYNONYM_INDEX = _synonym_index()


def parse_phrase(text: str) -> tuple:
	"""Reduces a phrase to its verb and object noun. Accepts next-timestep
	and goal-state phrases as well as bare ones.

	Parameters
	----------
	text: str -- the phrase

	Returns: tuple -- (verb, object kind or None)

	Throws ValueError
	"""
	rest = unidecode(text).lower().strip()
	for prefix in (NEXT_PREFIX, GOAL_PREFIX):
		if rest.startswith(prefix):
			rest = rest[len(prefix):].strip()

	for synonym, verb in SYNONYM_INDEX:
		if rest == synonym or rest.startswith(synonym + ' '):
			noun = rest[len(synonym):].strip()
			if noun.startswith('the '):
				noun = noun[4:].strip()
			if not noun:
				return verb, None
			if noun not in OBJECT_KINDS:
				raise ValueError('unknown object {0!r} in {1!r}'.format(
					noun, text))
			return verb, noun

	raise ValueError('unknown verb in {0!r}'.format(text))


def phrase_indices(text: str) -> tuple:
	"""Maps a phrase to (verb index, object index) for embedding lookups.
	The object index is NO_OBJECT for object-free phrases.

	Throws ValueError
	"""
	verb, noun = parse_phrase(text)
	return (PHRASE_VERBS.index(verb),
			NO_OBJECT if noun is None else OBJECT_KINDS.index(noun))


def object_name(state, skill: Skill) -> str:
	"""Gets the object noun a skill acts upon, None for object-free ones."""
	if skill.target is None:
		return None
	return houses.object_by_id(state, skill.target).kind


def _save_png(path: str, rgb: np.ndarray):
	if rgb.dtype != np.uint8:
		rgb = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
	Image.fromarray(rgb, mode='RGB').save(path)


def _load_png(path: str) -> np.ndarray:
	if not isfile(path):
		raise DatasetError('missing artifact file', path)
	try:
		with Image.open(path) as img:
			return np.asarray(img.convert('RGB'))
	except OSError as err:
		raise DatasetError('unreadable image: {0}'.format(err), path)


def _write_json(path: str, payload):
	with open(path, 'w') as f:
		json.dump(payload, f, sort_keys=True, indent=1)


def _read_json(path: str):
	if not isfile(path):
		raise DatasetError('missing artifact file', path)
	try:
		with open(path) as f:
			return json.load(f)
	except ValueError as err:
		raise DatasetError('malformed json: {0}'.format(err), path)


def write_sample(root: str, sample: Sample, max_mag: float) -> str:
	"""Writes one sample below the dataset root.

	Parameters
	----------
	root: str -- the dataset root
	sample: Sample -- the sample, addressed by its path
	max_mag: float -- the dataset's flow codec magnitude

	Returns: str -- the sample directory
	"""
	directory = join(root, sample.path.lstrip('/'))
	os.makedirs(directory, exist_ok=True)

	for key, (png, depth, seg) in FRAME_FILES.items():
		frame = getattr(sample, key)
		_save_png(join(directory, png), frame.rgb)
		flows.write_planes(join(directory, depth), [frame.depth], '<f4')
		flows.write_planes(join(directory, seg), [frame.seg], '<i4')

	flows.write_flow(join(directory, 'flow.bin'), sample.flow)
	flows.write_flow(join(directory, 'prev_flow.bin'), sample.prev_flow)
	_save_png(join(directory, 'flow_color.png'), sample.flow_color)

	_write_json(join(directory, 'meta.json'), {
		'path': sample.path,
		'action_text': sample.action_text,
		'max_mag': max_mag,
		'timesteps': [sample.x_t.timestep, sample.x_next.timestep],
		'poses': [list(sample.x_t.pose), list(sample.x_next.pose)]
	})
	_write_json(join(directory, 'prompt.json'), {
		'next': sample.prompt.next_phrase,
		'goal': sample.prompt.goal_phrase
	})
	return directory


def load_sample(directory: str) -> Sample:
	"""Loads one sample directory. The flow comes from the raw file, never
	from the color image.

	Parameters
	----------
	directory: str -- the sample directory

	Returns: Sample -- the decoded sample

	Throws DatasetError
	"""
	if not isdir(directory):
		raise DatasetError('missing sample directory', directory)

	meta = _read_json(join(directory, 'meta.json'))
	prompt = _read_json(join(directory, 'prompt.json'))
	if set(prompt) != {'next', 'goal'}:
		raise DatasetError('prompt.json must hold exactly "next" and "goal"',
						   join(directory, 'prompt.json'))

	frames = {}
	for i, (key, (png, depth, seg)) in enumerate(sorted(FRAME_FILES.items())):
		rgb = to_unit(_load_png(join(directory, png)))
		d, = flows.read_planes(join(directory, depth), 1, '<f4')
		s, = flows.read_planes(join(directory, seg), 1, '<i4')
		if rgb.shape[:2] != d.shape or d.shape != s.shape:
			raise DatasetError('frame channels disagree in shape',
							   join(directory, png))
		slot = 0 if key == 'x_t' else 1
		frames[key] = Frame(rgb, d, s, CameraPose(*meta['poses'][slot]),
							int(meta['timesteps'][slot]))

	if frames['x_next'].timestep != frames['x_t'].timestep + 1:
		raise DatasetError('invariant violation: timesteps {0} and {1} are '
						   'not consecutive'.format(frames['x_t'].timestep,
													frames['x_next'].timestep),
						   directory)

	flow = flows.read_flow(join(directory, 'flow.bin'))
	prev_flow = flows.read_flow(join(directory, 'prev_flow.bin'))
	if flow.u.shape != frames['x_t'].depth.shape:
		raise DatasetError('flow does not match the frames',
						   join(directory, 'flow.bin'))

	return Sample(frames['x_t'], meta['action_text'], frames['x_next'], flow,
				  _load_png(join(directory, 'flow_color.png')), meta['path'],
				  prev_flow, PromptRecord(prompt['next'], prompt['goal']))


DatasetConfig = collections.namedtuple('DatasetConfig', [
	'root', 'houses', 'agents', 'trajectories_per_skill', 'seed', 'layout',
	'style', 'resolution', 'max_mag', 'validation_houses', 'skills',
	'navigation_records', 'echo', 'workers'
], defaults=(1, ))


Job = collections.namedtuple('Job', ['verb', 'house', 'agent', 'index'])


def dataset_config(run_config, root: str=None, style=None,
				   workers: int=1) -> DatasetConfig:
	"""Builds a DatasetConfig out of a RunConfig's [dataset], [layout] and
	[style] sections. The worker count stays out of the config echo, so it
	never changes what is generated.
	"""
	section = run_config.section('dataset')
	return DatasetConfig(
		root=root or run_config.path('dataset'),
		houses=int(section.get('houses', 8)),
		agents=int(section.get('agents', 2)),
		trajectories_per_skill=int(section.get('trajectories_per_skill', 6)),
		seed=run_config.seed,
		layout=houses.layout_from_mapping(run_config.section('layout')),
		style=style or houses.style_from_mapping(run_config.section('style')),
		resolution=tuple(section.get('resolution', (64, 64))),
		max_mag=float(section.get('max_mag', flows.DEFAULT_MAX_MAG)),
		validation_houses=int(section.get('validation_houses', 1)),
		skills=tuple(section.get('skills', SKILL_VERBS)),
		navigation_records=int(section.get('navigation_records', 0)),
		echo=run_config.echo(),
		workers=max(1, int(workers))
	)


def agent_name(index: int) -> str:
	return 'Agent{0}'.format(index)


def _with_states(state, kinds: frozenset, value: str):
	return state._replace(objects=tuple(
		o._replace(binary_state=value) if o.kind in kinds else o
		for o in state.objects))


def _make_held(state, uid: int):
	objects = []
	for obj in state.objects:
		if uid in obj.container_contents:
			obj = obj._replace(container_contents=tuple(
				c for c in obj.container_contents if c != uid))
		if obj.id == uid:
			obj = obj._replace(cell=None, binary_state='held')
		objects.append(obj)
	return state._replace(objects=tuple(objects),
						  agent=state.agent._replace(held_object=uid))


def prepare_start(state, verb: str, rng: np.random.Generator):
	"""Prepares a start state from which a skill with the given verb is
	feasible, by setting object states and searching agent poses.

	Parameters
	----------
	state: WorldState -- a freshly built house
	verb: str -- the skill verb
	rng: np.random.Generator -- source of every random choice

	Returns: tuple -- (start WorldState, Skill), None when infeasible
	"""
	containers = frozenset(('fridge', 'microwave', 'cabinet'))
	if verb == 'close':
		state = _with_states(state, containers | {'door'}, 'open')
	elif verb == 'switch_off':
		state = _with_states(state, frozenset(('light', 'stove', 'toaster',
											   'pc')), 'on')
	elif verb == 'walk_through':
		state = _with_states(state, frozenset(('door', )), 'open')
	elif verb in ('grab', 'put_in') and rng.random() < 0.5:
		state = _with_states(state, containers, 'open')

	if verb in ('put_back', 'put_in'):
		loose = [o.id for o in state.objects
				 if o.kind in ('plate', 'bread', 'pillow', 'juice')
				 and not o.container_contents]
		if not loose:
			return None
		state = _make_held(state, loose[int(rng.integers(len(loose)))])
		if verb == 'put_in':
			state = _with_states(state, containers, 'open')

	wanted = 'sit' if verb == 'stand_up' else verb
	free = [(r, c) for r, c in zip(*np.nonzero(state.grid == 0))]
	poses = [(cell, h) for cell in free for h in houses.HEADINGS]
	for idx in rng.permutation(len(poses)):
		(r, c), heading = poses[int(idx)]
		agent = state.agent._replace(position=(c + 0.5, r + 0.5),
									 heading=float(heading))
		candidate = state._replace(agent=agent)
		if candidate.agent.cell in [o.cell for o in state.objects
									if o.kind != 'door']:
			continue

		options = [s for s in feasible_skills(candidate) if s.verb == wanted]
		if not options:
			continue

		skill = options[int(rng.integers(len(options)))]
		if verb == 'stand_up':
			candidate = transition(candidate, skill)._replace(timestep=0)
			skill = Skill('stand_up', None)
		return candidate, skill

	return None


class TrajectoryRoller(object):
	"""Producer of the generation pipeline: rolls one job's skill out.

	Methods: roll
	"""
	def __init__(self, config: DatasetConfig, renderer: RaycastRenderer):
		"""TrajectoryRoller's constructor."""
		self.config = config
		self.renderer = renderer

	def job_rng(self, job: Job) -> np.random.Generator:
		return np.random.default_rng([
			self.config.seed, job.house, job.agent,
			PHRASE_VERBS.index(job.verb), job.index])

	def roll(self, job: Job) -> tuple:
		"""Rolls the job's trajectory.

		Returns: tuple -- (job, start state, skill, Trajectory, phrase seed),
		with None in place of the last three when infeasible
		"""
		rng = self.job_rng(job)
		state = houses.build_house(job.house, self.config.seed,
								   self.config.layout, self.config.style)
		prepared = prepare_start(state, job.verb, rng)
		if prepared is None:
			return job, state, None, None, None

		start, skill = prepared
		trajectory = rollout(start, skill, self.renderer)
		return job, start, skill, trajectory, int(rng.integers(2 ** 31))


class SampleAnnotator(object):
	"""Middle stage of the generation pipeline: pairs consecutive frames with
	their flows and phrases.

	Methods: annotate
	"""
	def __init__(self, config: DatasetConfig, renderer: RaycastRenderer):
		"""SampleAnnotator's constructor."""
		self.config = config
		self.renderer = renderer

	def annotate(self, rolled: tuple) -> tuple:
		"""Builds the samples of a rolled trajectory.

		Returns: tuple -- (job, list of Sample or None)
		"""
		job, start, skill, trajectory, phrase_seed = rolled
		if trajectory is None:
			return job, None

		noun = object_name(start, skill)
		prompt = make_phrases(skill, noun, phrase_seed)
		base = trajectory_path(job.verb, job.house, agent_name(job.agent),
							   job.index, noun)

		frames, scenes = trajectory.frames, trajectory.scenes
		previous = self.renderer.ground_truth_flow(
			trajectory.start_frame, frames[0], scenes[0])

		samples = []
		for k in range(len(frames) - 1):
			flow = self.renderer.ground_truth_flow(frames[k], frames[k + 1],
												   scenes[k + 1])
			samples.append(Sample(
				frames[k], prompt.next_phrase, frames[k + 1], flow,
				flows.flow_to_color(flow, self.config.max_mag),
				'{0}/{1}'.format(base, k), previous, prompt))
			previous = flow
		return job, samples


class SampleWriter(object):
	"""Consumer of the generation pipeline: writes samples to disk.

	Methods: write
	"""
	def __init__(self, config: DatasetConfig):
		"""SampleWriter's constructor."""
		self.config = config

	def write(self, annotated: tuple) -> tuple:
		"""Writes the samples of a job.

		Returns: tuple -- (job, trajectory path or None, sample count, skip
		reason or None)
		"""
		job, samples = annotated
		if samples is None:
			return job, None, 0, INFEASIBLE_REASON
		for sample in samples:
			write_sample(self.config.root, sample, self.config.max_mag)
		return job, samples[0].path.rsplit('/', 1)[0], len(samples), None


def _failed_job(job: Job, error) -> tuple:
	return job, None, 0, str(error)


def _manifest_payload(manifest: DatasetManifest) -> dict:
	return {
		'splits': manifest.splits,
		'stats': manifest.stats,
		'navigation_stats': manifest.navigation_stats,
		'max_mag': manifest.max_mag,
		'skipped': manifest.skipped,
		'config': manifest.config_echo,
		'version': manifest.version
	}


def write_manifest(manifest: DatasetManifest) -> str:
	"""Writes the manifest at the dataset root, sorted keys, no timestamps.

	Returns: str -- the manifest path
	"""
	path = join(manifest.root, MANIFEST_NAME)
	with open(path, 'w') as f:
		json.dump(_manifest_payload(manifest), f, sort_keys=True, indent=1)
	return path


def read_manifest(root: str) -> DatasetManifest:
	"""Reads the manifest of a dataset.

	Throws MissingArtifactError
	"""
	path = join(root, MANIFEST_NAME)
	if not isfile(path):
		raise MissingArtifactError(path, 'gen-data')
	payload = _read_json(path)
	return DatasetManifest(root, payload['splits'], payload['stats'],
						   payload.get('navigation_stats', {}),
						   payload['max_mag'], payload['skipped'],
						   payload['config'], payload['version'])


class DatasetGenerator(object):
	"""Orchestrates dataset generation over every (skill, house, agent,
	index) job through a roll, annotate and write pipeline. Jobs write
	disjoint directories and fan out over config.workers processes.

	Methods: jobs, run_jobs, generate
	"""
	def __init__(self, config: DatasetConfig):
		"""DatasetGenerator's constructor.

		Parameters
		----------
		config: DatasetConfig -- the generation settings
		"""
		if config.houses <= config.validation_houses:
			raise ValueError('at least one training house is required')
		self.config = config
		self.renderer = RaycastRenderer(config.resolution)
		self.pipeline = Pipeline(
			TrajectoryRoller(config, self.renderer).roll,
			SampleAnnotator(config, self.renderer).annotate,
			SampleWriter(config).write,
			on_error=_failed_job
		)

	def jobs(self) -> list:
		"""Lists the generation jobs in canonical order."""
		return [Job(verb, house, agent, index)
				for verb in self.config.skills
				for house in range(self.config.houses)
				for agent in range(self.config.agents)
				for index in range(self.config.trajectories_per_skill)]

	def run_jobs(self, jobs: list) -> list:
		"""Runs the pipeline over jobs, in a process pool when more than one
		worker is configured.

		Parameters
		----------
		jobs: list -- Job records

		Returns: list -- the writer results, in the order of jobs
		"""
		if self.config.workers <= 1 or len(jobs) < 2:
			return [self.pipeline.run(job) for job in jobs]

		logger.info('generating %d trajectories on %d workers', len(jobs),
					self.config.workers)
		chunk = max(1, len(jobs) // (4 * self.config.workers))
		with ProcessPoolExecutor(max_workers=self.config.workers) as pool:
			return list(pool.map(self.pipeline.run, jobs, chunksize=chunk))

	def validation_houses(self) -> list:
		return list(range(self.config.houses - self.config.validation_houses,
						  self.config.houses))

	def _navigation(self, house: int, split: list, stats: dict):
		rng = np.random.default_rng([self.config.seed, house, 7919])
		state = houses.build_house(house, self.config.seed,
								   self.config.layout, self.config.style)
		graph = PoseGraph(state)
		targets = [o for o in state.objects if o.kind != 'door'
				   and o.cell is not None
				   and not any(o.id in p.container_contents
							   for p in state.objects)]

		for index in range(self.config.navigation_records):
			target = targets[int(rng.integers(len(targets)))]
			free = np.argwhere(graph.standable)
			cell = tuple(free[int(rng.integers(len(free)))])
			heading = float(houses.HEADINGS[int(rng.integers(4))])
			costs = graph.costs_from(cell, heading)
			goals = [n for n in graph.facing_nodes(target.cell)
					 if np.isfinite(costs[n])]
			if not goals:
				logger.warning('no path to %s in house %d', target.kind,
							   house)
				continue

			goal_cell, goal_heading = graph.pose(min(goals,
													 key=lambda n: costs[n]))
			start = state._replace(agent=state.agent._replace(
				position=(cell[1] + 0.5, cell[0] + 0.5), heading=heading))
			goal = state._replace(agent=state.agent._replace(
				position=(goal_cell[1] + 0.5, goal_cell[0] + 0.5),
				heading=goal_heading))

			prompt = make_phrases(Skill('walk_to', None), target.kind,
								  int(rng.integers(2 ** 31)))
			path = trajectory_path('walk_to', house, agent_name(0), index,
								   target.kind)
			directory = join(self.config.root, path.lstrip('/'))
			os.makedirs(directory, exist_ok=True)
			_save_png(join(directory, 'rgb.png'),
					  self.renderer.render(start).rgb)
			_save_png(join(directory, 'next_rgb.png'),
					  self.renderer.render(goal).rgb)
			_write_json(join(directory, 'prompt.json'), {
				'next': prompt.next_phrase, 'goal': prompt.goal_phrase})
			split.append(path)

			key = 'house_{0}'.format(house)
			stats[key] = stats.get(key, 0) + 1

	def generate(self) -> DatasetManifest:
		"""Generates the dataset and writes the manifest last. A dataset whose
		manifest carries the same config echo is left untouched.

		Returns: DatasetManifest -- the manifest
		"""
		root = self.config.root
		if isfile(join(root, MANIFEST_NAME)):
			existing = read_manifest(root)
			if existing.config_echo == self.config.echo:
				logger.info('dataset at %s is complete, nothing to do', root)
				return existing

		os.makedirs(root, exist_ok=True)
		validation = set(self.validation_houses())
		splits = {'train': [], 'validation': [], 'navigation_train': [],
				  'navigation_validation': []}
		stats, skipped = {}, []

		for job, path, count, reason in self.run_jobs(self.jobs()):
			if path is None:
				logger.warning('skipped %s in house %d (agent %d, index %d): '
							   '%s', job.verb, job.house, job.agent, job.index,
							   reason)
				skipped.append({'action': job.verb, 'house': job.house,
								'agent': agent_name(job.agent),
								'index': job.index, 'reason': reason})
				continue

			split = 'validation' if job.house in validation else 'train'
			splits[split].append(path)
			key = '{0}/house_{1}'.format(job.verb, job.house)
			stats[key] = stats.get(key, 0) + count

		navigation_stats = {}
		for house in range(self.config.houses):
			split = 'navigation_validation' if house in validation \
				else 'navigation_train'
			self._navigation(house, splits[split], navigation_stats)

		manifest = DatasetManifest(root, splits, stats, navigation_stats,
								   self.config.max_mag, skipped,
								   self.config.echo, __version__)
		write_manifest(manifest)
		logger.info('wrote %d samples to %s (%d skipped trajectories)',
					sum(stats.values()), root, len(skipped))
		return manifest


def generate_dataset(config: DatasetConfig) -> DatasetManifest:
	"""Generates a dataset. Deterministic in the config's seed.

	Parameters
	----------
	config: DatasetConfig -- the generation settings

	Returns: DatasetManifest -- the manifest written at the root
	"""
	return DatasetGenerator(config).generate()


class SampleReader(object):
	"""Memoized reader of the samples of one dataset.

	Methods: trajectories, sample_paths, load, samples
	"""
	def __init__(self, manifest: DatasetManifest, cache_maxsize: int=512):
		"""SampleReader's constructor.

		Parameters
		----------
		manifest: DatasetManifest -- the dataset manifest
		cache_maxsize: int -- samples kept in memory (default 512)
		"""
		self.manifest = manifest
		self._cache = LRUCache(maxsize=cache_maxsize)

	def trajectories(self, split: str) -> list:
		return list(self.manifest.splits.get(split, []))

	def sample_paths(self, trajectory: str) -> list:
		directory = join(self.manifest.root, trajectory.lstrip('/'))
		if not isdir(directory):
			raise DatasetError('missing trajectory directory', directory)
		pairs = sorted(int(x) for x in os.listdir(directory) if x.isdigit())
		return ['{0}/{1}'.format(trajectory, k) for k in pairs]

	@cachedmethod(lambda self: self._cache, key=partial(hashkey, 'sample'))
	def load(self, path: str) -> Sample:
		"""Loads a sample by its dataset path.

		Throws DatasetError
		"""
		return load_sample(join(self.manifest.root, path.lstrip('/')))

	def samples(self, split: str) -> list:
		"""Loads every sample of a split, in manifest order."""
		return [self.load(p) for t in self.trajectories(split)
				for p in self.sample_paths(t)]


def subgoal_records(manifest: DatasetManifest, split: str='train') -> list:
	"""Lists (x_start rgb, goal phrase, x_goal rgb) triples: the first and
	last frames of every trajectory plus the navigation records.

	Parameters
	----------
	manifest: DatasetManifest -- the dataset
	split: str -- 'train' or 'validation' (default 'train')

	Returns: list -- the triples
	"""
	reader = SampleReader(manifest)
	records = []
	for trajectory in reader.trajectories(split):
		paths = reader.sample_paths(trajectory)
		first, last = reader.load(paths[0]), reader.load(paths[-1])
		records.append((first.x_t.rgb, first.prompt.goal_phrase,
						last.x_next.rgb))

	for path in manifest.splits.get('navigation_' + split, []):
		directory = join(manifest.root, path.lstrip('/'))
		prompt = _read_json(join(directory, 'prompt.json'))
		records.append((to_unit(_load_png(join(directory, 'rgb.png'))),
						prompt['goal'],
						to_unit(_load_png(join(directory, 'next_rgb.png')))))
	return records


def image_tensor(rgb: np.ndarray) -> torch.Tensor:
	"""Converts an H x W x 3 image in [0, 1] (or uint8) to a 3 x H x W float
	tensor in [0, 1].
	"""
	rgb = np.asarray(rgb)
	if rgb.dtype == np.uint8:
		rgb = to_unit(rgb)
	return torch.from_numpy(np.ascontiguousarray(
		rgb.transpose(2, 0, 1), dtype=np.float32))


class TransitionDataset(torch.utils.data.Dataset):
	"""Torch view over transition samples for the dynamics model.

	Items are dictionaries with x_t, x_next, verb, object and, unless
	flow_source is 'none', flow (the current or previous flow color image).
	"""
	def __init__(self, samples: list, max_mag: float,
				 flow_source: str='none'):
		"""TransitionDataset's constructor.

		Parameters
		----------
		samples: list -- the Sample records
		max_mag: float -- the dataset's flow codec magnitude
		flow_source: str -- 'none', 'current' or 'previous' (default 'none')
		"""
		if flow_source not in ('none', 'current', 'previous'):
			raise ValueError('unknown flow source {0}'.format(flow_source))
		self.samples = list(samples)
		self.max_mag = max_mag
		self.flow_source = flow_source

	def __len__(self):
		return len(self.samples)

	def __getitem__(self, idx: int) -> dict:
		sample = self.samples[idx]
		verb, obj = phrase_indices(sample.action_text)
		item = {'x_t': image_tensor(sample.x_t.rgb),
				'x_next': image_tensor(sample.x_next.rgb),
				'verb': torch.tensor(verb), 'object': torch.tensor(obj)}
		if self.flow_source == 'current':
			item['flow'] = image_tensor(sample.flow_color)
		elif self.flow_source == 'previous':
			item['flow'] = image_tensor(
				flows.flow_to_color(sample.prev_flow, self.max_mag))
		return item


class FlowPairDataset(torch.utils.data.Dataset):
	"""Torch view over (previous flow color, verb, current flow color)
	triples for the flow predictor.
	"""
	def __init__(self, samples: list, max_mag: float,
				 shuffle_actions_seed: int=None):
		"""FlowPairDataset's constructor.

		Parameters
		----------
		samples: list -- the Sample records
		max_mag: float -- the dataset's flow codec magnitude
		shuffle_actions_seed: int -- when given, verbs are permuted across
		samples with this seed (ablation) (default None)
		"""
		self.samples = list(samples)
		self.max_mag = max_mag
		self.verbs = [phrase_indices(s.action_text)[0] for s in self.samples]
		if shuffle_actions_seed is not None:
			order = np.random.default_rng(shuffle_actions_seed).permutation(
				len(self.verbs))
			self.verbs = [self.verbs[i] for i in order]

	def __len__(self):
		return len(self.samples)

	def __getitem__(self, idx: int) -> dict:
		sample = self.samples[idx]
		return {'prev': image_tensor(flows.flow_to_color(sample.prev_flow,
														 self.max_mag)),
				'verb': torch.tensor(self.verbs[idx]),
				'target': image_tensor(sample.flow_color)}


class SubgoalDataset(torch.utils.data.Dataset):
	"""Torch view over (x_start, goal phrase, x_goal) triples, shaped like
	TransitionDataset items so the same training loop applies.
	"""
	def __init__(self, records: list):
		"""SubgoalDataset's constructor."""
		self.records = list(records)

	def __len__(self):
		return len(self.records)

	def __getitem__(self, idx: int) -> dict:
		start, goal, target = self.records[idx]
		verb, obj = phrase_indices(goal)
		return {'x_t': image_tensor(start), 'x_next': image_tensor(target),
				'verb': torch.tensor(verb), 'object': torch.tensor(obj)}
