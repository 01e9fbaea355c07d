"""The planners module turns instructions into subgoal plans and drives the
one-step planner: every feasible skill is imagined with a world model, scored
against the active subgoal by a goal matcher, and the best one is executed.

ABCs: WorldModel, Policy

NamedTuples: EpisodeConfig

Classes: HomeEnv, SimulatorWorldModel, DiffusionWorldModel, OneStepPolicy,
RandomPolicy, GreedyTextPolicy

Functions: load_tasks, decompose, goal_phrase, action_phrase,
task_environment, find_environment, plan_step, materialize_image_subgoals,
episode_config, run_episode
"""

import abc
import collections
import hashlib
import logging
import re
from os.path import dirname, join

import numpy as np
from cachetools import LRUCache
from cachetools.keys import hashkey
from unidecode import unidecode

from . import flows, houses
from .datasets import GOAL_PREFIX, NEXT_PREFIX, SYNONYMS, object_name
from .dynamics import sample_next_obs, sample_subgoal_image
from .errors import EgohomeError, PlanningError
from .houses import DEFAULT_LAYOUT, DEFAULT_STYLE
from .matchers import bind_object, goal_satisfied, parse_subgoal
from .models import EpisodeResult, Imagination, Observation, Skill, StepLog, \
	Subgoal, SubgoalPlan, Task
from .navigation import PoseGraph
from .predictors import predict_color
from .renderers import DEFAULT_RENDERER
from .skills import CONTAINER_KINDS, feasible_skills, rollout, transition


logger = logging.getLogger(__name__)

RESOURCES = join(dirname(__file__), 'resources')
TASKS_PATH = join(RESOURCES, 'tasks.txt')
NAVIGATION_TASKS_PATH = join(RESOURCES, 'navigation_tasks.txt')

BACKENDS = ('grammar', 'lmm')
SUBGOAL_MODES = ('text', 'image')
FLOW_SOURCES = ('none', 'previous', 'predicted')

TASK_HEADER = re.compile(r'^task (\d+) rooms=(\d+):\s*(.+)$')
TAKE_PATTERN = re.compile(
	r'^take the (\w+) (?:from|out of) the (\w+) and (?:place|put) it '
	r'(?:on|in|into) the (\w+)(?: on the table)?$')
CLAUSE_SPLIT = re.compile(r'\s*,?\s+(?:and then|then|and)\s+')


def load_tasks(path: str=TASKS_PATH) -> list:
	"""Reads a task file: a "task <uid> rooms=<n>: <instruction>" header
	followed by one "- <subgoal>" line per expected subgoal.

	Parameters
	----------
	path: str -- the task file (default the shipped tasks.txt)

	Returns: list -- Task records in file order

	Throws PlanningError
	"""
	tasks, current = [], None
	with open(path, 'r', encoding='utf-8') as handle:
		for number, line in enumerate(handle, 1):
			line = line.strip()
			if not line or line.startswith('#'):
				continue
			header = TASK_HEADER.match(line)
			if header:
				uid, rooms, instruction = header.groups()
				current = Task(int(uid), int(rooms), instruction.strip(), [])
				tasks.append(current)
			elif line.startswith('-') and current is not None:
				current.subgoals.append(line[1:].strip())
			else:
				raise PlanningError('{0}:{1}: unexpected line {2!r}'.format(
					path, number, line))

	tasks = [t._replace(subgoals=tuple(t.subgoals)) for t in tasks]
	empty = [t.uid for t in tasks if not t.subgoals]
	if empty:
		raise PlanningError('task {0} lists no subgoal'.format(empty[0]))
	return tasks


def _place_clause(noun: str, receiver: str) -> str:
	if receiver in CONTAINER_KINDS:
		return 'put the {0} in the {1}'.format(noun, receiver)
	return 'place the {0} on the {1}'.format(noun, receiver)


def decompose(instruction: str, backend: str='grammar', requester=None
			  ) -> list:
	"""Decomposes an instruction into ordered subgoal texts.

	Parameters
	----------
	instruction: str -- the household instruction
	backend: str -- 'grammar' for the deterministic pattern expansion or
	'lmm' for the chat endpoint (default 'grammar')
	requester: LmmRequester -- the endpoint client of the lmm backend
	(default None)

	Returns: list -- the subgoal texts, at least one

	Throws PlanningError, LmmError
	"""
	if backend not in BACKENDS:
		raise ValueError('unknown decomposition backend {0}'.format(backend))
	if backend == 'lmm':
		if requester is None:
			raise PlanningError('the lmm backend needs an endpoint client')
		subgoals = requester.decompose(instruction)
		for text in subgoals:
			parse_subgoal(text)
		return subgoals

	folded = ' '.join(unidecode(instruction).lower().strip().rstrip(
		'.').split())
	taken = TAKE_PATTERN.match(folded)
	if taken:
		noun, holder, receiver = taken.groups()
		subgoals = ['walk to the {0}'.format(holder),
					'grab the {0}'.format(noun),
					'walk to the {0}'.format(receiver),
					_place_clause(noun, receiver)]
	else:
		subgoals = [c for c in CLAUSE_SPLIT.split(folded) if c]

	if not subgoals:
		raise PlanningError('empty instruction')
	for text in subgoals:
		parse_subgoal(text)
	return subgoals


def goal_phrase(text: str) -> str:
	"""Rewrites a subgoal text in the goal-state phrasing the subgoal image
	model is trained on.

	Throws PlanningError
	"""
	spec = parse_subgoal(text)
	noun = spec.receiver or spec.noun
	return '{0} {1} {2}'.format(GOAL_PREFIX, SYNONYMS[spec.verb][0], noun)


def action_phrase(state, skill: Skill) -> str:
	"""Canonical next-timestep phrase of a skill."""
	noun = object_name(state, skill)
	verb = SYNONYMS[skill.verb][0]
	if noun is None:
		return '{0} {1}'.format(NEXT_PREFIX, verb)
	return '{0} {1} the {2}'.format(NEXT_PREFIX, verb, noun)


class HomeEnv(object):
	"""The micro-simulator seen as an episode environment. Keeps the latest
	frame and the ground-truth flow of the last frame pair.

	Methods: observe, feasible, step, satisfied
	"""
	def __init__(self, state, renderer=DEFAULT_RENDERER, bindings: dict=None):
		"""HomeEnv's constructor.

		Parameters
		----------
		state: WorldState -- the initial state
		renderer: RaycastRenderer -- the renderer (default 64x64)
		bindings: dict -- subgoal noun to object id (default None)
		"""
		self.state = state
		self.renderer = renderer
		self.bindings = dict(bindings or {})
		self.frame = renderer.render(state)
		self.prev_flow = flows.zero_flow(self.frame.depth.shape)

	def observe(self) -> Observation:
		return Observation(self.frame, self.state, self.prev_flow)

	def feasible(self) -> list:
		return feasible_skills(self.state)

	def step(self, skill: Skill) -> Observation:
		"""Executes a skill.

		Returns: Observation -- the observation after the skill

		Throws InfeasibleSkillError
		"""
		trajectory = rollout(self.state, skill, self.renderer)
		frames = [trajectory.start_frame] + list(trajectory.frames)
		self.prev_flow = self.renderer.ground_truth_flow(
			frames[-2], frames[-1], trajectory.scenes[-1])
		self.frame = frames[-1]
		self.state = trajectory.next_state
		return self.observe()

	def satisfied(self, text: str) -> bool:
		"""Checks a subgoal text against the true state."""
		return goal_satisfied(self.state, parse_subgoal(text), self.bindings)


def _with_state(state, uid: int, value: str):
	return state._replace(objects=tuple(
		o._replace(binary_state=value) if o.id == uid else o
		for o in state.objects))


def _holder(state, uid: int):
	for obj in state.objects:
		if uid in obj.container_contents:
			return obj
	return None


def _bind(state, nouns: list, rng: np.random.Generator) -> tuple:
	rooms = houses.room_map(state.grid)
	bindings, home = {}, None
	for noun in nouns:
		if noun in bindings:
			continue
		inner = [c for uid in bindings.values()
				 for c in houses.object_by_id(state, uid).container_contents
				 if houses.object_by_id(state, c).kind == noun]
		if inner:
			bindings[noun] = inner[0]
			continue

		kind = [o for o in state.objects if o.kind == noun
				and o.cell is not None]
		loose = [o for o in kind if _holder(state, o.id) is None] or kind
		if home is not None:
			loose = [o for o in loose if rooms[o.cell] == home] or loose
		if not loose:
			raise PlanningError('house {0} has no {1}'.format(
				state.house_id, noun))

		chosen = loose[int(rng.integers(len(loose)))]
		bindings[noun] = chosen.id
		if home is None:
			holder = _holder(state, chosen.id)
			home = rooms[(holder or chosen).cell]
	return bindings, home


def _initial_conditions(state, specs: list, bindings: dict):
	touched = set()
	for spec in specs:
		obj = bind_object(state, spec.noun, bindings)
		value = None
		if spec.verb in ('open', 'close', 'switch_on', 'switch_off'):
			value = {'open': 'closed', 'close': 'open', 'switch_on': 'off',
					 'switch_off': 'on'}[spec.verb]
		elif spec.verb == 'grab':
			holder = _holder(state, obj.id)
			if holder is not None and holder.kind in CONTAINER_KINDS:
				obj, value = holder, 'open'
		elif spec.verb == 'put_in':
			receiver = bind_object(state, spec.receiver, bindings)
			if receiver.kind in CONTAINER_KINDS:
				obj, value = receiver, 'open'

		if value is not None and obj.id not in touched:
			state = _with_state(state, obj.id, value)
			touched.add(obj.id)
	return state


def task_environment(task: Task, house_id: int, seed: int,
					 layout=DEFAULT_LAYOUT, style=DEFAULT_STYLE,
					 renderer=DEFAULT_RENDERER) -> HomeEnv:
	"""Builds the environment of one task episode. Subgoal nouns are bound
	to object instances, object states are set so that no subgoal holds
	initially, and the agent spawns in the room of the first bound object
	(single-room tasks) or in another room (two-room tasks).

	Parameters
	----------
	task: Task -- the task
	house_id: int -- the house
	seed: int -- the generation and binding seed
	layout: LayoutConfig -- house layout (default DEFAULT_LAYOUT)
	style: StyleParams -- rendering style (default DEFAULT_STYLE)
	renderer: RaycastRenderer -- the renderer (default 64x64)

	Returns: HomeEnv -- the environment

	Throws PlanningError, LayoutError
	"""
	state = houses.build_house(house_id, seed, layout, style)
	rng = np.random.default_rng([seed, house_id, task.uid])
	specs = [parse_subgoal(t) for t in task.subgoals]
	nouns = [n for s in specs for n in (s.noun, s.receiver) if n is not None]

	bindings, home = _bind(state, nouns, rng)
	state = _initial_conditions(state, specs, bindings)

	rooms = houses.room_map(state.grid)
	graph = PoseGraph(state)
	if task.rooms > 1:
		spawn = graph.standable & (rooms != home) & (rooms > 0)
	else:
		spawn = graph.standable & (rooms == home)
	cells = [tuple(c) for c in np.argwhere(spawn)]
	if not cells:
		raise PlanningError('house {0} has no spawn cell for task {1}'.format(
			house_id, task.uid))

	sites = []
	for noun in nouns:
		obj = bind_object(state, noun, bindings)
		holder = _holder(state, obj.id)
		sites.append((holder or obj).cell)

	for idx in rng.permutation(len(cells)):
		cell = cells[int(idx)]
		heading = float(houses.HEADINGS[int(rng.integers(4))])
		costs = graph.costs_from(cell, heading)
		if all(any(np.isfinite(costs[n]) for n in graph.facing_nodes(s))
			   for s in sites):
			agent = state.agent._replace(
				position=(cell[1] + 0.5, cell[0] + 0.5), heading=heading,
				held_object=None, posture='standing')
			state = state._replace(agent=agent)
			env = HomeEnv(state, renderer, bindings)
			if not any(env.satisfied(t) for t in task.subgoals[:1]):
				return env

	raise PlanningError('no spawn cell of house {0} reaches every object of '
						'task {1}'.format(house_id, task.uid))


def find_environment(task: Task, episode: int, seed: int,
					 layout=DEFAULT_LAYOUT, style=DEFAULT_STYLE,
					 renderer=DEFAULT_RENDERER, attempts: int=20) -> HomeEnv:
	"""Builds the environment of an episode, moving on to further houses
	when one cannot host the task.

	Throws PlanningError
	"""
	errors = []
	for attempt in range(attempts):
		house_id = episode * attempts + attempt
		try:
			return task_environment(task, house_id, seed, layout, style,
									renderer)
		except PlanningError as err:
			errors.append(str(err))
			logger.debug('house %d skipped: %s', house_id, err)
	raise PlanningError('no house hosts task {0}: {1}'.format(
		task.uid, errors[-1]))


class WorldModel(abc.ABC):
	"""The WorldModel is an abstract class used to imagine the outcome of a
	skill from the current observation.

	Methods: imagine
	"""
	@abc.abstractmethod
	def imagine(self, observation: Observation, skill: Skill, seed: int
				) -> Imagination:
		"""Imagines the next observation.

		Parameters
		----------
		observation: Observation -- the current observation
		skill: Skill -- a feasible skill
		seed: int -- sampler seed

		Returns: Imagination -- the skill, the imagined image and the
		imagined state when known
		"""
		pass


class SimulatorWorldModel(WorldModel):
	"""Imagines with the simulator itself, an oracle world model.

	Methods: imagine
	"""
	def __init__(self, renderer=DEFAULT_RENDERER):
		self.renderer = renderer

	def imagine(self, observation: Observation, skill: Skill, seed: int
				) -> Imagination:
		"""Imagines the next observation @WorldModel"""
		state = transition(observation.state, skill)
		return Imagination(skill, self.renderer.render(state).rgb, state)


def _digest(*arrays) -> str:
	sha = hashlib.sha1()
	for array in arrays:
		sha.update(np.ascontiguousarray(array).tobytes())
	return sha.hexdigest()


class DiffusionWorldModel(WorldModel):
	"""Imagines with the learned dynamics model, fed with no flow, with the
	previous flow or with the flow predictor's current flow. Imaginations
	are memoized per (observation, skill, seed).

	Methods: hint, imagine
	"""
	def __init__(self, network, schedule, flow_source: str='none',
				 flow_predictor=None, max_mag: float=flows.DEFAULT_MAX_MAG,
				 steps: int=20, cache_maxsize: int=256):
		"""DiffusionWorldModel's constructor.

		Parameters
		----------
		network: Denoiser -- the dynamics model
		schedule: NoiseSchedule -- its schedule
		flow_source: str -- 'none', 'previous' or 'predicted' (default
		'none')
		flow_predictor: FlowPredictor -- required by 'predicted'
		(default None)
		max_mag: float -- the dataset's flow codec magnitude (default 8.0)
		steps: int -- sampling steps (default 20)
		cache_maxsize: int -- imaginations kept in memory (default 256)

		Throws PlanningError
		"""
		if flow_source not in FLOW_SOURCES:
			raise ValueError('unknown flow source {0}'.format(flow_source))
		if flow_source == 'predicted' and flow_predictor is None:
			raise PlanningError('predicted flow needs a flow predictor')
		self.network = network
		self.schedule = schedule
		self.flow_source = flow_source
		self.flow_predictor = flow_predictor
		self.max_mag = max_mag
		self.steps = steps
		self._cache = LRUCache(maxsize=cache_maxsize)

	def hint(self, observation: Observation, text: str) -> np.ndarray:
		"""Gets the flow color image fed to the control branch, None without
		flow.
		"""
		if self.flow_source == 'none':
			return None
		color = flows.flow_to_color(observation.prev_flow, self.max_mag)
		if self.flow_source == 'previous':
			return color
		return predict_color(self.flow_predictor, color, text)

	def imagine(self, observation: Observation, skill: Skill, seed: int
				) -> Imagination:
		"""Imagines the next observation @WorldModel"""
		rgb = observation.frame.rgb
		flow = observation.prev_flow
		key = hashkey(_digest(rgb, flow.u, flow.v), skill, int(seed))
		if key not in self._cache:
			text = action_phrase(observation.state, skill)
			image = sample_next_obs(self.network, self.schedule, rgb, text,
									self.hint(observation, text), self.steps,
									seed)
			self._cache[key] = Imagination(skill, image, None)
		return self._cache[key]


class Policy(abc.ABC):
	"""The Policy is an abstract class used to pick the next skill.

	Methods: choose
	"""
	@abc.abstractmethod
	def choose(self, observation: Observation, subgoal: Subgoal,
			   feasible: list, seed: int, notes: list) -> tuple:
		"""Picks a skill.

		Parameters
		----------
		observation: Observation -- the current observation
		subgoal: Subgoal -- the active subgoal
		feasible: list -- the feasible skills
		seed: int -- the step seed
		notes: list -- collects the step's warnings

		Returns: tuple -- (Skill, dict of candidate scores)
		"""
		pass


def _argmax(skills: list, values: list) -> int:
	best = 0
	for idx in range(1, len(skills)):
		if values[idx] > values[best]:
			best = idx
	return best


def plan_step(x_t: Observation, subgoal: Subgoal, world_model: WorldModel,
			  feasible: list, matcher, seed: int, notes: list=None) -> tuple:
	"""Imagines every feasible skill and picks the one whose outcome the
	matcher scores closest to the subgoal. Ties go to the canonical (verb,
	target) order.

	Parameters
	----------
	x_t: Observation -- the current observation
	subgoal: Subgoal -- the active subgoal
	world_model: WorldModel -- the imagination
	feasible: list -- the feasible skills, non-empty
	matcher: GoalMatcher -- the scorer
	seed: int -- the sampler seed shared by every candidate
	notes: list -- collects candidate failures and matcher fallbacks
	(default None)

	Returns: tuple -- (Skill, dict of skill label to score)

	Throws PlanningError
	"""
	if not feasible:
		raise PlanningError('no feasible skill')
	notes = notes if notes is not None else []

	candidates = []
	for skill in sorted(feasible, key=Skill.sort_key):
		try:
			candidates.append(world_model.imagine(x_t, skill, seed))
		except (EgohomeError, RuntimeError, ValueError) as err:
			logger.warning('imagining %s failed, candidate dropped: %s',
						   skill, err)
			notes.append('candidate {0} dropped: {1}'.format(skill, err))

	if not candidates:
		raise PlanningError('every candidate failed in the world model')

	values, extra = matcher.score_candidates(candidates, subgoal)
	notes.extend(extra)
	best = _argmax([c.skill for c in candidates], values)
	scores = {str(c.skill): float(v) for c, v in zip(candidates, values)}
	return candidates[best].skill, scores


class OneStepPolicy(Policy):
	"""Imagine-and-score planner.

	Methods: choose
	"""
	def __init__(self, world_model: WorldModel, matcher):
		self.world_model = world_model
		self.matcher = matcher

	def choose(self, observation: Observation, subgoal: Subgoal,
			   feasible: list, seed: int, notes: list) -> tuple:
		"""Picks a skill @Policy"""
		return plan_step(observation, subgoal, self.world_model, feasible,
						 self.matcher, seed, notes)


class RandomPolicy(Policy):
	"""Uniformly random feasible skill.

	Methods: choose
	"""
	def choose(self, observation: Observation, subgoal: Subgoal,
			   feasible: list, seed: int, notes: list) -> tuple:
		"""Picks a skill @Policy"""
		rng = np.random.default_rng(int(seed))
		ordered = sorted(feasible, key=Skill.sort_key)
		return ordered[int(rng.integers(len(ordered)))], {}


def _tokens(text: str) -> set:
	return set(re.findall(r'[a-z]+', unidecode(text).lower())) - {'the'}


class GreedyTextPolicy(Policy):
	"""World-model-free baseline: picks the skill whose phrase shares the
	most words with the subgoal text.

	Methods: choose
	"""
	def choose(self, observation: Observation, subgoal: Subgoal,
			   feasible: list, seed: int, notes: list) -> tuple:
		"""Picks a skill @Policy"""
		if not feasible:
			raise PlanningError('no feasible skill')
		wanted = _tokens(subgoal.text)
		ordered = sorted(feasible, key=Skill.sort_key)
		values = []
		for skill in ordered:
			words = _tokens(action_phrase(observation.state, skill)[
				len(NEXT_PREFIX):])
			union = words | wanted
			values.append(len(words & wanted) / float(len(union) or 1))
		best = _argmax(ordered, values)
		return ordered[best], {str(s): v for s, v in zip(ordered, values)}


def materialize_image_subgoals(plan: SubgoalPlan, subgoal_model: tuple,
							   x_t: np.ndarray, seed: int, steps: int=20,
							   indices: list=None) -> SubgoalPlan:
	"""Generates subgoal images conditioned on the current observation. A
	failing subgoal keeps its text and records the error.

	Parameters
	----------
	plan: SubgoalPlan -- the plan
	subgoal_model: tuple -- (Denoiser, NoiseSchedule) of the subgoal model
	x_t: np.ndarray -- H x W x 3 current observation
	seed: int -- sampler seed
	steps: int -- sampling steps (default 20)
	indices: list -- subgoals to generate, every one when None
	(default None)

	Returns: SubgoalPlan -- a new plan with the images filled in
	"""
	network, schedule = subgoal_model
	wanted = range(len(plan.subgoals)) if indices is None else indices
	subgoals = list(plan.subgoals)
	for idx in wanted:
		text = subgoals[idx].text
		try:
			image = sample_subgoal_image(network, schedule, x_t,
										 goal_phrase(text), steps,
										 seed + idx)
			subgoals[idx] = Subgoal(text, image, None)
		except (EgohomeError, RuntimeError, ValueError) as err:
			logger.warning('subgoal image of %r failed, text mode kept: %s',
						   text, err)
			subgoals[idx] = Subgoal(text, None, str(err))
	return plan._replace(subgoals=tuple(subgoals))


EpisodeConfig = collections.namedtuple('EpisodeConfig', [
	'subgoal_mode', 'max_steps', 'seed', 'sample_steps', 'backend'
])


DEFAULT_EPISODE = EpisodeConfig('text', 80, 0, 20, 'grammar')


def episode_config(section: dict, seed: int=0) -> EpisodeConfig:
	"""Builds an EpisodeConfig out of a [planner] config section."""
	mode = section.get('subgoal_mode', DEFAULT_EPISODE.subgoal_mode)
	if mode not in SUBGOAL_MODES:
		raise ValueError('unknown subgoal mode {0}'.format(mode))
	return EpisodeConfig(mode,
						 int(section.get('max_steps', DEFAULT_EPISODE.max_steps)),
						 int(seed),
						 int(section.get('sample_steps',
										 DEFAULT_EPISODE.sample_steps)),
						 section.get('backend', DEFAULT_EPISODE.backend))


def step_seed(seed: int, step: int) -> int:
	return int(np.random.default_rng([int(seed), int(step)]).integers(2 ** 31))


def run_episode(env: HomeEnv, instruction: str, policy: Policy, matcher,
				config: EpisodeConfig=DEFAULT_EPISODE, subgoal_model=None,
				subgoals: list=None, requester=None) -> EpisodeResult:
	"""Runs one episode: advances the subgoal cursor while the matcher
	reports the active subgoal done, otherwise plans and executes one skill.
	Succeeds when every subgoal is done, each confirmed on the true state,
	within max_steps.

	Parameters
	----------
	env: HomeEnv -- the environment
	instruction: str -- the instruction
	policy: Policy -- the skill picker
	matcher: GoalMatcher -- the completion detector
	config: EpisodeConfig -- mode, step cap and seed
	(default DEFAULT_EPISODE)
	subgoal_model: tuple -- (Denoiser, NoiseSchedule), required in image
	mode (default None)
	subgoals: list -- precomputed subgoal texts, decomposed when None
	(default None)
	requester: LmmRequester -- client of the lmm backend (default None)

	Returns: EpisodeResult -- outcome and full step log

	Throws PlanningError
	"""
	if config.subgoal_mode == 'image' and subgoal_model is None:
		raise PlanningError('image subgoals need a subgoal model')
	texts = list(subgoals) if subgoals is not None \
		else decompose(instruction, config.backend, requester)
	plan = SubgoalPlan(instruction, tuple(Subgoal(t, None, None)
										  for t in texts), 0)
	matcher.reset(env)

	log, completions, step = [], [], 0
	observation = env.observe()
	generated = set()
	try:
		while True:
			while plan.cursor < len(plan.subgoals) and matcher.done(
					observation.frame.rgb, plan.subgoals[plan.cursor],
					observation.state):
				text = plan.subgoals[plan.cursor].text
				completions.append({'subgoal': plan.cursor, 'text': text,
									'step': step,
									'verified': env.satisfied(text)})
				plan = plan._replace(cursor=plan.cursor + 1)

			if plan.cursor == len(plan.subgoals) or step >= config.max_steps:
				break

			if config.subgoal_mode == 'image' and plan.cursor not in generated:
				plan = materialize_image_subgoals(
					plan, subgoal_model, observation.frame.rgb,
					step_seed(config.seed, -1 - plan.cursor),
					config.sample_steps, [plan.cursor])
				generated.add(plan.cursor)

			feasible = env.feasible()
			seed = step_seed(config.seed, step)
			notes = []
			skill, scores = policy.choose(observation,
										  plan.subgoals[plan.cursor],
										  feasible, seed, notes)
			log.append(StepLog(step, plan.cursor, [str(s) for s in feasible],
							   scores, str(skill), seed, notes))
			observation = env.step(skill)
			step += 1
	except EgohomeError as err:
		logger.warning('episode aborted at step %d: %s', step, err)
		return EpisodeResult(False, step, log, completions, str(err))

	success = plan.cursor == len(plan.subgoals) \
		and all(c['verified'] for c in completions)
	return EpisodeResult(success, step, log, completions, None)
