"""The matchers module scores imagined outcomes against the active subgoal
and decides when a subgoal is done.

	Subgoal texts follow a small grammar: "walk to the X", "place the X on
the Y", "put the X in the Y" and every "<verb phrase> the X" of the synonym
table. The scripted matcher reads them against a pseudo segmentation of the
image (nearest palette chromaticity per pixel); the oracle matcher reads them
against the true simulator state and its pose graph.

ABCs: GoalMatcher

NamedTuples: SubgoalSpec

Classes: ScriptedMatcher, OracleMatcher, LmmMatcher

Functions: parse_subgoal, bind_object, goal_satisfied, pseudo_segmentation
"""

import abc
import collections
import logging
import re

import numpy as np
from cachetools import LRUCache
from cachetools.keys import hashkey
from unidecode import unidecode

from . import houses
from .datasets import parse_phrase
from .errors import LmmError, PlanningError
from .houses import DEFAULT_STYLE
from .models import GRABBABLE_KINDS, OBJECT_KINDS, Subgoal
from .navigation import PoseGraph, quarter
from .renderers import BOX_HEIGHTS, CEILING_HEIGHT
from .skills import CONTAINER_KINDS, ahead_cell


logger = logging.getLogger(__name__)

DONE_THRESHOLD = 0.8
IMAGE_TEMPERATURE = 0.1

PRESENCE_FRACTION = 0.05
OPEN_FRACTION = 0.3
SEAT_BAND = 0.5

PLACE_PATTERN = re.compile(
	r'^(?:place|put) the (\w+) (?:on|in|into) the (\w+)$')


SubgoalSpec = collections.namedtuple('SubgoalSpec', [
	'verb', 'noun', 'receiver'
])


def parse_subgoal(text: str) -> SubgoalSpec:
	"""Parses a subgoal text.

	Parameters
	----------
	text: str -- the subgoal, with or without the goal-state prefix

	Returns: SubgoalSpec -- verb, object noun and receiver noun (None
	unless the verb is put_in)

	Throws PlanningError
	"""
	folded = unidecode(text).lower().strip().rstrip('.')
	if folded.startswith('the goal state:'):
		folded = folded[len('the goal state:'):].strip()

	placed = PLACE_PATTERN.match(folded)
	if placed:
		noun, receiver = placed.groups()
		if noun not in OBJECT_KINDS or receiver not in OBJECT_KINDS:
			raise PlanningError('unknown object in subgoal {0!r}'.format(text))
		return SubgoalSpec('put_in', noun, receiver)

	try:
		verb, noun = parse_phrase(folded)
	except ValueError as err:
		raise PlanningError('unparseable subgoal {0!r}: {1}'.format(text, err))
	return SubgoalSpec(verb, noun, None)


def bind_object(state, noun: str, bindings: dict=None):
	"""Resolves a noun to an object of the state: the bound instance when
	bindings name one, otherwise the first instance of that kind.

	Returns: ObjectInstance -- the object, None when the house has none
	"""
	if bindings and noun in bindings:
		try:
			return houses.object_by_id(state, bindings[noun])
		except KeyError:
			return None
	for obj in state.objects:
		if obj.kind == noun:
			return obj
	return None


def _holder(state, uid: int):
	for obj in state.objects:
		if uid in obj.container_contents:
			return obj
	return None


def _site(state, obj) -> tuple:
	"""Gets the cell an object is reached at: its own or its holder's."""
	holder = _holder(state, obj.id)
	return holder.cell if holder is not None else obj.cell


def goal_satisfied(state, spec: SubgoalSpec, bindings: dict=None) -> bool:
	"""Checks a subgoal against the true simulator state."""
	obj = bind_object(state, spec.noun, bindings) if spec.noun else None
	if spec.noun and obj is None:
		return False
	agent = state.agent
	verb = spec.verb

	if verb == 'walk_to':
		return agent.posture == 'standing' and obj.cell is not None \
			and ahead_cell(state) == _site(state, obj)
	if verb == 'grab':
		return agent.held_object == obj.id
	if verb == 'put_in':
		receiver = bind_object(state, spec.receiver, bindings)
		return receiver is not None \
			and obj.id in receiver.container_contents
	if verb in ('open', 'close'):
		return obj.binary_state == ('open' if verb == 'open' else 'closed')
	if verb in ('switch_on', 'switch_off'):
		return obj.binary_state == ('on' if verb == 'switch_on' else 'off')
	if verb == 'sit':
		return agent.posture == 'sitting' and ahead_cell(state) == obj.cell
	if verb == 'stand_up':
		return agent.posture == 'standing'
	if verb == 'put_back':
		return obj.binary_state == 'placed' and agent.held_object != obj.id
	return False


def pseudo_segmentation(rgb: np.ndarray, style=DEFAULT_STYLE) -> tuple:
	"""Labels every pixel with the palette entry of nearest chromaticity,
	which is insensitive to shading, texture and light level.

	Parameters
	----------
	rgb: np.ndarray -- H x W x 3 image in [0, 1] or uint8
	style: StyleParams -- the palette owner (default DEFAULT_STYLE)

	Returns: tuple -- (H x W int labels, tuple of palette names)
	"""
	rgb = np.asarray(rgb)
	rgb = rgb / 255.0 if rgb.dtype == np.uint8 else rgb.astype(np.float64)
	names = tuple(name for name, _ in style.palette)
	palette = np.array([color for _, color in style.palette],
					   dtype=np.float64)

	chroma = rgb / np.maximum(rgb.max(axis=-1, keepdims=True), 1e-6)
	reference = palette / np.maximum(palette.max(axis=-1, keepdims=True),
									 1e-6)
	distances = ((chroma[..., None, :] - reference) ** 2).sum(-1)
	return np.argmin(distances, axis=-1), names


class GoalMatcher(abc.ABC):
	"""The GoalMatcher is an abstract class used to score candidate
	outcomes against a subgoal and to detect subgoal completion.

	Methods: reset, score, score_candidates, done
	"""
	def __init__(self, threshold: float=DONE_THRESHOLD):
		"""GoalMatcher's constructor.

		Parameters
		----------
		threshold: float -- score at which a subgoal is done (default 0.8)
		"""
		self.threshold = threshold

	def reset(self, env):
		"""Prepares the matcher for an episode in the given environment."""
		pass

	@abc.abstractmethod
	def score(self, image: np.ndarray, subgoal: Subgoal, state=None
			  ) -> float:
		"""Scores one outcome.

		Parameters
		----------
		image: np.ndarray -- the outcome image
		subgoal: Subgoal -- the active subgoal
		state: WorldState -- the true outcome state when known
		(default None)

		Returns: float -- closeness to the subgoal in [0, 1]
		"""
		pass

	def score_candidates(self, candidates: list, subgoal: Subgoal) -> tuple:
		"""Scores imagined outcomes.

		Parameters
		----------
		candidates: list -- Imagination records
		subgoal: Subgoal -- the active subgoal

		Returns: tuple -- (list of float, list of note strings)
		"""
		return [self.score(c.image, subgoal, c.state) for c in candidates], []

	def done(self, image: np.ndarray, subgoal: Subgoal, state=None) -> bool:
		return self.score(image, subgoal, state) >= self.threshold


class ScriptedMatcher(GoalMatcher):
	"""Offline deterministic matcher. Text subgoals are checked by a
	predicate table over the pseudo segmentation; image subgoals are scored
	by exp(-mean absolute difference / temperature). Completion always uses
	the text predicates.

	Methods: reset, predicate, score, done
	"""
	def __init__(self, style=DEFAULT_STYLE, threshold: float=DONE_THRESHOLD,
				 temperature: float=IMAGE_TEMPERATURE):
		"""ScriptedMatcher's constructor.

		Parameters
		----------
		style: StyleParams -- palette of the environment (default
		DEFAULT_STYLE)
		threshold: float -- completion score (default 0.8)
		temperature: float -- image distance scale (default 0.1)
		"""
		super().__init__(threshold)
		self.style = style
		self.temperature = temperature

	def reset(self, env):
		self.style = env.state.style

	def _regions(self, labels: np.ndarray) -> tuple:
		height, width = labels.shape
		held = np.zeros(labels.shape, dtype=bool)
		held[int(0.75 * height):, int(0.375 * width):int(0.625 * width)] = True
		center = np.zeros(labels.shape, dtype=bool)
		center[:, width // 4:3 * width // 4] = True
		band = np.zeros(labels.shape, dtype=bool)
		top = int(height * (0.5 - SEAT_BAND / 4.0))
		band[top:height // 2, width // 4:3 * width // 4] = True
		return held, center & ~held, band

	def predicate(self, image: np.ndarray, spec: SubgoalSpec) -> float:
		"""Scores an image against a parsed text subgoal.

		Returns: float -- score in [0, 1]
		"""
		labels, names = pseudo_segmentation(image, self.style)
		held, center, band = self._regions(labels)
		index = {n: i for i, n in enumerate(names)}

		def mask(*kinds):
			ids = [index[k] for k in kinds if k in index]
			return np.isin(labels, ids)

		def fraction(region, *kinds):
			return float((mask(*kinds) & region).sum()) / max(
				1, int(region.sum()))

		def clip(x):
			return float(np.clip(x, 0.0, 1.0))

		noun = spec.noun
		if noun is None:
			return 0.0
		height = BOX_HEIGHTS.get(noun, CEILING_HEIGHT)
		looks = (noun, noun + '_on')
		inside = ('interior', ) + tuple(GRABBABLE_KINDS)
		if noun in CONTAINER_KINDS:
			looks = looks + inside

		whole = np.ones(labels.shape, dtype=bool)
		presence = clip(fraction(whole, *looks) / PRESENCE_FRACTION)
		approach = clip(fraction(center, *looks) / (0.9 * height))
		verb = spec.verb

		if verb == 'walk_to':
			return 0.25 * presence + 0.75 * approach
		if verb == 'grab':
			if fraction(held, noun) > 0.5:
				return 1.0
			return 0.25 * presence + 0.5 * approach
		if verb == 'put_in':
			receiver = spec.receiver or noun
			r_height = BOX_HEIGHTS.get(receiver, CEILING_HEIGHT)
			r_looks = (receiver, ) + (inside if receiver in CONTAINER_KINDS
									  else ())
			r_approach = clip(fraction(center, *r_looks) / (0.9 * r_height))
			if fraction(held, noun) > 0.5:
				return 0.25 * clip(fraction(whole, *r_looks)
								   / PRESENCE_FRACTION) + 0.5 * r_approach
			return 0.5 * r_approach + 0.5 * clip(
				fraction(center, noun) / (0.9 * height))

		if verb in ('open', 'close'):
			if noun == 'door':
				upper = np.zeros(labels.shape, dtype=bool)
				upper[:labels.shape[0] // 4] = True
				lower = center.copy()
				lower[:labels.shape[0] // 2] = False
				opened = clip(fraction(upper & center, 'door') / 0.9) * (
					1.0 - clip(fraction(lower, 'door') / 0.9))
			else:
				opened = clip(fraction(center, *inside) / (OPEN_FRACTION
														   * height))
			if verb == 'open':
				state = opened
			else:
				state = clip(fraction(center, noun) / (0.5 * height)) \
					* (1.0 - opened)
			return 0.25 * presence + 0.25 * approach + 0.5 * state

		if verb in ('switch_on', 'switch_off'):
			shown = noun + '_on' if verb == 'switch_on' else noun
			state = clip(fraction(center, shown) / (0.5 * height))
			return 0.25 * presence + 0.25 * approach + 0.5 * state

		if verb == 'sit':
			seated = clip(fraction(band, noun) / SEAT_BAND)
			return 0.25 * presence + 0.25 * approach + 0.5 * seated

		return 0.0

	def score(self, image: np.ndarray, subgoal: Subgoal, state=None
			  ) -> float:
		"""Scores one outcome @GoalMatcher"""
		if subgoal.image is not None:
			diff = np.abs(np.asarray(image, dtype=np.float64)
						  - np.asarray(subgoal.image, dtype=np.float64))
			return float(np.exp(-diff.mean() / self.temperature))
		return self.predicate(image, parse_subgoal(subgoal.text))

	def done(self, image: np.ndarray, subgoal: Subgoal, state=None) -> bool:
		return self.predicate(image, parse_subgoal(subgoal.text)) \
			>= self.threshold


class OracleMatcher(GoalMatcher):
	"""Ground-truth matcher reading the true state: 1 when the subgoal holds,
	otherwise 1 / (1 + remaining skill count) over the pose graph, the final
	interaction included.

	Methods: reset, remaining, score, done
	"""
	def __init__(self, bindings: dict=None, cache_maxsize: int=256):
		"""OracleMatcher's constructor.

		Parameters
		----------
		bindings: dict -- noun to object id (default None)
		cache_maxsize: int -- cost fields kept in memory (default 256)
		"""
		super().__init__(1.0)
		self.bindings = dict(bindings or {})
		self._cache = LRUCache(maxsize=cache_maxsize)

	def reset(self, env):
		self.bindings = dict(env.bindings)

	def _costs(self, state, site: tuple) -> tuple:
		key = hashkey(state.house_id, state.rng_seed, state.objects, site)
		if key not in self._cache:
			graph = PoseGraph(state)
			self._cache[key] = (graph.costs_to(graph.facing_nodes(site)),
								graph)
		return self._cache[key]

	def _distance(self, state, site: tuple) -> float:
		costs, graph = self._costs(state, tuple(site))
		node = graph.node(state.agent.cell, quarter(state.agent.heading) * 90.0)
		stand_up = 1.0 if state.agent.posture == 'sitting' else 0.0
		return stand_up + float(costs[node])

	def remaining(self, state, spec: SubgoalSpec) -> float:
		"""Counts the skills left before a subgoal holds, inf when it cannot
		be reached.
		"""
		if goal_satisfied(state, spec, self.bindings):
			return 0.0
		obj = bind_object(state, spec.noun, self.bindings) \
			if spec.noun else None
		if obj is None:
			return np.inf

		if spec.verb == 'put_in':
			receiver = bind_object(state, spec.receiver, self.bindings)
			if receiver is None:
				return np.inf
			if state.agent.held_object != obj.id:
				return self._distance(state, _site(state, obj)) + 2.0 \
					+ self._distance(state, receiver.cell)
			return self._distance(state, receiver.cell) + 1.0

		if obj.cell is None:
			return np.inf if spec.verb != 'grab' else 0.0
		distance = self._distance(state, _site(state, obj))
		return distance if spec.verb == 'walk_to' else distance + 1.0

	def score(self, image: np.ndarray, subgoal: Subgoal, state=None
			  ) -> float:
		"""Scores one outcome @GoalMatcher"""
		if state is None:
			raise PlanningError('the oracle matcher needs the true state')
		cost = self.remaining(state, parse_subgoal(subgoal.text))
		return 1.0 if cost == 0.0 else float(1.0 / (1.0 + cost))

	def done(self, image: np.ndarray, subgoal: Subgoal, state=None) -> bool:
		if state is None:
			raise PlanningError('the oracle matcher needs the true state')
		return goal_satisfied(state, parse_subgoal(subgoal.text),
							  self.bindings)


class LmmMatcher(GoalMatcher):
	"""Ranks candidates through the chat endpoint. Any endpoint failure falls
	back to the scripted matcher for that call and is reported as a note.

	Methods: reset, score, score_candidates, done
	"""
	def __init__(self, requester, fallback: GoalMatcher=None,
				 threshold: float=DONE_THRESHOLD):
		"""LmmMatcher's constructor.

		Parameters
		----------
		requester: LmmRequester -- the endpoint client
		fallback: GoalMatcher -- matcher used when the endpoint fails, a
		ScriptedMatcher when None (default None)
		threshold: float -- completion score (default 0.8)
		"""
		super().__init__(threshold)
		self.requester = requester
		self.fallback = fallback or ScriptedMatcher(threshold=threshold)

	def reset(self, env):
		self.fallback.reset(env)

	def score(self, image: np.ndarray, subgoal: Subgoal, state=None
			  ) -> float:
		"""Scores one outcome with the fallback matcher @GoalMatcher"""
		return self.fallback.score(image, subgoal, state)

	def score_candidates(self, candidates: list, subgoal: Subgoal) -> tuple:
		"""Scores imagined outcomes by their endpoint rank, 1 for the best
		down to 1 / n for the worst. @GoalMatcher
		"""
		try:
			order = self.requester.rank(subgoal.text,
										[str(c.skill) for c in candidates],
										[c.image for c in candidates])
		except LmmError as err:
			logger.warning('lmm ranking failed, falling back to the scripted '
						   'matcher: %s', err)
			scores, _ = self.fallback.score_candidates(candidates, subgoal)
			return scores, ['lmm fallback: {0}'.format(err)]

		count = len(candidates)
		scores = [0.0] * count
		for rank, idx in enumerate(order):
			scores[idx] = (count - rank) / float(count)
		return scores, []

	def done(self, image: np.ndarray, subgoal: Subgoal, state=None) -> bool:
		return self.fallback.done(image, subgoal, state)
