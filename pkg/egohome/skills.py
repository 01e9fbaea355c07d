"""The skills module holds the 13 discrete skills of the micro-simulator:
their preconditions, their effect on the world state and their rollout as
multi-frame trajectories.

Functions: heading_vector, ahead_cell, is_free_floor, precondition_failure,
feasible_skills, transition, keyframe, rollout, step_skill
"""

import logging
import math

import numpy as np

from . import houses
from .errors import InfeasibleSkillError
from .houses import CELL_DOOR, CELL_FLOOR
from .models import (GRABBABLE_KINDS, OPENABLE_KINDS, SEAT_KINDS,
					 SKILL_VERBS, SWITCHABLE_KINDS, TARGETED_VERBS, Skill,
					 Trajectory, WorldState)
from .renderers import (CAMERA_HEIGHTS, DEFAULT_RENDERER, RaycastRenderer,
						RenderParams)


logger = logging.getLogger(__name__)

TURN_DEGREES = 90.0
WALK_THROUGH_CELLS = 2.0
GRAB_LIFT = 0.3
PATH_SAMPLES_PER_CELL = 8

CONTAINER_KINDS = frozenset(('fridge', 'microwave', 'cabinet'))
RECEPTACLES = {'toaster': ('bread', ), 'plate': ('bread', 'juice')}


def heading_vector(heading: float) -> tuple:
	"""Gets the unit (x, y) direction of a heading in degrees. Heading 0 looks
	along +x and 90 along -y.
	"""
	if heading % 90.0 == 0:
		quarter = int(heading // 90.0) % 4
		return ((1.0, 0.0), (0.0, -1.0), (-1.0, 0.0), (0.0, 1.0))[quarter]
	h = math.radians(heading)
	return (math.cos(h), -math.sin(h))


def _cell_of(x: float, y: float) -> tuple:
	return (int(math.floor(y)), int(math.floor(x)))


def ahead_cell(state: WorldState) -> tuple:
	"""Gets the cell one unit ahead of the agent."""
	dx, dy = heading_vector(state.agent.heading)
	x, y = state.agent.position
	return _cell_of(x + dx, y + dy)


def _in_grid(state: WorldState, cell: tuple) -> bool:
	return 0 <= cell[0] < state.grid.shape[0] \
		and 0 <= cell[1] < state.grid.shape[1]


def _standing_at(state: WorldState, cell: tuple) -> list:
	inside = set(c for o in state.objects for c in o.container_contents)
	return [o for o in state.objects
			if o.cell == cell and o.id not in inside and o.kind != 'door'
			and o.binary_state != 'held']


def is_free_floor(state: WorldState, cell: tuple) -> bool:
	"""Tells whether a cell is floor without any standing object."""
	return _in_grid(state, cell) and state.grid[cell] == CELL_FLOOR \
		and not _standing_at(state, cell)


def _door_at(state: WorldState, cell: tuple):
	for obj in state.objects:
		if obj.kind == 'door' and obj.cell == cell:
			return obj
	return None


def _path_cells(state: WorldState, length: float) -> list:
	x, y = state.agent.position
	dx, dy = heading_vector(state.agent.heading)
	count = max(2, int(math.ceil(length * PATH_SAMPLES_PER_CELL)) + 1)
	cells = []
	for t in np.linspace(0.0, length, count):
		cell = _cell_of(x + t * dx, y + t * dy)
		if cell not in cells:
			cells.append(cell)
	return cells


def _holder_of(state: WorldState, uid: int):
	for obj in state.objects:
		if uid in obj.container_contents:
			return obj
	return None


def _walk_failure(state: WorldState) -> str:
	length = state.style.motion_scale
	for cell in _path_cells(state, length)[1:]:
		if not is_free_floor(state, cell):
			return 'the path ahead is blocked at cell {0}'.format(cell)
	return None


def _walk_through_failure(state: WorldState) -> str:
	door = _door_at(state, ahead_cell(state))
	if door is None or state.grid[door.cell] != CELL_DOOR:
		return 'no door ahead'
	if door.binary_state != 'open':
		return 'the door ahead is closed'
	for cell in _path_cells(state, WALK_THROUGH_CELLS)[1:]:
		if cell != door.cell and not is_free_floor(state, cell):
			return 'the cell behind the door is blocked'
	return None


def _grab_failure(state: WorldState, target) -> str:
	if state.agent.held_object is not None:
		return 'the agent already holds an object'
	if target.kind not in GRABBABLE_KINDS:
		return '{0} cannot be grabbed'.format(target.kind)
	if target.container_contents:
		return '{0} is not empty'.format(target.kind)

	ahead = ahead_cell(state)
	holder = _holder_of(state, target.id)
	if holder is None:
		if target.cell != ahead:
			return '{0} is not ahead'.format(target.kind)
		return None
	if holder.cell != ahead:
		return '{0} is not ahead'.format(holder.kind)
	if holder.kind in CONTAINER_KINDS and holder.binary_state != 'open':
		return '{0} is closed'.format(holder.kind)
	return None


def _put_in_failure(state: WorldState, target) -> str:
	held = state.agent.held_object
	if held is None:
		return 'the agent holds nothing'
	if target.cell != ahead_cell(state) or _holder_of(state, target.id):
		return '{0} is not ahead'.format(target.kind)

	kind = houses.object_by_id(state, held).kind
	if target.kind in CONTAINER_KINDS:
		if target.binary_state != 'open':
			return '{0} is closed'.format(target.kind)
		return None
	if target.kind in RECEPTACLES:
		if kind not in RECEPTACLES[target.kind]:
			return '{0} does not fit in {1}'.format(kind, target.kind)
		if target.container_contents:
			return '{0} is full'.format(target.kind)
		return None
	return '{0} cannot hold objects'.format(target.kind)


def precondition_failure(state: WorldState, skill: Skill) -> str:
	"""Gets the first precondition a skill violates in a state.

	Parameters
	----------
	state: WorldState -- the current state
	skill: Skill -- the skill to be checked

	Returns: str -- the violated precondition, None when feasible
	"""
	verb = skill.verb
	if verb not in SKILL_VERBS:
		return 'unknown verb {0}'.format(verb)
	if (skill.target is None) == (verb in TARGETED_VERBS):
		return '{0} {1} a target'.format(
			verb, 'requires' if verb in TARGETED_VERBS else 'takes no')

	sitting = state.agent.posture == 'sitting'
	if verb == 'stand_up':
		return None if sitting else 'the agent is not sitting'
	if sitting:
		return 'the agent is sitting'
	if verb in ('turn_left', 'turn_right'):
		return None
	if verb == 'walk_forward':
		return _walk_failure(state)
	if verb == 'walk_through':
		return _walk_through_failure(state)

	try:
		target = houses.object_by_id(state, skill.target)
	except KeyError:
		return 'unknown object {0}'.format(skill.target)

	if verb == 'grab':
		return _grab_failure(state, target)
	if verb == 'put_in':
		return _put_in_failure(state, target)
	if verb == 'put_back':
		if state.agent.held_object != target.id:
			return '{0} is not held'.format(target.kind)
		if not is_free_floor(state, ahead_cell(state)):
			return 'no free floor ahead'
		return None

	if target.cell != ahead_cell(state) or _holder_of(state, target.id):
		return '{0} is not ahead'.format(target.kind)

	if verb in ('open', 'close'):
		if target.kind not in OPENABLE_KINDS:
			return '{0} cannot be opened'.format(target.kind)
		wanted = 'closed' if verb == 'open' else 'open'
		if target.binary_state != wanted:
			return '{0} is not {1}'.format(target.kind, wanted)
		return None

	if verb in ('switch_on', 'switch_off'):
		if target.kind not in SWITCHABLE_KINDS:
			return '{0} cannot be switched'.format(target.kind)
		wanted = 'off' if verb == 'switch_on' else 'on'
		if target.binary_state != wanted:
			return '{0} is not {1}'.format(target.kind, wanted)
		return None

	if target.kind not in SEAT_KINDS:
		return '{0} is not a seat'.format(target.kind)
	return None


def _candidates(state: WorldState) -> list:
	ahead = ahead_cell(state)
	targets = set()
	for obj in state.objects:
		if obj.cell == ahead or obj.id == state.agent.held_object:
			targets.add(obj.id)
			targets.update(obj.container_contents)

	skills = [Skill(verb, None) for verb in SKILL_VERBS
			  if verb not in TARGETED_VERBS]
	skills += [Skill(verb, uid) for verb in SKILL_VERBS
			   if verb in TARGETED_VERBS for uid in targets]
	return skills


def feasible_skills(state: WorldState) -> list:
	"""Lists the skills whose preconditions hold, sorted by verb order then
	target id.

	Parameters
	----------
	state: WorldState -- the current state

	Returns: list -- the feasible skills
	"""
	feasible = [s for s in _candidates(state)
				if precondition_failure(state, s) is None]
	return sorted(feasible, key=Skill.sort_key)


def _with_object(objects: tuple, uid: int, **fields) -> tuple:
	return tuple(o._replace(**fields) if o.id == uid else o for o in objects)


def transition(state: WorldState, skill: Skill) -> WorldState:
	"""Applies a skill to a state without rendering.

	Parameters
	----------
	state: WorldState -- the current state
	skill: Skill -- a feasible skill

	Returns: WorldState -- the state after the skill

	Throws InfeasibleSkillError
	"""
	failure = precondition_failure(state, skill)
	if failure is not None:
		raise InfeasibleSkillError(skill, failure)

	verb, agent, objects = skill.verb, state.agent, state.objects
	x, y = agent.position
	dx, dy = heading_vector(agent.heading)

	if verb in ('walk_forward', 'walk_through'):
		length = state.style.motion_scale if verb == 'walk_forward' \
			else WALK_THROUGH_CELLS
		agent = agent._replace(position=(x + length * dx, y + length * dy))
	elif verb in ('turn_left', 'turn_right'):
		sign = 1.0 if verb == 'turn_left' else -1.0
		agent = agent._replace(
			heading=(agent.heading + sign * TURN_DEGREES) % 360.0)
	elif verb in ('open', 'close'):
		objects = _with_object(objects, skill.target, binary_state=(
			'open' if verb == 'open' else 'closed'))
	elif verb in ('switch_on', 'switch_off'):
		objects = _with_object(objects, skill.target, binary_state=(
			'on' if verb == 'switch_on' else 'off'))
	elif verb == 'grab':
		holder = _holder_of(state, skill.target)
		if holder is not None:
			objects = _with_object(objects, holder.id, container_contents=tuple(
				c for c in holder.container_contents if c != skill.target))
		objects = _with_object(objects, skill.target, cell=None,
							   binary_state='held')
		agent = agent._replace(held_object=skill.target)
	elif verb == 'put_back':
		objects = _with_object(objects, skill.target, cell=ahead_cell(state),
							   binary_state='placed')
		agent = agent._replace(held_object=None)
	elif verb == 'put_in':
		held = agent.held_object
		receiver = houses.object_by_id(state, skill.target)
		objects = _with_object(objects, receiver.id, container_contents=(
			receiver.container_contents + (held, )))
		objects = _with_object(objects, held, cell=receiver.cell,
							   binary_state='placed')
		agent = agent._replace(held_object=None)
	elif verb == 'sit':
		agent = agent._replace(posture='sitting')
	else:
		agent = agent._replace(posture='standing')

	return state._replace(objects=objects, agent=agent,
						  timestep=state.timestep + state.style.frames_per_skill)


def keyframe(state: WorldState, next_state: WorldState, skill: Skill,
			 fraction: float, renderer: RaycastRenderer=DEFAULT_RENDERER
			 ) -> tuple:
	"""Interpolates the render parameters of an intermediate frame.

	Parameters
	----------
	state: WorldState -- the state before the skill
	next_state: WorldState -- the state after the skill
	skill: Skill -- the executed skill
	fraction: float -- progress in (0, 1]
	renderer: RaycastRenderer -- renderer used to derive parameters

	Returns: tuple -- (state whose objects are drawn, RenderParams)
	"""
	if fraction >= 1.0:
		return next_state, renderer.params(next_state)

	verb, target = skill.verb, skill.target
	base = renderer.params(state)
	camera = base.camera
	openness, power = dict(base.openness), dict(base.power)
	lift = {}
	scene_state = state

	if verb in ('walk_forward', 'walk_through'):
		x0, y0 = state.agent.position
		x1, y1 = next_state.agent.position
		camera = camera._replace(x=x0 + fraction * (x1 - x0),
								 y=y0 + fraction * (y1 - y0))
	elif verb in ('turn_left', 'turn_right'):
		sign = 1.0 if verb == 'turn_left' else -1.0
		camera = camera._replace(heading=(
			state.agent.heading + sign * fraction * TURN_DEGREES) % 360.0)
	elif verb in ('open', 'close'):
		openness[target] = fraction if verb == 'open' else 1.0 - fraction
	elif verb in ('switch_on', 'switch_off'):
		power[target] = fraction if verb == 'switch_on' else 1.0 - fraction
	elif verb == 'grab':
		lift[target] = GRAB_LIFT * fraction
	elif verb in ('put_back', 'put_in'):
		scene_state = next_state
		lift[state.agent.held_object] = GRAB_LIFT * (1.0 - fraction)
		openness = dict(renderer.params(next_state).openness)
	else:
		z0 = CAMERA_HEIGHTS[state.agent.posture]
		z1 = CAMERA_HEIGHTS[next_state.agent.posture]
		camera = camera._replace(z=z0 + fraction * (z1 - z0))

	held = base.held if verb not in ('put_back', 'put_in') else None
	return scene_state, RenderParams(camera, openness, power, lift, held)


def rollout(state: WorldState, skill: Skill,
			renderer: RaycastRenderer=DEFAULT_RENDERER) -> Trajectory:
	"""Executes a skill as a trajectory of frames_per_skill frames. The start
	frame is rendered too but is not part of the emitted frames.

	Parameters
	----------
	state: WorldState -- the current state
	skill: Skill -- a feasible skill
	renderer: RaycastRenderer -- the renderer (default 64x64)

	Returns: Trajectory -- start frame and scene, emitted frames with their
	scenes and the next state

	Throws InfeasibleSkillError
	"""
	next_state = transition(state, skill)
	count = state.style.frames_per_skill

	start_scene = renderer.compile(state)
	start_frame = renderer.render_scene(start_scene, state.timestep)

	frames, scenes = [], []
	for k in range(1, count + 1):
		drawn, params = keyframe(state, next_state, skill, k / count,
								 renderer)
		scene = renderer.compile(drawn, params)
		frames.append(renderer.render_scene(scene, state.timestep + k))
		scenes.append(scene)

	logger.debug('rolled %s from timestep %d', skill, state.timestep)
	return Trajectory(start_frame, start_scene, frames, scenes, next_state)


def step_skill(state: WorldState, skill: Skill,
			   renderer: RaycastRenderer=DEFAULT_RENDERER) -> tuple:
	"""Executes a skill and returns its frames and the next state.

	Parameters
	----------
	state: WorldState -- the current state
	skill: Skill -- a feasible skill
	renderer: RaycastRenderer -- the renderer (default 64x64)

	Returns: tuple -- (list of Frame, next WorldState)

	Throws InfeasibleSkillError
	"""
	trajectory = rollout(state, skill, renderer)
	return trajectory.frames, trajectory.next_state
