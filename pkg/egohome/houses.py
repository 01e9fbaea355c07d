"""The houses module builds the procedural grid houses the micro-simulator
runs in and holds the styles they are rendered with.

	Houses are generated by recursively splitting the interior of a walled
grid into rooms, punching one door through every split wall and placing the
interactive objects against the room walls while keeping the free floor
connected.

NamedTuples: LayoutConfig

Functions: make_style, shifted_style, layout_from_mapping, style_from_mapping,
build_house, restyle, room_map, room_of, reachable_cells, object_by_id,
occupied_cells
"""

import collections
import logging
from functools import partial

import numpy as np
from cachetools import cached, LRUCache
from cachetools.keys import hashkey
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy import ndimage

from .errors import ConfigError, LayoutError
from .models import (AgentPose, ObjectInstance, StyleParams, WorldState,
					 state_domain)


logger = logging.getLogger(__name__)

CELL_FLOOR = 0
CELL_WALL = 1
CELL_DOOR = 2

MIN_ROWS = 8
MIN_COLS = 8
MIN_ROOMS = 2
MIN_ROOM_SPAN = 2

HEADINGS = (0, 90, 180, 270)

KITCHEN_KINDS = ('fridge', 'microwave', 'cabinet', 'stove', 'toaster',
				 'plate', 'light')
LIVING_KINDS = ('sofa', 'bench', 'pc', 'pillow', 'light')
SPARE_ROOM_KINDS = ('light', 'cabinet', 'pillow')
EXTRA_KINDS = ('cabinet', 'pillow', 'plate', 'bench')
INITIAL_CONTENTS = {'fridge': 'juice', 'toaster': 'bread'}

DEFAULT_PALETTE = (
	('floor', (0.60, 0.48, 0.36)),
	('ceiling', (0.85, 0.85, 0.85)),
	('wall', (0.75, 0.71, 0.60)),
	('door', (0.55, 0.28, 0.11)),
	('interior', (0.15, 0.15, 0.45)),
	('fridge', (0.45, 0.72, 0.90)),
	('microwave', (0.63, 0.45, 0.90)),
	('cabinet', (0.85, 0.51, 0.34)),
	('light', (0.80, 0.80, 0.40)),
	('light_on', (1.00, 1.00, 0.20)),
	('stove', (0.40, 0.40, 0.50)),
	('stove_on', (0.90, 0.18, 0.05)),
	('toaster', (0.80, 0.24, 0.24)),
	('toaster_on', (1.00, 0.45, 0.10)),
	('pc', (0.24, 0.80, 0.80)),
	('pc_on', (0.55, 1.00, 1.00)),
	('plate', (0.55, 0.90, 0.55)),
	('bread', (0.90, 0.68, 0.27)),
	('pillow', (0.90, 0.36, 0.72)),
	('juice', (0.95, 0.52, 0.00)),
	('bench', (0.36, 0.90, 0.72)),
	('sofa', (0.18, 0.80, 0.25))
)

LayoutConfig = collections.namedtuple('LayoutConfig', [
	'rows', 'cols', 'rooms', 'object_density'
])

DEFAULT_LAYOUT = LayoutConfig(rows=12, cols=12, rooms=2, object_density=0.02)


def make_style(palette: tuple=DEFAULT_PALETTE, texture_noise: float=0.3,
			   motion_scale: float=1.0, frames_per_skill: int=4
			   ) -> StyleParams:
	"""Builds a validated StyleParams.

	Parameters
	----------
	palette: tuple -- (class name, rgb) pairs (default DEFAULT_PALETTE)
	texture_noise: float -- texture amplitude in [0, 1] (default 0.3)
	motion_scale: float -- multiplier of per-frame displacement (default 1.0)
	frames_per_skill: int -- frames emitted per skill (default 4)

	Returns: StyleParams -- the style

	Throws ConfigError
	"""
	if not motion_scale > 0:
		raise ConfigError('motion_scale must be positive')
	if int(frames_per_skill) != frames_per_skill or frames_per_skill < 2:
		raise ConfigError('frames_per_skill must be an integer >= 2')
	if not 0.0 <= texture_noise <= 1.0:
		raise ConfigError('texture_noise must lie in [0, 1]')

	names = set(name for name, _ in DEFAULT_PALETTE)
	given = dict(palette)
	if not names <= set(given):
		raise ConfigError('palette lacks colors for {0}'.format(
			', '.join(sorted(names - set(given)))))

	palette = tuple((name, tuple(float(c) for c in rgb))
					for name, rgb in sorted(given.items()))
	return StyleParams(palette, float(texture_noise), float(motion_scale),
					   int(frames_per_skill))


DEFAULT_STYLE = make_style()


def shifted_style(style: StyleParams=DEFAULT_STYLE, hue_shift: float=0.35,
				  texture_noise: float=0.6, motion_scale: float=1.5
				  ) -> StyleParams:
	"""Builds the restyled variant used for generalization runs: every
	palette color is rotated on the hue circle.

	Parameters
	----------
	style: StyleParams -- the original style (default DEFAULT_STYLE)
	hue_shift: float -- rotation as a fraction of the circle (default 0.35)
	texture_noise: float -- texture amplitude of the new style (default 0.6)
	motion_scale: float -- motion amplitude of the new style (default 1.5)

	Returns: StyleParams -- the new style
	"""
	palette = []
	for name, rgb in style.palette:
		hsv = rgb_to_hsv(np.array(rgb, dtype=np.float64))
		hsv[0] = (hsv[0] + hue_shift) % 1.0
		palette.append((name, tuple(float(c) for c in hsv_to_rgb(hsv))))
	return make_style(tuple(palette), texture_noise, motion_scale,
					  style.frames_per_skill)


def layout_from_mapping(mapping: dict, base: LayoutConfig=DEFAULT_LAYOUT
						) -> LayoutConfig:
	"""Builds a LayoutConfig out of configuration values.

	Throws ConfigError
	"""
	unknown = set(mapping) - set(LayoutConfig._fields)
	if unknown:
		raise ConfigError('unknown layout keys: {0}'.format(
			', '.join(sorted(unknown))))
	return base._replace(**mapping)


def style_from_mapping(mapping: dict, base: StyleParams=DEFAULT_STYLE
					   ) -> StyleParams:
	"""Builds a StyleParams out of configuration values. Palette colors are
	given as `palette.<class> = [r, g, b]` keys or a nested palette section.

	Throws ConfigError
	"""
	mapping = dict(mapping)
	palette = base.colors()
	palette.update(mapping.pop('palette', {}))
	for key in [k for k in mapping if k.startswith('palette.')]:
		palette[key.split('.', 1)[1]] = mapping.pop(key)

	unknown = set(mapping) - {'texture_noise', 'motion_scale',
							  'frames_per_skill'}
	if unknown:
		raise ConfigError('unknown style keys: {0}'.format(
			', '.join(sorted(unknown))))

	return make_style(
		tuple(palette.items()),
		mapping.get('texture_noise', base.texture_noise),
		mapping.get('motion_scale', base.motion_scale),
		mapping.get('frames_per_skill', base.frames_per_skill)
	)


def _split_positions(rect: tuple, axis: int, doors: list) -> list:
	r0, c0, r1, c1 = rect
	if axis == 0:
		blocked = set(r for r, c in doors if c in (c0 - 1, c1 + 1))
		span = range(r0 + MIN_ROOM_SPAN, r1 - MIN_ROOM_SPAN + 1)
	else:
		blocked = set(c for r, c in doors if r in (r0 - 1, r1 + 1))
		span = range(c0 + MIN_ROOM_SPAN, c1 - MIN_ROOM_SPAN + 1)
	return [s for s in span if s not in blocked]


def _carve_rooms(layout: LayoutConfig, rng: np.random.Generator) -> tuple:
	grid = np.full((layout.rows, layout.cols), CELL_WALL, dtype=np.int8)
	grid[1:-1, 1:-1] = CELL_FLOOR
	rects = [(1, 1, layout.rows - 2, layout.cols - 2)]
	doors = []

	while len(rects) < layout.rooms:
		order = sorted(range(len(rects)), key=lambda i: (
			-(rects[i][2] - rects[i][0] + 1) * (rects[i][3] - rects[i][1] + 1),
			i))

		for i in order:
			r0, c0, r1, c1 = rects[i]
			axes = (0, 1) if r1 - r0 >= c1 - c0 else (1, 0)
			choice = [(a, _split_positions(rects[i], a, doors)) for a in axes]
			choice = [(a, p) for a, p in choice if p]
			if choice:
				break
		else:
			raise LayoutError('a {0}x{1} grid cannot hold {2} rooms'.format(
				layout.rows, layout.cols, layout.rooms))

		axis, positions = choice[0]
		s = int(rng.choice(positions))
		if axis == 0:
			grid[s, c0:c1 + 1] = CELL_WALL
			door = (s, int(rng.integers(c0, c1 + 1)))
			halves = [(r0, c0, s - 1, c1), (s + 1, c0, r1, c1)]
		else:
			grid[r0:r1 + 1, s] = CELL_WALL
			door = (int(rng.integers(r0, r1 + 1)), s)
			halves = [(r0, c0, r1, s - 1), (r0, s + 1, r1, c1)]

		grid[door] = CELL_DOOR
		doors.append(door)
		rects[i:i + 1] = halves

	return grid, doors


def _neighbours(cell: tuple, shape: tuple) -> list:
	r, c = cell
	return [(r + dr, c + dc) for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1))
			if 0 <= r + dr < shape[0] and 0 <= c + dc < shape[1]]


def _placement_ok(grid: np.ndarray, occupied: np.ndarray) -> bool:
	free = ((grid == CELL_FLOOR) & ~occupied) | (grid == CELL_DOOR)
	_, count = ndimage.label(free)
	if count != 1:
		return False
	for cell in zip(*np.nonzero(occupied)):
		if not any(free[n] for n in _neighbours(cell, grid.shape)):
			return False
	return True


def _place(kind: str, room: int, rooms: np.ndarray, grid: np.ndarray,
		   occupied: np.ndarray, rng: np.random.Generator):
	candidates = []
	for cell in zip(*np.nonzero(rooms == room)):
		if occupied[cell]:
			continue
		around = [grid[n] for n in _neighbours(cell, grid.shape)]
		if CELL_WALL in around and CELL_DOOR not in around:
			candidates.append((int(cell[0]), int(cell[1])))

	for idx in rng.permutation(len(candidates)):
		cell = candidates[idx]
		occupied[cell] = True
		if _placement_ok(grid, occupied):
			return cell
		occupied[cell] = False

	logger.debug('no room left for a %s in room %d', kind, room)
	return None


def _initial_state(kind: str) -> str:
	# the resting state is last in each domain
	return state_domain(kind)[-1]


@cached(cache=LRUCache(maxsize=64), key=partial(hashkey, 'house'))
def _generate(house_id: int, seed: int, layout: LayoutConfig) -> tuple:
	rng = np.random.default_rng([seed, house_id])
	grid, doors = _carve_rooms(layout, rng)

	rooms, count = ndimage.label(grid == CELL_FLOOR)
	sizes = ndimage.sum(np.ones_like(rooms), rooms, range(1, count + 1))
	by_size = [int(i) + 1 for i in np.argsort(-np.asarray(sizes),
											  kind='stable')]

	plan = [(kind, by_size[0]) for kind in KITCHEN_KINDS]
	plan += [(kind, by_size[1]) for kind in LIVING_KINDS]
	for room in by_size[2:]:
		plan += [(kind, room) for kind in SPARE_ROOM_KINDS]
	extras = int(round(layout.object_density * np.count_nonzero(rooms)))
	for _ in range(extras):
		plan.append((EXTRA_KINDS[int(rng.integers(len(EXTRA_KINDS)))],
					 by_size[int(rng.integers(len(by_size)))]))

	objects = []
	for cell in doors:
		objects.append(ObjectInstance(10 + len(objects), 'door',
									  (int(cell[0]), int(cell[1])),
									  'closed', ()))

	occupied = np.zeros(grid.shape, dtype=bool)
	for kind, room in plan:
		cell = _place(kind, room, rooms, grid, occupied, rng)
		if cell is None:
			continue

		uid = 10 + len(objects)
		contents = ()
		if kind in INITIAL_CONTENTS:
			contents = (uid + 1, )
		objects.append(ObjectInstance(uid, kind, cell, _initial_state(kind),
									  contents))
		if contents:
			inner = INITIAL_CONTENTS[kind]
			objects.append(ObjectInstance(uid + 1, inner, cell,
										  _initial_state(inner), ()))

	free = list(zip(*np.nonzero((grid == CELL_FLOOR) & ~occupied)))
	spawn = free[int(rng.integers(len(free)))]
	agent = AgentPose((float(spawn[1]) + 0.5, float(spawn[0]) + 0.5),
					  float(HEADINGS[int(rng.integers(len(HEADINGS)))]), None,
					  'standing')

	grid.setflags(write=False)
	return grid, tuple(objects), agent


def build_house(house_id: int, seed: int, layout: LayoutConfig=DEFAULT_LAYOUT,
				style: StyleParams=DEFAULT_STYLE) -> WorldState:
	"""Builds a house deterministically out of its id and a seed.

	Parameters
	----------
	house_id: int -- non-negative house id, enters the generator seed
	seed: int -- non-negative generation seed
	layout: LayoutConfig -- grid size, room count and object density
	(default DEFAULT_LAYOUT)
	style: StyleParams -- rendering style (default DEFAULT_STYLE)

	Returns: WorldState -- the house at timestep 0

	Throws LayoutError
	"""
	if house_id < 0 or seed < 0:
		raise ValueError('house_id and seed must be non-negative')
	if layout.rows < MIN_ROWS or layout.cols < MIN_COLS:
		raise LayoutError('grid must be at least {0}x{1}, got {2}x{3}'.format(
			MIN_ROWS, MIN_COLS, layout.rows, layout.cols))
	if layout.rooms < MIN_ROOMS:
		raise LayoutError('a house needs at least {0} rooms'.format(
			MIN_ROOMS))
	if layout.object_density < 0:
		raise LayoutError('object_density must be non-negative')

	grid, objects, agent = _generate(int(house_id), int(seed), layout)
	logger.debug('built house %d (seed %d) with %d objects', house_id, seed,
				 len(objects))
	return WorldState(int(house_id), grid.copy(), objects, agent, style,
					  int(seed), 0)


def restyle(state: WorldState, style: StyleParams) -> WorldState:
	"""Swaps the rendering style of a state, leaving layout and object
	semantics untouched.
	"""
	return state._replace(style=style)


def room_map(grid: np.ndarray) -> np.ndarray:
	"""Labels the rooms of a grid. Walls and doors are labelled 0, rooms from
	1 on in scan order.
	"""
	rooms, _ = ndimage.label(grid == CELL_FLOOR)
	return rooms


def room_of(state: WorldState, cell: tuple) -> int:
	"""Gets the room label of a cell, 0 for walls and doors."""
	return int(room_map(state.grid)[cell])


def object_by_id(state: WorldState, uid: int) -> ObjectInstance:
	"""Gets one object of a state.

	Throws KeyError
	"""
	for obj in state.objects:
		if obj.id == uid:
			return obj
	raise KeyError(uid)


def occupied_cells(state: WorldState) -> np.ndarray:
	"""Marks the cells holding a standing object (doors excluded)."""
	occupied = np.zeros(state.grid.shape, dtype=bool)
	for obj in state.objects:
		if obj.cell is not None and obj.kind != 'door':
			occupied[obj.cell] = True
	return occupied


def reachable_cells(state: WorldState, through_objects: bool=False
					) -> np.ndarray:
	"""Flood-fills the house from the agent cell over floor and door cells.

	Parameters
	----------
	state: WorldState -- the house
	through_objects: bool -- whether cells holding objects are walkable
	(default False)

	Returns: np.ndarray -- boolean mask of the reachable cells
	"""
	walkable = np.isin(state.grid, (CELL_FLOOR, CELL_DOOR))
	if not through_objects:
		walkable &= ~occupied_cells(state)
	labels, _ = ndimage.label(walkable)
	start = labels[state.agent.cell]
	if start == 0:
		return np.zeros(state.grid.shape, dtype=bool)
	return labels == start
