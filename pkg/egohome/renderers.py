"""The renderers module turns world states into egocentric frames by casting
one ray per pixel through the house grid, and derives the ground-truth flow
between consecutive frames from their depth and camera poses.

	Every grid cell holds up to two axis-aligned boxes spanning the whole cell
footprint between a bottom and a top height: walls, doors (whose lower edge
rises with the opening angle), standing objects and the item resting on a
receptacle. Rays walk the grid cell by cell and report the first box face,
floor or ceiling they meet.

NamedTuples: RenderParams, Scene, Hits

Classes: RaycastRenderer

Functions: camera_pose, to_unit, quantize, render, ground_truth_flow
"""

import collections
import logging

import numpy as np

from .errors import FrameError
from .houses import CELL_WALL
from .models import CameraPose, FlowField, Frame, WorldState


logger = logging.getLogger(__name__)

RESOLUTION = (64, 64)
FOV_DEGREES = 90.0
CEILING_HEIGHT = 1.0
CAMERA_HEIGHTS = {'standing': 0.5, 'sitting': 0.35}
HELD_DEPTH = 0.3
DOOR_GAP = 0.8
OCCLUSION_TOLERANCE = 1e-3
EPS = 1e-12

SEG_NONE = 0
SEG_FLOOR = 1
SEG_CEILING = 2
SEG_WALL = 3

SLOTS = 2

FACE_NONE = -1
FACE_X = 0
FACE_Y = 1
FACE_TOP = 2
FACE_BOTTOM = 3
FACE_FLOOR = 4
FACE_CEILING = 5

SHADES = {FACE_NONE: 1.0, FACE_X: 1.0, FACE_Y: 0.85, FACE_TOP: 0.95,
		  FACE_BOTTOM: 0.7, FACE_FLOOR: 0.9, FACE_CEILING: 0.8}
SHADE_TABLE = np.array([SHADES[f] for f in range(FACE_NONE, FACE_CEILING + 1)])

BOX_HEIGHTS = {
	'fridge': 0.95, 'microwave': 0.6, 'cabinet': 0.8, 'light': 0.9,
	'stove': 0.5, 'toaster': 0.4, 'pc': 0.6, 'plate': 0.08, 'bread': 0.15,
	'pillow': 0.2, 'juice': 0.3, 'bench': 0.45, 'sofa': 0.5
}

# Height at which the item resting on a receptacle starts.
STACK_BASES = {'plate': 0.08, 'toaster': 0.3}

CONTAINER_KINDS = frozenset(('fridge', 'microwave', 'cabinet'))


RenderParams = collections.namedtuple('RenderParams', [
	'camera', 'openness', 'power', 'lift', 'held'
])


Scene = collections.namedtuple('Scene', [
	'lo', 'hi', 'ident', 'color', 'interior', 'interior_color', 'camera',
	'brightness', 'texture_noise', 'palette', 'held', 'held_color'
])


Hits = collections.namedtuple('Hits', [
	't', 'ident', 'face', 'row', 'col', 'slot', 'points'
])


def camera_pose(state: WorldState) -> CameraPose:
	"""Gets the camera pose of the agent of a state."""
	agent = state.agent
	return CameraPose(float(agent.position[0]), float(agent.position[1]),
					  CAMERA_HEIGHTS[agent.posture], float(agent.heading))


def to_unit(values: np.ndarray) -> np.ndarray:
	"""Maps 8-bit levels to float32 intensities in [0, 1]."""
	return values.astype(np.float32) / np.float32(255)


def quantize(rgb: np.ndarray) -> np.ndarray:
	"""Rounds intensities to 8-bit levels so images survive PNG round trips
	exactly.
	"""
	levels = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
	return to_unit(levels)


def _texture(points: np.ndarray, noise: float) -> np.ndarray:
	x, y, z = points[:, 0], points[:, 1], points[:, 2]
	wave = 0.5 * (np.sin(7.3 * x + 4.1 * y + 9.7 * z)
				  + np.sin(3.9 * x - 8.3 * y + 5.2 * z + 1.0))
	return 1.0 + 0.3 * noise * wave


class RaycastRenderer(object):
	"""Pinhole camera raycaster over house grids.

	Methods: params, compile, cast, pixel_rays, project, render,
	render_scene, ground_truth_flow
	"""
	def __init__(self, resolution: tuple=RESOLUTION,
				 fov: float=FOV_DEGREES):
		"""RaycastRenderer's constructor.

		Parameters
		----------
		resolution: tuple -- (height, width) of rendered frames
		(default (64, 64))
		fov: float -- horizontal field of view in degrees (default 90)
		"""
		self.resolution = (int(resolution[0]), int(resolution[1]))
		self.fov = float(fov)
		self.focal = (self.resolution[1] / 2.0) / np.tan(
			np.radians(self.fov) / 2.0)

	def params(self, state: WorldState) -> RenderParams:
		"""Derives the render parameters that correspond exactly to a state.

		Parameters
		----------
		state: WorldState -- the state to be rendered

		Returns: RenderParams -- camera, opening fractions, power levels,
		no lift and the held object
		"""
		openness, power = {}, {}
		for obj in state.objects:
			if obj.binary_state in ('open', 'closed'):
				openness[obj.id] = 1.0 if obj.binary_state == 'open' else 0.0
			elif obj.binary_state in ('on', 'off'):
				power[obj.id] = 1.0 if obj.binary_state == 'on' else 0.0

		return RenderParams(camera_pose(state), openness, power, {},
							state.agent.held_object)

	def compile(self, state: WorldState, params: RenderParams=None) -> Scene:
		"""Compiles the box geometry and colors of a state.

		Parameters
		----------
		state: WorldState -- the state holding layout and objects
		params: RenderParams -- overrides of the interpolated quantities, the
		state's own values when None (default None)

		Returns: Scene -- the geometry raycasts run against
		"""
		if params is None:
			params = self.params(state)

		palette = {k: np.asarray(v, dtype=np.float64)
				   for k, v in state.style.palette}
		rows, cols = state.grid.shape
		lo = np.zeros((rows, cols, SLOTS))
		hi = np.zeros((rows, cols, SLOTS))
		ident = np.zeros((rows, cols, SLOTS), dtype=np.int32)
		color = np.zeros((rows, cols, SLOTS, 3))
		interior = np.zeros((rows, cols, SLOTS))
		interior_color = np.zeros((rows, cols, SLOTS, 3))

		walls = state.grid == CELL_WALL
		hi[walls, 0] = CEILING_HEIGHT
		ident[walls, 0] = SEG_WALL
		color[walls, 0] = palette['wall']

		by_id = {o.id: o for o in state.objects}
		parent = {c: o for o in state.objects for c in o.container_contents}

		for obj in state.objects:
			if obj.cell is None or obj.binary_state == 'held':
				continue

			r, c = obj.cell
			if obj.kind == 'door':
				hi[r, c, 0] = CEILING_HEIGHT
				lo[r, c, 0] = DOOR_GAP * params.openness.get(obj.id, 0.0)
				ident[r, c, 0] = obj.id
				color[r, c, 0] = palette['door']
				continue

			slot, base = 0, 0.0
			if obj.id in parent:
				holder = parent[obj.id]
				if holder.kind not in STACK_BASES:
					continue
				slot, base = 1, STACK_BASES[holder.kind]

			base += params.lift.get(obj.id, 0.0)
			lo[r, c, slot] = base
			hi[r, c, slot] = base + BOX_HEIGHTS[obj.kind]
			ident[r, c, slot] = obj.id

			tint = palette[obj.kind]
			if obj.id in params.power:
				level = params.power[obj.id]
				tint = (1.0 - level) * tint + level * palette[obj.kind + '_on']
			color[r, c, slot] = tint

			if obj.kind in CONTAINER_KINDS:
				interior[r, c, slot] = params.openness.get(obj.id, 0.0)
				inside = palette['interior']
				if obj.container_contents:
					inside = palette[by_id[obj.container_contents[0]].kind]
				interior_color[r, c, slot] = inside

		lights = [params.power[o.id] for o in state.objects
				  if o.kind == 'light' and o.id in params.power]
		brightness = 0.85 + 0.15 * (float(np.mean(lights)) if lights else 0.0)

		held_color = None
		if params.held is not None:
			held_color = palette[by_id[params.held].kind]

		return Scene(lo, hi, ident, color, interior, interior_color,
					 params.camera, brightness, state.style.texture_noise,
					 palette, params.held, held_color)

	def cast(self, scene: Scene, origin: np.ndarray, dirs: np.ndarray
			 ) -> Hits:
		"""Casts unit rays from one origin and finds their first hits.

		Parameters
		----------
		scene: Scene -- the compiled geometry
		origin: np.ndarray -- (3, ) ray origin
		dirs: np.ndarray -- (N, 3) unit directions

		Returns: Hits -- hit distance, id, face, cell, slot and point per ray
		"""
		ox, oy, oz = (float(v) for v in origin)
		dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
		n = len(dirs)
		rows, cols = scene.ident.shape[:2]

		col = np.full(n, int(np.floor(ox)))
		row = np.full(n, int(np.floor(oy)))
		step_c = np.where(dx > 0, 1, -1)
		step_r = np.where(dy > 0, 1, -1)

		moving_x, moving_y = np.abs(dx) > EPS, np.abs(dy) > EPS
		delta_x, delta_y = np.full(n, np.inf), np.full(n, np.inf)
		delta_x[moving_x] = 1.0 / np.abs(dx[moving_x])
		delta_y[moving_y] = 1.0 / np.abs(dy[moving_y])

		next_x, next_y = np.full(n, np.inf), np.full(n, np.inf)
		gap_x = np.where(dx > 0, col + 1 - ox, ox - col)
		gap_y = np.where(dy > 0, row + 1 - oy, oy - row)
		next_x[moving_x] = gap_x[moving_x] * delta_x[moving_x]
		next_y[moving_y] = gap_y[moving_y] * delta_y[moving_y]

		t_plane = np.full(n, np.inf)
		plane_face = np.full(n, FACE_FLOOR)
		down, up = dz < -EPS, dz > EPS
		t_plane[down] = -oz / dz[down]
		t_plane[up] = (CEILING_HEIGHT - oz) / dz[up]
		plane_face[up] = FACE_CEILING

		t_in = np.zeros(n)
		face = np.full(n, FACE_NONE)
		t_hit = np.full(n, np.inf)
		ident = np.zeros(n, dtype=np.int32)
		hit_face = np.full(n, FACE_NONE)
		hit_row = np.zeros(n, dtype=np.int64)
		hit_col = np.zeros(n, dtype=np.int64)
		hit_slot = np.full(n, -1)

		active = np.arange(n)
		for _ in range(rows + cols + 4):
			if active.size == 0:
				break

			r, c = row[active], col[active]
			t0 = t_in[active]
			t1 = np.minimum(next_x[active], next_y[active])
			dza = dz[active]
			z0 = oz + t0 * dza
			outside = (r < 0) | (r >= rows) | (c < 0) | (c >= cols)
			rc, cc = np.clip(r, 0, rows - 1), np.clip(c, 0, cols - 1)
			entering = face[active]

			best = np.full(active.size, np.inf)
			best_face = np.full(active.size, FACE_NONE)
			best_slot = np.zeros(active.size, dtype=np.int64)
			with np.errstate(divide='ignore', invalid='ignore'):
				for k in range(SLOTS):
					lo, hi = scene.lo[rc, cc, k], scene.hi[rc, cc, k]
					present = (scene.ident[rc, cc, k] != SEG_NONE) & ~outside
					t_top = np.where(dza < -EPS, (hi - oz) / dza, np.inf)
					t_bottom = np.where(dza > EPS, (lo - oz) / dza, np.inf)

					front = present & (entering != FACE_NONE) & (z0 >= lo) \
						& (z0 <= hi)
					top = present & (z0 > hi) & (t_top <= t1)
					bottom = present & (z0 < lo) & (t_bottom <= t1)

					t_k = np.where(front, t0, np.where(
						top, t_top, np.where(bottom, t_bottom, np.inf)))
					face_k = np.where(front, entering, np.where(
						top, FACE_TOP, FACE_BOTTOM))

					better = t_k < best
					best = np.where(better, t_k, best)
					best_face = np.where(better, face_k, best_face)
					best_slot = np.where(better, k, best_slot)

			t_fc = t_plane[active]
			box_hit = np.isfinite(best) & (best <= t_fc) & ~outside
			plane_hit = ~box_hit & (t_fc <= t1) & ~outside

			done = active[box_hit]
			t_hit[done] = best[box_hit]
			hit_face[done] = best_face[box_hit]
			hit_row[done], hit_col[done] = rc[box_hit], cc[box_hit]
			hit_slot[done] = best_slot[box_hit]
			ident[done] = scene.ident[rc[box_hit], cc[box_hit],
									  best_slot[box_hit]]

			done = active[plane_hit]
			t_hit[done] = t_fc[plane_hit]
			hit_face[done] = plane_face[done]
			ident[done] = np.where(plane_face[done] == FACE_FLOOR, SEG_FLOOR,
								   SEG_CEILING)

			done = active[outside]
			t_hit[done] = t0[outside]
			hit_face[done] = entering[outside]
			ident[done] = SEG_WALL

			adv = active[~(box_hit | plane_hit | outside)]
			go_x = next_x[adv] < next_y[adv]
			t_in[adv] = np.where(go_x, next_x[adv], next_y[adv])
			col[adv] += np.where(go_x, step_c[adv], 0)
			row[adv] += np.where(go_x, 0, step_r[adv])
			next_x[adv] += np.where(go_x, delta_x[adv], 0.0)
			next_y[adv] += np.where(go_x, 0.0, delta_y[adv])
			face[adv] = np.where(go_x, FACE_X, FACE_Y)
			active = adv

		points = np.asarray(origin, dtype=np.float64)[None, :] \
			+ dirs * t_hit[:, None]
		return Hits(t_hit, ident, hit_face, hit_row, hit_col, hit_slot,
					points)

	def _basis(self, camera: CameraPose) -> tuple:
		h = np.radians(camera.heading)
		forward = np.array([np.cos(h), -np.sin(h), 0.0])
		right = np.array([np.sin(h), np.cos(h), 0.0])
		return forward, right, np.array([0.0, 0.0, 1.0])

	def pixel_rays(self, camera: CameraPose) -> tuple:
		"""Builds one unit ray per pixel, row-major.

		Parameters
		----------
		camera: CameraPose -- the camera

		Returns: tuple -- (origin (3, ), directions (H*W, 3))
		"""
		height, width = self.resolution
		s = (np.arange(width) + 0.5 - width / 2.0) / self.focal
		u = (height / 2.0 - np.arange(height) - 0.5) / self.focal
		s, u = np.meshgrid(s, u)

		forward, right, up = self._basis(camera)
		dirs = forward + s[..., None] * right + u[..., None] * up
		dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)

		origin = np.array([camera.x, camera.y, camera.z], dtype=np.float64)
		return origin, dirs.reshape(-1, 3)

	def project(self, camera: CameraPose, points: np.ndarray) -> tuple:
		"""Projects world points into a camera.

		Parameters
		----------
		camera: CameraPose -- the camera
		points: np.ndarray -- (N, 3) world points

		Returns: tuple -- (column coordinates, row coordinates, forward
		distance) of every point
		"""
		height, width = self.resolution
		forward, right, up = self._basis(camera)
		rel = points - np.array([camera.x, camera.y, camera.z])
		ahead = rel @ forward

		with np.errstate(divide='ignore', invalid='ignore'):
			cols = self.focal * (rel @ right) / ahead + width / 2.0 - 0.5
			rows = height / 2.0 - 0.5 - self.focal * (rel @ up) / ahead
		return cols, rows, ahead

	def _overlay(self) -> tuple:
		height, width = self.resolution
		return (slice(int(0.75 * height), height),
				slice(int(0.375 * width), int(0.625 * width)))

	def _shade(self, scene: Scene, hits: Hits) -> np.ndarray:
		rgb = np.zeros((len(hits.t), 3))
		rgb[hits.ident == SEG_FLOOR] = scene.palette['floor']
		rgb[hits.ident == SEG_CEILING] = scene.palette['ceiling']

		boxed = hits.slot >= 0
		r, c, k = hits.row[boxed], hits.col[boxed], hits.slot[boxed]
		rgb[boxed] = scene.color[r, c, k]
		rgb[(hits.slot < 0) & (hits.ident == SEG_WALL)] = \
			scene.palette['wall']

		opening = scene.interior[r, c, k]
		points = hits.points[boxed]
		faces = hits.face[boxed]
		across = np.where(faces == FACE_X, points[:, 1], points[:, 0])
		across = across - np.floor(across)
		height = np.maximum(scene.hi[r, c, k] - scene.lo[r, c, k], EPS)
		along = (points[:, 2] - scene.lo[r, c, k]) / height
		patch = (opening > 0) & np.isin(faces, (FACE_X, FACE_Y)) \
			& (np.abs(across - 0.5) < 0.3 * opening) \
			& (along > 0.15) & (along < 0.85)
		inner = rgb[boxed]
		inner[patch] = scene.interior_color[r, c, k][patch]
		rgb[boxed] = inner

		shade = SHADE_TABLE[hits.face - FACE_NONE]
		texture = _texture(hits.points, scene.texture_noise)
		return rgb * (shade * texture * scene.brightness)[:, None]

	def render_scene(self, scene: Scene, timestep: int) -> Frame:
		"""Renders a compiled scene from its camera.

		Parameters
		----------
		scene: Scene -- the compiled geometry
		timestep: int -- the frame's timestep

		Returns: Frame -- rgb, depth, segmentation and pose
		"""
		height, width = self.resolution
		origin, dirs = self.pixel_rays(scene.camera)
		hits = self.cast(scene, origin, dirs)

		rgb = self._shade(scene, hits).reshape(height, width, 3)
		depth = hits.t.reshape(height, width).copy()
		seg = hits.ident.reshape(height, width).copy()

		if scene.held is not None:
			rows, cols = self._overlay()
			rgb[rows, cols] = scene.held_color * scene.brightness
			depth[rows, cols] = HELD_DEPTH
			seg[rows, cols] = scene.held

		return Frame(quantize(rgb), depth.astype(np.float32),
					 seg.astype(np.int32), scene.camera, int(timestep))

	def render(self, state: WorldState, params: RenderParams=None,
			   timestep: int=None) -> Frame:
		"""Renders a state, optionally with interpolated parameters.

		Parameters
		----------
		state: WorldState -- the state
		params: RenderParams -- overrides, the state's own when None
		(default None)
		timestep: int -- the frame's timestep, the state's when None
		(default None)

		Returns: Frame -- the egocentric observation
		"""
		scene = self.compile(state, params)
		return self.render_scene(
			scene, state.timestep if timestep is None else timestep)

	def ground_truth_flow(self, frame_a: Frame, frame_b: Frame,
						  scene_b: Scene) -> FlowField:
		"""Computes the flow between consecutive frames by reprojecting the
		depth-backprojected points of frame_a through frame_b's camera.
		Points leaving the frame or hidden in frame_b's geometry are flagged
		invalid.

		Parameters
		----------
		frame_a: Frame -- the earlier frame
		frame_b: Frame -- the next frame
		scene_b: Scene -- the geometry frame_b was rendered from

		Returns: FlowField -- displacement in pixels

		Throws FrameError
		"""
		if frame_b.timestep - frame_a.timestep != 1:
			raise FrameError('frames {0} and {1} are not consecutive'.format(
				frame_a.timestep, frame_b.timestep))
		if frame_a.depth.shape != self.resolution \
				or frame_b.depth.shape != self.resolution:
			raise FrameError('frames do not match resolution {0}'.format(
				self.resolution))

		height, width = self.resolution
		origin_a, dirs_a = self.pixel_rays(frame_a.pose)
		depth = frame_a.depth.reshape(-1).astype(np.float64)
		points = origin_a + dirs_a * depth[:, None]

		cols, rows, ahead = self.project(frame_b.pose, points)
		valid = (ahead > 1e-6) & (cols >= 0) & (cols <= width - 1) \
			& (rows >= 0) & (rows <= height - 1)

		if scene_b.held is not None:
			rs, cs = self._overlay()
			ri, ci = np.round(rows), np.round(cols)
			valid &= ~((ri >= rs.start) & (ri < rs.stop) & (ci >= cs.start)
					   & (ci < cs.stop))

		idx = np.nonzero(valid)[0]
		if idx.size:
			origin_b = np.array([frame_b.pose.x, frame_b.pose.y,
								 frame_b.pose.z])
			rel = points[idx] - origin_b
			dist = np.linalg.norm(rel, axis=1)
			hits = self.cast(scene_b, origin_b, rel / dist[:, None])
			valid[idx] = np.abs(hits.t - dist) < OCCLUSION_TOLERANCE

		jj, ii = np.meshgrid(np.arange(width), np.arange(height))
		u = np.where(valid, cols - jj.reshape(-1), 0.0)
		v = np.where(valid, rows - ii.reshape(-1), 0.0)
		return FlowField(u.reshape(height, width).astype(np.float32),
						 v.reshape(height, width).astype(np.float32),
						 valid.reshape(height, width))


DEFAULT_RENDERER = RaycastRenderer()


def render(state: WorldState) -> Frame:
	"""Renders a state at the default 64x64 resolution."""
	return DEFAULT_RENDERER.render(state)


def ground_truth_flow(frame_a: Frame, frame_b: Frame, state_geometry
					  ) -> FlowField:
	"""Computes the ground-truth flow between consecutive frames.

	Parameters
	----------
	frame_a: Frame -- the earlier frame
	frame_b: Frame -- the next frame
	state_geometry -- the Scene frame_b was rendered from, or a WorldState
	whose own parameters produced frame_b

	Returns: FlowField -- displacement in pixels

	Throws FrameError
	"""
	renderer = RaycastRenderer(frame_a.depth.shape)
	if isinstance(state_geometry, WorldState):
		state_geometry = renderer.compile(state_geometry)
	return renderer.ground_truth_flow(frame_a, frame_b, state_geometry)
