"""The navigation module builds the graph of agent poses of a house, with one
node per (cell, heading) and one weighted edge per locomotion skill, and
answers shortest-cost queries over it with scipy's graph routines.

Classes: PoseGraph
"""

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .houses import CELL_DOOR
from .models import WorldState
from .skills import is_free_floor


STEPS = ((0, 1), (-1, 0), (0, -1), (1, 0))
CLOSED_DOOR_COST = 2.0


def quarter(heading: float) -> int:
	"""Maps a cardinal heading in degrees to its index in STEPS."""
	return int(round(heading / 90.0)) % 4


class PoseGraph(object):
	"""Weighted directed graph of standing poses. Turning and walking one
	cell cost 1; crossing a door costs 1 when open and CLOSED_DOOR_COST when
	it must be opened first.

	Methods: node, pose, costs_from, costs_to, facing_nodes
	"""
	def __init__(self, state: WorldState):
		"""PoseGraph's constructor.

		Parameters
		----------
		state: WorldState -- the house whose free floor is traversed
		"""
		self.shape = state.grid.shape
		rows, cols = self.shape
		self.size = rows * cols * 4
		self.standable = np.zeros(self.shape, dtype=bool)
		for r in range(rows):
			for c in range(cols):
				self.standable[r, c] = is_free_floor(state, (r, c))

		doors = {o.cell: o.binary_state for o in state.objects
				 if o.kind == 'door'}

		src, dst, cost = [], [], []
		for r, c in zip(*np.nonzero(self.standable)):
			for q, (dr, dc) in enumerate(STEPS):
				here = self.node((r, c), q * 90.0)
				for turn in (1, 3):
					src.append(here)
					dst.append(self.node((r, c), ((q + turn) % 4) * 90.0))
					cost.append(1.0)

				ahead = (r + dr, c + dc)
				if self._standable(ahead):
					src.append(here)
					dst.append(self.node(ahead, q * 90.0))
					cost.append(1.0)
				elif self._inside(ahead) and state.grid[ahead] == CELL_DOOR:
					beyond = (r + 2 * dr, c + 2 * dc)
					if self._standable(beyond):
						src.append(here)
						dst.append(self.node(beyond, q * 90.0))
						cost.append(1.0 if doors.get(ahead) == 'open'
									else CLOSED_DOOR_COST)

		self.matrix = csr_matrix((cost, (src, dst)),
								 shape=(self.size, self.size))

	def _inside(self, cell: tuple) -> bool:
		return 0 <= cell[0] < self.shape[0] and 0 <= cell[1] < self.shape[1]

	def _standable(self, cell: tuple) -> bool:
		return self._inside(cell) and bool(self.standable[cell])

	def node(self, cell: tuple, heading: float) -> int:
		"""Gets the node index of a pose."""
		return ((int(cell[0]) * self.shape[1]) + int(cell[1])) * 4 \
			+ quarter(heading)

	def pose(self, node: int) -> tuple:
		"""Gets the (cell, heading) of a node index."""
		cell, q = divmod(int(node), 4)
		return divmod(cell, self.shape[1]), q * 90.0

	def costs_from(self, cell: tuple, heading: float) -> np.ndarray:
		"""Shortest costs from one pose to every node, inf when unreachable.
		"""
		return dijkstra(self.matrix, directed=True,
						indices=self.node(cell, heading))

	def costs_to(self, nodes: list) -> np.ndarray:
		"""Shortest costs from every node to the closest of the given nodes,
		inf when unreachable.
		"""
		if not nodes:
			return np.full(self.size, np.inf)
		return dijkstra(self.matrix.T.tocsr(), directed=True,
						indices=list(nodes), min_only=True)

	def facing_nodes(self, target: tuple) -> list:
		"""Lists the standable poses adjacent to a cell and facing it."""
		nodes = []
		for q, (dr, dc) in enumerate(STEPS):
			cell = (target[0] - dr, target[1] - dc)
			if self._standable(cell):
				nodes.append(self.node(cell, q * 90.0))
		return nodes
