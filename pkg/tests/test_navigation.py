"""Collection of unit tests for egohome.navigation module's classes.

Classes: PoseGraphTests
"""

import unittest

import numpy as np

from egohome import houses
from egohome.models import AgentPose, ObjectInstance, WorldState
from egohome.navigation import CLOSED_DOOR_COST, PoseGraph


def two_room_state(door_state='closed'):
	"""Builds an 8x8 house split by a wall on column 4 with a door at (3, 4)
	and a fridge at (2, 2).
	"""
	grid = np.full((8, 8), houses.CELL_WALL, dtype=np.int8)
	grid[1:-1, 1:-1] = houses.CELL_FLOOR
	grid[:, 4] = houses.CELL_WALL
	grid[3, 4] = houses.CELL_DOOR
	objects = (
		ObjectInstance(10, 'door', (3, 4), door_state, ()),
		ObjectInstance(11, 'fridge', (2, 2), 'closed', ())
	)
	agent = AgentPose((3.5, 3.5), 0.0, None, 'standing')
	return WorldState(0, grid, objects, agent, houses.DEFAULT_STYLE, 0, 0)


class PoseGraphTests(unittest.TestCase):
	"""Set of unit tests to validate the pose graph.

	Tests: test_node_pose, test_turns_and_walks, test_door_cost,
	test_facing_nodes, test_unreachable
	"""
	def test_node_pose(self):
		"""Steps:
		1 - Converts poses to nodes and back
		2 - Verify the round trip for every heading
		"""
		graph = PoseGraph(two_room_state())
		for heading in houses.HEADINGS:
			node = graph.node((5, 2), heading)
			self.assertEqual(graph.pose(node), ((5, 2), float(heading)))

	def test_turns_and_walks(self):
		"""Steps:
		1 - Computes the costs from the agent pose
		2 - Verify turning and walking costs one per skill
		3 - Verify cells holding objects are not standable
		"""
		graph = PoseGraph(two_room_state())
		costs = graph.costs_from((3, 3), 0.0)

		self.assertEqual(costs[graph.node((3, 3), 0.0)], 0.0)
		self.assertEqual(costs[graph.node((3, 3), 90.0)], 1.0)
		self.assertEqual(costs[graph.node((3, 3), 180.0)], 2.0)
		self.assertEqual(costs[graph.node((4, 3), 270.0)], 2.0)
		self.assertFalse(graph.standable[2, 2])
		self.assertTrue(np.isinf(costs[graph.node((2, 2), 0.0)]))

	def test_door_cost(self):
		"""Steps:
		1 - Crosses a closed door and verify its cost
		2 - Crosses the same door open and verify the cost drops to one
		"""
		graph = PoseGraph(two_room_state('closed'))
		costs = graph.costs_from((3, 3), 0.0)
		self.assertEqual(costs[graph.node((3, 5), 0.0)], CLOSED_DOOR_COST)

		graph = PoseGraph(two_room_state('open'))
		costs = graph.costs_from((3, 3), 0.0)
		self.assertEqual(costs[graph.node((3, 5), 0.0)], 1.0)

	def test_facing_nodes(self):
		"""Steps:
		1 - Lists the poses facing the fridge
		2 - Verify the four neighbours facing it
		3 - Verify the costs to reach any of them
		"""
		graph = PoseGraph(two_room_state())
		nodes = graph.facing_nodes((2, 2))
		poses = sorted(graph.pose(n) for n in nodes)
		self.assertEqual(poses, [((1, 2), 270.0), ((2, 1), 0.0),
								 ((2, 3), 180.0), ((3, 2), 90.0)])

		costs = graph.costs_to(nodes)
		self.assertEqual(costs[graph.node((2, 3), 180.0)], 0.0)
		self.assertEqual(costs[graph.node((3, 2), 0.0)], 1.0)

	def test_unreachable(self):
		"""Steps:
		1 - Verify costs to no node are all infinite
		"""
		graph = PoseGraph(two_room_state())
		self.assertTrue(np.all(np.isinf(graph.costs_to([]))))


if __name__ == 'main':
	unittest.main()
