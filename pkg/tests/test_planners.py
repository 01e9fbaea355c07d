"""Collection of unit tests for egohome.planners module's classes and
functions.

Classes: TaskFileTests, DecomposeTests, PlanStepTests, PolicyTests,
EpisodeTests
"""

import os
import tempfile
import unittest
from unittest import mock

import numpy as np

from egohome import houses, planners
from egohome.errors import PlanningError
from egohome.matchers import OracleMatcher
from egohome.models import (AgentPose, Imagination, ObjectInstance,
							Observation, Skill, Subgoal, SubgoalPlan,
							WorldState)
from egohome.renderers import RaycastRenderer


FRIDGE, JUICE = 10, 11


def kitchen_state() -> WorldState:
	grid = np.full((8, 8), houses.CELL_WALL, dtype=np.int8)
	grid[1:-1, 1:-1] = houses.CELL_FLOOR
	objects = (
		ObjectInstance(FRIDGE, 'fridge', (2, 3), 'closed', (JUICE, )),
		ObjectInstance(JUICE, 'juice', (2, 3), 'placed', ())
	)
	agent = AgentPose((2.5, 2.5), 0.0, None, 'standing')
	return WorldState(0, grid, objects, agent, houses.DEFAULT_STYLE, 0, 0)


class FlatWorldModel(planners.WorldModel):
	"""Imagines the same image for every skill but the failing ones."""
	def __init__(self, failing=()):
		self.failing = failing

	def imagine(self, observation, skill, seed):
		if skill.verb in self.failing:
			raise ValueError('broken {0}'.format(skill))
		return Imagination(skill, np.zeros((4, 4, 3)), None)


class TaskFileTests(unittest.TestCase):
	"""Set of unit tests to validate the task file reader.

	Tests: test_shipped, test_navigation, test_malformed
	"""
	def test_shipped(self):
		"""Steps:
		1 - Loads the shipped task file
		2 - Verify uids, room counts and a multi-subgoal task
		"""
		tasks = planners.load_tasks()
		self.assertEqual([t.uid for t in tasks], list(range(1, 13)))
		self.assertEqual(tasks[0].rooms, 1)
		self.assertEqual(tasks[6].rooms, 2)
		self.assertEqual(tasks[2].subgoals, (
			'walk to the toaster', 'grab the bread', 'walk to the plate',
			'place the bread on the plate'))

	def test_navigation(self):
		"""Steps:
		1 - Loads the navigation task file
		2 - Verify every task is a single walk_to subgoal
		"""
		tasks = planners.load_tasks(planners.NAVIGATION_TASKS_PATH)
		self.assertEqual([t.uid for t in tasks], [101, 102, 103, 104, 105])
		for task in tasks:
			self.assertEqual(len(task.subgoals), 1)
			self.assertTrue(task.subgoals[0].startswith('walk to the'))

	def test_malformed(self):
		"""Steps:
		1 - Verify a stray line raises error
		2 - Verify a task without subgoals raises error
		"""
		with tempfile.TemporaryDirectory() as tmp:
			path = os.path.join(tmp, 'tasks.txt')
			with open(path, 'w') as handle:
				handle.write('open the fridge\n')
			with self.assertRaises(PlanningError):
				planners.load_tasks(path)

			with open(path, 'w') as handle:
				handle.write('task 1 rooms=1: open the fridge\n')
			with self.assertRaises(PlanningError):
				planners.load_tasks(path)


class DecomposeTests(unittest.TestCase):
	"""Set of unit tests to validate instruction decomposition.

	Tests: test_shipped_tasks, test_phrases, test_errors, test_lmm_backend
	"""
	def test_shipped_tasks(self):
		"""Steps:
		1 - Decomposes every shipped instruction with the grammar backend
		2 - Verify the subgoals listed in the task file
		"""
		for task in planners.load_tasks():
			self.assertEqual(planners.decompose(task.instruction),
							 list(task.subgoals), task.instruction)

	def test_phrases(self):
		"""Steps:
		1 - Verify a container receiver reads "put in"
		2 - Verify the goal-state and next-timestep phrasings
		"""
		self.assertEqual(
			planners.decompose('Take the juice out of the fridge and put it '
							   'in the cabinet.')[-1],
			'put the juice in the cabinet')
		self.assertEqual(planners.goal_phrase('open the fridge'),
						 'the goal state: open fridge')
		state = kitchen_state()
		self.assertEqual(planners.action_phrase(state, Skill('open', FRIDGE)),
						 'next timestep: open the fridge')
		self.assertEqual(planners.action_phrase(state,
												Skill('turn_left', None)),
						 'next timestep: turn left')

	def test_errors(self):
		"""Steps:
		1 - Verify an unparseable clause raises error
		2 - Verify an unknown backend raises error
		3 - Verify the lmm backend needs a client
		"""
		with self.assertRaises(PlanningError):
			planners.decompose('open the fridge and juggle the plate')
		with self.assertRaises(ValueError):
			planners.decompose('open the fridge', backend='oracle')
		with self.assertRaises(PlanningError):
			planners.decompose('open the fridge', backend='lmm')

	def test_lmm_backend(self):
		"""Steps:
		1 - Decomposes through a mocked client
		2 - Verify its subgoals are kept and validated
		"""
		requester = mock.Mock()
		requester.decompose.return_value = ['open the fridge']
		self.assertEqual(planners.decompose('get juice', 'lmm', requester),
						 ['open the fridge'])

		requester.decompose.return_value = ['dance']
		with self.assertRaises(PlanningError):
			planners.decompose('get juice', 'lmm', requester)


class PlanStepTests(unittest.TestCase):
	"""Set of unit tests to validate the one-step planner.

	Tests: test_ties, test_dropped_candidates, test_no_candidates
	"""
	def setUp(self):
		self.observation = Observation(None, kitchen_state(), None)
		self.subgoal = Subgoal('open the fridge', None, None)
		self.feasible = [Skill('open', FRIDGE), Skill('turn_right', None),
						 Skill('turn_left', None)]

	def test_ties(self):
		"""Steps:
		1 - Scores every candidate equally
		2 - Verify the first skill of the canonical order wins
		"""
		matcher = mock.Mock()
		matcher.score_candidates.return_value = ([0.5, 0.5, 0.5], [])
		skill, scores = planners.plan_step(
			self.observation, self.subgoal, FlatWorldModel(), self.feasible,
			matcher, seed=0)

		self.assertEqual(skill, Skill('turn_left', None))
		self.assertEqual(sorted(scores), ['open(10)', 'turn_left',
										  'turn_right'])

	def test_dropped_candidates(self):
		"""Steps:
		1 - Plans with a world model failing on turns
		2 - Verify the turns are noted and the remaining skill is chosen
		"""
		matcher = mock.Mock()
		matcher.score_candidates.return_value = ([0.1], ['lmm fallback: x'])
		notes = []
		skill, _ = planners.plan_step(
			self.observation, self.subgoal,
			FlatWorldModel(('turn_left', 'turn_right')), self.feasible,
			matcher, 0, notes)

		self.assertEqual(skill, Skill('open', FRIDGE))
		self.assertEqual(len(notes), 3)
		self.assertEqual(notes[-1], 'lmm fallback: x')

	def test_no_candidates(self):
		"""Steps:
		1 - Verify an empty feasible set raises error
		2 - Verify a world model failing everywhere raises error
		"""
		with self.assertRaises(PlanningError):
			planners.plan_step(self.observation, self.subgoal,
							   FlatWorldModel(), [], mock.Mock(), 0)
		with self.assertRaises(PlanningError):
			planners.plan_step(self.observation, self.subgoal,
							   FlatWorldModel(('turn_left', 'turn_right',
											   'open')),
							   self.feasible, mock.Mock(), 0)


class PolicyTests(unittest.TestCase):
	"""Set of unit tests to validate the baseline policies.

	Tests: test_random, test_greedy_text
	"""
	def setUp(self):
		self.observation = Observation(None, kitchen_state(), None)
		self.subgoal = Subgoal('open the fridge', None, None)
		self.feasible = [Skill('turn_left', None), Skill('turn_right', None),
						 Skill('open', FRIDGE)]

	def test_random(self):
		"""Steps:
		1 - Picks skills with the random policy
		2 - Verify a seed always picks the same feasible skill
		"""
		policy = planners.RandomPolicy()
		first, _ = policy.choose(self.observation, self.subgoal,
								 self.feasible, 7, [])
		second, _ = policy.choose(self.observation, self.subgoal,
								  list(reversed(self.feasible)), 7, [])
		self.assertEqual(first, second)
		self.assertIn(first, self.feasible)

	def test_greedy_text(self):
		"""Steps:
		1 - Picks a skill by word overlap
		2 - Verify the phrase sharing the subgoal words wins
		"""
		skill, scores = planners.GreedyTextPolicy().choose(
			self.observation, self.subgoal, self.feasible, 0, [])
		self.assertEqual(skill, Skill('open', FRIDGE))
		self.assertEqual(scores['open(10)'], 1.0)
		self.assertEqual(scores['turn_left'], 0.0)


class EpisodeTests(unittest.TestCase):
	"""Set of unit tests to validate task environments and episodes.

	Tests: test_environment, test_oracle_episode, test_step_cap,
	test_step_cap_unreachable, test_replay, test_image_mode,
	test_failed_subgoal_image
	"""
	@classmethod
	def setUpClass(cls):
		cls.renderer = RaycastRenderer((16, 16))
		cls.task = planners.load_tasks()[1]

	def setUp(self):
		self.env = planners.find_environment(self.task, 0, 0,
											 renderer=self.renderer)

	def test_environment(self):
		"""Steps:
		1 - Builds the environment of "open the fridge"
		2 - Verify the bound fridge starts closed and the subgoal is unmet
		3 - Verify the build is deterministic
		"""
		fridge = houses.object_by_id(self.env.state,
									 self.env.bindings['fridge'])
		self.assertEqual(fridge.binary_state, 'closed')
		self.assertFalse(self.env.satisfied('open the fridge'))

		again = planners.find_environment(self.task, 0, 0,
										  renderer=self.renderer)
		self.assertEqual(again.bindings, self.env.bindings)
		self.assertEqual(again.state.agent, self.env.state.agent)

	def test_oracle_episode(self):
		"""Steps:
		1 - Runs the one-step planner with the simulator and the oracle
		2 - Verify success with every completion verified and logged
		"""
		matcher = OracleMatcher()
		policy = planners.OneStepPolicy(
			planners.SimulatorWorldModel(self.renderer), matcher)
		result = planners.run_episode(self.env, self.task.instruction,
									  policy, matcher)

		self.assertTrue(result.success)
		self.assertIsNone(result.error)
		self.assertEqual(len(result.steps), result.steps_taken)
		self.assertEqual(result.steps[-1].chosen,
						 'open({0})'.format(self.env.bindings['fridge']))
		self.assertEqual(result.completions[0]['verified'], True)

	def test_step_cap(self):
		"""Steps:
		1 - Runs an episode allowed no step
		2 - Verify it fails without taking any
		"""
		config = planners.DEFAULT_EPISODE._replace(max_steps=0)
		result = planners.run_episode(self.env, self.task.instruction,
									  planners.RandomPolicy(), OracleMatcher(),
									  config)
		self.assertFalse(result.success)
		self.assertEqual(result.steps_taken, 0)

	def test_step_cap_unreachable(self):
		"""Steps:
		1 - Runs a random episode whose only subgoal can never hold
		2 - Verify it fails after exactly max_steps logged steps
		"""
		config = planners.DEFAULT_EPISODE._replace(max_steps=6)
		result = planners.run_episode(self.env, self.task.instruction,
									  planners.RandomPolicy(), OracleMatcher(),
									  config, subgoals=['grab the fridge'])
		self.assertFalse(result.success)
		self.assertIsNone(result.error)
		self.assertEqual(result.steps_taken, 6)
		self.assertEqual(len(result.steps), 6)
		self.assertEqual(result.completions, [])

	def test_replay(self):
		"""Steps:
		1 - Runs a random episode
		2 - Replays it on a fresh environment, choosing each skill with the
		logged seed
		3 - Verify the feasible sets and the chosen skills match the log
		"""
		config = planners.DEFAULT_EPISODE._replace(max_steps=8, seed=4)
		policy = planners.RandomPolicy()
		result = planners.run_episode(self.env, self.task.instruction,
									  policy, OracleMatcher(), config)
		self.assertTrue(result.steps)

		env = planners.find_environment(self.task, 0, 0,
										renderer=self.renderer)
		observation = env.observe()
		subgoal = Subgoal(self.task.subgoals[0], None, None)
		for entry in result.steps:
			feasible = env.feasible()
			self.assertEqual([str(s) for s in feasible], entry.feasible)
			skill, _ = policy.choose(observation, subgoal, feasible,
									 entry.seed, [])
			self.assertEqual(str(skill), entry.chosen)
			observation = env.step(skill)

	def test_image_mode(self):
		"""Steps:
		1 - Verify image subgoals need a subgoal model
		2 - Verify an unknown subgoal mode raises error
		"""
		config = planners.DEFAULT_EPISODE._replace(subgoal_mode='image')
		with self.assertRaises(PlanningError):
			planners.run_episode(self.env, self.task.instruction,
								 planners.RandomPolicy(), OracleMatcher(),
								 config)
		with self.assertRaises(ValueError):
			planners.episode_config({'subgoal_mode': 'video'})

	def test_failed_subgoal_image(self):
		"""Steps:
		1 - Materializes the image of an unparseable subgoal
		2 - Verify the text is kept and the error recorded
		"""
		plan = SubgoalPlan('x', (Subgoal('juggle the plate', None, None), ),
						   0)
		plan = planners.materialize_image_subgoals(
			plan, (None, None), np.zeros((16, 16, 3)), seed=0)
		self.assertIsNone(plan.subgoals[0].image)
		self.assertEqual(plan.subgoals[0].text, 'juggle the plate')
		self.assertIsNotNone(plan.subgoals[0].error)


if __name__ == 'main':
	unittest.main()
