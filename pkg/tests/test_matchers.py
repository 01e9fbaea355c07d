"""Collection of unit tests for egohome.matchers module's classes and
functions.

Classes: ParseSubgoalTests, GoalSatisfiedTests, ScriptedMatcherTests,
OracleMatcherTests, LmmMatcherTests
"""

import unittest
from unittest import mock

import numpy as np

from egohome import houses, matchers, skills
from egohome.errors import LmmTransportError, PlanningError
from egohome.matchers import SubgoalSpec
from egohome.models import (AgentPose, Imagination, ObjectInstance, Skill,
							Subgoal, WorldState)


FRIDGE, JUICE = 10, 11


def kitchen_state(position=(2.5, 2.5), heading=0.0):
	"""Builds an 8x8 room whose agent stands next to a closed fridge
	holding juice, facing it by default.
	"""
	grid = np.full((8, 8), houses.CELL_WALL, dtype=np.int8)
	grid[1:-1, 1:-1] = houses.CELL_FLOOR
	objects = (
		ObjectInstance(FRIDGE, 'fridge', (2, 3), 'closed', (JUICE, )),
		ObjectInstance(JUICE, 'juice', (2, 3), 'placed', ())
	)
	agent = AgentPose(position, heading, None, 'standing')
	return WorldState(0, grid, objects, agent, houses.DEFAULT_STYLE, 0, 0)


def flat_image(kind: str, shade: float=0.7, size: int=16) -> np.ndarray:
	color = np.array(houses.DEFAULT_STYLE.color(kind)) * shade
	return np.tile(color, (size, size, 1))


class ParseSubgoalTests(unittest.TestCase):
	"""Set of unit tests to validate the subgoal grammar.

	Tests: test_parse, test_errors
	"""
	def test_parse(self):
		"""Steps:
		1 - Parses navigation, placement and verb-phrase subgoals
		2 - Verify the specs
		"""
		self.assertEqual(matchers.parse_subgoal('walk to the fridge'),
						 SubgoalSpec('walk_to', 'fridge', None))
		self.assertEqual(matchers.parse_subgoal('Put the juice in the fridge.'),
						 SubgoalSpec('put_in', 'juice', 'fridge'))
		self.assertEqual(matchers.parse_subgoal('place the bread on the plate'),
						 SubgoalSpec('put_in', 'bread', 'plate'))
		self.assertEqual(
			matchers.parse_subgoal('the goal state: switch on the light'),
			SubgoalSpec('switch_on', 'light', None))

	def test_errors(self):
		"""Steps:
		1 - Verify it raises error for an unknown verb
		2 - Verify it raises error for an unknown receiver
		"""
		with self.assertRaises(PlanningError):
			matchers.parse_subgoal('juggle the plate')
		with self.assertRaises(PlanningError):
			matchers.parse_subgoal('put the juice in the garage')


class GoalSatisfiedTests(unittest.TestCase):
	"""Set of unit tests to validate the ground-truth subgoal predicates.

	Tests: test_walk_to, test_open_grab_put_in
	"""
	def test_walk_to(self):
		"""Steps:
		1 - Verify facing the fridge satisfies walking to it
		2 - Verify facing away does not
		3 - Verify walking to the juice means facing the fridge holding it
		"""
		state = kitchen_state()
		self.assertTrue(matchers.goal_satisfied(
			state, SubgoalSpec('walk_to', 'fridge', None)))
		self.assertTrue(matchers.goal_satisfied(
			state, SubgoalSpec('walk_to', 'juice', None)))

		away = kitchen_state(heading=180.0)
		self.assertFalse(matchers.goal_satisfied(
			away, SubgoalSpec('walk_to', 'fridge', None)))

	def test_open_grab_put_in(self):
		"""Steps:
		1 - Opens the fridge, grabs the juice and puts it back in
		2 - Verify each subgoal holds right after its skill
		"""
		opened = SubgoalSpec('open', 'fridge', None)
		grabbed = SubgoalSpec('grab', 'juice', None)
		put = SubgoalSpec('put_in', 'juice', 'fridge')

		state = kitchen_state()
		self.assertFalse(matchers.goal_satisfied(state, opened))
		state = skills.transition(state, Skill('open', FRIDGE))
		self.assertTrue(matchers.goal_satisfied(state, opened))
		state = skills.transition(state, Skill('grab', JUICE))
		self.assertTrue(matchers.goal_satisfied(state, grabbed))
		self.assertFalse(matchers.goal_satisfied(state, put))
		state = skills.transition(state, Skill('put_in', FRIDGE))
		self.assertTrue(matchers.goal_satisfied(state, put))

	def test_bindings(self):
		"""Steps:
		1 - Binds a noun to an unknown id
		2 - Verify the subgoal is not satisfied
		"""
		state = kitchen_state()
		self.assertIsNone(matchers.bind_object(state, 'fridge',
											   {'fridge': 99}))
		self.assertFalse(matchers.goal_satisfied(
			state, SubgoalSpec('walk_to', 'fridge', None), {'fridge': 99}))


class ScriptedMatcherTests(unittest.TestCase):
	"""Set of unit tests to validate the offline scripted matcher.

	Tests: test_pseudo_segmentation, test_text_predicate, test_image_subgoal
	"""
	def test_pseudo_segmentation(self):
		"""Steps:
		1 - Labels shaded flat images of palette colors
		2 - Verify every pixel gets the color's class
		"""
		for kind in ('fridge', 'juice', 'wall'):
			labels, names = matchers.pseudo_segmentation(flat_image(kind))
			self.assertTrue(np.all(labels == names.index(kind)))

	def test_text_predicate(self):
		"""Steps:
		1 - Scores walking to the fridge on a fridge view and a wall view
		2 - Verify the first is done and the second scores zero
		3 - Verify an object-free subgoal scores zero
		"""
		matcher = matchers.ScriptedMatcher()
		subgoal = Subgoal('walk to the fridge', None, None)
		self.assertTrue(matcher.done(flat_image('fridge'), subgoal))
		self.assertEqual(matcher.score(flat_image('wall'), subgoal), 0.0)
		self.assertEqual(matcher.predicate(
			flat_image('wall'), SubgoalSpec('stand_up', None, None)), 0.0)

	def test_image_subgoal(self):
		"""Steps:
		1 - Scores images against an image subgoal
		2 - Verify identical images score one and farther ones score less
		"""
		matcher = matchers.ScriptedMatcher(temperature=0.1)
		target = flat_image('fridge')
		subgoal = Subgoal('walk to the fridge', target, None)

		self.assertAlmostEqual(matcher.score(target, subgoal), 1.0)
		near = matcher.score(target + 0.01, subgoal)
		far = matcher.score(target + 0.1, subgoal)
		self.assertAlmostEqual(near, np.exp(-0.1))
		self.assertLess(far, near)


class OracleMatcherTests(unittest.TestCase):
	"""Set of unit tests to validate the ground-truth matcher.

	Tests: test_remaining, test_scores, test_needs_state
	"""
	def test_remaining(self):
		"""Steps:
		1 - Counts the skills left for several subgoals in front of the
		fridge
		2 - Verify the counts
		"""
		matcher = matchers.OracleMatcher()
		state = kitchen_state()
		self.assertEqual(matcher.remaining(
			state, SubgoalSpec('walk_to', 'fridge', None)), 0.0)
		self.assertEqual(matcher.remaining(
			state, SubgoalSpec('open', 'fridge', None)), 1.0)

		away = kitchen_state(heading=180.0)
		self.assertEqual(matcher.remaining(
			away, SubgoalSpec('walk_to', 'fridge', None)), 2.0)
		self.assertEqual(matcher.remaining(
			away, SubgoalSpec('open', 'fridge', None)), 3.0)

	def test_scores(self):
		"""Steps:
		1 - Scores the outcomes of opening the fridge and turning away
		2 - Verify the done outcome scores one and is ranked first
		"""
		matcher = matchers.OracleMatcher()
		state = kitchen_state()
		subgoal = Subgoal('open the fridge', None, None)
		candidates = [
			Imagination(Skill('turn_left', None), None,
						skills.transition(state, Skill('turn_left', None))),
			Imagination(Skill('open', FRIDGE), None,
						skills.transition(state, Skill('open', FRIDGE)))
		]
		scores, notes = matcher.score_candidates(candidates, subgoal)

		self.assertEqual(scores[1], 1.0)
		self.assertLess(scores[0], scores[1])
		self.assertEqual(notes, [])
		self.assertTrue(matcher.done(None, subgoal, candidates[1].state))

	def test_needs_state(self):
		"""Steps:
		1 - Verify scoring without the true state raises error
		"""
		with self.assertRaises(PlanningError):
			matchers.OracleMatcher().score(
				None, Subgoal('open the fridge', None, None))


class LmmMatcherTests(unittest.TestCase):
	"""Set of unit tests to validate the endpoint-backed matcher.

	Tests: test_rank_scores, test_fallback
	"""
	def setUp(self):
		self.candidates = [
			Imagination(Skill('turn_left', None), flat_image('wall'), None),
			Imagination(Skill('open', FRIDGE), flat_image('fridge'), None)
		]
		self.subgoal = Subgoal('walk to the fridge', None, None)

	def test_rank_scores(self):
		"""Steps:
		1 - Ranks two candidates with a mocked requester
		2 - Verify the scores follow the ranking
		"""
		requester = mock.Mock()
		requester.rank.return_value = [1, 0]
		scores, notes = matchers.LmmMatcher(requester).score_candidates(
			self.candidates, self.subgoal)

		self.assertEqual(scores, [0.5, 1.0])
		self.assertEqual(notes, [])
		requester.rank.assert_called_once()

	def test_fallback(self):
		"""Steps:
		1 - Ranks with a requester whose endpoint fails
		2 - Verify the scripted scores are used and the fallback is noted
		"""
		requester = mock.Mock()
		requester.rank.side_effect = LmmTransportError('down', 2)
		matcher = matchers.LmmMatcher(requester)
		scores, notes = matcher.score_candidates(self.candidates,
												 self.subgoal)

		expected, _ = matchers.ScriptedMatcher().score_candidates(
			self.candidates, self.subgoal)
		self.assertEqual(scores, expected)
		self.assertEqual(len(notes), 1)
		self.assertTrue(notes[0].startswith('lmm fallback'))


if __name__ == 'main':
	unittest.main()
