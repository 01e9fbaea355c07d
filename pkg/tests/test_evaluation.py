"""Collection of unit tests for egohome.evaluation module's classes and
functions.

Classes: FrechetTests, MotionTests, StatisticsTests, RowTests,
ImageEvalTests
"""

import math
import os
import tempfile
import types
import unittest

import numpy as np
from scipy.stats import ortho_group

from egohome import evaluation
from egohome.errors import EvaluationError, MissingArtifactError
from egohome.models import FeatureStats, FlowField


def smooth_image(shape=(48, 48), shift=0.0, channels: int=0) -> np.ndarray:
	"""Builds a smooth pattern translated by shift pixels along x."""
	rows, cols = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
	cols = cols - shift
	img = 0.5 + 0.2 * np.sin(0.35 * cols) * np.cos(0.3 * rows) \
		+ 0.1 * np.cos(0.2 * cols + 0.15 * rows)
	if channels:
		img = np.stack([img] * channels, axis=-1)
	return img


def uniform_flow(shape, u: float, v: float=0.0) -> FlowField:
	return FlowField(np.full(shape, u), np.full(shape, v),
					 np.ones(shape, dtype=bool))


def random_stats(rng, dim: int) -> FeatureStats:
	factor = rng.normal(size=(dim, dim))
	return FeatureStats(rng.normal(size=dim), factor @ factor.T + 0.1
						* np.eye(dim), 10)


class FrechetTests(unittest.TestCase):
	"""Set of unit tests to validate feature statistics and the Fréchet
	distance.

	Tests: test_identities, test_known_value, test_invariances,
	test_errors, test_accumulator
	"""
	def test_identities(self):
		"""Steps:
		1 - Verify identical summaries are at distance zero
		2 - Verify unit covariances leave the squared mean gap
		"""
		rng = np.random.default_rng(0)
		stats = random_stats(rng, 5)
		self.assertAlmostEqual(evaluation.frechet_distance(stats, stats), 0.0,
							   places=6)

		mean = np.array([1.0, -2.0, 0.5])
		a = FeatureStats(mean, np.eye(3), 10)
		b = FeatureStats(np.zeros(3), np.eye(3), 10)
		self.assertAlmostEqual(evaluation.frechet_distance(a, b), 5.25)

	def test_known_value(self):
		"""Steps:
		1 - Compares two one-dimensional Gaussians of variance 1 and 4
		2 - Verify the distance is (1 - 2) ** 2
		"""
		a = FeatureStats(np.zeros(1), np.array([[1.0]]), 10)
		b = FeatureStats(np.zeros(1), np.array([[4.0]]), 10)
		self.assertAlmostEqual(evaluation.frechet_distance(a, b), 1.0)

	def test_invariances(self):
		"""Steps:
		1 - Computes the distance of two random summaries
		2 - Verify it is symmetric
		3 - Verify it survives rotating both feature spaces
		"""
		rng = np.random.default_rng(1)
		a, b = random_stats(rng, 4), random_stats(rng, 4)
		value = evaluation.frechet_distance(a, b)
		self.assertAlmostEqual(value, evaluation.frechet_distance(b, a),
							   places=6)

		q = ortho_group.rvs(4, random_state=2)
		rotated = [FeatureStats(q @ s.mean, q @ s.covariance @ q.T, s.count)
				   for s in (a, b)]
		self.assertAlmostEqual(value, evaluation.frechet_distance(*rotated),
							   places=6)

	def test_errors(self):
		"""Steps:
		1 - Verify mismatched dimensions raise error
		2 - Verify a non-symmetric covariance raises error
		3 - Verify a covariance with a negative eigenvalue raises error
		4 - Verify fewer than two samples raise error
		"""
		a = FeatureStats(np.zeros(2), np.eye(2), 3)
		with self.assertRaises(EvaluationError):
			evaluation.frechet_distance(a, FeatureStats(np.zeros(3),
														np.eye(3), 3))
		with self.assertRaises(EvaluationError):
			evaluation.frechet_distance(a, FeatureStats(
				np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]), 3))
		with self.assertRaises(EvaluationError):
			evaluation.frechet_distance(a, FeatureStats(
				np.zeros(2), np.diag([1.0, -1.0]), 3))
		with self.assertRaises(EvaluationError):
			evaluation.feature_stats(np.zeros((1, 2)))

	def test_accumulator(self):
		"""Steps:
		1 - Streams features in uneven batches, an empty one included
		2 - Verify the result agrees with the two-pass statistics
		"""
		features = np.random.default_rng(3).normal(5.0, 2.0, size=(37, 4))
		accumulator = evaluation.FeatureAccumulator(4)
		for start, stop in ((0, 1), (1, 1), (1, 12), (12, 30), (30, 37)):
			accumulator.update(features[start:stop])
		streamed = accumulator.stats()
		direct = evaluation.feature_stats(features)

		self.assertEqual(streamed.count, 37)
		self.assertTrue(np.allclose(streamed.mean, direct.mean, atol=1e-10))
		self.assertTrue(np.allclose(streamed.covariance, direct.covariance,
									atol=1e-10))

		with self.assertRaises(EvaluationError):
			evaluation.FeatureAccumulator(4).update(features[:1]).stats()


class MotionTests(unittest.TestCase):
	"""Set of unit tests to validate automated motion correctness.

	Tests: test_dominant_motion, test_direction, test_still,
	test_inconclusive
	"""
	def test_dominant_motion(self):
		"""Steps:
		1 - Summarizes a uniform flow and an expanding one
		2 - Verify mean, magnitude and radial sign
		"""
		motion = evaluation.dominant_motion(uniform_flow((5, 5), 3.0, 4.0))
		self.assertTrue(np.allclose(motion.mean, [3.0, 4.0]))
		self.assertAlmostEqual(motion.magnitude, 5.0)

		rows, cols = np.mgrid[0:5, 0:5].astype(np.float64)
		expanding = FlowField(cols - 2.0, rows - 2.0,
							  np.ones((5, 5), dtype=bool))
		self.assertGreater(evaluation.dominant_motion(expanding).radial, 0.0)
		self.assertIsNone(evaluation.dominant_motion(
			FlowField(np.zeros((2, 2)), np.zeros((2, 2)),
					  np.zeros((2, 2), dtype=bool))))

	def test_direction(self):
		"""Steps:
		1 - Judges a one-pixel shift to the right against a rightward truth
		2 - Verify it is correct and the opposite shift is not
		"""
		x_t = smooth_image()
		truth = uniform_flow(x_t.shape, 1.0)
		self.assertTrue(evaluation.motion_correctness(
			x_t, smooth_image(shift=1.0), truth, 'turn_right'))
		self.assertFalse(evaluation.motion_correctness(
			x_t, smooth_image(shift=-1.0), truth, 'turn_right'))

	def test_still(self):
		"""Steps:
		1 - Judges an unchanged image for a skill without camera motion
		2 - Verify it is correct and a moving image is not
		"""
		x_t = smooth_image()
		still = uniform_flow(x_t.shape, 0.0)
		self.assertTrue(evaluation.motion_correctness(x_t, x_t, still,
													  'open'))
		self.assertFalse(evaluation.motion_correctness(
			x_t, smooth_image(shift=2.0), still, 'open'))

	def test_inconclusive(self):
		"""Steps:
		1 - Verify a motion skill with a still truth is inconclusive
		2 - Verify a truth without valid pixels is inconclusive
		"""
		x_t = smooth_image()
		self.assertIsNone(evaluation.motion_correctness(
			x_t, x_t, uniform_flow(x_t.shape, 0.0), 'walk_forward'))
		self.assertIsNone(evaluation.motion_correctness(
			x_t, x_t, uniform_flow(x_t.shape, 1.0)._replace(
				valid=np.zeros(x_t.shape, dtype=bool)), 'turn_left'))


class StatisticsTests(unittest.TestCase):
	"""Set of unit tests to validate the bootstrap and binomial helpers.

	Tests: test_bootstrap, test_bootstrap_convergence, test_paired_bootstrap,
	test_binomial_interval, test_ordering_line
	"""
	def test_bootstrap(self):
		"""Steps:
		1 - Resamples a constant statistic and a mean
		2 - Verify the count of values and the determinism
		"""
		values = np.arange(10.0)
		first = evaluation.bootstrap(lambda idx: values[idx].mean(), 10, 7, 3)
		second = evaluation.bootstrap(lambda idx: values[idx].mean(), 10, 7, 3)
		self.assertEqual(first.shape, (7, ))
		self.assertTrue(np.array_equal(first, second))
		self.assertTrue(((first >= 0) & (first <= 9)).all())

		with self.assertRaises(EvaluationError):
			evaluation.bootstrap(len, 0)

	def test_bootstrap_convergence(self):
		"""Steps:
		1 - Resamples the mean of 200 values 10 and 200 times
		2 - Verify both bootstrap means drift less than 5% from each other
		and from the point estimate
		"""
		values = np.random.default_rng(11).uniform(0.5, 1.5, 200)
		point = values.mean()
		means = [evaluation.bootstrap(lambda idx: values[idx].mean(), 200,
									  resamples, 5).mean()
				 for resamples in (10, 200)]

		self.assertLess(abs(means[0] - means[1]) / means[1], 0.05)
		for mean in means:
			self.assertLess(abs(mean - point) / point, 0.05)

	def test_paired_bootstrap(self):
		"""Steps:
		1 - Tests a uniformly smaller sample against a larger one
		2 - Verify the smallest attainable p-value and its reverse
		"""
		a, b = np.zeros(20), np.ones(20)
		self.assertAlmostEqual(evaluation.paired_bootstrap(a, b, 99), 0.01)
		self.assertAlmostEqual(evaluation.paired_bootstrap(b, a, 99), 1.0)

	def test_binomial_interval(self):
		"""Steps:
		1 - Verify an interval brackets the observed rate
		2 - Verify the boundary cases
		"""
		low, high = evaluation.binomial_interval(5, 10)
		self.assertLess(low, 0.5)
		self.assertGreater(high, 0.5)
		self.assertEqual(evaluation.binomial_interval(0, 10)[0], 0.0)
		self.assertEqual(evaluation.binomial_interval(10, 10)[1], 1.0)
		self.assertTrue(all(math.isnan(x)
							for x in evaluation.binomial_interval(0, 0)))

	def test_ordering_line(self):
		"""Steps:
		1 - Checks a clear gap, a tolerated tie and a missing entry
		2 - Verify the verdicts and report lines
		"""
		passed, line = evaluation.ordering_line(
			'frechet', {'a': (1.0, 0.01), 'b': (2.0, 0.01)}, ['a', 'b'])
		self.assertTrue(passed)
		self.assertEqual(line, 'PASS frechet: a 1 < b 2')

		close = {'a': (1.0, 0.01), 'b': (1.05, 0.01)}
		self.assertFalse(evaluation.ordering_line('frechet', close,
												  ['a', 'b'])[0])
		passed, line = evaluation.ordering_line('frechet', close, ['a', 'b'],
												tie_pairs=(('a', 'b'), ))
		self.assertTrue(passed)
		self.assertIn('<=', line)

		passed, _ = evaluation.ordering_line(
			'success', {'a': (0.9, 0.0), 'b': (0.2, 0.0)}, ['a', 'b'],
			lower_is_better=False)
		self.assertTrue(passed)

		passed, line = evaluation.ordering_line('frechet', close,
												['a', 'c'])
		self.assertFalse(passed)
		self.assertEqual(line, 'FAIL frechet: missing c')


class RowTests(unittest.TestCase):
	"""Set of unit tests to validate table rows rebuilt from records.

	Tests: test_success_rows, test_aee_rows, test_quality_rows
	"""
	def test_success_rows(self):
		"""Steps:
		1 - Rebuilds success rows of two methods on one task
		2 - Verify counts, rates and the task mean
		"""
		records = [{'method': m, 'task': 1, 'success': s}
				   for m, s in (('ours', True), ('ours', True),
								('ours', False), ('random', False))]
		rows = evaluation.success_rows(records)

		self.assertEqual([r.key for r in rows], ['ours/task_1',
												 'random/task_1'])
		self.assertEqual((rows[0].episodes, rows[0].successes), (3, 2))
		self.assertAlmostEqual(rows[0].rate, 2.0 / 3.0)
		self.assertLessEqual(rows[0].ci_low, rows[0].rate)
		self.assertAlmostEqual(evaluation.mean_success(rows, 'ours', [1]),
							   2.0 / 3.0)
		self.assertTrue(math.isnan(evaluation.mean_success(rows, 'ours',
														   [2])))

	def test_aee_rows(self):
		"""Steps:
		1 - Rebuilds AEE rows with a failed pair and an empty setting
		2 - Verify means, pair counts and failures
		"""
		records = [
			{'setting': 'validation', 'predicted_aee': 1.0,
			 'previous_aee': 3.0, 'error': None},
			{'setting': 'validation', 'predicted_aee': 2.0,
			 'previous_aee': 4.0, 'error': None},
			{'setting': 'validation', 'predicted_aee': None,
			 'previous_aee': None, 'error': 'boom'},
			{'setting': 'restyled', 'predicted_aee': None,
			 'previous_aee': None, 'error': 'boom'}
		]
		rows = evaluation.aee_rows(records, resamples=99)

		self.assertEqual(rows[0].pairs, 2)
		self.assertAlmostEqual(rows[0].predicted_aee, 1.5)
		self.assertAlmostEqual(rows[0].previous_aee, 3.5)
		self.assertAlmostEqual(rows[0].p_value, 0.01)
		self.assertEqual(rows[0].failures, 1)
		self.assertEqual(rows[1].pairs, 0)
		self.assertTrue(math.isnan(rows[1].predicted_aee))

	def test_quality_rows(self):
		"""Steps:
		1 - Rebuilds quality rows of two verbs
		2 - Verify verb order, rates and failures
		"""
		records = [
			{'verb': 'open', 'generated_score': 0.9, 'reference_score': 1.0},
			{'verb': 'open', 'generated_score': None, 'reference_score': 0.9},
			{'verb': 'walk_to', 'generated_score': 0.1,
			 'reference_score': 0.5}
		]
		rows = evaluation.quality_rows(records)

		self.assertEqual([r.verb for r in rows], ['open', 'walk_to'])
		self.assertEqual((rows[0].samples, rows[0].failures), (2, 1))
		self.assertEqual(rows[0].generated_rate, 1.0)
		self.assertEqual(rows[0].reference_rate, 1.0)
		self.assertEqual(rows[1].generated_rate, 0.0)
		self.assertEqual(rows[1].reference_rate, 0.0)


class ImageEvalTests(unittest.TestCase):
	"""Set of unit tests to validate the feature encoder and the image
	evaluation harness on tiny images.

	Tests: test_encoder, test_run_image_eval
	"""
	@classmethod
	def setUpClass(cls):
		images = [smooth_image((16, 16), shift=s, channels=3)
				  for s in range(6)]
		cls.encoder, cls.curve = evaluation.train_feature_encoder(
			images, feature_dim=4, epochs=2, batch_size=3, seed=0)
		cls.samples = [types.SimpleNamespace(
			path='sample_{0}'.format(i),
			x_t=types.SimpleNamespace(rgb=images[i]),
			x_next=types.SimpleNamespace(rgb=images[i + 1]),
			flow=uniform_flow((16, 16), 1.0),
			action_text='next timestep: turn right') for i in range(4)]

	def test_encoder(self):
		"""Steps:
		1 - Verify the curve and the frozen encoder
		2 - Saves and loads the encoder
		3 - Verify both produce the same features
		4 - Verify loading a missing file names its producer
		"""
		self.assertEqual([p.epoch for p in self.curve], [1, 2])
		self.assertFalse(any(p.requires_grad
							 for p in self.encoder.parameters()))

		images = [s.x_t.rgb for s in self.samples]
		features = evaluation.encode_images(images, self.encoder)
		self.assertEqual(features.shape, (4, 4))

		with tempfile.TemporaryDirectory() as tmp:
			path = os.path.join(tmp, 'features.pt')
			evaluation.save_feature_encoder(path, self.encoder)
			loaded = evaluation.load_feature_encoder(path)
			self.assertTrue(np.allclose(
				evaluation.encode_images(images, loaded), features))

			with self.assertRaises(MissingArtifactError) as res:
				evaluation.load_feature_encoder(os.path.join(tmp, 'none.pt'))
			self.assertEqual(res.exception.producer, 'eval-images')

	def test_run_image_eval(self):
		"""Steps:
		1 - Evaluates the two anchors and a failing generator
		2 - Verify the records and the rebuilt rows
		"""
		def broken(sample, seed):
			raise ValueError('no model')

		generators = {'ground_truth': evaluation.ground_truth_generator(),
					  'noise': evaluation.noise_generator(),
					  'broken': broken}
		records = evaluation.run_image_eval(generators, self.samples,
											self.encoder)
		self.assertEqual(len(records), 12)
		self.assertEqual(records[0]['generated'], records[0]['reference'])
		self.assertTrue(all(r['error'] == 'no model' for r in records[8:]))

		rows = evaluation.image_rows(records, resamples=5)
		self.assertEqual([r.model for r in rows],
						 ['ground_truth', 'noise', 'broken'])
		self.assertAlmostEqual(rows[0].frechet_mean, 0.0, places=6)
		self.assertEqual(rows[2].failures, 4)
		self.assertTrue(math.isnan(rows[2].frechet_mean))

		with self.assertRaises(EvaluationError):
			evaluation.run_image_eval(generators, [], self.encoder)


if __name__ == 'main':
	unittest.main()
