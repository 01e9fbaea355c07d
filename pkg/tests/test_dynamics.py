"""Collection of unit tests for egohome.dynamics module's functions.

Classes: ScheduleTests, DenoiserTests, TrainingTests, SamplerTests
"""

import os
import tempfile
import unittest

import numpy as np
import torch
from torch import nn

from egohome import dynamics
from egohome.errors import (MissingArtifactError, ModelError,
							TrainingDivergenceError)
from egohome.networks import Denoiser


def toy_items(count: int=4, size: int=8, flow: bool=False) -> list:
	"""Builds transition items of random size x size images."""
	gen = torch.Generator().manual_seed(0)
	items = []
	for i in range(count):
		item = {'x_t': torch.rand((3, size, size), generator=gen),
				'x_next': torch.rand((3, size, size), generator=gen),
				'verb': torch.tensor(i % 3), 'object': torch.tensor(0)}
		if flow:
			item['flow'] = torch.rand((3, size, size), generator=gen)
		items.append(item)
	return items


def toy_batch(flow: bool=False) -> dict:
	items = toy_items(2, flow=flow)
	return {k: torch.stack([i[k] for i in items]) for k in items[0]}


class ExplodingNetwork(nn.Module):
	"""Stand-in whose prediction grows with every call."""
	def __init__(self):
		super().__init__()
		self.weight = nn.Parameter(torch.zeros(1))
		self.calls = 0

	def forward(self, noisy, condition, steps, verbs, objects, hint=None):
		self.calls += 1
		return noisy * 0.0 + self.weight * 0.0 + 100.0 * self.calls


class ScheduleTests(unittest.TestCase):
	"""Set of unit tests to validate noise schedules and the forward process.

	Tests: test_linear, test_cosine, test_errors, test_forward_diffuse,
	test_forward_diffuse_errors
	"""
	def test_linear(self):
		"""Steps:
		1 - Builds a linear schedule
		2 - Verify endpoints and that the cumulative products decrease
		"""
		schedule = dynamics.make_schedule(50, 'linear', 1e-4, 0.02)
		self.assertEqual(schedule.K, 50)
		self.assertAlmostEqual(schedule.betas[0], 1e-4)
		self.assertAlmostEqual(schedule.betas[-1], 0.02)
		self.assertTrue(np.all(np.diff(schedule.alpha_bars) < 0))
		self.assertTrue(np.allclose(schedule.alpha_bars,
									np.cumprod(1.0 - schedule.betas)))

	def test_cosine(self):
		"""Steps:
		1 - Builds a cosine schedule
		2 - Verify its variances stay within the given bounds
		"""
		schedule = dynamics.make_schedule(100, 'cosine', 1e-4, 0.5)
		self.assertTrue(np.all(schedule.betas >= 1e-4))
		self.assertTrue(np.all(schedule.betas <= 0.5))
		self.assertTrue(np.all(np.diff(schedule.alpha_bars) < 0))

	def test_errors(self):
		"""Steps:
		1 - Verify it raises error for K below 1
		2 - Verify it raises error for an unknown kind
		3 - Verify it raises error for variances outside (0, 1)
		"""
		with self.assertRaises(ValueError):
			dynamics.make_schedule(0)
		with self.assertRaises(ValueError):
			dynamics.make_schedule(10, 'quadratic')
		with self.assertRaises(ValueError):
			dynamics.schedule_from_betas([0.1, 1.0])
		with self.assertRaises(ValueError):
			dynamics.schedule_from_betas([0.0, 0.1])
		self.assertEqual(
			dynamics.schedule_from_betas([0.0, 0.1], strict=False).K, 2)

	def test_forward_diffuse(self):
		"""Steps:
		1 - Diffuses an image at several steps of a three-step schedule
		2 - Verify the closed form against hand-computed products
		3 - Verify per-item steps broadcast over the batch
		"""
		schedule = dynamics.schedule_from_betas([0.1, 0.2, 0.5])
		x = torch.full((1, 3, 2, 2), 0.5, dtype=torch.float64)
		eps = torch.full((1, 3, 2, 2), -1.0, dtype=torch.float64)

		for k, bar in ((1, 0.9), (2, 0.9 * 0.8), (3, 0.9 * 0.8 * 0.5)):
			noisy = dynamics.forward_diffuse(x, k, eps, schedule)
			expected = np.sqrt(bar) * 0.5 - np.sqrt(1.0 - bar)
			self.assertTrue(torch.allclose(
				noisy, torch.full_like(x, expected)))

		x = torch.ones((2, 1, 1, 1), dtype=torch.float64)
		noisy = dynamics.forward_diffuse(x, torch.tensor([1, 3]),
										 torch.zeros_like(x), schedule)
		self.assertAlmostEqual(float(noisy[0]), np.sqrt(0.9))
		self.assertAlmostEqual(float(noisy[1]), np.sqrt(0.36))

	def test_forward_diffuse_errors(self):
		"""Steps:
		1 - Verify it raises error for a step outside [1, K]
		2 - Verify it raises error for noise of another shape
		"""
		schedule = dynamics.make_schedule(10)
		x = torch.zeros((1, 3, 4, 4))
		with self.assertRaises(ValueError):
			dynamics.forward_diffuse(x, 0, torch.zeros_like(x), schedule)
		with self.assertRaises(ValueError):
			dynamics.forward_diffuse(x, 11, torch.zeros_like(x), schedule)
		with self.assertRaises(ValueError):
			dynamics.forward_diffuse(x, 1, torch.zeros((1, 3, 4, 5)),
									 schedule)


class DenoiserTests(unittest.TestCase):
	"""Set of unit tests to validate the denoiser and its control branch.

	Tests: test_shapes, test_control_branch_noop, test_double_attach,
	test_loss_flow_mismatch
	"""
	def test_shapes(self):
		"""Steps:
		1 - Runs a small denoiser on a batch
		2 - Verify the prediction has the shape of the noisy input
		"""
		torch.manual_seed(0)
		network = Denoiser(width=8)
		batch = toy_batch()
		pred = network(batch['x_next'], batch['x_t'], torch.tensor([1, 5]),
					   batch['verb'], batch['object'])
		self.assertEqual(pred.shape, batch['x_next'].shape)

	def test_control_branch_noop(self):
		"""Steps:
		1 - Runs a denoiser before and after attaching a control branch
		2 - Verify the outputs are identical for any flow image
		3 - Verify the base parameters are frozen
		"""
		torch.manual_seed(0)
		network = Denoiser(width=8).eval()
		batch = toy_batch(flow=True)
		args = (batch['x_next'], batch['x_t'], torch.tensor([3, 7]),
				batch['verb'], batch['object'])
		with torch.no_grad():
			before = network(*args)
			dynamics.attach_control_branch(network)
			after = network(*args, batch['flow'])

		self.assertTrue(torch.equal(before, after))
		self.assertFalse(any(p.requires_grad
							 for p in network.encoder.parameters()))
		self.assertTrue(all(p.requires_grad
							for p in network.control.parameters()))

	def test_double_attach(self):
		"""Steps:
		1 - Verify attaching a second control branch raises error
		"""
		network = dynamics.attach_control_branch(Denoiser(width=8))
		with self.assertRaises(ModelError):
			dynamics.attach_control_branch(network)

	def test_loss_flow_mismatch(self):
		"""Steps:
		1 - Verify the loss raises error for a flow without control branch
		2 - Verify the loss raises error for a control branch without flow
		"""
		schedule = dynamics.make_schedule(10)
		network = Denoiser(width=8)
		with self.assertRaises(ModelError):
			dynamics.denoise_loss(network, toy_batch(flow=True), schedule)

		dynamics.attach_control_branch(network)
		with self.assertRaises(ModelError):
			dynamics.denoise_loss(network, toy_batch(), schedule)


class TrainingTests(unittest.TestCase):
	"""Set of unit tests to validate training and divergence detection.

	Tests: test_train_dynamics, test_train_control, test_divergence,
	test_non_finite, test_config
	"""
	def setUp(self):
		self.config = dynamics.DEFAULT_CONFIG._replace(
			K=20, epochs=2, flow_epochs=1, batch_size=2, width=8)

	def test_train_dynamics(self):
		"""Steps:
		1 - Trains a small world model for two epochs
		2 - Verify one finite curve point per epoch
		"""
		network, schedule, curve = dynamics.train_dynamics(
			toy_items(), self.config, seed=1)
		self.assertEqual(len(curve), 2)
		self.assertTrue(all(np.isfinite(p.loss) for p in curve))
		self.assertEqual(schedule.K, 20)
		self.assertIsNone(network.control)

	def test_train_control(self):
		"""Steps:
		1 - Attaches a control branch and trains it with a frozen base
		2 - Verify the base encoder weights did not move
		"""
		torch.manual_seed(0)
		network = dynamics.attach_control_branch(Denoiser(width=8))
		before = network.encoder.conv_in.weight.detach().clone()
		network, _, curve = dynamics.train_dynamics(
			toy_items(flow=True), self.config, seed=1, network=network)

		self.assertEqual(len(curve), 1)
		self.assertTrue(torch.equal(before, network.encoder.conv_in.weight))

	def test_divergence(self):
		"""Steps:
		1 - Trains a stand-in whose loss keeps growing
		2 - Verify it raises error naming the batch
		"""
		network = ExplodingNetwork()
		batches = ((str(i), toy_batch()) for i in range(20))
		with self.assertRaises(TrainingDivergenceError) as res:
			dynamics.train_denoiser(network, batches,
									dynamics.make_schedule(10),
									list(network.parameters()), 1e-3, 1)
		self.assertIsNotNone(res.exception.batch_id)

	def test_non_finite(self):
		"""Steps:
		1 - Computes the loss of a stand-in predicting NaN
		2 - Verify it raises error
		"""
		def network(noisy, *args):
			return torch.full_like(noisy, float('nan'))

		with self.assertRaises(TrainingDivergenceError):
			dynamics.denoise_loss(network, toy_batch(),
								  dynamics.make_schedule(10), batch_id='1:0')

	def test_config(self):
		"""Steps:
		1 - Builds a config from a section
		2 - Verify the overridden and the default values
		"""
		config = dynamics.dynamics_config({'K': '40', 'width': 16,
										   'unrelated': 1})
		self.assertEqual(config.K, 40)
		self.assertEqual(config.width, 16)
		self.assertEqual(config.lr, dynamics.DEFAULT_CONFIG.lr)


class SamplerTests(unittest.TestCase):
	"""Set of unit tests to validate sampling and persistence.

	Tests: test_deterministic, test_errors, test_save_load
	"""
	def setUp(self):
		torch.manual_seed(0)
		self.network = Denoiser(width=8).eval()
		self.schedule = dynamics.make_schedule(20)
		self.image = np.random.default_rng(0).random((8, 8, 3)).astype(
			np.float32)

	def test_deterministic(self):
		"""Steps:
		1 - Samples twice with the same seed and once with another
		2 - Verify shape, range and seed dependence
		"""
		first = dynamics.sample_next_obs(self.network, self.schedule,
										 self.image, 'turn left', steps=5,
										 seed=3)
		second = dynamics.sample_next_obs(self.network, self.schedule,
										  self.image, 'turn left', steps=5,
										  seed=3)
		third = dynamics.sample_next_obs(self.network, self.schedule,
										 self.image, 'turn left', steps=5,
										 seed=4)

		self.assertEqual(first.shape, (8, 8, 3))
		self.assertTrue(np.all((first >= 0.0) & (first <= 1.0)))
		self.assertTrue(np.array_equal(first, second))
		self.assertFalse(np.array_equal(first, third))

	def test_errors(self):
		"""Steps:
		1 - Verify it raises error for an unknown phrase
		2 - Verify it raises error for a flow without control branch
		3 - Verify it raises error for more steps than the schedule holds
		"""
		with self.assertRaises(ModelError):
			dynamics.sample_next_obs(self.network, self.schedule, self.image,
									 'juggle the plate', steps=2)
		with self.assertRaises(ModelError):
			dynamics.sample_next_obs(self.network, self.schedule, self.image,
									 'turn left', flow=self.image, steps=2)
		with self.assertRaises(ValueError):
			dynamics.sample_next_obs(self.network, self.schedule, self.image,
									 'turn left', steps=21)

	def test_save_load(self):
		"""Steps:
		1 - Saves a controlled denoiser and loads it back
		2 - Verify schedule, role and predictions survive
		3 - Verify loading a missing file names its producer
		"""
		dynamics.attach_control_branch(self.network)
		with tempfile.TemporaryDirectory() as tmp:
			path = os.path.join(tmp, 'dyn.pt')
			dynamics.save_denoiser(path, self.network, self.schedule,
								   echo='e', flow_source='current')
			network, schedule, archive = dynamics.load_denoiser(path)

			self.assertTrue(np.allclose(schedule.betas, self.schedule.betas))
			self.assertEqual(archive['extra']['flow_source'], 'current')
			self.assertEqual(archive['echo'], 'e')

			expected = dynamics.sample_image(
				self.network, self.schedule, self.image, 'open the fridge', 2,
				1, self.image)
			got = dynamics.sample_image(network, schedule, self.image,
										'open the fridge', 2, 1, self.image)
			self.assertTrue(np.allclose(expected, got))

			with self.assertRaises(MissingArtifactError) as res:
				dynamics.load_denoiser(os.path.join(tmp, 'none.pt'))
			self.assertEqual(res.exception.producer, 'train-dynamics')


if __name__ == 'main':
	unittest.main()
