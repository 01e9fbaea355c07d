"""Collection of unit tests for egohome.predictors module's classes and
functions.

Classes: QuantizeTests, VqLossTests, FlowPredictorTests
"""

import os
import tempfile
import unittest

import numpy as np
import torch

from egohome import flows, predictors
from egohome.errors import MissingArtifactError, ModelError
from egohome.predictors import FlowPredictor


def toy_pairs(count: int=4, size: int=16) -> list:
	"""Builds (prev, verb, target) items of random flow colors."""
	gen = torch.Generator().manual_seed(0)
	return [{'prev': torch.rand((3, size, size), generator=gen),
			 'verb': torch.tensor(i % 4),
			 'target': torch.rand((3, size, size), generator=gen)}
			for i in range(count)]


class QuantizeTests(unittest.TestCase):
	"""Set of unit tests to validate nearest-code quantization.

	Tests: test_nearest, test_ties, test_errors
	"""
	def test_nearest(self):
		"""Steps:
		1 - Quantizes random latents against a random codebook
		2 - Verify every index against a brute-force search
		"""
		gen = torch.Generator().manual_seed(0)
		latents = torch.randn((2, 3, 3, 4), generator=gen)
		codebook = torch.randn((10, 4), generator=gen)
		z_q, indices = predictors.quantize(latents, codebook)

		self.assertEqual(tuple(indices.shape), (2, 3, 3))
		self.assertEqual(z_q.shape, latents.shape)
		for vec, idx in zip(latents.reshape(-1, 4), indices.reshape(-1)):
			dists = [float(((vec - c) ** 2).sum()) for c in codebook]
			self.assertEqual(int(idx), int(np.argmin(dists)))
		self.assertTrue(torch.equal(z_q.reshape(-1, 4),
									codebook[indices.reshape(-1)]))

	def test_ties(self):
		"""Steps:
		1 - Quantizes latents equidistant from two codes
		2 - Verify the lowest index wins
		"""
		codebook = torch.tensor([[0.0, 0.0], [2.0, 0.0], [2.0, 0.0]])
		latents = torch.tensor([[1.0, 0.0], [3.0, 0.0]])
		_, indices = predictors.quantize(latents, codebook)
		self.assertEqual(indices.tolist(), [0, 1])

	def test_errors(self):
		"""Steps:
		1 - Verify it raises error for an empty codebook
		2 - Verify it raises error for mismatched widths
		3 - Verify it raises error for non-finite latents
		"""
		with self.assertRaises(ModelError):
			predictors.quantize(torch.zeros((1, 2)), torch.zeros((0, 2)))
		with self.assertRaises(ModelError):
			predictors.quantize(torch.zeros((1, 3)), torch.zeros((4, 2)))
		with self.assertRaises(ModelError):
			predictors.quantize(torch.tensor([[float('nan'), 0.0]]),
								torch.zeros((4, 2)))


class VqLossTests(unittest.TestCase):
	"""Set of unit tests to validate the quantized autoencoder objective.

	Tests: test_values, test_gradients, test_beta
	"""
	def test_values(self):
		"""Steps:
		1 - Computes the loss of hand-made tensors
		2 - Verify each term and the weighted total
		"""
		x = torch.zeros((1, 1, 2, 2))
		x_hat = torch.ones((1, 1, 2, 2))
		enc_out = torch.tensor([[1.0, 0.0], [0.0, 0.0]])
		z_q = torch.tensor([[0.0, 0.0], [0.0, 2.0]])
		loss = predictors.vq_loss(x, x_hat, enc_out, z_q, 0.25)

		self.assertAlmostEqual(float(loss.recon), 1.0)
		self.assertAlmostEqual(float(loss.codebook_term), 2.5)
		self.assertAlmostEqual(float(loss.commit_term), 2.5)
		self.assertAlmostEqual(float(loss.total), 1.0 + 2.5 + 0.25 * 2.5)

	def test_gradients(self):
		"""Steps:
		1 - Back-propagates the codebook term alone
		2 - Verify only the codes receive a gradient
		3 - Back-propagates the commitment term alone
		4 - Verify only the encoder outputs receive a gradient
		"""
		x = torch.zeros((1, 2))
		enc_out = torch.ones((3, 2), requires_grad=True)
		z_q = torch.zeros((3, 2), requires_grad=True)

		predictors.vq_loss(x, x, enc_out, z_q, 1.0).codebook_term.backward()
		self.assertIsNone(enc_out.grad)
		self.assertIsNotNone(z_q.grad)

		z_q.grad = None
		predictors.vq_loss(x, x, enc_out, z_q, 1.0).commit_term.backward()
		self.assertIsNone(z_q.grad)
		self.assertIsNotNone(enc_out.grad)

	def test_beta(self):
		"""Steps:
		1 - Verify it raises error for a non-positive commitment weight
		"""
		x = torch.zeros((1, 2))
		with self.assertRaises(ValueError):
			predictors.vq_loss(x, x, x, x, 0.0)


class FlowPredictorTests(unittest.TestCase):
	"""Set of unit tests to validate training, prediction and persistence of
	the flow predictor.

	Tests: test_forward, test_train, test_predict_flow, test_save_load,
	test_config
	"""
	def setUp(self):
		self.config = predictors.DEFAULT_CONFIG._replace(
			epochs=2, batch_size=2, codebook_size=8, code_dim=4)

	def test_forward(self):
		"""Steps:
		1 - Runs an untrained predictor on a batch
		2 - Verify output range, latent grid and index shapes
		"""
		torch.manual_seed(0)
		model = FlowPredictor(8, 4)
		x = torch.rand((2, 3, 16, 16))
		x_hat, enc_out, z_q, indices = model(x, torch.tensor([0, 2]))

		self.assertEqual(x_hat.shape, x.shape)
		self.assertTrue(bool(((x_hat >= 0) & (x_hat <= 1)).all()))
		self.assertEqual(tuple(enc_out.shape), (2, 4, 4, 4))
		self.assertEqual(z_q.shape, enc_out.shape)
		self.assertTrue(bool((indices < 8).all()))

	def test_train(self):
		"""Steps:
		1 - Trains a small predictor for two epochs
		2 - Verify one finite curve point per epoch with the recon term
		"""
		model, curve = predictors.train_flow_predictor(toy_pairs(),
													   self.config, seed=2)
		self.assertEqual([p.epoch for p in curve], [1, 2])
		self.assertTrue(all(np.isfinite(p.loss) for p in curve))
		self.assertTrue(all(p.aux <= p.loss for p in curve))
		self.assertFalse(model.training)

	def test_predict_flow(self):
		"""Steps:
		1 - Predicts a flow from a zero previous flow
		2 - Verify its shape
		3 - Verify it raises error for an unknown action
		"""
		torch.manual_seed(0)
		model = FlowPredictor(8, 4).eval()
		flow = predictors.predict_flow(model, flows.zero_flow((16, 16)),
									   'walk forward')
		self.assertEqual(flow.u.shape, (16, 16))

		with self.assertRaises(ModelError):
			predictors.predict_flow(model, flows.zero_flow((16, 16)),
									'juggle')

	def test_save_load(self):
		"""Steps:
		1 - Saves a predictor and loads it back
		2 - Verify the predictions and the stored max_mag agree
		3 - Verify loading a missing file names its producer
		"""
		torch.manual_seed(0)
		model = FlowPredictor(8, 4, action_conditioned=False).eval()
		prev = flows.zero_flow((16, 16))
		with tempfile.TemporaryDirectory() as tmp:
			path = os.path.join(tmp, 'flowpred.pt')
			predictors.save_flow_predictor(path, model, 'echo', 6.0)
			loaded, archive = predictors.load_flow_predictor(path)

			self.assertEqual(archive['extra']['max_mag'], 6.0)
			self.assertFalse(loaded.action_conditioned)
			first = predictors.predict_color(model, flows.flow_to_color(prev),
											 'turn left')
			second = predictors.predict_color(loaded,
											  flows.flow_to_color(prev),
											  'turn left')
			self.assertTrue(np.array_equal(first, second))

			with self.assertRaises(MissingArtifactError) as res:
				predictors.load_flow_predictor(os.path.join(tmp, 'none.pt'))
			self.assertEqual(res.exception.producer, 'train-flowpred')

	def test_config(self):
		"""Steps:
		1 - Builds a config from a section
		2 - Verify the overridden and the default values
		"""
		config = predictors.flowpred_config({'epochs': 3, 'beta': '0.5'})
		self.assertEqual(config.epochs, 3)
		self.assertEqual(config.beta, 0.5)
		self.assertEqual(config.codebook_size, 128)


if __name__ == 'main':
	unittest.main()
