"""The predictors module holds the quantized flow autoencoder that predicts
the current flow of an action from the previous flow: nearest-code
quantization, the three-term quantization loss, training, prediction and
persistence.

NamedTuples: FlowPredConfig

Classes: FlowPredictor

Functions: quantize, vq_loss, flowpred_config, train_flow_predictor,
predict_flow, save_flow_predictor, load_flow_predictor
"""

import collections
import logging

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.utils.data import DataLoader

from . import flows
from .checkpoints import load_checkpoint, save_checkpoint
from .datasets import image_tensor, parse_phrase
from .errors import ModelError, TrainingDivergenceError
from .models import PHRASE_VERBS, CurvePoint, FlowField, VqLoss
from .networks import FlowDecoder, FlowEncoder


logger = logging.getLogger(__name__)

CHECKPOINT_KIND = 'flowpred'


FlowPredConfig = collections.namedtuple('FlowPredConfig', [
	'epochs', 'batch_size', 'lr', 'beta', 'codebook_size', 'code_dim',
	'action_conditioned'
])


DEFAULT_CONFIG = FlowPredConfig(30, 32, 1e-3, 0.25, 128, 16, True)


def flowpred_config(section: dict) -> FlowPredConfig:
	"""Builds a FlowPredConfig out of a [flowpred] config section."""
	values = DEFAULT_CONFIG._asdict()
	values.update({k: v for k, v in section.items() if k in values})
	return FlowPredConfig(int(values['epochs']), int(values['batch_size']),
						  float(values['lr']), float(values['beta']),
						  int(values['codebook_size']),
						  int(values['code_dim']),
						  bool(values['action_conditioned']))


def quantize(latents: torch.Tensor, codebook: torch.Tensor) -> tuple:
	"""Maps every latent vector to its nearest codebook entry in Euclidean
	distance, ties going to the lowest index.

	Parameters
	----------
	latents: torch.Tensor -- (..., D) latent vectors, channels last
	codebook: torch.Tensor -- (N, D) code vectors

	Returns: tuple -- (z_q with the latents' shape, (...) int64 indices)

	Throws ModelError
	"""
	if codebook.ndim != 2 or codebook.shape[0] == 0:
		raise ModelError('the codebook is empty')
	if latents.shape[-1] != codebook.shape[1]:
		raise ModelError('latent width {0} does not match code width '
						 '{1}'.format(latents.shape[-1], codebook.shape[1]))
	if not torch.isfinite(latents).all():
		raise ModelError('latents hold non-finite values')

	flat = latents.reshape(-1, latents.shape[-1])
	distances = ((flat[:, None, :] - codebook[None, :, :]) ** 2).sum(-1)
	indices = torch.argmin(distances, dim=1)
	z_q = codebook[indices].reshape(latents.shape)
	return z_q, indices.reshape(latents.shape[:-1])


def vq_loss(x: torch.Tensor, x_hat: torch.Tensor, enc_out: torch.Tensor,
			z_q: torch.Tensor, beta: float) -> VqLoss:
	"""Quantized autoencoder objective. The codebook term moves only the
	codes, the commitment term only the encoder. Vector terms are squared
	norms over the last axis averaged over cells.

	Parameters
	----------
	x: torch.Tensor -- the reconstruction target
	x_hat: torch.Tensor -- the reconstruction
	enc_out: torch.Tensor -- (..., D) encoder outputs, channels last
	z_q: torch.Tensor -- (..., D) their quantized codes
	beta: float -- commitment weight, positive

	Returns: VqLoss -- total, recon, codebook_term and commit_term, the
	latter unweighted
	"""
	if beta <= 0:
		raise ValueError('beta must be positive')

	recon = F.mse_loss(x_hat, x)
	codebook_term = ((enc_out.detach() - z_q) ** 2).sum(-1).mean()
	commit_term = ((z_q.detach() - enc_out) ** 2).sum(-1).mean()
	return VqLoss(recon + codebook_term + beta * commit_term, recon,
				  codebook_term, commit_term)


class FlowPredictor(nn.Module):
	"""Quantized autoencoder from previous flow color to current flow color,
	with a per-verb embedding summed into the decoder bottleneck.

	Methods: encode, forward
	"""
	def __init__(self, codebook_size: int=128, code_dim: int=16,
				 action_conditioned: bool=True, hidden: int=64):
		"""FlowPredictor's constructor.

		Parameters
		----------
		codebook_size: int -- number of code vectors (default 128)
		code_dim: int -- code width (default 16)
		action_conditioned: bool -- whether the decoder sees the verb
		(default True)
		hidden: int -- width of the convolutional layers (default 64)
		"""
		super().__init__()
		self.action_conditioned = action_conditioned
		self.encoder = FlowEncoder(code_dim, hidden)
		self.codebook = nn.Parameter(torch.empty(codebook_size, code_dim))
		nn.init.uniform_(self.codebook, -1.0 / codebook_size,
						 1.0 / codebook_size)
		self.decoder = FlowDecoder(code_dim, hidden)
		self.verb_embedding = nn.Embedding(len(PHRASE_VERBS), hidden)

	def encode(self, x: torch.Tensor) -> torch.Tensor:
		"""Returns: torch.Tensor -- (B, h, w, D) encoder outputs"""
		return self.encoder(x).permute(0, 2, 3, 1)

	def forward(self, x: torch.Tensor, verbs: torch.Tensor) -> tuple:
		"""Predicts current flow colors.

		Parameters
		----------
		x: torch.Tensor -- (B, 3, H, W) previous flow colors in [0, 1]
		verbs: torch.Tensor -- (B, ) verb indices

		Returns: tuple -- (x_hat, enc_out, z_q, indices)
		"""
		enc_out = self.encode(x)
		z_q, indices = quantize(enc_out, self.codebook)
		z_st = enc_out + (z_q - enc_out).detach()
		action = self.verb_embedding(verbs) if self.action_conditioned \
			else None
		x_hat = self.decoder(z_st.permute(0, 3, 1, 2), action)
		return x_hat, enc_out, z_q, indices


def train_flow_predictor(dataset, config: FlowPredConfig=DEFAULT_CONFIG,
						 seed: int=0) -> tuple:
	"""Trains a FlowPredictor on (prev, verb, target) items.

	Parameters
	----------
	dataset: torch Dataset -- FlowPairDataset-like items
	config: FlowPredConfig -- hyperparameters (default DEFAULT_CONFIG)
	seed: int -- seed of initialization and shuffling (default 0)

	Returns: tuple -- (FlowPredictor, list of CurvePoint with the epoch mean
	total loss and the mean reconstruction term as aux)

	Throws TrainingDivergenceError
	"""
	if len(dataset) == 0:
		raise ValueError('the flow pair dataset is empty')

	torch.manual_seed(seed)
	model = FlowPredictor(config.codebook_size, config.code_dim,
						  config.action_conditioned)
	optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
	loader = DataLoader(dataset, batch_size=config.batch_size, shuffle=True,
						generator=torch.Generator().manual_seed(seed))

	curve = []
	model.train()
	for epoch in range(1, config.epochs + 1):
		totals, recons = [], []
		for idx, batch in enumerate(loader):
			x_hat, enc_out, z_q, _ = model(batch['prev'], batch['verb'])
			loss = vq_loss(batch['target'], x_hat, enc_out, z_q, config.beta)
			if not torch.isfinite(loss.total):
				raise TrainingDivergenceError('non-finite flow predictor loss',
											  '{0}:{1}'.format(epoch, idx))
			optimizer.zero_grad()
			loss.total.backward()
			optimizer.step()
			totals.append(float(loss.total))
			recons.append(float(loss.recon))

		curve.append(CurvePoint(epoch, float(np.mean(totals)),
								float(np.mean(recons))))
		logger.info('flowpred epoch %d: loss %.5f, recon %.5f', epoch,
					curve[-1].loss, curve[-1].aux)

	model.eval()
	return model, curve


def verb_index(action_text: str) -> int:
	"""Gets the PHRASE_VERBS index of an action phrase.

	Throws ModelError
	"""
	try:
		verb, _ = parse_phrase(action_text)
	except ValueError as err:
		raise ModelError('unknown action {0!r}: {1}'.format(action_text, err))
	return PHRASE_VERBS.index(verb)


@torch.no_grad()
def predict_color(model: FlowPredictor, prev_color: np.ndarray,
				  action_text: str) -> np.ndarray:
	"""Predicts the current flow color image.

	Returns: np.ndarray -- H x W x 3 uint8 flow color

	Throws ModelError
	"""
	verb = verb_index(action_text)
	model.eval()
	x_hat, _, _, _ = model(image_tensor(prev_color)[None],
						   torch.tensor([verb]))
	rgb = x_hat[0].permute(1, 2, 0).numpy()
	return np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def predict_flow(model: FlowPredictor, f_prev: FlowField, action_text: str,
				 max_mag: float=flows.DEFAULT_MAX_MAG) -> FlowField:
	"""Predicts the current flow of an action from the previous flow.

	Parameters
	----------
	model: FlowPredictor -- the trained predictor
	f_prev: FlowField -- the previous flow
	action_text: str -- the action phrase
	max_mag: float -- the dataset's codec magnitude (default 8.0)

	Returns: FlowField -- the decoded prediction

	Throws ModelError
	"""
	color = predict_color(model, flows.flow_to_color(f_prev, max_mag),
						  action_text)
	return flows.color_to_flow(color, max_mag)


def save_flow_predictor(path: str, model: FlowPredictor,
						echo: str=None, max_mag: float=None) -> str:
	"""Writes a flow predictor checkpoint."""
	hyper = {'codebook_size': model.codebook.shape[0],
			 'code_dim': model.codebook.shape[1],
			 'action_conditioned': model.action_conditioned}
	return save_checkpoint(path, CHECKPOINT_KIND, model.state_dict(), hyper,
						   echo, {'max_mag': max_mag})


def load_flow_predictor(path: str) -> tuple:
	"""Reads a flow predictor checkpoint.

	Returns: tuple -- (FlowPredictor, archive dict)

	Throws MissingArtifactError, ModelError
	"""
	archive = load_checkpoint(path, CHECKPOINT_KIND, 'train-flowpred')
	model = FlowPredictor(**archive['hyper'])
	model.load_state_dict(archive['state'])
	model.eval()
	return model, archive
