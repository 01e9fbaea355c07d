"""The dynamics module holds the conditional denoising-diffusion world model:
noise schedules, the forward process, the noise-prediction loss, training
with divergence detection, the strided deterministic sampler, the flow
control branch and the goal-conditioned subgoal image model.

	Images live in [0, 1] everywhere outside this module; the diffusion
process runs on their [-1, 1] rescaling.

NamedTuples: DynamicsConfig

Functions: make_schedule, schedule_from_betas, forward_diffuse,
denoise_loss, train_denoiser, train_dynamics, attach_control_branch,
sample_image, sample_next_obs, train_subgoal_model, sample_subgoal_image,
dynamics_config, save_denoiser, load_denoiser
"""

import collections
import itertools
import logging

import numpy as np
import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader

from . import flows
from .checkpoints import load_checkpoint, save_checkpoint
from .datasets import NO_OBJECT, image_tensor, parse_phrase
from .errors import ModelError, TrainingDivergenceError
from .models import OBJECT_KINDS, PHRASE_VERBS, CurvePoint, NoiseSchedule
from .networks import ControlBranch, Denoiser


logger = logging.getLogger(__name__)

CHECKPOINT_KIND = 'denoiser'

DIVERGENCE_FACTOR = 10.0
DIVERGENCE_WINDOWS = 3

EMBEDDING_PREFIXES = ('verb_embedding.', 'object_embedding.')


DynamicsConfig = collections.namedtuple('DynamicsConfig', [
	'K', 'schedule', 'beta_min', 'beta_max', 'epochs', 'flow_epochs',
	'batch_size', 'lr', 'width', 'sample_steps', 'base_frozen'
])


DEFAULT_CONFIG = DynamicsConfig(200, 'linear', 1e-4, 0.02, 40, 20, 16, 2e-4,
								32, 50, True)


def dynamics_config(section: dict, base: DynamicsConfig=DEFAULT_CONFIG
					) -> DynamicsConfig:
	"""Builds a DynamicsConfig out of a [dynamics] or [subgoal] section,
	missing keys taken from base.
	"""
	values = base._asdict()
	values.update({k: v for k, v in section.items() if k in values})
	return DynamicsConfig(
		int(values['K']), str(values['schedule']), float(values['beta_min']),
		float(values['beta_max']), int(values['epochs']),
		int(values['flow_epochs']), int(values['batch_size']),
		float(values['lr']), int(values['width']),
		int(values['sample_steps']), bool(values['base_frozen']))


def schedule_from_betas(betas, strict: bool=True) -> NoiseSchedule:
	"""Builds a schedule from explicit per-step variances.

	Parameters
	----------
	betas: sequence -- beta_1 .. beta_K
	strict: bool -- whether to require 0 < beta < 1, so that the cumulative
	products strictly decrease (default True)

	Returns: NoiseSchedule -- the schedule, float64 arrays

	Throws ValueError
	"""
	betas = np.asarray(betas, dtype=np.float64)
	if betas.ndim != 1 or len(betas) < 1:
		raise ValueError('a schedule needs at least one step')
	low_ok = (betas > 0).all() if strict else (betas >= 0).all()
	if not low_ok or not (betas < 1).all():
		raise ValueError('betas must lie in {0}, 1)'.format(
			'(0' if strict else '[0'))
	return NoiseSchedule(len(betas), betas, np.cumprod(1.0 - betas))


def make_schedule(K: int, kind: str='linear', beta_min: float=1e-4,
				  beta_max: float=0.02) -> NoiseSchedule:
	"""Builds a linear or cosine noise schedule.

	Parameters
	----------
	K: int -- number of diffusion steps, at least 1
	kind: str -- 'linear' or 'cosine' (default 'linear')
	beta_min: float -- first variance of the linear schedule and floor of
	the cosine one (default 1e-4)
	beta_max: float -- last variance of the linear schedule and ceiling of
	the cosine one (default 0.02)

	Returns: NoiseSchedule -- the schedule

	Throws ValueError
	"""
	if int(K) < 1:
		raise ValueError('K must be at least 1')
	if not 0.0 < beta_min <= beta_max < 1.0:
		raise ValueError('expected 0 < beta_min <= beta_max < 1')

	if kind == 'linear':
		betas = np.linspace(beta_min, beta_max, int(K))
	elif kind == 'cosine':
		offset = 0.008
		ts = np.arange(int(K) + 1, dtype=np.float64) / int(K)
		bars = np.cos((ts + offset) / (1.0 + offset) * np.pi / 2.0) ** 2
		betas = np.clip(1.0 - bars[1:] / bars[:-1], beta_min, beta_max)
	else:
		raise ValueError('unknown schedule kind {0}'.format(kind))
	return schedule_from_betas(betas)


def _gather(schedule: NoiseSchedule, k, like: torch.Tensor) -> torch.Tensor:
	k = torch.as_tensor(k, dtype=torch.long)
	if (k < 1).any() or (k > schedule.K).any():
		raise ValueError('diffusion step out of [1, {0}]'.format(schedule.K))
	bars = torch.as_tensor(schedule.alpha_bars, dtype=like.dtype)[k - 1]
	if bars.ndim == 1:
		bars = bars.reshape(-1, *([1] * (like.ndim - 1)))
	return bars


def forward_diffuse(x: torch.Tensor, k, eps: torch.Tensor,
					schedule: NoiseSchedule) -> torch.Tensor:
	"""Draws the noisy version of x at step k: sqrt(a_k) x + sqrt(1 - a_k)
	eps, with a_k the cumulative product of the schedule.

	Parameters
	----------
	x: torch.Tensor -- clean images, batch first when k is a vector
	k: int or torch.Tensor -- 1-indexed step, scalar or one per item
	eps: torch.Tensor -- noise shaped like x
	schedule: NoiseSchedule -- the schedule

	Returns: torch.Tensor -- the noisy images

	Throws ValueError
	"""
	if eps.shape != x.shape:
		raise ValueError('noise shape {0} differs from image shape {1}'.format(
			tuple(eps.shape), tuple(x.shape)))
	bars = _gather(schedule, k, x)
	return torch.sqrt(bars) * x + torch.sqrt(1.0 - bars) * eps


def _scaled(images: torch.Tensor) -> torch.Tensor:
	return images * 2.0 - 1.0


def denoise_loss(network, batch: dict, schedule: NoiseSchedule,
				 generator: torch.Generator=None,
				 batch_id=None) -> torch.Tensor:
	"""Noise-prediction loss of a batch.

	Parameters
	----------
	network: callable -- (noisy, condition, steps, verbs, objects, hint)
	to predicted noise, a Denoiser or a stand-in
	batch: dict -- x_t, x_next, verb, object and, in flow-control mode,
	flow tensors
	schedule: NoiseSchedule -- the schedule
	generator: torch.Generator -- source of steps and noise (default None)
	batch_id -- reported on non-finite losses (default None)

	Returns: torch.Tensor -- the scalar mean squared error

	Throws ModelError, TrainingDivergenceError
	"""
	target = _scaled(batch['x_next'])
	if target.shape[0] == 0:
		raise ValueError('empty batch')

	control = getattr(network, 'control', None) is not None
	if control != ('flow' in batch):
		raise ModelError('flow must be given iff a control branch is attached')

	steps = torch.randint(1, schedule.K + 1, (target.shape[0], ),
						  generator=generator)
	eps = torch.randn(target.shape, generator=generator)
	noisy = forward_diffuse(target, steps, eps, schedule)
	hint = batch.get('flow')
	pred = network(noisy, _scaled(batch['x_t']), steps, batch['verb'],
				   batch['object'], hint)
	loss = F.mse_loss(pred, eps)
	if not torch.isfinite(loss):
		raise TrainingDivergenceError('non-finite denoising loss', batch_id)
	return loss


def train_denoiser(network: Denoiser, batches, schedule: NoiseSchedule,
				   parameters: list, lr: float, window: int, seed: int=0
				   ) -> list:
	"""Runs Adam updates of the given parameters over (batch id, batch)
	pairs, recording the mean loss of every window of updates. Aborts when
	DIVERGENCE_WINDOWS consecutive windows exceed DIVERGENCE_FACTOR times the
	first one.

	Parameters
	----------
	network: Denoiser -- the network
	batches: iterable -- (batch id, batch dict) pairs
	schedule: NoiseSchedule -- the schedule
	parameters: list -- the parameters to be optimized
	lr: float -- learning rate
	window: int -- updates per curve point
	seed: int -- seed of diffusion steps and noise (default 0)

	Returns: list -- CurvePoint per window, aux holding the update count

	Throws TrainingDivergenceError
	"""
	if not parameters:
		raise ModelError('no trainable parameter')

	generator = torch.Generator().manual_seed(seed)
	optimizer = torch.optim.Adam(parameters, lr=lr)
	curve, losses, above = [], [], 0
	network.train()

	for count, (batch_id, batch) in enumerate(batches, 1):
		loss = denoise_loss(network, batch, schedule, generator, batch_id)
		optimizer.zero_grad()
		loss.backward()
		optimizer.step()
		losses.append(float(loss))

		if count % window == 0:
			curve.append(CurvePoint(len(curve) + 1, float(np.mean(losses)),
									count))
			losses = []
			logger.info('denoiser window %d: loss %.5f', curve[-1].epoch,
						curve[-1].loss)
			if curve[-1].loss > DIVERGENCE_FACTOR * curve[0].loss:
				above += 1
				if above >= DIVERGENCE_WINDOWS:
					raise TrainingDivergenceError(
						'loss above {0}x its initial value for {1} '
						'windows'.format(DIVERGENCE_FACTOR, above), batch_id)
			else:
				above = 0

	if losses:
		curve.append(CurvePoint(len(curve) + 1, float(np.mean(losses)),
								count))
	network.eval()
	return curve


def epoch_batches(dataset, batch_size: int, epochs: int, seed: int=0):
	"""Yields ('<epoch>:<batch>', batch) pairs over shuffled epochs."""
	loader = DataLoader(dataset, batch_size=batch_size, shuffle=True,
						generator=torch.Generator().manual_seed(seed))
	for epoch in range(1, epochs + 1):
		for idx, batch in enumerate(loader):
			yield '{0}:{1}'.format(epoch, idx), batch


def step_batches(dataset, batch_size: int, steps: int, seed: int=0):
	"""Yields ('<step>', batch) pairs cycling over shuffled epochs."""
	return itertools.islice(
		(('{0}'.format(i), b) for i, (_, b) in enumerate(
			epoch_batches(dataset, batch_size, 10 ** 9, seed))),
		steps)


def trainable(network: Denoiser, prefixes: tuple) -> list:
	"""Enables gradients on the parameters whose names start with one of
	the prefixes, disables them elsewhere, and returns the enabled ones.
	"""
	enabled = []
	for name, param in network.named_parameters():
		param.requires_grad_(name.startswith(prefixes))
		if param.requires_grad:
			enabled.append(param)
	return enabled


def train_dynamics(dataset, config: DynamicsConfig=DEFAULT_CONFIG,
				   seed: int=0, network: Denoiser=None,
				   schedule: NoiseSchedule=None) -> tuple:
	"""Trains the world model. Without a control branch every parameter is
	trained for config.epochs; with one, for config.flow_epochs, the control
	branch and the action embeddings only when config.base_frozen is set.

	Parameters
	----------
	dataset: torch Dataset -- TransitionDataset-like items, with flow in
	flow-control mode
	config: DynamicsConfig -- hyperparameters (default DEFAULT_CONFIG)
	seed: int -- seed of initialization, shuffling and noise (default 0)
	network: Denoiser -- a network to continue from, a fresh one when None
	(default None)
	schedule: NoiseSchedule -- the schedule, built from config when None
	(default None)

	Returns: tuple -- (Denoiser, NoiseSchedule, list of CurvePoint)

	Throws TrainingDivergenceError
	"""
	if len(dataset) == 0:
		raise ValueError('the transition dataset is empty')

	torch.manual_seed(seed)
	if network is None:
		network = Denoiser(config.width)
	if schedule is None:
		schedule = make_schedule(config.K, config.schedule, config.beta_min,
								 config.beta_max)

	if network.control is None:
		epochs = config.epochs
		parameters = trainable(network, ('', ))
	else:
		epochs = config.flow_epochs
		prefixes = ('control.', ) + EMBEDDING_PREFIXES \
			if config.base_frozen else ('', )
		parameters = trainable(network, prefixes)

	per_epoch = max(1, -(-len(dataset) // config.batch_size))
	curve = train_denoiser(
		network, epoch_batches(dataset, config.batch_size, epochs, seed),
		schedule, parameters, config.lr, per_epoch, seed)
	return network, schedule, curve


def attach_control_branch(network: Denoiser) -> Denoiser:
	"""Attaches a flow control branch cloned from the network's encoder and
	freezes every base parameter. The output is unchanged until the branch
	is trained.

	Throws ModelError
	"""
	if network.control is not None:
		raise ModelError('the denoiser already has a control branch')
	network.requires_grad_(False)
	network.control = ControlBranch(network.encoder, network.width)
	return network


def _indices(text: str) -> tuple:
	try:
		verb, noun = parse_phrase(text)
	except ValueError as err:
		raise ModelError('unknown phrase {0!r}: {1}'.format(text, err))
	return (PHRASE_VERBS.index(verb),
			NO_OBJECT if noun is None else OBJECT_KINDS.index(noun))


def _timesteps(schedule: NoiseSchedule, steps: int) -> list:
	if not 1 <= int(steps) <= schedule.K:
		raise ValueError('sampling steps must lie in [1, {0}]'.format(
			schedule.K))
	grid = np.linspace(schedule.K, 1, int(steps)).round().astype(int)
	return sorted(set(grid.tolist()), reverse=True)


@torch.no_grad()
def sample_image(network: Denoiser, schedule: NoiseSchedule,
				 condition: np.ndarray, text: str, steps: int, seed: int,
				 hint: np.ndarray=None) -> np.ndarray:
	"""Denoises pure noise into an image under the given conditioning with
	the deterministic strided sampler.

	Parameters
	----------
	network: Denoiser -- the network
	schedule: NoiseSchedule -- its schedule
	condition: np.ndarray -- H x W x 3 condition image in [0, 1]
	text: str -- the action or goal phrase
	steps: int -- sampling steps, at most K
	seed: int -- seed of the initial noise
	hint: np.ndarray -- H x W x 3 flow color image for the control branch
	(default None)

	Returns: np.ndarray -- H x W x 3 float32 image in [0, 1]

	Throws ModelError
	"""
	verb, obj = _indices(text)
	if (network.control is not None) != (hint is not None):
		raise ModelError('a flow image must be given iff a control branch '
						 'is attached')

	network.eval()
	cond = _scaled(image_tensor(condition))[None]
	hint_t = image_tensor(hint)[None] if hint is not None else None
	verbs, objects = torch.tensor([verb]), torch.tensor([obj])
	generator = torch.Generator().manual_seed(int(seed))
	x = torch.randn(cond.shape, generator=generator)
	bars = torch.as_tensor(schedule.alpha_bars, dtype=torch.float32)

	sequence = _timesteps(schedule, steps)
	for idx, k in enumerate(sequence):
		bar = bars[k - 1]
		bar_prev = bars[sequence[idx + 1] - 1] if idx + 1 < len(sequence) \
			else torch.tensor(1.0)
		eps = network(x, cond, torch.tensor([k]), verbs, objects, hint_t)
		x0 = ((x - torch.sqrt(1.0 - bar) * eps) / torch.sqrt(bar)).clamp(
			-1.0, 1.0)
		eps = (x - torch.sqrt(bar) * x0) / torch.sqrt(1.0 - bar).clamp_min(
			1e-12)
		x = torch.sqrt(bar_prev) * x0 + torch.sqrt(1.0 - bar_prev) * eps

	image = ((x[0] + 1.0) / 2.0).clamp(0.0, 1.0)
	return image.permute(1, 2, 0).numpy().astype(np.float32)


def sample_next_obs(network: Denoiser, schedule: NoiseSchedule,
					x_t: np.ndarray, action_text: str, flow=None,
					steps: int=50, seed: int=0,
					max_mag: float=flows.DEFAULT_MAX_MAG) -> np.ndarray:
	"""Imagines the next observation of an action.

	Parameters
	----------
	network: Denoiser -- the world model
	schedule: NoiseSchedule -- its schedule
	x_t: np.ndarray -- H x W x 3 current observation
	action_text: str -- the action phrase
	flow: FlowField or np.ndarray -- flow, or its color image, feeding the
	control branch (default None)
	steps: int -- sampling steps (default 50)
	seed: int -- sampler seed (default 0)
	max_mag: float -- codec magnitude when flow is a FlowField
	(default 8.0)

	Returns: np.ndarray -- H x W x 3 image in [0, 1]

	Throws ModelError
	"""
	if flow is not None and not isinstance(flow, np.ndarray):
		flow = flows.flow_to_color(flow, max_mag)
	return sample_image(network, schedule, x_t, action_text, steps, seed,
						flow)


def train_subgoal_model(dataset, config: DynamicsConfig=DEFAULT_CONFIG,
						seed: int=0) -> tuple:
	"""Trains the goal-conditioned image model on SubgoalDataset items with
	the world model's machinery.

	Returns: tuple -- (Denoiser, NoiseSchedule, list of CurvePoint)
	"""
	return train_dynamics(dataset, config, seed)


def sample_subgoal_image(network: Denoiser, schedule: NoiseSchedule,
						 x_t: np.ndarray, goal_text: str, steps: int=50,
						 seed: int=0) -> np.ndarray:
	"""Generates the image of a subgoal from the current observation.

	Returns: np.ndarray -- H x W x 3 image in [0, 1]

	Throws ModelError
	"""
	return sample_image(network, schedule, x_t, goal_text, steps, seed)


def save_denoiser(path: str, network: Denoiser, schedule: NoiseSchedule,
				  echo: str=None, role: str='dynamics',
				  flow_source: str='none') -> str:
	"""Writes a denoiser checkpoint with its schedule.

	Parameters
	----------
	path: str -- the archive path
	network: Denoiser -- the network
	schedule: NoiseSchedule -- its schedule
	echo: str -- the config echo (default None)
	role: str -- 'dynamics' or 'subgoal' (default 'dynamics')
	flow_source: str -- 'none', 'previous' or 'current' (default 'none')
	"""
	state = {k: v for k, v in network.state_dict().items()
			 if '.lora_' not in k}
	return save_checkpoint(
		path, CHECKPOINT_KIND, state,
		{'width': network.width, 'image_channels': network.image_channels},
		echo, {'betas': schedule.betas.tolist(), 'role': role,
			   'control': network.control is not None,
			   'flow_source': flow_source})


def load_denoiser(path: str, producer: str='train-dynamics') -> tuple:
	"""Reads a denoiser checkpoint.

	Returns: tuple -- (Denoiser, NoiseSchedule, archive dict)

	Throws MissingArtifactError, ModelError
	"""
	archive = load_checkpoint(path, CHECKPOINT_KIND, producer)
	network = Denoiser(**archive['hyper'])
	if archive['extra'].get('control'):
		attach_control_branch(network)
	network.load_state_dict(archive['state'])
	network.eval()
	schedule = schedule_from_betas(archive['extra']['betas'])
	return network, schedule, archive
