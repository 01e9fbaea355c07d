"""The adapters module injects low-rank deltas into a denoiser's dense layers
for few-shot style transfer, trains them, and folds them in and out of the
base weights.

Classes: LoraLinear

Functions: inject_lora, lora_layers, lora_parameters, lora_params,
load_lora_params, set_lora_enabled, merge_lora, unmerge_lora, finetune_lora,
save_lora, load_lora
"""

import fnmatch
import logging
import math

import torch
from torch import nn

from .checkpoints import load_checkpoint, save_checkpoint
from .dynamics import step_batches, train_denoiser
from .errors import ModelError
from .models import LoraParams


logger = logging.getLogger(__name__)

CHECKPOINT_KIND = 'lora'

DEFAULT_TARGETS = ('*attn.to_*', '*mlp.*', '*emb_proj')

# The control branch carries flow, which is style-invariant.
EXCLUDED_PREFIXES = ('control.', )


class LoraLinear(nn.Linear):
	"""Linear layer with a detachable rank-r delta (alpha / r) B A. B starts
	at zero so the layer starts as its base.

	Methods: delta, merge, unmerge, forward
	"""
	def __init__(self, base: nn.Linear, rank: int, alpha: float):
		"""LoraLinear's constructor.

		Parameters
		----------
		base: nn.Linear -- the layer whose weights are taken over
		rank: int -- rank of the delta, at least 1
		alpha: float -- scaling numerator
		"""
		super().__init__(base.in_features, base.out_features,
						 bias=base.bias is not None)
		with torch.no_grad():
			self.weight.copy_(base.weight)
			if base.bias is not None:
				self.bias.copy_(base.bias)
		self.weight.requires_grad_(False)
		if self.bias is not None:
			self.bias.requires_grad_(False)

		self.rank = int(rank)
		self.alpha = float(alpha)
		self.scaling = self.alpha / self.rank
		self.lora_A = nn.Parameter(torch.empty(self.rank, self.in_features))
		self.lora_B = nn.Parameter(torch.zeros(self.out_features, self.rank))
		nn.init.kaiming_uniform_(self.lora_A, a=math.sqrt(5))
		self.merged = False
		self.enabled = True

	def delta(self) -> torch.Tensor:
		return self.scaling * (self.lora_B @ self.lora_A)

	def merge(self):
		if self.merged:
			raise ModelError('low-rank delta already merged')
		with torch.no_grad():
			self.weight += self.delta()
		self.merged = True

	def unmerge(self):
		if not self.merged:
			raise ModelError('low-rank delta is not merged')
		with torch.no_grad():
			self.weight -= self.delta()
		self.merged = False

	def forward(self, x: torch.Tensor) -> torch.Tensor:
		out = super().forward(x)
		if self.enabled and not self.merged:
			out = out + self.scaling * ((x @ self.lora_A.t()) @ self.lora_B.t())
		return out


def _replace_module(root: nn.Module, name: str, module: nn.Module):
	parent_name, _, child = name.rpartition('.')
	parent = root.get_submodule(parent_name) if parent_name else root
	setattr(parent, child, module)


def inject_lora(network: nn.Module, rank: int=4, alpha: float=8.0,
				targets: tuple=DEFAULT_TARGETS) -> nn.Module:
	"""Wraps the dense layers whose names match one of the patterns with
	LoraLinear layers and freezes everything else. The control branch is
	never adapted.

	Parameters
	----------
	network: nn.Module -- the denoiser
	rank: int -- delta rank (default 4)
	alpha: float -- scaling numerator (default 8.0)
	targets: tuple -- fnmatch patterns over module names
	(default DEFAULT_TARGETS)

	Returns: nn.Module -- the same network, adapted in place

	Throws ModelError
	"""
	if int(rank) < 1:
		raise ValueError('rank must be at least 1')
	if not targets:
		raise ValueError('no target layer pattern given')
	if lora_layers(network):
		raise ModelError('the network is already adapted')

	linears = [(name, m) for name, m in network.named_modules()
			   if isinstance(m, nn.Linear) and not name.startswith(
				   EXCLUDED_PREFIXES)]
	unknown = [p for p in targets
			   if not any(fnmatch.fnmatchcase(n, p) for n, _ in linears)]
	if unknown:
		raise ModelError('no dense layer matches {0}'.format(
			', '.join(unknown)))

	network.requires_grad_(False)
	chosen = [(n, m) for n, m in linears
			  if any(fnmatch.fnmatchcase(n, p) for p in targets)]
	for name, module in chosen:
		_replace_module(network, name, LoraLinear(module, rank, alpha))
	logger.info('injected rank-%d deltas into %d layers', rank, len(chosen))
	return network


def lora_layers(network: nn.Module) -> dict:
	"""Maps module names to the network's LoraLinear layers."""
	return {n: m for n, m in network.named_modules()
			if isinstance(m, LoraLinear)}


def lora_parameters(network: nn.Module) -> list:
	return [p for m in lora_layers(network).values()
			for p in (m.lora_A, m.lora_B)]


def lora_params(network: nn.Module) -> LoraParams:
	"""Snapshots the deltas of an adapted network.

	Returns: LoraParams -- layer name to (A, B) tensors, rank and alpha
	"""
	layers = lora_layers(network)
	if not layers:
		raise ModelError('the network carries no low-rank delta')
	first = next(iter(layers.values()))
	return LoraParams({n: (m.lora_A.detach().clone(),
						   m.lora_B.detach().clone())
					   for n, m in layers.items()}, first.rank, first.alpha)


def load_lora_params(network: nn.Module, params: LoraParams) -> nn.Module:
	"""Copies deltas into an adapted network's layers.

	Throws ModelError
	"""
	layers = lora_layers(network)
	if set(layers) != set(params.layers):
		raise ModelError('adapted layers do not match the given deltas')
	for name, (a, b) in params.layers.items():
		layer = layers[name]
		if layer.merged:
			raise ModelError('cannot load deltas into merged layer ' + name)
		if layer.lora_A.shape != a.shape or layer.lora_B.shape != b.shape:
			raise ModelError('delta shapes of {0} do not match'.format(name))
		with torch.no_grad():
			layer.lora_A.copy_(a)
			layer.lora_B.copy_(b)
	return network


def set_lora_enabled(network: nn.Module, enabled: bool) -> nn.Module:
	"""Attaches or detaches the unmerged deltas from the forward pass."""
	for layer in lora_layers(network).values():
		layer.enabled = bool(enabled)
	return network


def merge_lora(network: nn.Module, params: LoraParams=None) -> nn.Module:
	"""Folds the deltas into the base weights, loading params first when
	given.

	Throws ModelError
	"""
	if params is not None:
		load_lora_params(network, params)
	for layer in lora_layers(network).values():
		layer.merge()
	return network


def unmerge_lora(network: nn.Module, params: LoraParams=None) -> nn.Module:
	"""Subtracts merged deltas from the base weights.

	Throws ModelError
	"""
	layers = lora_layers(network)
	if params is not None and set(layers) != set(params.layers):
		raise ModelError('adapted layers do not match the given deltas')
	for layer in layers.values():
		layer.unmerge()
	return network


def finetune_lora(network: nn.Module, dataset, schedule, steps: int=100,
				  batch_size: int=8, lr: float=1e-3, window: int=20,
				  seed: int=0) -> tuple:
	"""Trains only the deltas of an adapted network with the denoising loss.

	Parameters
	----------
	network: nn.Module -- a network adapted by inject_lora
	dataset: torch Dataset -- restyled transition items
	schedule: NoiseSchedule -- the network's schedule
	steps: int -- number of updates (default 100)
	batch_size: int -- items per update (default 8)
	lr: float -- learning rate (default 1e-3)
	window: int -- updates per curve point (default 20)
	seed: int -- seed of shuffling and noise (default 0)

	Returns: tuple -- (LoraParams, list of CurvePoint)

	Throws ModelError, TrainingDivergenceError
	"""
	parameters = lora_parameters(network)
	if not parameters:
		raise ModelError('the network carries no low-rank delta')
	if len(dataset) == 0:
		raise ValueError('the few-shot dataset is empty')

	torch.manual_seed(seed)
	curve = train_denoiser(network, step_batches(dataset, batch_size, steps,
												 seed),
						   schedule, parameters, lr, window, seed)
	return lora_params(network), curve


def save_lora(path: str, params: LoraParams, targets: tuple,
			  echo: str=None) -> str:
	"""Writes the deltas apart from the base checkpoint."""
	state = {n: {'A': a, 'B': b} for n, (a, b) in params.layers.items()}
	return save_checkpoint(path, CHECKPOINT_KIND, state,
						   {'rank': params.rank, 'alpha': params.alpha,
							'targets': list(targets)}, echo)


def load_lora(path: str, network: nn.Module) -> LoraParams:
	"""Adapts a freshly loaded base network and loads the stored deltas into
	it. The base checkpoint must be loaded first.

	Returns: LoraParams -- the loaded deltas

	Throws MissingArtifactError, ModelError
	"""
	archive = load_checkpoint(path, CHECKPOINT_KIND, 'adapt-lora')
	hyper = archive['hyper']
	inject_lora(network, hyper['rank'], hyper['alpha'],
				tuple(hyper['targets']))
	params = LoraParams({n: (v['A'], v['B'])
						 for n, v in archive['state'].items()},
						hyper['rank'], hyper['alpha'])
	load_lora_params(network, params)
	network.eval()
	return params
