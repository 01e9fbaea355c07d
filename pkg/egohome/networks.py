"""The networks module holds the torch building blocks of egohome's learners:
the conditional U-Net denoiser with its flow control branch, the quantized
flow autoencoder halves and the small image autoencoder whose bottleneck
feeds the Fréchet proxy.

Classes: ResBlock, AttentionBlock, MlpBlock, MidBlock, Encoder, Decoder,
Denoiser, ControlBranch, FlowEncoder, FlowDecoder, FeatureAutoencoder

Functions: timestep_embedding, zero_module, groups
"""

import copy
import math

import torch
import torch.nn.functional as F
from torch import nn

from .models import OBJECT_KINDS, PHRASE_VERBS


def groups(channels: int) -> int:
	"""Gets the GroupNorm group count used for a channel width."""
	for count in (8, 4, 2):
		if channels % count == 0:
			return count
	return 1


def zero_module(module: nn.Module) -> nn.Module:
	"""Zeroes every parameter of a module in place and returns it."""
	for param in module.parameters():
		nn.init.zeros_(param)
	return module


def timestep_embedding(steps: torch.Tensor, dim: int) -> torch.Tensor:
	"""Sinusoidal embedding of 1-indexed diffusion steps.

	Parameters
	----------
	steps: torch.Tensor -- (B, ) integer steps
	dim: int -- embedding width, even

	Returns: torch.Tensor -- (B, dim) embeddings
	"""
	half = dim // 2
	freqs = torch.exp(-math.log(10000.0) * torch.arange(
		half, dtype=torch.float32, device=steps.device) / half)
	args = steps.float()[:, None] * freqs[None]
	return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class ResBlock(nn.Module):
	"""Residual convolution block. When an embedding width is given, the
	conditioning embedding is projected and added after the first
	convolution.
	"""
	def __init__(self, in_channels: int, out_channels: int,
				 emb_dim: int=None):
		"""ResBlock's constructor.

		Parameters
		----------
		in_channels: int -- input channels
		out_channels: int -- output channels
		emb_dim: int -- conditioning embedding width, None for an
		unconditioned block (default None)
		"""
		super().__init__()
		self.norm1 = nn.GroupNorm(groups(in_channels), in_channels)
		self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
		self.emb_proj = nn.Linear(emb_dim, out_channels) \
			if emb_dim is not None else None
		self.norm2 = nn.GroupNorm(groups(out_channels), out_channels)
		self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
		self.skip = nn.Conv2d(in_channels, out_channels, 1) \
			if in_channels != out_channels else nn.Identity()

	def forward(self, x: torch.Tensor, emb: torch.Tensor=None
				) -> torch.Tensor:
		h = self.conv1(F.silu(self.norm1(x)))
		if self.emb_proj is not None:
			h = h + self.emb_proj(F.silu(emb))[:, :, None, None]
		h = self.conv2(F.silu(self.norm2(h)))
		return self.skip(x) + h


class AttentionBlock(nn.Module):
	"""Single-head self attention over the cells of a feature map."""
	def __init__(self, channels: int):
		"""AttentionBlock's constructor."""
		super().__init__()
		self.norm = nn.GroupNorm(groups(channels), channels)
		self.to_q = nn.Linear(channels, channels)
		self.to_k = nn.Linear(channels, channels)
		self.to_v = nn.Linear(channels, channels)
		self.to_out = nn.Linear(channels, channels)

	def forward(self, x: torch.Tensor) -> torch.Tensor:
		b, c, h, w = x.shape
		tokens = self.norm(x).flatten(2).transpose(1, 2)
		q, k, v = self.to_q(tokens), self.to_k(tokens), self.to_v(tokens)
		weights = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(c), dim=-1)
		out = self.to_out(weights @ v)
		return x + out.transpose(1, 2).reshape(b, c, h, w)


class MlpBlock(nn.Module):
	"""Per-cell two-layer perceptron with a residual connection."""
	def __init__(self, channels: int, hidden: int=None):
		"""MlpBlock's constructor."""
		super().__init__()
		hidden = hidden or 2 * channels
		self.norm = nn.GroupNorm(groups(channels), channels)
		self.fc1 = nn.Linear(channels, hidden)
		self.fc2 = nn.Linear(hidden, channels)

	def forward(self, x: torch.Tensor) -> torch.Tensor:
		b, c, h, w = x.shape
		tokens = self.norm(x).flatten(2).transpose(1, 2)
		out = self.fc2(F.silu(self.fc1(tokens)))
		return x + out.transpose(1, 2).reshape(b, c, h, w)


class MidBlock(nn.Module):
	"""Bottleneck of the denoiser: residual, attention, perceptron and
	residual blocks.
	"""
	def __init__(self, channels: int, emb_dim: int):
		"""MidBlock's constructor."""
		super().__init__()
		self.res1 = ResBlock(channels, channels, emb_dim)
		self.attn = AttentionBlock(channels)
		self.mlp = MlpBlock(channels)
		self.res2 = ResBlock(channels, channels, emb_dim)

	def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
		return self.res2(self.mlp(self.attn(self.res1(x, emb))), emb)


class Encoder(nn.Module):
	"""Contracting half of the denoiser. Produces one skip feature per
	resolution: full, half and quarter.
	"""
	def __init__(self, in_channels: int, width: int, emb_dim: int):
		"""Encoder's constructor.

		Parameters
		----------
		in_channels: int -- input channels
		width: int -- channels at full resolution
		emb_dim: int -- conditioning embedding width
		"""
		super().__init__()
		self.conv_in = nn.Conv2d(in_channels, width, 3, padding=1)
		self.block1 = ResBlock(width, width, emb_dim)
		self.down1 = nn.Conv2d(width, 2 * width, 3, stride=2, padding=1)
		self.block2 = ResBlock(2 * width, 2 * width, emb_dim)
		self.down2 = nn.Conv2d(2 * width, 2 * width, 3, stride=2, padding=1)
		self.block3 = ResBlock(2 * width, 2 * width, emb_dim)

	def forward(self, x: torch.Tensor, emb: torch.Tensor,
				hint: torch.Tensor=None) -> list:
		"""Runs the contracting path.

		Parameters
		----------
		x: torch.Tensor -- (B, in_channels, H, W) input
		emb: torch.Tensor -- (B, emb_dim) conditioning
		hint: torch.Tensor -- features added after the input convolution
		(default None)

		Returns: list -- the three skip features, finest first
		"""
		h = self.conv_in(x)
		if hint is not None:
			h = h + hint
		s1 = self.block1(h, emb)
		s2 = self.block2(self.down1(s1), emb)
		s3 = self.block3(self.down2(s2), emb)
		return [s1, s2, s3]


class Decoder(nn.Module):
	"""Expanding half of the denoiser, fed by the encoder skips."""
	def __init__(self, out_channels: int, width: int, emb_dim: int):
		"""Decoder's constructor."""
		super().__init__()
		self.block3 = ResBlock(4 * width, 2 * width, emb_dim)
		self.up2 = nn.Conv2d(2 * width, 2 * width, 3, padding=1)
		self.block2 = ResBlock(4 * width, width, emb_dim)
		self.up1 = nn.Conv2d(width, width, 3, padding=1)
		self.block1 = ResBlock(2 * width, width, emb_dim)
		self.norm_out = nn.GroupNorm(groups(width), width)
		self.conv_out = nn.Conv2d(width, out_channels, 3, padding=1)
		nn.init.normal_(self.conv_out.weight, std=1e-3)
		nn.init.zeros_(self.conv_out.bias)

	def forward(self, h: torch.Tensor, skips: list, emb: torch.Tensor
				) -> torch.Tensor:
		s1, s2, s3 = skips
		h = self.block3(torch.cat([h, s3], dim=1), emb)
		h = self.up2(F.interpolate(h, scale_factor=2.0, mode='nearest'))
		h = self.block2(torch.cat([h, s2], dim=1), emb)
		h = self.up1(F.interpolate(h, scale_factor=2.0, mode='nearest'))
		h = self.block1(torch.cat([h, s1], dim=1), emb)
		return self.conv_out(F.silu(self.norm_out(h)))


class ControlBranch(nn.Module):
	"""Trainable copy of a denoiser's encoder fed by flow-color channels. Its
	residuals reach the denoiser through zero-initialized 1x1 convolutions.
	"""
	def __init__(self, encoder: Encoder, width: int, hint_channels: int=3):
		"""ControlBranch's constructor.

		Parameters
		----------
		encoder: Encoder -- the encoder to be cloned
		width: int -- the encoder's full-resolution width
		hint_channels: int -- channels of the control image (default 3)
		"""
		super().__init__()
		self.encoder = copy.deepcopy(encoder)
		self.encoder.requires_grad_(True)
		self.hint_block = nn.Sequential(
			nn.Conv2d(hint_channels, 16, 3, padding=1), nn.SiLU(),
			nn.Conv2d(16, 16, 3, padding=1), nn.SiLU(),
			zero_module(nn.Conv2d(16, width, 3, padding=1))
		)
		self.zero_convs = nn.ModuleList([
			zero_module(nn.Conv2d(width, width, 1)),
			zero_module(nn.Conv2d(2 * width, 2 * width, 1)),
			zero_module(nn.Conv2d(2 * width, 2 * width, 1))
		])
		self.mid_zero_conv = zero_module(nn.Conv2d(2 * width, 2 * width, 1))

	def forward(self, x: torch.Tensor, emb: torch.Tensor,
				hint: torch.Tensor) -> list:
		"""Computes the residuals added to the denoiser's features.

		Returns: list -- one residual per skip, then the bottleneck one
		"""
		skips = self.encoder(x, emb, self.hint_block(hint))
		residuals = [conv(s) for conv, s in zip(self.zero_convs, skips)]
		residuals.append(self.mid_zero_conv(skips[-1]))
		return residuals


class Denoiser(nn.Module):
	"""Conditional U-Net predicting the noise of a noisy target image given
	the conditioning image (channel concatenation), the diffusion step, the
	phrase verb and the phrase object. An attached control branch injects the
	flow image additively.

	Methods: embed, forward
	"""
	def __init__(self, width: int=32, image_channels: int=3):
		"""Denoiser's constructor.

		Parameters
		----------
		width: int -- base channel width (default 32)
		image_channels: int -- channels of target and condition (default 3)
		"""
		super().__init__()
		self.width = width
		self.image_channels = image_channels
		emb_dim = 4 * width
		self.emb_dim = emb_dim

		self.time_mlp = nn.Sequential(
			nn.Linear(width, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim))
		self.verb_embedding = nn.Embedding(len(PHRASE_VERBS), emb_dim)
		self.object_embedding = nn.Embedding(len(OBJECT_KINDS) + 1, emb_dim)

		self.encoder = Encoder(2 * image_channels, width, emb_dim)
		self.mid = MidBlock(2 * width, emb_dim)
		self.decoder = Decoder(image_channels, width, emb_dim)
		self.control = None

	def embed(self, steps: torch.Tensor, verbs: torch.Tensor,
			  objects: torch.Tensor) -> torch.Tensor:
		return self.time_mlp(timestep_embedding(steps, self.width)) \
			+ self.verb_embedding(verbs) + self.object_embedding(objects)

	def forward(self, noisy: torch.Tensor, condition: torch.Tensor,
				steps: torch.Tensor, verbs: torch.Tensor,
				objects: torch.Tensor, hint: torch.Tensor=None
				) -> torch.Tensor:
		"""Predicts the noise of a batch.

		Parameters
		----------
		noisy: torch.Tensor -- (B, C, H, W) noisy targets in [-1, 1] scale
		condition: torch.Tensor -- (B, C, H, W) condition images
		steps: torch.Tensor -- (B, ) 1-indexed diffusion steps
		verbs: torch.Tensor -- (B, ) indices into PHRASE_VERBS
		objects: torch.Tensor -- (B, ) indices into OBJECT_KINDS, the last
		index meaning no object
		hint: torch.Tensor -- (B, 3, H, W) control image, used only when a
		control branch is attached (default None)

		Returns: torch.Tensor -- (B, C, H, W) predicted noise
		"""
		emb = self.embed(steps, verbs, objects)
		x = torch.cat([noisy, condition], dim=1)
		skips = self.encoder(x, emb)

		residuals = None
		if self.control is not None and hint is not None:
			residuals = self.control(x, emb, hint)
			skips = [s + r for s, r in zip(skips, residuals[:-1])]

		h = skips[-1]
		if residuals is not None:
			h = h + residuals[-1]
		h = self.mid(h, emb)
		return self.decoder(h, skips, emb)


class FlowEncoder(nn.Module):
	"""Maps a 64x64 flow-color image to a 16x16 grid of code_dim latents."""
	def __init__(self, code_dim: int=16, hidden: int=64):
		"""FlowEncoder's constructor."""
		super().__init__()
		self.net = nn.Sequential(
			nn.Conv2d(3, hidden // 2, 4, stride=2, padding=1), nn.SiLU(),
			nn.Conv2d(hidden // 2, hidden, 4, stride=2, padding=1), nn.SiLU(),
			nn.Conv2d(hidden, hidden, 3, padding=1)
		)
		self.res = ResBlock(hidden, hidden)
		self.proj = nn.Conv2d(hidden, code_dim, 1)

	def forward(self, x: torch.Tensor) -> torch.Tensor:
		return self.proj(self.res(self.net(x)))


class FlowDecoder(nn.Module):
	"""Maps a quantized latent grid, plus an optional per-verb bottleneck
	embedding, back to a flow-color image in [0, 1].
	"""
	def __init__(self, code_dim: int=16, hidden: int=64):
		"""FlowDecoder's constructor."""
		super().__init__()
		self.proj = nn.Conv2d(code_dim, hidden, 1)
		self.res = ResBlock(hidden, hidden)
		self.net = nn.Sequential(
			nn.ConvTranspose2d(hidden, hidden // 2, 4, stride=2, padding=1),
			nn.SiLU(),
			nn.ConvTranspose2d(hidden // 2, hidden // 2, 4, stride=2,
							   padding=1),
			nn.SiLU(),
			nn.Conv2d(hidden // 2, 3, 3, padding=1)
		)

	def forward(self, z: torch.Tensor, action: torch.Tensor=None
				) -> torch.Tensor:
		h = self.proj(z)
		if action is not None:
			h = h + action[:, :, None, None]
		return torch.sigmoid(self.net(self.res(h)))


class FeatureAutoencoder(nn.Module):
	"""Small image autoencoder. The encoder's feature_dim bottleneck is the
	feature space of the Fréchet proxy.

	Methods: encode, forward
	"""
	def __init__(self, feature_dim: int=64, resolution: tuple=(64, 64)):
		"""FeatureAutoencoder's constructor.

		Parameters
		----------
		feature_dim: int -- bottleneck width (default 64)
		resolution: tuple -- (H, W) of the images, multiples of 8
		(default (64, 64))
		"""
		super().__init__()
		self.feature_dim = feature_dim
		self.grid = (resolution[0] // 8, resolution[1] // 8)
		cells = 64 * self.grid[0] * self.grid[1]
		self.features = nn.Sequential(
			nn.Conv2d(3, 16, 4, stride=2, padding=1), nn.SiLU(),
			nn.Conv2d(16, 32, 4, stride=2, padding=1), nn.SiLU(),
			nn.Conv2d(32, 64, 4, stride=2, padding=1), nn.SiLU(),
			nn.Flatten(), nn.Linear(cells, feature_dim)
		)
		self.expand = nn.Linear(feature_dim, cells)
		self.reconstruct = nn.Sequential(
			nn.ConvTranspose2d(64, 32, 4, stride=2, padding=1), nn.SiLU(),
			nn.ConvTranspose2d(32, 16, 4, stride=2, padding=1), nn.SiLU(),
			nn.ConvTranspose2d(16, 3, 4, stride=2, padding=1), nn.Sigmoid()
		)

	def encode(self, x: torch.Tensor) -> torch.Tensor:
		return self.features(x)

	def forward(self, x: torch.Tensor) -> torch.Tensor:
		h = self.expand(self.encode(x)).reshape(-1, 64, *self.grid)
		return self.reconstruct(h)
