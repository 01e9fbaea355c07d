"""The evaluation module holds the metrics and experiment harness: the
learned-feature Fréchet proxy, automated motion correctness, AEE comparison,
subgoal-image quality, task success rates and the bootstrap and binomial
statistics reported with them.

Every run_* function returns plain per-item records (dictionaries ready
for the run logs); every *_rows function rebuilds table rows out of such
records, so reports can be regenerated from the logs alone.

Classes: FeatureAccumulator

NamedTuples: Motion, TaskMethod

Functions: feature_stats, encode_images, extract_features, frechet_distance,
dominant_motion, motion_correctness, bootstrap, paired_bootstrap,
binomial_interval, train_feature_encoder, save_feature_encoder,
load_feature_encoder, ground_truth_generator, noise_generator,
dynamics_generator, run_image_eval, image_rows, run_flow_eval, aee_rows,
run_subgoal_quality, quality_rows, run_task_eval, success_rows, mean_success,
ordering_line
"""

import collections
import logging
import math

import numpy as np
import torch
import torch.nn.functional as F
from scipy import linalg, stats
from torch.utils.data import DataLoader, TensorDataset

from . import flows
from .checkpoints import load_checkpoint, save_checkpoint
from .datasets import image_tensor, parse_phrase
from .dynamics import sample_next_obs, sample_subgoal_image
from .errors import EgohomeError, EvaluationError, TrainingDivergenceError
from .houses import DEFAULT_LAYOUT, DEFAULT_STYLE
from .matchers import parse_subgoal
from .models import PHRASE_VERBS, AeeRow, CurvePoint, FeatureStats, \
	MetricRow, QualityRow, Skill, SuccessRow
from .networks import FeatureAutoencoder
from .planners import EpisodeConfig, find_environment, run_episode
from .predictors import predict_color, predict_flow
from .renderers import DEFAULT_RENDERER


logger = logging.getLogger(__name__)

CHECKPOINT_KIND = 'features'

NEGATIVE_TOLERANCE = 1e-8

MOTION_VERBS = frozenset(('walk_forward', 'turn_left', 'turn_right',
						  'walk_through', 'sit', 'stand_up'))
MIN_MOTION = 0.25
STILL_TOLERANCE = 0.5
MAX_ANGLE = 45.0
RATIO_BOUNDS = (0.5, 2.0)
DIRECTIONAL_SHARE = 0.5

SIGNIFICANCE = 0.05


Motion = collections.namedtuple('Motion', ['mean', 'magnitude', 'radial'])


TaskMethod = collections.namedtuple('TaskMethod', [
	'name', 'policy', 'matcher', 'subgoal_mode', 'subgoal_model'
])


class FeatureAccumulator(object):
	"""Streaming mean and covariance of feature vectors, merging batches
	with a pairwise mean and co-moment update.

	Methods: update, stats
	"""
	def __init__(self, dim: int):
		"""FeatureAccumulator's constructor.

		Parameters
		----------
		dim: int -- feature width
		"""
		self.dim = dim
		self.count = 0
		self.mean = np.zeros(dim)
		self.m2 = np.zeros((dim, dim))

	def update(self, features: np.ndarray):
		"""Merges a (n, dim) batch in."""
		features = np.asarray(features, dtype=np.float64).reshape(-1, self.dim)
		n = features.shape[0]
		if n == 0:
			return self

		mean = features.mean(axis=0)
		centered = features - mean
		total = self.count + n
		delta = mean - self.mean
		self.m2 = self.m2 + centered.T @ centered \
			+ np.outer(delta, delta) * (self.count * n / total)
		self.mean = self.mean + delta * (n / total)
		self.count = total
		return self

	def stats(self) -> FeatureStats:
		"""Throws EvaluationError"""
		if self.count < 2:
			raise EvaluationError('feature statistics need at least 2 '
								  'samples, got {0}'.format(self.count))
		cov = self.m2 / (self.count - 1)
		return FeatureStats(self.mean.copy(), (cov + cov.T) / 2.0, self.count)


def feature_stats(features: np.ndarray) -> FeatureStats:
	"""Two-pass mean and unbiased covariance of (n, D) features.

	Throws EvaluationError
	"""
	features = np.asarray(features, dtype=np.float64)
	if features.ndim != 2 or features.shape[0] < 2:
		raise EvaluationError('feature statistics need at least 2 samples')
	return FeatureStats(features.mean(axis=0),
						np.atleast_2d(np.cov(features, rowvar=False)),
						features.shape[0])


@torch.no_grad()
def encode_images(images: list, encoder: FeatureAutoencoder,
				  batch_size: int=64) -> np.ndarray:
	"""Maps images to the encoder's bottleneck features.

	Returns: np.ndarray -- (n, D) float64 features
	"""
	encoder.eval()
	chunks = []
	for start in range(0, len(images), batch_size):
		batch = torch.stack([image_tensor(img)
							 for img in images[start:start + batch_size]])
		chunks.append(encoder.encode(batch).double().numpy())
	if not chunks:
		return np.zeros((0, encoder.feature_dim))
	return np.concatenate(chunks)


def extract_features(images: list, encoder: FeatureAutoencoder,
					 batch_size: int=64) -> FeatureStats:
	"""Streams images through the frozen encoder and accumulates the mean
	and covariance of their features.

	Parameters
	----------
	images: list -- H x W x 3 images, at least 2
	encoder: FeatureAutoencoder -- the frozen feature encoder
	batch_size: int -- images per forward pass (default 64)

	Returns: FeatureStats -- the feature statistics

	Throws EvaluationError
	"""
	if len(images) < 2:
		raise EvaluationError('feature statistics need at least 2 images')
	accumulator = FeatureAccumulator(encoder.feature_dim)
	for start in range(0, len(images), batch_size):
		accumulator.update(encode_images(images[start:start + batch_size],
										 encoder, batch_size))
	return accumulator.stats()


def _psd_eigen(matrix: np.ndarray, name: str) -> tuple:
	matrix = np.asarray(matrix, dtype=np.float64)
	scale = max(1.0, float(np.abs(matrix).max(initial=0.0)))
	if not np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-10 * scale):
		raise EvaluationError('{0} is not symmetric'.format(name))
	w, v = linalg.eigh((matrix + matrix.T) / 2.0)
	if w.size and w.min() < -NEGATIVE_TOLERANCE:
		raise EvaluationError('{0} is not positive semidefinite (eigenvalue '
							  '{1:.3g})'.format(name, w.min()))
	return np.clip(w, 0.0, None), v


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
	"""Fréchet distance between two Gaussian feature summaries. The trace of
	(Σa Σb)^1/2 is taken as the trace of (Σa^1/2 Σb Σa^1/2)^1/2, both roots
	by symmetric eigendecomposition.

	Parameters
	----------
	a: FeatureStats -- the first summary
	b: FeatureStats -- the second summary

	Returns: float -- the distance, non-negative

	Throws EvaluationError
	"""
	mu_a, mu_b = np.asarray(a.mean, np.float64), np.asarray(b.mean, np.float64)
	sigma_a = np.atleast_2d(np.asarray(a.covariance, np.float64))
	sigma_b = np.atleast_2d(np.asarray(b.covariance, np.float64))
	if mu_a.shape != mu_b.shape or sigma_a.shape != sigma_b.shape \
			or sigma_a.shape != (mu_a.size, mu_a.size):
		raise EvaluationError('feature dimensions differ: {0} vs {1}'.format(
			mu_a.shape, mu_b.shape))

	w, v = _psd_eigen(sigma_a, 'the first covariance')
	root_a = (v * np.sqrt(w)) @ v.T
	_psd_eigen(sigma_b, 'the second covariance')
	inner = root_a @ sigma_b @ root_a
	inner_w = np.clip(linalg.eigvalsh((inner + inner.T) / 2.0), 0.0, None)

	diff = mu_a - mu_b
	value = diff @ diff + np.trace(sigma_a) + np.trace(sigma_b) \
		- 2.0 * np.sum(np.sqrt(inner_w))
	return float(max(value, 0.0))


def dominant_motion(flow) -> Motion:
	"""Summarizes a flow over its valid pixels: the mean vector, the mean
	magnitude and the mean outward (radial) component about the image
	center.

	Returns: Motion -- the summary, None without valid pixels
	"""
	valid = np.asarray(flow.valid, dtype=bool)
	if not valid.any():
		return None
	u = np.asarray(flow.u, dtype=np.float64)[valid]
	v = np.asarray(flow.v, dtype=np.float64)[valid]

	height, width = valid.shape
	rows, cols = np.nonzero(valid)
	dy = rows - (height - 1) / 2.0
	dx = cols - (width - 1) / 2.0
	dist = np.maximum(np.hypot(dx, dy), 1e-6)
	radial = (u * dx + v * dy) / dist
	return Motion(np.array([u.mean(), v.mean()]), float(np.hypot(u, v).mean()),
				  float(radial.mean()))


def _angle(a: np.ndarray, b: np.ndarray) -> float:
	norm = np.linalg.norm(a) * np.linalg.norm(b)
	if norm == 0.0:
		return 180.0
	return math.degrees(math.acos(float(np.clip(a @ b / norm, -1.0, 1.0))))


def motion_correctness(x_t: np.ndarray, generated: np.ndarray, gt_flow,
					   skill) -> bool:
	"""Judges whether a generated next observation moves like the executed
	skill. The flow from x_t to the generated image is estimated; it is
	correct when its magnitude is within RATIO_BOUNDS of the ground truth's
	and its dominant direction within 45 degrees (or, for radial motion such
	as walking forward, expanding or contracting the same way). Skills that
	do not move the camera are correct when the generated image stays still.

	Parameters
	----------
	x_t: np.ndarray -- the current observation
	generated: np.ndarray -- the generated next observation
	gt_flow: FlowField -- the ground-truth current flow
	skill: Skill or str -- the executed skill or its verb

	Returns: bool -- the verdict, None when inconclusive (no valid pixel, or
	near-zero ground-truth flow under a motion skill)
	"""
	verb = skill.verb if isinstance(skill, Skill) else str(skill)
	truth = dominant_motion(gt_flow)
	if truth is None:
		return None
	if truth.magnitude < MIN_MOTION and verb in MOTION_VERBS:
		return None

	try:
		estimate = dominant_motion(flows.estimate_flow(x_t, generated))
	except EgohomeError as err:
		logger.debug('flow estimation failed: %s', err)
		return None
	if estimate is None:
		return None

	if truth.magnitude < MIN_MOTION:
		return estimate.magnitude < STILL_TOLERANCE

	ratio = estimate.magnitude / truth.magnitude
	if not RATIO_BOUNDS[0] <= ratio <= RATIO_BOUNDS[1]:
		return False
	if np.linalg.norm(truth.mean) >= DIRECTIONAL_SHARE * truth.magnitude:
		return _angle(estimate.mean, truth.mean) <= MAX_ANGLE
	return estimate.radial * truth.radial > 0.0


def bootstrap(statistic, count: int, resamples: int=10, seed: int=0
			  ) -> np.ndarray:
	"""Evaluates a statistic over resamples (with replacement) of item
	indices.

	Parameters
	----------
	statistic: callable -- maps an index array to a float
	count: int -- number of items
	resamples: int -- number of resamples (default 10)
	seed: int -- resampling seed (default 0)

	Returns: np.ndarray -- one value per resample
	"""
	if count < 1:
		raise EvaluationError('nothing to resample')
	rng = np.random.default_rng(seed)
	return np.array([statistic(rng.integers(0, count, count))
					 for _ in range(resamples)], dtype=np.float64)


def _spread(values: np.ndarray) -> tuple:
	variance = float(np.var(values, ddof=1)) if len(values) > 1 else 0.0
	return float(np.mean(values)), variance


def paired_bootstrap(a, b, resamples: int=1000, seed: int=0) -> float:
	"""One-sided paired bootstrap test of mean(a) < mean(b).

	Returns: float -- the p-value
	"""
	diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
	means = bootstrap(lambda idx: diff[idx].mean(), len(diff), resamples, seed)
	return float((np.count_nonzero(means >= 0.0) + 1) / (resamples + 1))


def binomial_interval(successes: int, trials: int,
					  confidence: float=0.95) -> tuple:
	"""Clopper-Pearson interval of a success rate, (nan, nan) without
	trials.
	"""
	if trials == 0:
		return float('nan'), float('nan')
	interval = stats.binomtest(int(successes), int(trials)).proportion_ci(
		confidence_level=confidence, method='exact')
	return float(interval.low), float(interval.high)


def train_feature_encoder(images: list, feature_dim: int=64, epochs: int=10,
						  batch_size: int=32, lr: float=1e-3, seed: int=0
						  ) -> tuple:
	"""Trains the Fréchet-proxy feature encoder as an image autoencoder and
	freezes it.

	Returns: tuple -- (FeatureAutoencoder, list of CurvePoint)

	Throws TrainingDivergenceError
	"""
	if len(images) < 2:
		raise ValueError('the feature encoder needs at least 2 images')

	torch.manual_seed(seed)
	model = FeatureAutoencoder(feature_dim, tuple(np.shape(images[0])[:2]))
	data = TensorDataset(torch.stack([image_tensor(i) for i in images]))
	loader = DataLoader(data, batch_size=batch_size, shuffle=True,
						generator=torch.Generator().manual_seed(seed))
	optimizer = torch.optim.Adam(model.parameters(), lr=lr)

	curve = []
	model.train()
	for epoch in range(1, epochs + 1):
		losses = []
		for idx, (x, ) in enumerate(loader):
			loss = F.mse_loss(model(x), x)
			if not torch.isfinite(loss):
				raise TrainingDivergenceError('non-finite encoder loss',
											  '{0}:{1}'.format(epoch, idx))
			optimizer.zero_grad()
			loss.backward()
			optimizer.step()
			losses.append(float(loss))
		curve.append(CurvePoint(epoch, float(np.mean(losses)), None))
		logger.info('feature encoder epoch %d: loss %.5f', epoch,
					curve[-1].loss)

	model.eval()
	model.requires_grad_(False)
	return model, curve


def save_feature_encoder(path: str, model: FeatureAutoencoder,
						 echo: str=None) -> str:
	return save_checkpoint(path, CHECKPOINT_KIND, model.state_dict(),
						   {'feature_dim': model.feature_dim,
							'resolution': [8 * g for g in model.grid]}, echo)


def load_feature_encoder(path: str) -> FeatureAutoencoder:
	"""Reads the frozen feature encoder.

	Throws MissingArtifactError, ModelError
	"""
	archive = load_checkpoint(path, CHECKPOINT_KIND, 'eval-images')
	hyper = archive['hyper']
	model = FeatureAutoencoder(hyper['feature_dim'],
							   tuple(hyper['resolution']))
	model.load_state_dict(archive['state'])
	model.eval()
	model.requires_grad_(False)
	return model


def ground_truth_generator():
	"""Upper anchor: returns the true next observation."""
	return lambda sample, seed: sample.x_next.rgb


def noise_generator():
	"""Lower anchor: returns uniform noise."""
	def generate(sample, seed):
		rng = np.random.default_rng(seed)
		return rng.random(np.shape(sample.x_t.rgb)).astype(np.float32)
	return generate


def dynamics_generator(network, schedule, flow_source: str='none',
					   flow_predictor=None,
					   max_mag: float=flows.DEFAULT_MAX_MAG, steps: int=50):
	"""Wraps a dynamics model into a (sample, seed) -> image generator.

	Parameters
	----------
	network: Denoiser -- the dynamics model
	schedule: NoiseSchedule -- its schedule
	flow_source: str -- 'none', 'previous', 'predicted' or 'current'
	(default 'none')
	flow_predictor: FlowPredictor -- required by 'predicted' (default None)
	max_mag: float -- flow codec magnitude (default 8.0)
	steps: int -- sampling steps (default 50)

	Returns: callable -- the generator
	"""
	if flow_source == 'predicted' and flow_predictor is None:
		raise ValueError('predicted flow needs a flow predictor')

	def generate(sample, seed):
		hint = None
		if flow_source == 'current':
			hint = sample.flow_color
		elif flow_source in ('previous', 'predicted'):
			hint = flows.flow_to_color(sample.prev_flow, max_mag)
			if flow_source == 'predicted':
				hint = predict_color(flow_predictor, hint, sample.action_text)
		return sample_next_obs(network, schedule, sample.x_t.rgb,
							   sample.action_text, hint, steps, seed)
	return generate


def run_image_eval(generators: dict, samples: list,
				   encoder: FeatureAutoencoder, seed: int=0) -> list:
	"""Generates the next observation of every sample with every model and
	records its features and its motion-correctness verdict.

	Parameters
	----------
	generators: dict -- model name to (sample, seed) -> image callables,
	in report order
	samples: list -- the validation samples, non-empty
	encoder: FeatureAutoencoder -- the frozen feature encoder
	seed: int -- base generation seed (default 0)

	Returns: list -- one record per (model, sample); failed generations
	carry the error and no features
	"""
	if not samples:
		raise EvaluationError('the validation split is empty')
	reference = encode_images([s.x_next.rgb for s in samples], encoder)

	records = []
	for name, generate in generators.items():
		pending = []
		for idx, sample in enumerate(samples):
			record = {'model': name, 'index': idx, 'path': sample.path,
					  'reference': reference[idx].tolist(),
					  'generated': None, 'correct': None, 'error': None}
			records.append(record)
			try:
				image = generate(sample, seed + idx)
			except (EgohomeError, RuntimeError, ValueError) as err:
				logger.warning('%s failed on %s: %s', name, sample.path, err)
				record['error'] = str(err)
				continue

			verb, _ = parse_phrase(sample.action_text)
			record['correct'] = motion_correctness(sample.x_t.rgb, image,
												   sample.flow, verb)
			pending.append((record, image))

		features = encode_images([img for _, img in pending], encoder)
		for (record, _), feature in zip(pending, features):
			record['generated'] = feature.tolist()
		logger.info('%s: %d of %d generations succeeded', name, len(pending),
					len(samples))
	return records


def _ordered_keys(records: list, field: str) -> list:
	keys = []
	for record in records:
		if record[field] not in keys:
			keys.append(record[field])
	return keys


def image_rows(records: list, resamples: int=10, seed: int=0) -> list:
	"""Rebuilds the per-model metric rows: Fréchet proxy and correctness
	rate as mean and variance over bootstrap resamples of the samples.

	Returns: list -- MetricRow records in model order
	"""
	rows = []
	for model in _ordered_keys(records, 'model'):
		items = [r for r in records if r['model'] == model]
		done = [r for r in items if r['generated'] is not None]
		failures = len(items) - len(done)

		frechet = (float('nan'), float('nan'))
		if len(done) >= 2:
			gen = np.array([r['generated'] for r in done])
			ref = np.array([r['reference'] for r in done])
			frechet = _spread(bootstrap(
				lambda idx: frechet_distance(feature_stats(gen[idx]),
											 feature_stats(ref[idx])),
				len(done), resamples, seed))

		verdicts = [r['correct'] for r in done if r['correct'] is not None]
		correctness = (float('nan'), float('nan'))
		if verdicts:
			hits = np.array(verdicts, dtype=np.float64)
			correctness = _spread(bootstrap(lambda idx: hits[idx].mean(),
											len(hits), resamples, seed))

		rows.append(MetricRow(model, frechet[0], frechet[1], correctness[0],
							  correctness[1], len(done) - len(verdicts),
							  failures))
	return rows


def _valid_everywhere(flow):
	return flow._replace(valid=np.ones(np.shape(flow.u), dtype=bool))


def run_flow_eval(samples: list, flow_predictor, max_mag: float,
				  setting: str='validation', limit: int=None) -> list:
	"""Measures, per sample, the AEE of the predicted current flow and of
	the previous flow used as the prediction, both over the ground truth's
	valid pixels.

	Returns: list -- one record per sample
	"""
	records = []
	for sample in samples[:limit]:
		record = {'setting': setting, 'path': sample.path,
				  'predicted_aee': None, 'previous_aee': None, 'error': None}
		try:
			predicted = predict_flow(flow_predictor, sample.prev_flow,
									 sample.action_text, max_mag)
			record['predicted_aee'] = flows.aee(_valid_everywhere(predicted),
												sample.flow)
			record['previous_aee'] = flows.aee(
				_valid_everywhere(sample.prev_flow), sample.flow)
		except EgohomeError as err:
			logger.warning('flow pair %s skipped: %s', sample.path, err)
			record['error'] = str(err)
		records.append(record)
	return records


def aee_rows(records: list, resamples: int=1000, seed: int=0) -> list:
	"""Rebuilds the AEE table, one row per setting, with the paired
	bootstrap p-value of predicted < previous.

	Returns: list -- AeeRow records
	"""
	rows = []
	for setting in _ordered_keys(records, 'setting'):
		items = [r for r in records if r['setting'] == setting]
		done = [r for r in items if r['error'] is None]
		if not done:
			rows.append(AeeRow(setting, 0, float('nan'), float('nan'),
							   float('nan'), len(items)))
			continue
		predicted = np.array([r['predicted_aee'] for r in done])
		previous = np.array([r['previous_aee'] for r in done])
		rows.append(AeeRow(setting, len(done), float(predicted.mean()),
						   float(previous.mean()),
						   paired_bootstrap(predicted, previous, resamples,
											seed),
						   len(items) - len(done)))
	return rows


def run_subgoal_quality(records: list, subgoal_model: tuple, matcher,
						steps: int=20, seed: int=0, limit: int=None) -> list:
	"""Scores generated subgoal images with the scripted state predicates,
	next to the true goal images as reference.

	Parameters
	----------
	records: list -- (x_start, goal phrase, x_goal) triples
	subgoal_model: tuple -- (Denoiser, NoiseSchedule)
	matcher: ScriptedMatcher -- the predicate scorer
	steps: int -- sampling steps (default 20)
	seed: int -- base sampler seed (default 0)
	limit: int -- records to use, every one when None (default None)

	Returns: list -- one record per triple with an object
	"""
	network, schedule = subgoal_model
	results = []
	for idx, (start, goal, target) in enumerate(records[:limit]):
		spec = parse_subgoal(goal)
		if spec.noun is None:
			continue
		record = {'verb': spec.verb, 'goal': goal, 'generated_score': None,
				  'reference_score': matcher.predicate(target, spec),
				  'error': None}
		try:
			image = sample_subgoal_image(network, schedule, start, goal,
										 steps, seed + idx)
			record['generated_score'] = matcher.predicate(image, spec)
		except (EgohomeError, RuntimeError, ValueError) as err:
			logger.warning('subgoal image of %r failed: %s', goal, err)
			record['error'] = str(err)
		results.append(record)
	return results


def quality_rows(records: list, threshold: float=0.8) -> list:
	"""Rebuilds the per-verb rate at which subgoal images satisfy their
	predicate.

	Returns: list -- QualityRow records in verb order
	"""
	rows = []
	for verb in PHRASE_VERBS:
		items = [r for r in records if r['verb'] == verb]
		if not items:
			continue
		done = [r for r in items if r['generated_score'] is not None]
		generated = np.mean([r['generated_score'] >= threshold
							 for r in done]) if done else float('nan')
		reference = np.mean([r['reference_score'] >= threshold
							 for r in items])
		rows.append(QualityRow(verb, len(items), float(generated),
							   float(reference), len(items) - len(done)))
	return rows


def episode_seed(seed: int, task: int, episode: int) -> int:
	return int(np.random.default_rng([int(seed), int(task),
									  int(episode)]).integers(2 ** 31))


def run_task_eval(methods: list, tasks: list, episodes_per_task: int=100,
				  seed: int=0, layout=DEFAULT_LAYOUT, style=DEFAULT_STYLE,
				  renderer=DEFAULT_RENDERER, max_steps: int=80,
				  sample_steps: int=20, on_record=None) -> list:
	"""Runs every method on every task. Episode e of a task is set in the
	same house with the same spawn for every method. Crashing episodes are
	recorded as failures.

	Parameters
	----------
	methods: list -- TaskMethod records
	tasks: list -- Task records
	episodes_per_task: int -- episodes per (method, task) (default 100)
	seed: int -- base seed of houses, spawns and planners (default 0)
	layout: LayoutConfig -- house layout (default DEFAULT_LAYOUT)
	style: StyleParams -- rendering style (default DEFAULT_STYLE)
	renderer: RaycastRenderer -- the renderer (default 64x64)
	max_steps: int -- step cap of an episode (default 80)
	sample_steps: int -- subgoal-image sampling steps (default 20)
	on_record: callable -- receives every episode record as it completes
	(default None)

	Returns: list -- one record per episode
	"""
	records = []
	for method in methods:
		for task in tasks:
			successes = 0
			for episode in range(episodes_per_task):
				record = {'method': method.name, 'task': task.uid,
						  'rooms': task.rooms, 'episode': episode,
						  'seed': episode_seed(seed, task.uid, episode),
						  'house': None, 'success': False, 'steps_taken': 0,
						  'completions': [], 'steps': [], 'error': None}
				try:
					env = find_environment(task, episode, seed, layout,
										   style, renderer)
					record['house'] = env.state.house_id
					config = EpisodeConfig(method.subgoal_mode, max_steps,
										   record['seed'], sample_steps,
										   'grammar')
					result = run_episode(env, task.instruction, method.policy,
										 method.matcher, config,
										 method.subgoal_model)
				except (EgohomeError, RuntimeError, ValueError) as err:
					logger.warning('%s crashed on task %d episode %d: %s',
								   method.name, task.uid, episode, err)
					record['error'] = str(err)
				else:
					record.update(success=bool(result.success),
								  steps_taken=result.steps_taken,
								  completions=result.completions,
								  steps=[s._asdict() for s in result.steps],
								  error=result.error)
				successes += int(record['success'])
				records.append(record)
				if on_record is not None:
					on_record(record)
			logger.info('%s on task %d: %d/%d', method.name, task.uid,
						successes, episodes_per_task)
	return records


def success_rows(records: list, confidence: float=0.95) -> list:
	"""Rebuilds the success-rate table, one row per (method, task), with
	Clopper-Pearson intervals.

	Returns: list -- SuccessRow records
	"""
	rows = []
	for method in _ordered_keys(records, 'method'):
		mine = [r for r in records if r['method'] == method]
		for task in _ordered_keys(mine, 'task'):
			items = [r for r in mine if r['task'] == task]
			wins = sum(1 for r in items if r['success'])
			low, high = binomial_interval(wins, len(items), confidence)
			rows.append(SuccessRow('{0}/task_{1}'.format(method, task),
								   method, task, len(items), wins,
								   wins / float(len(items)), low, high))
	return rows


def mean_success(rows: list, method: str, task_uids: list) -> float:
	"""Mean success rate of a method over the given tasks, nan when the
	method did not run on them.
	"""
	rates = [r.rate for r in rows if r.method == method
			 and r.task in set(task_uids)]
	return float(np.mean(rates)) if rates else float('nan')


def ordering_line(metric: str, values: dict, order: list,
				  lower_is_better: bool=True, tie_pairs: tuple=()) -> tuple:
	"""Checks that named results are ordered best first. A strict gap must
	exceed the combined bootstrap standard deviation of the pair; a pair in
	tie_pairs may also be statistically flat.

	Parameters
	----------
	metric: str -- metric label
	values: dict -- name to (mean, variance)
	order: list -- names, best first
	lower_is_better: bool -- direction of the metric (default True)
	tie_pairs: tuple -- (better, worse) name pairs allowed to tie
	(default ())

	Returns: tuple -- (passed bool, report line)
	"""
	missing = [n for n in order if n not in values
			   or not np.isfinite(values[n][0])]
	if missing:
		return False, 'FAIL {0}: missing {1}'.format(metric,
													 ', '.join(missing))

	passed, parts = True, ['{0} {1:.4g}'.format(order[0], values[order[0]][0])]
	for better, worse in zip(order, order[1:]):
		(m_b, v_b), (m_w, v_w) = values[better], values[worse]
		gap = (m_w - m_b) if lower_is_better else (m_b - m_w)
		spread = math.sqrt(max(v_b, 0.0) + max(v_w, 0.0))
		tie = (better, worse) in tie_pairs
		passed &= gap >= -spread if tie else gap > spread
		symbol = ('<' if lower_is_better else '>') + ('=' if tie else '')
		parts.append('{0} {1} {2:.4g}'.format(symbol, worse, m_w))
	return passed, '{0} {1}: {2}'.format('PASS' if passed else 'FAIL', metric,
										 ' '.join(parts))
