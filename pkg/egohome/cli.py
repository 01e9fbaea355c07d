"""The cli module is egohome's command line front-end. Every subcommand reads
the layered run configuration, checks its prerequisites and skips work whose
outputs already carry the same config echo.

	egohome [--config FILE] [--set section.key=value ...] <subcommand>

Exit codes: 0 success, 1 invariant or evaluation failure, 2 usage or
configuration error.

Functions: build_parser, main
"""

import argparse
import json
import logging
import os
import sys
from os.path import isfile, join

from . import adapters, datasets, dynamics, evaluation, houses, planners, \
	predictors, reports
from .config import default_config_path, load_run_config
from .errors import ConfigError, EgohomeError, MissingArtifactError
from .matchers import LmmMatcher, OracleMatcher, ScriptedMatcher
from .renderers import RaycastRenderer
from .requesters import LmmRequester
from .runlogs import append_record, write_records
from .version import __version__


logger = logging.getLogger('egohome')

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

RESTYLE_SEED_OFFSET = 1000
FEATURE_IMAGES = 2000

METHODS = ('oracle', 'random', 'greedy_text', 'dynamics_none',
		   'dynamics_previous', 'dynamics_predicted',
		   'dynamics_predicted_image')

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def _checkpoint(run, name: str) -> str:
	return join(run.path('checkpoints'), name + '.pt')


def _stamp_path(path: str) -> str:
	return path + '.stamp'


def _stamp(run, **extra) -> str:
	return json.dumps(dict(extra, echo=run.echo()), sort_keys=True)


def _is_current(path: str, stamp: str) -> bool:
	"""Tells whether an output exists and was written under the same
	stamp.
	"""
	if not isfile(path) or not isfile(_stamp_path(path)):
		return False
	with open(_stamp_path(path), encoding='utf-8') as handle:
		return handle.read() == stamp


def _mark(path: str, stamp: str):
	with open(_stamp_path(path), 'w', encoding='utf-8') as handle:
		handle.write(stamp)


def _save_curve(run, name: str, curve: list):
	write_records(reports.curve_path(run.path('reports'), name),
				  [p._asdict() for p in curve])


def _manifest(run):
	return datasets.read_manifest(run.path('dataset'))


def _restyle(run):
	section = run.section('restyle')
	return houses.shifted_style(_base_style(run),
								float(section.get('hue_shift', 0.35)),
								float(section.get('texture_noise', 0.6)),
								float(section.get('motion_scale', 1.5)))


def _base_style(run):
	return houses.style_from_mapping(run.section('style'))


def _restyled_root(run) -> str:
	return run.path('dataset').rstrip('/\\') + '_restyled'


def _restyled_config(run):
	"""Dataset settings of the restyled environment: [restyle] houses
	training houses plus one held-out house, new layouts, no navigation
	records.
	"""
	config = datasets.dataset_config(run, _restyled_root(run), _restyle(run))
	return config._replace(
		houses=int(run.section('restyle').get('houses', 2)) + 1,
		validation_houses=1, navigation_records=0,
		seed=run.seed + RESTYLE_SEED_OFFSET)


def _restyled_manifest(run):
	return datasets.read_manifest(_restyled_root(run))


def _samples(manifest, split: str, limit: int=None) -> list:
	samples = datasets.SampleReader(manifest).samples(split)
	if not samples:
		raise EgohomeError('the {0} split of {1} is empty'.format(
			split, manifest.root))
	return samples[:limit]


def _renderer(run):
	section = run.section('dataset')
	return RaycastRenderer(tuple(section.get('resolution', (64, 64))))


def gen_data(run, args) -> int:
	if args.restyled:
		config = _restyled_config(run)
	else:
		config = datasets.dataset_config(run)
	manifest = datasets.generate_dataset(config._replace(workers=args.workers))
	logger.info('%s: %d training and %d validation trajectories',
				manifest.root, len(manifest.splits['train']),
				len(manifest.splits['validation']))
	return EXIT_OK


def train_flowpred(run, args) -> int:
	path = _checkpoint(run, 'flowpred')
	stamp = _stamp(run, command='train-flowpred')
	if _is_current(path, stamp) and not args.force:
		logger.info('%s is up to date', path)
		return EXIT_OK

	manifest = _manifest(run)
	config = predictors.flowpred_config(run.section('flowpred'))
	data = datasets.FlowPairDataset(_samples(manifest, 'train'),
									manifest.max_mag)
	model, curve = predictors.train_flow_predictor(data, config, run.seed)
	predictors.save_flow_predictor(path, model, run.echo(), manifest.max_mag)
	_save_curve(run, 'flowpred', curve)
	_mark(path, stamp)
	return EXIT_OK


def train_dynamics_command(run, args) -> int:
	source = args.flow_source if args.flow_control else 'none'
	path = _checkpoint(run, 'dynamics_' + source)
	stamp = _stamp(run, command='train-dynamics', flow_source=source)
	if _is_current(path, stamp) and not args.force:
		logger.info('%s is up to date', path)
		return EXIT_OK

	manifest = _manifest(run)
	config = dynamics.dynamics_config(run.section('dynamics'))
	data = datasets.TransitionDataset(_samples(manifest, 'train'),
									  manifest.max_mag, source)
	network, schedule = None, None
	if source != 'none':
		network, schedule, _ = dynamics.load_denoiser(
			_checkpoint(run, 'dynamics_none'))
		dynamics.attach_control_branch(network)

	network, schedule, curve = dynamics.train_dynamics(
		data, config, run.seed, network, schedule)
	dynamics.save_denoiser(path, network, schedule, run.echo(), 'dynamics',
						   source)
	_save_curve(run, 'dynamics_' + source, curve)
	_mark(path, stamp)
	return EXIT_OK


def train_subgoal(run, args) -> int:
	path = _checkpoint(run, 'subgoal')
	stamp = _stamp(run, command='train-subgoal')
	if _is_current(path, stamp) and not args.force:
		logger.info('%s is up to date', path)
		return EXIT_OK

	manifest = _manifest(run)
	records = datasets.subgoal_records(manifest, 'train')
	if not records:
		raise EgohomeError('no subgoal record in ' + manifest.root)
	config = dynamics.dynamics_config(run.section('subgoal'),
									  dynamics.dynamics_config(
										  run.section('dynamics')))
	network, schedule, curve = dynamics.train_subgoal_model(
		datasets.SubgoalDataset(records), config, run.seed)
	dynamics.save_denoiser(path, network, schedule, run.echo(), 'subgoal')
	_save_curve(run, 'subgoal', curve)
	_mark(path, stamp)
	return EXIT_OK


def adapt_lora(run, args) -> int:
	path = _checkpoint(run, 'lora')
	stamp = _stamp(run, command='adapt-lora')
	if _is_current(path, stamp) and not args.force:
		logger.info('%s is up to date', path)
		return EXIT_OK

	manifest = datasets.generate_dataset(_restyled_config(run))
	section = run.section('lora')
	network, schedule, _ = dynamics.load_denoiser(
		_checkpoint(run, 'dynamics_current'))
	targets = tuple(section.get('targets', adapters.DEFAULT_TARGETS))
	adapters.inject_lora(network, int(section.get('rank', 4)),
						 float(section.get('alpha', 8.0)), targets)

	samples = _samples(manifest, 'train', int(section.get('samples', 50)))
	data = datasets.TransitionDataset(samples, manifest.max_mag, 'current')
	params, curve = adapters.finetune_lora(
		network, data, schedule, int(section.get('steps', 100)),
		int(section.get('batch_size', 8)), float(section.get('lr', 1e-3)),
		seed=run.seed)
	adapters.save_lora(path, params, targets, run.echo())
	_save_curve(run, 'lora', curve)
	_mark(path, stamp)
	return EXIT_OK


def _feature_encoder(run, manifest):
	path = _checkpoint(run, 'features')
	stamp = _stamp(run, command='features')
	if _is_current(path, stamp):
		return evaluation.load_feature_encoder(path)

	section = run.section('eval')
	images = [s.x_next.rgb
			  for s in _samples(manifest, 'train', FEATURE_IMAGES)]
	model, curve = evaluation.train_feature_encoder(
		images, int(section.get('feature_dim', 64)),
		int(section.get('feature_epochs', 10)), seed=run.seed)
	evaluation.save_feature_encoder(path, model, run.echo())
	_save_curve(run, 'features', curve)
	_mark(path, stamp)
	return model


def _dynamics_models(run) -> tuple:
	"""Loads the three trained dynamics checkpoints, keyed by the flow they
	were trained with, and the flow predictor.
	"""
	models = {}
	for source in ('none', 'previous', 'current'):
		network, schedule, _ = dynamics.load_denoiser(
			_checkpoint(run, 'dynamics_' + source))
		models[source] = (network, schedule)
	flowpred, _ = predictors.load_flow_predictor(_checkpoint(run, 'flowpred'))
	return models, flowpred


def eval_images(run, args) -> int:
	logs = run.path('reports')
	target = reports.log_path(logs, 'image_eval')
	stamp = _stamp(run, command='eval-images')
	if _is_current(target, stamp) and not args.force:
		logger.info('%s is up to date', target)
		return EXIT_OK

	manifest = _manifest(run)
	section = run.section('eval')
	steps = int(run.section('dynamics').get('sample_steps', 50))
	encoder = _feature_encoder(run, manifest)
	models, flowpred = _dynamics_models(run)
	max_mag = manifest.max_mag

	generators = {
		'ground_truth': evaluation.ground_truth_generator(),
		'noise': evaluation.noise_generator(),
		'dynamics_none': evaluation.dynamics_generator(
			*models['none'], 'none', None, max_mag, steps),
		'dynamics_previous': evaluation.dynamics_generator(
			*models['previous'], 'previous', None, max_mag, steps),
		'dynamics_predicted': evaluation.dynamics_generator(
			*models['current'], 'predicted', flowpred, max_mag, steps)
	}
	samples = _samples(manifest, 'validation',
					   int(section.get('image_samples', 200)))
	write_records(target, evaluation.run_image_eval(generators, samples,
													encoder, run.seed))

	subgoal_path = _checkpoint(run, 'subgoal')
	if isfile(subgoal_path):
		network, schedule, _ = dynamics.load_denoiser(subgoal_path,
													  'train-subgoal')
		records = datasets.subgoal_records(manifest, 'validation')
		write_records(reports.log_path(logs, 'subgoal_quality'),
					  evaluation.run_subgoal_quality(
						  records, (network, schedule),
						  ScriptedMatcher(_base_style(run)),
						  int(run.section('planner').get('sample_steps', 20)),
						  run.seed, int(section.get('image_samples', 200))))
	else:
		logger.warning('no subgoal model, subgoal image quality skipped')

	lora_path = _checkpoint(run, 'lora')
	if isfile(lora_path):
		restyled = _restyled_manifest(run)
		base = models['current']
		adapted, schedule, _ = dynamics.load_denoiser(
			_checkpoint(run, 'dynamics_current'))
		adapters.load_lora(lora_path, adapted)
		restyle_generators = {
			'base': evaluation.dynamics_generator(
				*base, 'predicted', flowpred, max_mag, steps),
			'lora': evaluation.dynamics_generator(
				adapted, schedule, 'predicted', flowpred, max_mag, steps)
		}
		write_records(reports.log_path(logs, 'restyle_eval'),
					  evaluation.run_image_eval(
						  restyle_generators,
						  _samples(restyled, 'validation',
								   int(section.get('image_samples', 200))),
						  encoder, run.seed))
	else:
		logger.warning('no adapted model, restyled evaluation skipped')

	_mark(target, stamp)
	return EXIT_OK


def eval_flow(run, args) -> int:
	target = reports.log_path(run.path('reports'), 'flow_eval')
	stamp = _stamp(run, command='eval-flow')
	if _is_current(target, stamp) and not args.force:
		logger.info('%s is up to date', target)
		return EXIT_OK

	manifest = _manifest(run)
	flowpred, _ = predictors.load_flow_predictor(_checkpoint(run, 'flowpred'))
	limit = int(run.section('eval').get('flow_pairs', 500))
	records = evaluation.run_flow_eval(_samples(manifest, 'validation'),
									   flowpred, manifest.max_mag,
									   'validation', limit)
	try:
		restyled = _restyled_manifest(run)
	except MissingArtifactError:
		logger.warning('no restyled dataset, restyled flow pairs skipped')
	else:
		records += evaluation.run_flow_eval(
			_samples(restyled, 'validation'), flowpred, restyled.max_mag,
			'restyled', limit)

	write_records(target, records)
	_mark(target, stamp)
	return EXIT_OK


def _methods(run, names: list, style, navigation: bool=False) -> list:
	"""Builds the TaskMethod records of the requested methods, loading only
	the checkpoints they need.
	"""
	planner = run.section('planner')
	threshold = float(planner.get('done_threshold', 0.8))
	steps = int(planner.get('sample_steps', 20))
	scripted = ScriptedMatcher(style, threshold)

	def world_model(source: str, network=None):
		loaded, schedule, _ = dynamics.load_denoiser(_checkpoint(
			run, 'dynamics_' + ('current' if source == 'predicted'
								else source)))
		flowpred = None
		if source == 'predicted':
			flowpred, _ = predictors.load_flow_predictor(
				_checkpoint(run, 'flowpred'))
		return planners.DiffusionWorldModel(network or loaded, schedule,
											source, flowpred,
											_manifest(run).max_mag, steps)

	methods = []
	for name in names:
		if name == 'oracle':
			oracle = OracleMatcher()
			policy = planners.OneStepPolicy(
				planners.SimulatorWorldModel(_renderer(run)), oracle)
			methods.append(evaluation.TaskMethod(name, policy, oracle, 'text',
												 None))
		elif name == 'random':
			methods.append(evaluation.TaskMethod(
				name, planners.RandomPolicy(), scripted, 'text', None))
		elif name == 'greedy_text':
			methods.append(evaluation.TaskMethod(
				name, planners.GreedyTextPolicy(), scripted, 'text', None))
		elif name == 'dynamics_predicted_image':
			network, schedule, _ = dynamics.load_denoiser(
				_checkpoint(run, 'subgoal'), 'train-subgoal')
			policy = planners.OneStepPolicy(world_model('predicted'),
											scripted)
			methods.append(evaluation.TaskMethod(name, policy, scripted,
												 'image',
												 (network, schedule)))
		else:
			source = name[len('dynamics_'):]
			policy = planners.OneStepPolicy(world_model(source), scripted)
			methods.append(evaluation.TaskMethod(name, policy, scripted,
												 'text', None))

	if navigation and isfile(_checkpoint(run, 'lora')):
		network, _, _ = dynamics.load_denoiser(
			_checkpoint(run, 'dynamics_current'))
		adapters.load_lora(_checkpoint(run, 'lora'), network)
		policy = planners.OneStepPolicy(world_model('predicted', network),
										scripted)
		methods.append(evaluation.TaskMethod('dynamics_predicted_lora',
											 policy, scripted, 'text', None))

	if run.section('lmm').get('enabled', False):
		lmm = run.section('lmm')
		requester = LmmRequester(int(lmm.get('retries', 3)),
								 float(lmm.get('backoff_factor', 1)),
								 float(lmm.get('timeout', 30)))
		matcher = LmmMatcher(requester, scripted, threshold)
		policy = planners.OneStepPolicy(world_model('predicted'), matcher)
		methods.append(evaluation.TaskMethod('dynamics_predicted_lmm',
											 policy, matcher, 'text', None))
	return methods


def _run_task_set(run, args, log: str, tasks_path: str, style,
				  navigation: bool) -> int:
	target = reports.log_path(run.path('reports'), log)
	names = args.methods or list(METHODS)
	planner = run.section('planner')
	episodes = args.episodes or int(planner.get('episodes_per_task', 100))
	stamp = _stamp(run, command='run-tasks', log=log, methods=names,
				   episodes=episodes)
	if _is_current(target, stamp) and not args.force:
		logger.info('%s is up to date', target)
		return EXIT_OK

	methods = _methods(run, names, style, navigation)
	tasks = planners.load_tasks(tasks_path)
	partial = target + '.partial'
	if isfile(partial):
		os.remove(partial)
	records = evaluation.run_task_eval(
		methods, tasks, episodes, run.seed,
		houses.layout_from_mapping(run.section('layout')), style,
		_renderer(run), int(planner.get('max_steps', 80)),
		int(planner.get('sample_steps', 20)),
		on_record=lambda r: append_record(partial, r))
	write_records(target, records)
	os.remove(partial)
	_mark(target, stamp)
	return EXIT_OK


def run_tasks(run, args) -> int:
	status = _run_task_set(run, args, 'task_eval', planners.TASKS_PATH,
						   _base_style(run), False)
	if args.navigation:
		status = max(status, _run_task_set(
			run, args, 'navigation_eval', planners.NAVIGATION_TASKS_PATH,
			_restyle(run), True))
	return status


def report(run, args) -> int:
	section = run.section('eval')
	summary, orderings = reports.build_report(
		run.path('reports'), run.echo(), int(section.get('bootstrap', 10)),
		run.seed)
	for status, line in orderings:
		logger.info(line)
	failed = [line for status, line in orderings if status == 'FAIL']
	if failed and args.strict:
		logger.error('%d ordering checks failed', len(failed))
		return EXIT_FAILURE
	return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
	parser = argparse.ArgumentParser(
		prog='egohome',
		description='World-model planning in a procedurally generated home',
		formatter_class=argparse.ArgumentDefaultsHelpFormatter)
	parser.add_argument('--config', default=default_config_path(),
						help='run configuration file')
	parser.add_argument('--set', dest='overrides', action='append',
						default=[], metavar='SECTION.KEY=VALUE',
						help='override one configuration value')
	parser.add_argument('--log-level', default='INFO',
						choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
	parser.add_argument('--version', action='version', version=__version__)
	commands = parser.add_subparsers(dest='command', required=True)

	def command(name: str, func, text: str, force: bool=True):
		sub = commands.add_parser(
			name, help=text,
			formatter_class=argparse.ArgumentDefaultsHelpFormatter)
		sub.set_defaults(func=func)
		if force:
			sub.add_argument('--force', action='store_true',
							 help='redo the work even when outputs are '
								  'up to date')
		return sub

	sub = command('gen-data', gen_data, 'generate the transition dataset',
				  force=False)
	sub.add_argument('--restyled', action='store_true',
					 help='generate the restyled dataset instead')
	sub.add_argument('--workers', type=int, default=1,
					 help='processes rolling trajectories out in parallel')

	command('train-flowpred', train_flowpred, 'train the flow predictor')

	sub = command('train-dynamics', train_dynamics_command,
				  'train the dynamics model')
	sub.add_argument('--flow-control', action='store_true',
					 help='attach and train the flow control branch')
	sub.add_argument('--flow-source', default='current',
					 choices=['current', 'previous'],
					 help='flow fed to the control branch in training')

	command('train-subgoal', train_subgoal, 'train the subgoal image model')
	command('adapt-lora', adapt_lora,
			'fine-tune low-rank deltas on the restyled dataset')
	command('eval-images', eval_images,
			'evaluate next-observation and subgoal images')
	command('eval-flow', eval_flow, 'compare predicted and previous flow')

	sub = command('run-tasks', run_tasks, 'run the planning tasks')
	sub.add_argument('--methods', nargs='+', choices=METHODS,
					 help='methods to run, every one when omitted')
	sub.add_argument('--episodes', type=int,
					 help='episodes per task, [planner] episodes_per_task '
						  'when omitted')
	sub.add_argument('--navigation', action='store_true',
					 help='also run the navigation tasks in the restyled '
						  'house')

	sub = command('report', report, 'rebuild the report from the run logs',
				  force=False)
	sub.add_argument('--strict', action='store_true',
					 help='exit with 1 when an ordering check fails')
	return parser


def main(argv: list=None) -> int:
	"""Runs one subcommand.

	Parameters
	----------
	argv: list -- the arguments, sys.argv[1:] when None (default None)

	Returns: int -- the exit code
	"""
	args = build_parser().parse_args(argv)
	logging.basicConfig(level=getattr(logging, args.log_level),
						format=LOG_FORMAT)

	try:
		run = load_run_config(args.config, args.overrides)
	except ConfigError as err:
		logger.error('configuration error: %s', err)
		return EXIT_USAGE

	try:
		return args.func(run, args)
	except ConfigError as err:
		logger.error('configuration error: %s', err)
		return EXIT_USAGE
	except EgohomeError as err:
		logger.error('%s failed: %s', args.command, err)
		return EXIT_FAILURE


if __name__ == '__main__':
	sys.exit(main())
