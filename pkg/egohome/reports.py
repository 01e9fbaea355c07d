"""The reports module rebuilds the experiment report out of the run logs:
CSV tables through the packers, PNG plots and a markdown summary carrying
the ordering checks and the config echo.

A report directory looks like

	<reports>/logs/*.jsonl         run logs written by the CLI
	<reports>/logs/curves/*.jsonl  training curves
	<reports>/tables/*.csv
	<reports>/plots/*.png
	<reports>/summary.md

Functions: log_path, curve_path, plot_success, plot_curve, plot_metric,
ordering_lines, build_report
"""

import glob
import json
import logging
import math
import os
from os.path import basename, isfile, join, splitext

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np

from . import evaluation
from .models import AeeRow, CurvePoint, MetricRow, QualityRow, SuccessRow
from .packers import CsvPacker, DataFramePacker
from .runlogs import read_records


logger = logging.getLogger(__name__)

LOGS = {
	'image_eval': 'eval-images',
	'restyle_eval': 'eval-images',
	'flow_eval': 'eval-flow',
	'task_eval': 'run-tasks',
	'navigation_eval': 'run-tasks',
	'subgoal_quality': 'eval-images'
}

DYNAMICS_ORDER = ['dynamics_predicted', 'dynamics_previous', 'dynamics_none']
FLAT_PAIR = (('dynamics_predicted', 'dynamics_previous'), )
FULL_STACK = 'dynamics_predicted'
TASK_BASELINES = ('greedy_text', 'dynamics_none')
IMAGE_MODE_SUFFIX = '_image'
LORA_GAIN = 0.2

PNG_METADATA = {'Software': None}


def log_path(reports: str, name: str) -> str:
	return join(reports, 'logs', name + '.jsonl')


def curve_path(reports: str, name: str) -> str:
	return join(reports, 'logs', 'curves', name + '.jsonl')


def _save(fig, path: str) -> str:
	fig.savefig(path, dpi=120, bbox_inches='tight', metadata=PNG_METADATA)
	plt.close(fig)
	return path


def plot_success(rows: list, path: str) -> str:
	"""Draws success rates as grouped bars, one group per task and one bar
	per method, with the binomial intervals as error bars.

	Parameters
	----------
	rows: list -- SuccessRow records
	path: str -- the PNG to be written

	Returns: str -- the path
	"""
	methods = list(dict.fromkeys(r.method for r in rows))
	tasks = sorted(set(r.task for r in rows))
	width = 0.8 / max(len(methods), 1)

	fig, ax = plt.subplots(figsize=(max(6.0, 0.9 * len(tasks) + 2.0), 4.0))
	for i, method in enumerate(methods):
		mine = {r.task: r for r in rows if r.method == method}
		xs = [t + (i - (len(methods) - 1) / 2.0) * width
			  for t in range(len(tasks))]
		rates = [mine[t].rate if t in mine else 0.0 for t in tasks]
		errors = [[mine[t].rate - mine[t].ci_low if t in mine else 0.0
				   for t in tasks],
				  [mine[t].ci_high - mine[t].rate if t in mine else 0.0
				   for t in tasks]]
		ax.bar(xs, rates, width, yerr=errors, capsize=2, label=method)

	ax.set_xticks(range(len(tasks)))
	ax.set_xticklabels(['task {0}'.format(t) for t in tasks], rotation=45)
	ax.set_ylim(0.0, 1.05)
	ax.set_ylabel('success rate')
	ax.legend(fontsize='small')
	return _save(fig, path)


def plot_curve(points: list, title: str, path: str) -> str:
	fig, ax = plt.subplots(figsize=(5.0, 3.5))
	ax.plot([p.epoch for p in points], [p.loss for p in points],
			label='loss')
	if any(p.aux is not None for p in points):
		ax.plot([p.epoch for p in points if p.aux is not None],
				[p.aux for p in points if p.aux is not None], label='aux')
		ax.legend()
	ax.set_xlabel('epoch')
	ax.set_title(title)
	return _save(fig, path)


def plot_metric(rows: list, field: str, path: str) -> str:
	"""Draws one MetricRow statistic per model, with its bootstrap standard
	deviation as error bar.
	"""
	variances = [getattr(r, field.replace('_mean', '_variance')) for r in rows]
	fig, ax = plt.subplots(figsize=(max(5.0, 1.2 * len(rows)), 3.5))
	ax.bar(range(len(rows)), [getattr(r, field) for r in rows],
		   yerr=[math.sqrt(v) if np.isfinite(v) else 0.0 for v in variances],
		   capsize=3)
	ax.set_xticks(range(len(rows)))
	ax.set_xticklabels([r.model for r in rows], rotation=30)
	ax.set_ylabel(field.replace('_', ' '))
	return _save(fig, path)


def _metric_values(rows: list, field: str) -> dict:
	return {r.model: (getattr(r, field + '_mean'),
					  getattr(r, field + '_variance')) for r in rows}


def ordering_lines(image: list=None, flow: list=None, success: list=None,
				   restyle: list=None, single_room: set=None) -> list:
	"""Evaluates the ordering checks the tables support.

	Parameters
	----------
	image: list -- MetricRow records of the dynamics variants (default None)
	flow: list -- AeeRow records (default None)
	success: list -- SuccessRow records (default None)
	restyle: list -- MetricRow records of the base and adapted models on
	restyled data (default None)
	single_room: set -- uids of the single-room tasks, every task when None
	(default None)

	Returns: list -- (status, line) pairs, status being PASS, FAIL or
	FINDING; findings are reported without being enforced
	"""
	lines = []
	if image:
		for field, lower in (('frechet', True), ('correctness', False)):
			passed, text = evaluation.ordering_line(
				field, _metric_values(image, field), DYNAMICS_ORDER, lower,
				FLAT_PAIR)
			lines.append(('PASS' if passed else 'FAIL', text))

	for row in flow or []:
		passed = row.predicted_aee < row.previous_aee \
			and row.p_value < evaluation.SIGNIFICANCE
		lines.append(('PASS' if passed else 'FAIL',
					  '{0} aee ({1}): predicted {2:.4g} < previous {3:.4g}, '
					  'p = {4:.4g}'.format('PASS' if passed else 'FAIL',
										   row.setting, row.predicted_aee,
										   row.previous_aee, row.p_value)))

	if success:
		single = sorted(set(r.task for r in success if r.method == FULL_STACK
							and (single_room is None or r.task in single_room)))
		full = evaluation.mean_success(success, FULL_STACK, single)
		for baseline in TASK_BASELINES:
			other = evaluation.mean_success(success, baseline, single)
			passed = bool(full > other)
			lines.append(('PASS' if passed else 'FAIL',
						  '{0} success: {1} {2:.3f} > {3} {4:.3f}'.format(
							  'PASS' if passed else 'FAIL', FULL_STACK, full,
							  baseline, other)))
		image_mode = evaluation.mean_success(
			success, FULL_STACK + IMAGE_MODE_SUFFIX, single)
		if np.isfinite(image_mode):
			verdict = 'holds' if image_mode >= full else 'reversed'
			lines.append(('FINDING', 'FINDING image subgoals {0:.3f} vs text '
						  'subgoals {1:.3f}: {2}'.format(image_mode, full,
														 verdict)))

	if restyle:
		values = {r.model: r.frechet_mean for r in restyle}
		base, lora = values.get('base', float('nan')), \
			values.get('lora', float('nan'))
		passed = bool(lora <= (1.0 - LORA_GAIN) * base)
		lines.append(('PASS' if passed else 'FAIL',
					  '{0} restyled frechet: lora {1:.4g} <= {2:.0%} of base '
					  '{3:.4g}'.format('PASS' if passed else 'FAIL', lora,
									   1.0 - LORA_GAIN, base)))
	return lines


def _load(reports: str, name: str) -> list:
	path = log_path(reports, name)
	if not isfile(path):
		logger.info('no %s log, section skipped', name)
		return None
	return read_records(path, LOGS[name])


def _frame_text(rows: list, fields: tuple) -> str:
	frame = DataFramePacker(fields).pack(rows)
	return '```\n{0}\n```'.format(frame.to_string(float_format='%.4g'))


def build_report(reports: str, echo: str, resamples: int=10,
				 seed: int=0) -> tuple:
	"""Regenerates tables, plots and summary out of the run logs found in
	the report directory. Running it twice on the same logs writes the same
	files.

	Parameters
	----------
	reports: str -- the report directory
	echo: str -- the config echo to be embedded
	resamples: int -- bootstrap resamples of the metric tables (default 10)
	seed: int -- bootstrap seed (default 0)

	Returns: tuple -- (summary path, list of (status, line) orderings)
	"""
	tables, plots = join(reports, 'tables'), join(reports, 'plots')
	os.makedirs(tables, exist_ok=True)
	os.makedirs(plots, exist_ok=True)
	sections = []

	image = _load(reports, 'image_eval')
	image_rows = None
	if image is not None:
		image_rows = evaluation.image_rows(image, resamples, seed)
		CsvPacker(join(tables, 'image_metrics.csv'),
				  MetricRow._fields).pack(image_rows)
		plot_metric(image_rows, 'frechet_mean', join(plots, 'frechet.png'))
		plot_metric(image_rows, 'correctness_mean',
					join(plots, 'correctness.png'))
		sections.append(('Next-observation quality',
						 _frame_text(image_rows, MetricRow._fields)))

	restyle = _load(reports, 'restyle_eval')
	restyle_rows = None
	if restyle is not None:
		restyle_rows = evaluation.image_rows(restyle, resamples, seed)
		CsvPacker(join(tables, 'restyle_metrics.csv'),
				  MetricRow._fields).pack(restyle_rows)
		sections.append(('Restyled environment',
						 _frame_text(restyle_rows, MetricRow._fields)))

	flow = _load(reports, 'flow_eval')
	flow_rows = None
	if flow is not None:
		flow_rows = evaluation.aee_rows(flow, seed=seed)
		CsvPacker(join(tables, 'flow_aee.csv'), AeeRow._fields).pack(flow_rows)
		sections.append(('Flow prediction',
						 _frame_text(flow_rows, AeeRow._fields)))

	quality = _load(reports, 'subgoal_quality')
	if quality is not None:
		quality_rows = evaluation.quality_rows(quality)
		CsvPacker(join(tables, 'subgoal_quality.csv'),
				  QualityRow._fields).pack(quality_rows)
		sections.append(('Subgoal images',
						 _frame_text(quality_rows, QualityRow._fields)))

	tasks = _load(reports, 'task_eval')
	success, single_room = None, None
	if tasks is not None:
		success = evaluation.success_rows(tasks)
		single_room = set(r['task'] for r in tasks if r.get('rooms', 1) == 1)
		CsvPacker(join(tables, 'success_rates.csv'),
				  SuccessRow._fields).pack(success)
		if success:
			plot_success(success, join(plots, 'success.png'))
		sections.append(('Task success',
						 _frame_text(success, SuccessRow._fields)))

	navigation = _load(reports, 'navigation_eval')
	if navigation is not None:
		restyled = evaluation.success_rows(navigation)
		CsvPacker(join(tables, 'navigation_success.csv'),
				  SuccessRow._fields).pack(restyled)
		if restyled:
			plot_success(restyled, join(plots, 'navigation_success.png'))
		sections.append(('Restyled navigation',
						 _frame_text(restyled, SuccessRow._fields)))

	for path in sorted(glob.glob(join(reports, 'logs', 'curves', '*.jsonl'))):
		name = splitext(basename(path))[0]
		points = [CurvePoint(r['epoch'], r['loss'], r.get('aux'))
				  for r in read_records(path)]
		CsvPacker(join(tables, 'curve_{0}.csv'.format(name)),
				  CurvePoint._fields).pack(points)
		if points:
			plot_curve(points, name, join(plots, 'curve_{0}.png'.format(name)))

	orderings = ordering_lines(image_rows, flow_rows, success, restyle_rows,
							   single_room)
	summary = join(reports, 'summary.md')
	with open(summary, 'w', encoding='utf-8') as handle:
		handle.write('# egohome report\n\n')
		handle.write('Metric means and variances are taken over {0} bootstrap '
					 'resamples (with replacement, seed {1}) of the validation '
					 'samples; the Fréchet proxy of a resample pairs the '
					 'generated and reference images of the same samples. '
					 'Success-rate intervals are exact binomial 95% '
					 'intervals.\n\n'.format(resamples, seed))
		handle.write('## Orderings\n\n')
		for _, line in orderings:
			handle.write('- {0}\n'.format(line))
		if not orderings:
			handle.write('- no ordering could be checked\n')
		for title, body in sections:
			handle.write('\n## {0}\n\n{1}\n'.format(title, body))
		handle.write('\n## Configuration\n\n```json\n{0}\n```\n'.format(
			json.dumps(json.loads(echo), indent=2, sort_keys=True)
			if echo else '{}'))

	logger.info('report written to %s', summary)
	return summary, orderings
