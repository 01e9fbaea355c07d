"""The flows module holds the optical-flow mathematics shared by the
simulator, the learners and the evaluation harness: a classical pyramidal
Lucas-Kanade estimator, the average endpoint error, the HSV flow color codec,
photometric warping and the raw little-endian plane files flows, depths and
segmentations are stored in.

Functions: to_gray, estimate_flow, aee, flow_to_color, color_to_flow,
zero_flow, warp_image, photometric_error, write_planes, read_planes,
write_flow, read_flow
"""

import logging
import os

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy import ndimage

from .errors import DatasetError, FlowError
from .models import FlowField


logger = logging.getLogger(__name__)

PYRAMID_LEVELS = 3
WINDOW = 5
ITERATIONS = 3
MIN_EIGENVALUE = 1e-5
DEFAULT_MAX_MAG = 8.0

INVALID_VALUE = 0.5
VALID_VALUE_FLOOR = 0.75

HEADER = np.dtype('<i4')

LUMA = np.array([0.299, 0.587, 0.114])


def to_gray(img: np.ndarray) -> np.ndarray:
	"""Converts an rgb or gray image to a float64 gray image."""
	img = np.asarray(img, dtype=np.float64)
	if img.ndim == 3:
		return img @ LUMA
	if img.ndim == 2:
		return img
	raise FlowError('expected a gray or rgb image, got shape {0}'.format(
		img.shape))


def zero_flow(shape: tuple, valid: bool=True) -> FlowField:
	"""Builds a zero flow of the given (H, W) shape."""
	return FlowField(np.zeros(shape, dtype=np.float32),
					 np.zeros(shape, dtype=np.float32),
					 np.full(shape, valid, dtype=bool))


def _pyramid(img: np.ndarray, levels: int) -> list:
	pyramid = [img]
	for _ in range(levels - 1):
		pyramid.append(ndimage.gaussian_filter(pyramid[-1], 1.0)[::2, ::2])
	return pyramid


def _upsample(field: np.ndarray, shape: tuple) -> np.ndarray:
	rows, cols = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
	coords = [(rows + 0.5) / 2.0 - 0.5, (cols + 0.5) / 2.0 - 0.5]
	return 2.0 * ndimage.map_coordinates(field, coords, order=1,
										 mode='nearest')


def _structure(img: np.ndarray, window: int) -> tuple:
	ix = ndimage.sobel(img, axis=1) / 8.0
	iy = ndimage.sobel(img, axis=0) / 8.0
	sxx = ndimage.uniform_filter(ix * ix, window)
	syy = ndimage.uniform_filter(iy * iy, window)
	sxy = ndimage.uniform_filter(ix * iy, window)
	return ix, iy, sxx, syy, sxy


def estimate_flow(img_a: np.ndarray, img_b: np.ndarray,
				  levels: int=PYRAMID_LEVELS, window: int=WINDOW,
				  iterations: int=ITERATIONS,
				  min_eigenvalue: float=MIN_EIGENVALUE) -> FlowField:
	"""Estimates dense flow from img_a to img_b with coarse-to-fine iterative
	Lucas-Kanade. Pixels whose structure tensor has a small eigenvalue are
	flagged invalid.

	Parameters
	----------
	img_a: np.ndarray -- the first image, rgb or gray
	img_b: np.ndarray -- the second image, same shape
	levels: int -- pyramid levels (default 3)
	window: int -- side of the summation window (default 5)
	iterations: int -- refinements per level (default 3)
	min_eigenvalue: float -- local-structure threshold (default 1e-5)

	Returns: FlowField -- the estimate

	Throws FlowError
	"""
	if np.shape(img_a) != np.shape(img_b):
		raise FlowError('image shapes differ: {0} vs {1}'.format(
			np.shape(img_a), np.shape(img_b)))

	pyr_a = _pyramid(to_gray(img_a), levels)
	pyr_b = _pyramid(to_gray(img_b), levels)
	u = np.zeros(pyr_a[-1].shape)
	v = np.zeros(pyr_a[-1].shape)

	for level in reversed(range(levels)):
		a, b = pyr_a[level], pyr_b[level]
		if u.shape != a.shape:
			u, v = _upsample(u, a.shape), _upsample(v, a.shape)

		ix, iy, sxx, syy, sxy = _structure(a, window)
		det = sxx * syy - sxy * sxy
		solvable = np.abs(det) > 1e-12
		safe = np.where(solvable, det, 1.0)
		rows, cols = np.mgrid[0:a.shape[0], 0:a.shape[1]].astype(np.float64)

		for _ in range(iterations):
			warped = ndimage.map_coordinates(b, [rows + v, cols + u], order=1,
											 mode='nearest')
			it = warped - a
			bx = ndimage.uniform_filter(ix * it, window)
			by = ndimage.uniform_filter(iy * it, window)
			u += np.where(solvable, (sxy * by - syy * bx) / safe, 0.0)
			v += np.where(solvable, (sxy * bx - sxx * by) / safe, 0.0)

	half_trace = (sxx + syy) / 2.0
	spread = np.sqrt(((sxx - syy) / 2.0) ** 2 + sxy ** 2)
	valid = (half_trace - spread > min_eigenvalue) & np.isfinite(u) \
		& np.isfinite(v)

	return FlowField(np.where(valid, u, 0.0).astype(np.float32),
					 np.where(valid, v, 0.0).astype(np.float32), valid)


def aee(pred: FlowField, gt: FlowField) -> float:
	"""Average endpoint error over the jointly valid pixels.

	Parameters
	----------
	pred: FlowField -- the predicted flow
	gt: FlowField -- the reference flow

	Returns: float -- the mean Euclidean distance in pixels

	Throws FlowError
	"""
	if np.shape(pred.u) != np.shape(gt.u):
		raise FlowError('flow shapes differ: {0} vs {1}'.format(
			np.shape(pred.u), np.shape(gt.u)))

	mask = np.asarray(pred.valid, dtype=bool) & np.asarray(gt.valid,
														   dtype=bool)
	if not mask.any():
		raise FlowError('no jointly valid pixel')

	du = np.asarray(pred.u, dtype=np.float64) - np.asarray(gt.u,
														   dtype=np.float64)
	dv = np.asarray(pred.v, dtype=np.float64) - np.asarray(gt.v,
														   dtype=np.float64)
	return float(np.mean(np.hypot(du, dv)[mask]))


def flow_to_color(flow: FlowField, max_mag: float=DEFAULT_MAX_MAG
				  ) -> np.ndarray:
	"""Encodes a flow as an 8-bit rgb image. Hue is the direction angle,
	saturation the magnitude clipped at max_mag and value is full. Invalid
	pixels are mid gray.

	Parameters
	----------
	flow: FlowField -- finite flow
	max_mag: float -- magnitude mapped to full saturation (default 8.0)

	Returns: np.ndarray -- H x W x 3 uint8 image
	"""
	u = np.asarray(flow.u, dtype=np.float64)
	v = np.asarray(flow.v, dtype=np.float64)
	valid = np.asarray(flow.valid, dtype=bool)

	hue = np.mod(np.arctan2(v, u), 2.0 * np.pi) / (2.0 * np.pi)
	sat = np.clip(np.hypot(u, v) / max_mag, 0.0, 1.0)
	val = np.ones_like(u)

	hue[~valid], sat[~valid], val[~valid] = 0.0, 0.0, INVALID_VALUE
	rgb = hsv_to_rgb(np.stack([hue, sat, val], axis=-1))
	return np.round(rgb * 255.0).astype(np.uint8)


def color_to_flow(img: np.ndarray, max_mag: float=DEFAULT_MAX_MAG
				  ) -> FlowField:
	"""Decodes an image produced by flow_to_color.

	Parameters
	----------
	img: np.ndarray -- H x W x 3 image, uint8 or floats in [0, 1]
	max_mag: float -- the value used at encoding (default 8.0)

	Returns: FlowField -- the decoded flow
	"""
	img = np.asarray(img)
	if img.dtype == np.uint8:
		img = img.astype(np.float64) / 255.0
	hsv = rgb_to_hsv(np.clip(img.astype(np.float64), 0.0, 1.0))

	valid = hsv[..., 2] >= VALID_VALUE_FLOOR
	mag = hsv[..., 1] * max_mag
	angle = hsv[..., 0] * 2.0 * np.pi
	u = np.where(valid, mag * np.cos(angle), 0.0)
	v = np.where(valid, mag * np.sin(angle), 0.0)
	return FlowField(u.astype(np.float32), v.astype(np.float32), valid)


def warp_image(img_b: np.ndarray, flow: FlowField) -> np.ndarray:
	"""Samples img_b at every pixel displaced by the flow, bilinearly.

	Returns: np.ndarray -- the backward-warped image, same shape as img_b
	"""
	img_b = np.asarray(img_b, dtype=np.float64)
	rows, cols = np.mgrid[0:img_b.shape[0], 0:img_b.shape[1]]
	coords = [rows + np.asarray(flow.v, dtype=np.float64),
			  cols + np.asarray(flow.u, dtype=np.float64)]
	if img_b.ndim == 2:
		return ndimage.map_coordinates(img_b, coords, order=1, mode='nearest')
	return np.stack([ndimage.map_coordinates(img_b[..., ch], coords, order=1,
											 mode='nearest')
					 for ch in range(img_b.shape[2])], axis=-1)


def photometric_error(img_a: np.ndarray, img_b: np.ndarray,
					  flow: FlowField) -> float:
	"""Mean absolute difference between img_a and img_b warped by the flow,
	over the valid pixels.

	Throws FlowError
	"""
	valid = np.asarray(flow.valid, dtype=bool)
	if not valid.any():
		raise FlowError('no valid pixel to compare')
	diff = np.abs(warp_image(img_b, flow) - np.asarray(img_a,
													   dtype=np.float64))
	if diff.ndim == 3:
		diff = diff.mean(axis=2)
	return float(diff[valid].mean())


def write_planes(path: str, planes: list, dtype: str='<f4'):
	"""Writes equally shaped 2-D planes as a little-endian raw file with an
	int32 (H, W) header.
	"""
	height, width = np.shape(planes[0])
	with open(path, 'wb') as f:
		f.write(np.array([height, width], dtype=HEADER).tobytes())
		for plane in planes:
			f.write(np.ascontiguousarray(plane, dtype=dtype).tobytes())


def read_planes(path: str, count: int, dtype: str='<f4') -> list:
	"""Reads a raw plane file written by write_planes.

	Parameters
	----------
	path: str -- the raw file
	count: int -- number of planes expected
	dtype: str -- little-endian plane dtype (default '<f4')

	Returns: list -- the planes in native byte order

	Throws DatasetError
	"""
	if not os.path.isfile(path):
		raise DatasetError('missing artifact file', path)

	with open(path, 'rb') as f:
		raw = f.read()

	if len(raw) < 2 * HEADER.itemsize:
		raise DatasetError('truncated header', path)
	height, width = (int(x) for x in np.frombuffer(raw[:8], dtype=HEADER))
	itemsize = np.dtype(dtype).itemsize
	if height <= 0 or width <= 0 \
			or len(raw) != 8 + count * height * width * itemsize:
		raise DatasetError('truncated or oversized plane file', path)

	data = np.frombuffer(raw[8:], dtype=dtype).reshape(count, height, width)
	return [data[i].astype(np.dtype(dtype).newbyteorder('=')) for i in
			range(count)]


def write_flow(path: str, flow: FlowField):
	"""Writes a flow as u, v and valid float32 planes."""
	write_planes(path, [flow.u, flow.v, np.asarray(flow.valid, np.float32)])


def read_flow(path: str) -> FlowField:
	"""Reads a raw flow file.

	Throws DatasetError
	"""
	u, v, valid = read_planes(path, 3)
	return FlowField(u, v, valid > 0.5)
