"""The requesters module holds the client of the optional chat-completion
endpoint used as a large multimodal model backend for subgoal decomposition
and candidate ranking.

Classes: LmmRequester

Functions: encode_image
"""

import base64
import io
import json
import logging
import os
import re

import numpy as np
import requests
from PIL import Image
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from .errors import ConfigError, LmmAuthError, LmmParseError, \
	LmmTransportError


logger = logging.getLogger(__name__)

ENDPOINT_VARIABLE = 'EGOHOME_LMM_ENDPOINT'
KEY_VARIABLE = 'EGOHOME_LMM_KEY'

STATUS_LIST = [429, 500, 502, 503, 504]
AUTH_STATUS = (401, 403)

RANK_TEMPLATE = (
	'You control a household robot. The active subgoal is: "{0}". Each '
	'numbered image shows the outcome of one candidate action: {1}. Rank '
	'the candidates from closest to farthest from the subgoal. Reply with '
	'the candidate numbers only, comma separated.'
)

DECOMPOSE_TEMPLATE = (
	'Decompose the household instruction "{0}" into short subgoals, one per '
	'line, each of the form "<verb> the <object>".'
)


def encode_image(rgb: np.ndarray) -> str:
	"""Encodes an H x W x 3 image, uint8 or in [0, 1], as a base64 PNG."""
	rgb = np.asarray(rgb)
	if rgb.dtype != np.uint8:
		rgb = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
	buffer = io.BytesIO()
	Image.fromarray(rgb, mode='RGB').save(buffer, format='PNG')
	return base64.b64encode(buffer.getvalue()).decode('ascii')


def _retries_used(res) -> int:
	"""Counts the retries urllib3 recorded on a response."""
	history = getattr(getattr(res.raw, 'retries', None), 'history', None)
	return len(history) if isinstance(history, tuple) else 0


class LmmRequester(object):
	"""The LmmRequester posts chat-completion requests to the endpoint
	configured in the environment.

	Methods: complete, rank, decompose
	"""
	def __init__(self, retry_limit: int=3, backoff_factor: float=1,
				 timeout: float=30, endpoint: str=None, key: str=None):
		"""LmmRequester's constructor. Creates a retry object to control
		the number of attempts when the endpoint is unavailable.

		Parameters
		----------
		retry_limit: int -- number of retries on connection failures and
		on statuses in STATUS_LIST (default 3)
		backoff_factor: float -- base wait in seconds between retries, grown
		on each failure (default 1)
		timeout: float -- seconds before a request is abandoned (default 30)
		endpoint: str -- the endpoint URL, EGOHOME_LMM_ENDPOINT when None
		(default None)
		key: str -- the credential, EGOHOME_LMM_KEY when None (default None)

		Throws ConfigError
		"""
		self.endpoint = endpoint or os.environ.get(ENDPOINT_VARIABLE)
		self.key = key or os.environ.get(KEY_VARIABLE)
		if not self.endpoint:
			raise ConfigError('the lmm backend needs {0} to be set'.format(
				ENDPOINT_VARIABLE))

		self.retry_limit = retry_limit
		self.timeout = timeout
		self._retries = Retry(total=retry_limit, backoff_factor=backoff_factor,
							  status_forcelist=STATUS_LIST,
							  allowed_methods=None,
							  raise_on_status=False)

	def complete(self, content: list) -> str:
		"""Posts one user message and returns the reply text.

		Parameters
		----------
		content: list -- chat content parts (text and image_url entries)

		Returns: str -- the first choice's message content

		A transport error reports the retries urllib3 recorded for a failed
		status, and the full retry_limit once connection attempts are
		exhausted.

		Throws LmmTransportError, LmmAuthError, LmmParseError
		"""
		headers = {'Content-Type': 'application/json'}
		if self.key:
			headers['Authorization'] = 'Bearer {0}'.format(self.key)
		payload = {'messages': [{'role': 'user', 'content': content}],
				   'temperature': 0}

		session = requests.Session()
		session.mount('http://', HTTPAdapter(max_retries=self._retries))
		session.mount('https://', HTTPAdapter(max_retries=self._retries))
		try:
			res = session.post(self.endpoint, headers=headers,
							   data=json.dumps(payload), timeout=self.timeout)
		except requests.RequestException as err:
			raise LmmTransportError(
				'the lmm endpoint could not be reached: {0}'.format(err),
				self.retry_limit)
		finally:
			session.close()

		if res.status_code in AUTH_STATUS:
			raise LmmAuthError('the lmm endpoint rejected the credential '
							   '(status {0})'.format(res.status_code))
		if res.status_code >= 400:
			raise LmmTransportError('the lmm endpoint answered status '
									'{0}'.format(res.status_code),
									_retries_used(res))
		try:
			return res.json()['choices'][0]['message']['content']
		except (ValueError, KeyError, IndexError, TypeError) as err:
			raise LmmParseError('malformed lmm reply: {0}'.format(err))

	def rank(self, subgoal: str, candidates: list, images: list) -> list:
		"""Asks the endpoint to rank candidate outcomes against a subgoal.

		Parameters
		----------
		subgoal: str -- the active subgoal text
		candidates: list -- candidate labels, one per image
		images: list -- the imagined outcomes

		Returns: list -- candidate indices, best first, each exactly once

		Throws LmmTransportError, LmmAuthError, LmmParseError
		"""
		labels = ', '.join('{0}: {1}'.format(i + 1, c)
						   for i, c in enumerate(candidates))
		content = [{'type': 'text',
					'text': RANK_TEMPLATE.format(subgoal, labels)}]
		content += [{'type': 'image_url', 'image_url': {
			'url': 'data:image/png;base64,{0}'.format(encode_image(img))}}
			for img in images]

		reply = self.complete(content)
		order = [int(x) - 1 for x in re.findall(r'\d+', reply)]
		if sorted(order) != list(range(len(candidates))):
			raise LmmParseError('reply {0!r} is not a ranking of {1} '
								'candidates'.format(reply, len(candidates)))
		return order

	def decompose(self, instruction: str) -> list:
		"""Asks the endpoint to decompose an instruction into subgoals.

		Returns: list -- the subgoal texts

		Throws LmmTransportError, LmmAuthError, LmmParseError
		"""
		reply = self.complete([{'type': 'text', 'text':
								DECOMPOSE_TEMPLATE.format(instruction)}])
		lines = [re.sub(r'^[\s\-\*\d\.\)]+', '', x).strip()
				 for x in reply.splitlines()]
		subgoals = [x for x in lines if x]
		if not subgoals:
			raise LmmParseError('empty decomposition reply')
		return subgoals
