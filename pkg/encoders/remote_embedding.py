"""
Embedding endpoint client: POST {base_url}/v1/embeddings.

Endpoint defaults come from .env: SECTIONSEG_API_BASE, SECTIONSEG_API_KEY (optional bearer token).

- EmbeddingClient: one HTTP session, reuse for many batches.
- remote_embed: one-off call for a list of lines.
"""
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import requests

from errors import DimensionMismatch, TransportError
from helpers import get_api_base, get_api_key, post_json, retrying
from models import EmbeddingProviderConfig

logger = logging.getLogger(__name__)

_EMBED_RETRIES = 1
_EMBED_BACKOFF_MS = 200


def build_embedding_request(config: EmbeddingProviderConfig, lines: list[str]) -> dict:
  return {'model': config.model_name, 'input': list(lines)}


class EmbeddingClient:
  """
  Session-backed embedding client. Batches are sent with at most
  `max_in_flight` requests outstanding and re-assembled in input order.
  """

  def __init__(self, config: EmbeddingProviderConfig, api_key: str | None = None):
    self._config = config
    self._url = f'{get_api_base(config.base_url)}/v1/embeddings'
    self._api_key = get_api_key(api_key)
    self._session: requests.Session | None = None

  def connect(self) -> None:
    if self._session is None:
      self._session = requests.Session()

  def close(self) -> None:
    if self._session is not None:
      try:
        self._session.close()
      finally:
        self._session = None

  def __enter__(self) -> 'EmbeddingClient':
    self.connect()
    return self

  def __exit__(self, *args: object) -> None:
    self.close()

  def _request(self, lines: list[str]) -> np.ndarray:
    if self._session is None:
      raise RuntimeError('Not connected. Call connect() or use context manager.')
    body = build_embedding_request(self._config, lines)
    for attempt in retrying(_EMBED_RETRIES, _EMBED_BACKOFF_MS):
      with attempt:
        reply = post_json(self._session, self._url, body, self._config.timeout_ms, self._api_key)
    return self._decode(reply, len(lines))

  def _decode(self, reply: dict, expected: int) -> np.ndarray:
    try:
      items = sorted(reply['data'], key=lambda d: d['index'])
      vectors = [d['embedding'] for d in items]
    except (KeyError, TypeError) as e:
      raise TransportError(f'malformed embedding response: {e}', retryable=False) from None
    if len(vectors) != expected:
      raise TransportError(f'expected {expected} embeddings, got {len(vectors)}', retryable=False)
    dim = self._config.embed_dim
    for i, v in enumerate(vectors):
      if not isinstance(v, list) or len(v) != dim:
        got = len(v) if isinstance(v, list) else type(v).__name__
        raise DimensionMismatch(f'embedding {i}: provider returned dim {got}, expected {dim}')
    try:
      return np.asarray(vectors, dtype=np.float64).reshape(len(vectors), dim)
    except (TypeError, ValueError):
      raise TransportError('embedding values are not numbers', retryable=False) from None

  def embed(self, lines: list[str]) -> np.ndarray:
    if not lines:
      return np.zeros((0, self._config.embed_dim))
    size = self._config.batch_size
    batches = [lines[i:i + size] for i in range(0, len(lines), size)]
    with ThreadPoolExecutor(max_workers=self._config.max_in_flight) as pool:
      parts = list(pool.map(self._request, batches))
    logger.debug('embedded lines=%d batches=%d', len(lines), len(batches))
    return np.vstack(parts)


def remote_embed(config: EmbeddingProviderConfig, lines: list[str], api_key: str | None = None) -> np.ndarray:
  """One vector of length embed_dim per line, in input order."""
  with EmbeddingClient(config, api_key) as client:
    return client.embed(lines)
