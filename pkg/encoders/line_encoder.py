from abc import ABC, abstractmethod

import numpy as np

from errors import ConfigError
from models import EmbeddingProviderConfig, FeatureConfig, LineContext

from .features import features_from_tokens, stack, tokenize_and_truncate
from .remote_embedding import EmbeddingClient


class LineEncoder(ABC):
  """Turns lines into an N x dim input matrix for the emission projection."""

  kind: str = ''

  @property
  @abstractmethod
  def dim(self) -> int:
    pass

  @abstractmethod
  def encode_note(self, lines: list[str], tokens: list[list[str]] | None = None):
    """Rows for the lines of one note; `tokens` are pre-truncated token lists when the caller has them."""

  @abstractmethod
  def encode_contexts(self, contexts: list[LineContext]):
    """Rows for lines pooled across notes, each keeping its own position."""


class FeatureLinearEncoder(LineEncoder):
  kind = 'feature_linear'

  def __init__(self, config: FeatureConfig):
    self.config = config

  @property
  def dim(self) -> int:
    return self.config.feature_space_size

  def encode_note(self, lines: list[str], tokens: list[list[str]] | None = None):
    if tokens is None:
      tokens = [tokenize_and_truncate(line, self.config.max_tokens) for line in lines]
    n = len(lines)
    return stack([features_from_tokens(t, line, i, n, self.config) for i, (t, line) in enumerate(zip(tokens, lines))], self.dim)

  def encode_contexts(self, contexts: list[LineContext]):
    vectors = [
      features_from_tokens(tokenize_and_truncate(c.text, self.config.max_tokens), c.text, c.position, c.note_length, self.config)
      for c in contexts
    ]
    return stack(vectors, self.dim)


class RemoteEmbeddingEncoder(LineEncoder):
  """Dense line vectors from an embedding endpoint; line position is not used."""
  kind = 'remote_embedding'

  def __init__(self, config: EmbeddingProviderConfig, client: EmbeddingClient | None = None):
    self.config = config
    self._client = client

  @property
  def dim(self) -> int:
    return self.config.embed_dim

  def _embed(self, lines: list[str]) -> np.ndarray:
    if self._client is not None:
      return self._client.embed(lines)
    with EmbeddingClient(self.config) as client:
      return client.embed(lines)

  def encode_note(self, lines: list[str], tokens: list[list[str]] | None = None) -> np.ndarray:
    return self._embed(lines)

  def encode_contexts(self, contexts: list[LineContext]) -> np.ndarray:
    return self._embed([c.text for c in contexts])


def build_encoder(kind: str, features: FeatureConfig, embedding: EmbeddingProviderConfig | None = None) -> LineEncoder:
  if kind == FeatureLinearEncoder.kind:
    return FeatureLinearEncoder(features)
  if kind == RemoteEmbeddingEncoder.kind:
    if embedding is None:
      raise ConfigError('remote_embedding encoder needs an embedding provider config')
    return RemoteEmbeddingEncoder(embedding)
  raise ConfigError(f'unknown encoder kind {kind}')
