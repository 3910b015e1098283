"""
Hashed sparse line features.

Index 0 is the bias. Every other feature is a namespaced string hashed with
64-bit FNV-1a and reduced modulo the feature space size; a hash landing on 0
is moved to 1. Non-bias weights are L2-normalised so long and short lines
carry the same feature mass.
"""
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix

from errors import ConfigError
from helpers import fnv1a64
from models import FeatureConfig, LineContext

BIAS_INDEX = 0
SHORT_LINE_TOKENS = 4

_TOKEN_RE = re.compile(r'[^\W_]+|[^\w\s]|_')
_ALPHA_RE = re.compile(r'[^\W\d_]+')


@dataclass(frozen=True)
class FeatureVector:
  indices: np.ndarray
  values: np.ndarray
  size: int

  def as_dict(self) -> dict[int, float]:
    return {int(i): float(v) for i, v in zip(self.indices, self.values)}

  def __contains__(self, index: int) -> bool:
    return bool(np.any(self.indices == index))


def tokenize(line: str) -> list[str]:
  return [t.lower() for t in _TOKEN_RE.findall(line)]


def tokenize_and_truncate(line: str, max_tokens: int) -> list[str]:
  if max_tokens < 1:
    raise ConfigError(f'max_tokens must be >= 1, got {max_tokens}')
  return tokenize(line)[:max_tokens]


def feature_index(feature: str, size: int) -> int:
  idx = fnv1a64(feature) % size
  return idx if idx != BIAS_INDEX else 1


def position_bucket(position: int, note_length: int, buckets: int) -> int:
  return min(buckets - 1, position * buckets // max(note_length, 1))


def feature_strings(tokens: list[str], line: str, position: int, note_length: int, config: FeatureConfig) -> list[str]:
  """Namespaced feature strings for one line; empty for a line with no tokens."""
  if not tokens:
    return []
  feats = [f'uni:{t}' for t in tokens]
  feats += [f'bi:{a}|{b}' for a, b in zip(tokens, tokens[1:])]
  text = ' '.join(tokens)
  n = config.char_ngram
  feats += [f'c{n}:{text[i:i + n]}' for i in range(len(text) - n + 1)]
  if line.rstrip().endswith(':'):
    feats.append('flag:ends-colon')
  first_word = _ALPHA_RE.search(line)
  if first_word and len(first_word.group()) > 1 and first_word.group().isupper():
    feats.append('flag:caps-prefix')
  if any(ch.isdigit() for ch in line):
    feats.append('flag:digit')
  if len(tokens) < SHORT_LINE_TOKENS:
    feats.append('flag:short')
  feats.append(f'pos:{position_bucket(position, note_length, config.position_buckets)}')
  return feats


def features_from_tokens(tokens: list[str], line: str, position: int, note_length: int, config: FeatureConfig) -> FeatureVector:
  size = config.feature_space_size
  counts = Counter(feature_index(f, size) for f in feature_strings(tokens, line, position, note_length, config))
  indices = np.array([BIAS_INDEX] + sorted(counts), dtype=np.int64)
  values = np.array([1.0] + [float(counts[i]) for i in sorted(counts)])
  norm = np.linalg.norm(values[1:])
  if norm > 0:
    values[1:] /= norm
  return FeatureVector(indices=indices, values=values, size=size)


def extract_features(line: str, position_in_note: int, note_length: int, config: FeatureConfig) -> FeatureVector:
  if not 0 <= position_in_note < note_length:
    raise ConfigError(f'position {position_in_note} outside note of length {note_length}')
  tokens = tokenize_and_truncate(line, config.max_tokens)
  return features_from_tokens(tokens, line, position_in_note, note_length, config)


def stack(vectors: list[FeatureVector], size: int) -> csr_matrix:
  """Rows of feature vectors as an N x size CSR matrix."""
  indptr = np.zeros(len(vectors) + 1, dtype=np.int64)
  for i, v in enumerate(vectors):
    indptr[i + 1] = indptr[i] + len(v.indices)
  if vectors:
    indices = np.concatenate([v.indices for v in vectors])
    data = np.concatenate([v.values for v in vectors])
  else:
    indices, data = np.zeros(0, dtype=np.int64), np.zeros(0)
  return csr_matrix((data, indices, indptr), shape=(len(vectors), size))


def encode_contexts(contexts: list[LineContext], config: FeatureConfig) -> csr_matrix:
  return stack([extract_features(c.text, c.position, c.note_length, config) for c in contexts], config.feature_space_size)
