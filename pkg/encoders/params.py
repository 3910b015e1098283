from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from errors import DimensionMismatch
from models import LabelSet

from .features import FeatureVector


@dataclass
class EncoderParams:
  """Per-label projection of a line representation into emission scores."""
  weights: np.ndarray
  label_set: LabelSet
  encoder_kind: str = 'feature_linear'

  def __post_init__(self) -> None:
    self.weights = np.asarray(self.weights, dtype=np.float64)
    if self.weights.ndim != 2 or self.weights.shape[0] != len(self.label_set):
      raise DimensionMismatch(
        f'weights shape {self.weights.shape} does not match {len(self.label_set)} labels in {self.label_set.name}'
      )
    if not np.all(np.isfinite(self.weights)):
      raise DimensionMismatch('weights contain non-finite values')

  @property
  def dim(self) -> int:
    return self.weights.shape[1]

  @classmethod
  def zeros(cls, label_set: LabelSet, dim: int, encoder_kind: str = 'feature_linear') -> 'EncoderParams':
    return cls(np.zeros((len(label_set), dim)), label_set, encoder_kind)


def emission_scores(params: EncoderParams, x) -> np.ndarray:
  """score[y] = dot(weights[y], x) for a FeatureVector or a dense embedding."""
  if isinstance(x, FeatureVector):
    if x.size != params.dim:
      raise DimensionMismatch(f'feature space {x.size} != encoder dim {params.dim}')
    return params.weights[:, x.indices] @ x.values
  x = np.asarray(x, dtype=np.float64)
  if x.shape != (params.dim,):
    raise DimensionMismatch(f'input shape {x.shape} != ({params.dim},)')
  return params.weights @ x


def note_scores(params: EncoderParams, X) -> np.ndarray:
  """L x |labels| emission matrix for a stacked note (CSR rows or dense rows)."""
  if X.shape[1] != params.dim:
    raise DimensionMismatch(f'input dim {X.shape[1]} != encoder dim {params.dim}')
  return np.asarray(X @ params.weights.T)


def classify_scores(scores: np.ndarray) -> tuple[int, np.ndarray]:
  scores = np.asarray(scores, dtype=np.float64)
  return int(np.argmax(scores)), softmax(scores)


def classify_line(params: EncoderParams, x) -> tuple[str, np.ndarray]:
  """Label (lowest index wins ties) and softmax probabilities."""
  index, probs = classify_scores(emission_scores(params, x))
  return params.label_set.label(index), probs
