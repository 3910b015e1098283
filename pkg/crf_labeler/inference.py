"""
Exact linear-chain inference in log space.

A path y scores start[y_0] + sum_t E[t, y_t] + sum_t T[y_t, y_t+1] + end[y_L-1],
with T[i, j] the score of label j following label i.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from errors import DimensionMismatch, EmptyNote


@dataclass
class TransitionMatrix:
  scores: np.ndarray
  start_scores: np.ndarray
  end_scores: np.ndarray

  def __post_init__(self) -> None:
    self.scores = np.asarray(self.scores, dtype=np.float64)
    self.start_scores = np.asarray(self.start_scores, dtype=np.float64)
    self.end_scores = np.asarray(self.end_scores, dtype=np.float64)
    k = self.start_scores.shape[0]
    if self.scores.shape != (k, k) or self.end_scores.shape != (k,):
      raise DimensionMismatch(f'transition shapes {self.scores.shape}, {self.start_scores.shape}, {self.end_scores.shape}')
    if not all(np.all(np.isfinite(a)) for a in (self.scores, self.start_scores, self.end_scores)):
      raise DimensionMismatch('transition scores must be finite')

  @property
  def num_labels(self) -> int:
    return self.start_scores.shape[0]

  @classmethod
  def zeros(cls, num_labels: int) -> 'TransitionMatrix':
    return cls(np.zeros((num_labels, num_labels)), np.zeros(num_labels), np.zeros(num_labels))


def _check(emissions: np.ndarray, transitions: TransitionMatrix) -> np.ndarray:
  E = np.asarray(emissions, dtype=np.float64)
  if E.ndim != 2 or E.shape[0] == 0:
    raise EmptyNote(f'emissions must be a non-empty L x K matrix, got shape {E.shape}')
  if E.shape[1] != transitions.num_labels:
    raise DimensionMismatch(f'emissions have {E.shape[1]} labels, transitions {transitions.num_labels}')
  return E


def path_score(emissions: np.ndarray, transitions: TransitionMatrix, path) -> float:
  E = _check(emissions, transitions)
  y = np.asarray(path, dtype=np.int64)
  if y.shape != (E.shape[0],):
    raise DimensionMismatch(f'path length {len(y)} != {E.shape[0]} lines')
  score = transitions.start_scores[y[0]] + E[np.arange(len(y)), y].sum() + transitions.end_scores[y[-1]]
  score += transitions.scores[y[:-1], y[1:]].sum()
  return float(score)


def _forward(E: np.ndarray, tr: TransitionMatrix) -> np.ndarray:
  alpha = np.empty_like(E)
  alpha[0] = tr.start_scores + E[0]
  for t in range(1, len(E)):
    alpha[t] = logsumexp(alpha[t - 1][:, None] + tr.scores, axis=0) + E[t]
  return alpha


def _backward(E: np.ndarray, tr: TransitionMatrix) -> np.ndarray:
  beta = np.empty_like(E)
  beta[-1] = tr.end_scores
  for t in range(len(E) - 2, -1, -1):
    beta[t] = logsumexp(tr.scores + (E[t + 1] + beta[t + 1])[None, :], axis=1)
  return beta


def log_partition(emissions: np.ndarray, transitions: TransitionMatrix) -> float:
  E = _check(emissions, transitions)
  return float(logsumexp(_forward(E, transitions)[-1] + transitions.end_scores))


def forward_backward(emissions: np.ndarray, transitions: TransitionMatrix) -> tuple[float, np.ndarray, np.ndarray]:
  """log Z, unary marginals (L x K) and pairwise marginals ((L-1) x K x K)."""
  E = _check(emissions, transitions)
  alpha, beta = _forward(E, transitions), _backward(E, transitions)
  log_z = float(logsumexp(alpha[-1] + transitions.end_scores))
  unary = np.exp(alpha + beta - log_z)
  pairwise = np.exp(
    alpha[:-1, :, None] + transitions.scores[None, :, :] + (E[1:] + beta[1:])[:, None, :] - log_z
  )
  return log_z, unary, pairwise


def viterbi_decode(emissions: np.ndarray, transitions: TransitionMatrix) -> tuple[list[int], float]:
  """Best path and its score; ties go to the lower label index at every backtrack step."""
  E = _check(emissions, transitions)
  L = len(E)
  delta = transitions.start_scores + E[0]
  backptr = np.zeros((L, E.shape[1]), dtype=np.int64)
  for t in range(1, L):
    cand = delta[:, None] + transitions.scores
    backptr[t] = np.argmax(cand, axis=0)
    delta = cand[backptr[t], np.arange(E.shape[1])] + E[t]
  path = [int(np.argmax(delta + transitions.end_scores))]
  for t in range(L - 1, 0, -1):
    path.append(int(backptr[t, path[-1]]))
  path.reverse()
  return path, path_score(E, transitions, path)
