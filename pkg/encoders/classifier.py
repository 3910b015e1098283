import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from errors import EmptyTrainingSet, UnknownLabel
from models import ClassifierTrainConfig, LabelSet, LineContext, Note

from .line_encoder import LineEncoder
from .optim import LazyScaledWeights, active_columns
from .params import EncoderParams, note_scores

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
  params: EncoderParams
  loss_trace: list[float] = field(default_factory=list)


def label_indices(labels: list[str], label_set: LabelSet) -> np.ndarray:
  unknown = sorted({l for l in labels if l not in label_set})
  if unknown:
    raise UnknownLabel(f'{unknown[:5]} not in label set {label_set.name}')
  return np.array([label_set.index(l) for l in labels], dtype=np.int64)


def cross_entropy(scores: np.ndarray, y: np.ndarray) -> float:
  return float(np.mean(logsumexp(scores, axis=1) - scores[np.arange(len(y)), y]))


def classifier_loss_and_gradient(weights: np.ndarray, X, y: np.ndarray, l2: float) -> tuple[float, np.ndarray]:
  """Mean cross-entropy + (l2 / 2) * ||W||^2 and its dense gradient."""
  scores = np.asarray(X @ weights.T)
  loss = cross_entropy(scores, y) + 0.5 * l2 * float(np.vdot(weights, weights))
  P = softmax(scores, axis=1)
  P[np.arange(len(y)), y] -= 1.0
  grad = np.asarray(X.T @ P).T / len(y) + l2 * weights
  return loss, grad


def _objective(W: LazyScaledWeights, X, y: np.ndarray, l2: float) -> float:
  return cross_entropy(W.scores(X), y) + 0.5 * l2 * W.squared_norm()


def train_line_classifier(
  examples: list[tuple[LineContext, str]],
  label_set: LabelSet,
  config: ClassifierTrainConfig,
  encoder: LineEncoder,
) -> TrainResult:
  if not examples:
    raise EmptyTrainingSet('line classifier needs at least one training line')
  y = label_indices([label for _, label in examples], label_set)
  X = encoder.encode_contexts([ctx for ctx, _ in examples])
  n = len(y)
  W = LazyScaledWeights.zeros(len(label_set), encoder.dim)
  rng = np.random.default_rng(config.seed)
  trace: list[float] = []
  for epoch in range(1, config.epochs + 1):
    order = rng.permutation(n)
    for start in range(0, n, config.batch_size):
      idx = order[start:start + config.batch_size]
      Xb = X[idx]
      P = softmax(W.scores(Xb), axis=1)
      P[np.arange(len(idx)), y[idx]] -= 1.0
      cols, Xsub = active_columns(Xb)
      grad = np.asarray(Xsub.T @ P).T / len(idx)
      W.sgd_step(cols, grad, config.learning_rate, config.l2)
    loss = _objective(W, X, y, config.l2)
    trace.append(loss)
    logger.info('engine=classifier epoch=%d loss=%.6f lr=%s', epoch, loss, config.learning_rate)
  return TrainResult(EncoderParams(W.dense(), label_set, encoder.kind), trace)


def predict_lines(params: EncoderParams, notes: list[Note], encoder: LineEncoder) -> list[list[str]]:
  """Per-line argmax for each note; lowest label index wins ties."""
  out = []
  for note in notes:
    if not note.lines:
      out.append([])
      continue
    scores = note_scores(params, encoder.encode_note(note.lines))
    out.append([params.label_set.label(int(i)) for i in np.argmax(scores, axis=1)])
  return out


def predict_contexts(params: EncoderParams, contexts: list[LineContext], encoder: LineEncoder) -> list[str]:
  """Per-line argmax for pooled lines, e.g. a line-level held-out split."""
  if not contexts:
    return []
  scores = note_scores(params, encoder.encode_contexts(contexts))
  return [params.label_set.label(int(i)) for i in np.argmax(scores, axis=1)]


def accuracy(gold: list[list[str]], predicted: list[list[str]]) -> float:
  pairs = [(g, p) for gs, ps in zip(gold, predicted) for g, p in zip(gs, ps)]
  return sum(g == p for g, p in pairs) / len(pairs) if pairs else 0.0
