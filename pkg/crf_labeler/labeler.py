"""
Linear-chain CRF on top of per-line emission scores.

Notes are processed one at a time (batch of one note, L lines, at most S
tokens per line). Lines are scored independently and re-assembled into an
L x |labels| emission matrix; training takes one gradient step per note.
"""
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from encoders.classifier import label_indices
from encoders.features import tokenize_and_truncate
from encoders.line_encoder import FeatureLinearEncoder, LineEncoder, build_encoder
from encoders.optim import LazyScaledWeights, active_columns
from encoders.params import EncoderParams, note_scores
from encoders.serialization import SavedModel, load_model, save_model
from errors import ConfigError, EmptyNote, EmptyTrainingSet, MissingGold
from models import CrfTrainConfig, FeatureConfig, LabeledNote, LabelSet, Note

from .inference import TransitionMatrix, forward_backward, path_score, viterbi_decode

logger = logging.getLogger(__name__)

_CRF_FIELDS = ('transitions', 'start_scores', 'end_scores')


@dataclass
class CollatedNote:
  note_id: str
  L: int
  S: int
  lines: list[list[str]]
  texts: list[str]
  gold: list[str] | None = None
  B: int = 1


@dataclass
class CrfModel:
  encoder: EncoderParams
  transitions: TransitionMatrix
  line_encoder: LineEncoder
  max_tokens: int = 100

  def __post_init__(self) -> None:
    if self.transitions.num_labels != len(self.encoder.label_set):
      raise ConfigError(
        f'transitions cover {self.transitions.num_labels} labels, encoder {len(self.encoder.label_set)}'
      )
    if self.line_encoder.dim != self.encoder.dim:
      raise ConfigError(f'line encoder dim {self.line_encoder.dim} != weights dim {self.encoder.dim}')

  @property
  def label_set(self) -> LabelSet:
    return self.encoder.label_set


@dataclass
class CrfGradient:
  emissions: np.ndarray
  transitions: np.ndarray
  start_scores: np.ndarray
  end_scores: np.ndarray

  def encoder_weights(self, X) -> np.ndarray:
    """Chain the emission gradient through E = X W^T into a dense K x D gradient."""
    return np.asarray(X.T @ self.emissions).T


@dataclass
class CrfTrainResult:
  model: CrfModel
  loss_trace: list[float] = field(default_factory=list)


def collate(note: Note | LabeledNote, max_tokens: int) -> CollatedNote:
  if not note.lines:
    raise EmptyNote(f'{note.note_id}: note has no lines')
  return CollatedNote(
    note_id=note.note_id,
    L=len(note.lines),
    S=max_tokens,
    lines=[tokenize_and_truncate(line, max_tokens) for line in note.lines],
    texts=list(note.lines),
    gold=list(note.labels) if isinstance(note, LabeledNote) else None,
  )


def note_emissions(model: CrfModel, collated: CollatedNote) -> np.ndarray:
  return note_scores(model.encoder, model.line_encoder.encode_note(collated.texts, collated.lines))


def sequence_nll_and_gradient(emissions: np.ndarray, gold, transitions: TransitionMatrix) -> tuple[float, CrfGradient]:
  """log Z minus the gold path score, with expected-minus-observed gradients."""
  g = np.asarray(gold, dtype=np.int64)
  log_z, unary, pairwise = forward_backward(emissions, transitions)
  loss = log_z - path_score(emissions, transitions, g)
  dE = unary.copy()
  dE[np.arange(len(g)), g] -= 1.0
  dT = pairwise.sum(axis=0)
  np.subtract.at(dT, (g[:-1], g[1:]), 1.0)
  d_start = unary[0].copy()
  d_start[g[0]] -= 1.0
  d_end = unary[-1].copy()
  d_end[g[-1]] -= 1.0
  return float(loss), CrfGradient(dE, dT, d_start, d_end)


def nll_and_gradient(model: CrfModel, collated: CollatedNote) -> tuple[float, CrfGradient]:
  if collated.gold is None:
    raise MissingGold(f'{collated.note_id}: gold labels required for training')
  gold = label_indices(collated.gold, model.label_set)
  return sequence_nll_and_gradient(note_emissions(model, collated), gold, model.transitions)


def train_crf(dataset: list[LabeledNote], label_set: LabelSet, config: CrfTrainConfig, encoder: LineEncoder) -> CrfTrainResult:
  instances = []
  for note in dataset:
    if not note.lines:
      logger.info('note_id=%s skipped=empty', note.note_id)
      continue
    c = collate(note, config.max_tokens)
    instances.append((encoder.encode_note(c.texts, c.lines), label_indices(c.gold, label_set)))
  if not instances:
    raise EmptyTrainingSet('CRF needs at least one non-empty training note')

  K = len(label_set)
  W = LazyScaledWeights.zeros(K, encoder.dim)
  T, start, end = np.zeros((K, K)), np.zeros(K), np.zeros(K)
  lr, l2 = config.learning_rate, config.l2
  rng = np.random.default_rng(config.seed)
  trace: list[float] = []

  def mean_nll() -> float:
    tr = TransitionMatrix(T, start, end)
    return float(np.mean([sequence_nll_and_gradient(W.scores(X), g, tr)[0] for X, g in instances]))

  for epoch in range(1, config.epochs + 1):
    for i in rng.permutation(len(instances)):
      X, g = instances[i]
      _, grad = sequence_nll_and_gradient(W.scores(X), g, TransitionMatrix(T, start, end))
      cols, Xsub = active_columns(X)
      W.sgd_step(cols, grad.encoder_weights(Xsub), lr, l2)
      T = (1 - lr * l2) * T - lr * grad.transitions
      start = (1 - lr * l2) * start - lr * grad.start_scores
      end = (1 - lr * l2) * end - lr * grad.end_scores
    loss = mean_nll()
    trace.append(loss)
    logger.info('engine=crf epoch=%d loss=%.6f lr=%s notes=%d', epoch, loss, lr, len(instances))

  model = CrfModel(
    encoder=EncoderParams(W.dense(), label_set, encoder.kind),
    transitions=TransitionMatrix(T, start, end),
    line_encoder=encoder,
    max_tokens=config.max_tokens,
  )
  return CrfTrainResult(model, trace)


def predict_note(model: CrfModel, note: Note | LabeledNote, max_tokens: int | None = None) -> list[str]:
  collated = collate(note, max_tokens or model.max_tokens)
  path, _ = viterbi_decode(note_emissions(model, collated), model.transitions)
  return [model.label_set.label(i) for i in path]


def save_crf(path: str | Path, model: CrfModel, features: FeatureConfig, config_fingerprint: str, loss_trace: list[float], embedding=None) -> str:
  saved = SavedModel(
    engine='crf',
    params=model.encoder,
    features=replace(features, max_tokens=model.max_tokens),
    config_fingerprint=config_fingerprint,
    loss_trace=loss_trace,
    embedding=embedding,
    extra={
      'transitions': model.transitions.scores,
      'start_scores': model.transitions.start_scores,
      'end_scores': model.transitions.end_scores,
    },
  )
  return save_model(path, saved)


def load_crf(path: str | Path, line_encoder: LineEncoder | None = None) -> tuple[CrfModel, SavedModel]:
  saved = load_model(path, extra_keys=_CRF_FIELDS)
  if saved.engine != 'crf':
    raise ConfigError(f'{path}: expected a crf model, found {saved.engine}')
  if line_encoder is None:
    line_encoder = build_encoder(saved.params.encoder_kind, saved.features, saved.embedding)
  model = CrfModel(
    encoder=saved.params,
    transitions=TransitionMatrix(*(saved.extra[k] for k in _CRF_FIELDS)),
    line_encoder=line_encoder,
    max_tokens=saved.features.max_tokens,
  )
  return model, saved


def zero_model(label_set: LabelSet, features: FeatureConfig) -> CrfModel:
  encoder = FeatureLinearEncoder(features)
  return CrfModel(EncoderParams.zeros(label_set, encoder.dim), TransitionMatrix.zeros(len(label_set)), encoder, features.max_tokens)
