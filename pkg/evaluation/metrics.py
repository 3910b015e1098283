"""
Per-label tallies and macro / support-weighted precision, recall and F1.

Predictions outside the label set are wrong for their gold label and are
counted in a separate invalid bucket; they never become macro classes.
0/0 precision or recall is 0.
"""
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.metrics import multilabel_confusion_matrix

from errors import LengthMismatch, UnknownLabel
from models import LabelSet


@dataclass
class ConfusionCounts:
  labels: tuple[str, ...]
  tp: np.ndarray
  fp: np.ndarray
  fn: np.ndarray
  invalid: int = 0

  @property
  def support(self) -> np.ndarray:
    return self.tp + self.fn

  @property
  def total(self) -> int:
    return int(self.support.sum())

  def __add__(self, other: 'ConfusionCounts') -> 'ConfusionCounts':
    return ConfusionCounts(self.labels, self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.invalid + other.invalid)

  @classmethod
  def empty(cls, label_set: LabelSet) -> 'ConfusionCounts':
    z = np.zeros(len(label_set), dtype=np.int64)
    return cls(label_set.labels, z, z.copy(), z.copy())


@dataclass
class LabelScore:
  precision: float
  recall: float
  f1: float
  support: int


@dataclass
class MetricsReport:
  MP: float = 0.0
  MR: float = 0.0
  MF1: float = 0.0
  wP: float = 0.0
  wR: float = 0.0
  wF1: float = 0.0
  accuracy: float = 0.0
  macro_f1_all_labels: float = 0.0
  n_lines: int = 0
  invalid_predictions: int = 0
  per_label: dict[str, LabelScore] = field(default_factory=dict)

  def aggregates(self) -> tuple[float, ...]:
    return self.MP, self.MR, self.MF1, self.wP, self.wR, self.wF1

  def as_dict(self) -> dict:
    return asdict(self)

  @classmethod
  def from_dict(cls, obj: dict) -> 'MetricsReport':
    per_label = {k: LabelScore(**v) for k, v in obj.get('per_label', {}).items()}
    return cls(**{**obj, 'per_label': per_label})


def confusion_counts(gold: list[str], predicted: list[str], label_set: LabelSet, note_id: str | None = None) -> ConfusionCounts:
  if len(gold) != len(predicted):
    raise LengthMismatch(f'{len(gold)} gold labels but {len(predicted)} predictions', note_id)
  unknown = sorted({g for g in gold if g not in label_set})
  if unknown:
    raise UnknownLabel(f'gold labels {unknown[:5]} not in label set {label_set.name}')
  if not gold:
    return ConfusionCounts.empty(label_set)
  mcm = multilabel_confusion_matrix(gold, predicted, labels=list(label_set.labels))
  return ConfusionCounts(
    labels=label_set.labels,
    tp=mcm[:, 1, 1].astype(np.int64),
    fp=mcm[:, 0, 1].astype(np.int64),
    fn=mcm[:, 1, 0].astype(np.int64),
    invalid=sum(p not in label_set for p in predicted),
  )


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
  out = np.zeros(len(num), dtype=np.float64)
  np.divide(num, den, out=out, where=den > 0)
  return out


def prf_metrics(counts: ConfusionCounts, include: str = 'support', exclude: tuple[str, ...] = ()) -> MetricsReport:
  """
  include='support' macro-averages over labels with gold support; 'all' over the whole label set.
  Labels in `exclude` are dropped from every average.
  """
  tp, fp, fn, support = (a.astype(np.float64) for a in (counts.tp, counts.fp, counts.fn, counts.support))
  precision = _safe_div(tp, tp + fp)
  recall = _safe_div(tp, tp + fn)
  f1 = _safe_div(2 * precision * recall, precision + recall)

  keep = np.array([l not in exclude for l in counts.labels], dtype=bool)
  with_support = keep & (support > 0)
  macro_mask = with_support if include == 'support' else keep

  def macro(x: np.ndarray, mask: np.ndarray) -> float:
    return float(x[mask].mean()) if mask.any() else 0.0

  weight_total = support[with_support].sum()

  def weighted(x: np.ndarray) -> float:
    return float((x[with_support] * support[with_support]).sum() / weight_total) if weight_total else 0.0

  total = counts.total
  return MetricsReport(
    MP=macro(precision, macro_mask),
    MR=macro(recall, macro_mask),
    MF1=macro(f1, macro_mask),
    wP=weighted(precision),
    wR=weighted(recall),
    wF1=weighted(f1),
    accuracy=float(tp.sum() / total) if total else 0.0,
    macro_f1_all_labels=macro(f1, keep),
    n_lines=total,
    invalid_predictions=counts.invalid,
    per_label={
      l: LabelScore(float(precision[i]), float(recall[i]), float(f1[i]), int(support[i]))
      for i, l in enumerate(counts.labels) if support[i] > 0 or tp[i] + fp[i] > 0
    },
  )


def corpus_counts(gold: list[list[str]], predicted: list[list[str]], label_set: LabelSet, note_ids: list[str] | None = None) -> ConfusionCounts:
  if len(gold) != len(predicted):
    raise LengthMismatch(f'{len(gold)} notes but {len(predicted)} prediction lists')
  total = ConfusionCounts.empty(label_set)
  for i, (g, p) in enumerate(zip(gold, predicted)):
    total = total + confusion_counts(g, p, label_set, note_ids[i] if note_ids else None)
  return total


@dataclass
class NoteScore:
  note_id: str
  macro_f1: float
  weighted_f1: float


def per_note_scores(
  gold: list[list[str]],
  predicted: list[list[str]],
  label_set: LabelSet,
  note_ids: list[str],
  exclude: tuple[str, ...] = (),
) -> list[NoteScore]:
  if not len(note_ids) == len(gold) == len(predicted):
    raise LengthMismatch(f'{len(note_ids)} notes, {len(gold)} gold lists, {len(predicted)} prediction lists')
  out = []
  for note_id, g, p in zip(note_ids, gold, predicted):
    report = prf_metrics(confusion_counts(g, p, label_set, note_id), exclude=exclude)
    out.append(NoteScore(note_id, report.MF1, report.wF1))
  return out
