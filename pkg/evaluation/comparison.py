import logging
from dataclasses import asdict, dataclass, field

from errors import DegenerateSample, TooFewValues
from models import LabeledNote, LabelSet

from .metrics import NoteScore, per_note_scores
from .significance import StatTestResult, confidence_interval, wilcoxon_signed_rank

logger = logging.getLogger(__name__)


@dataclass
class EngineSummary:
  name: str
  scores: list[NoteScore]
  macro_f1_ci: tuple[float, float] | None = None
  weighted_f1_ci: tuple[float, float] | None = None


@dataclass
class ComparisonReport:
  a: EngineSummary
  b: EngineSummary
  macro_f1_test: StatTestResult | None = None
  weighted_f1_test: StatTestResult | None = None
  no_difference: dict[str, bool] = field(default_factory=dict)
  seed: int = 42

  def as_dict(self) -> dict:
    return asdict(self)


def _test(a: list[float], b: list[float], metric: str) -> tuple[StatTestResult | None, bool]:
  try:
    return wilcoxon_signed_rank(a, b), False
  except DegenerateSample:
    logger.info('metric=%s no_difference=1', metric)
    return None, True


def _ci(values: list[float], seed: int) -> tuple[float, float] | None:
  try:
    return confidence_interval(values, seed=seed)
  except TooFewValues:
    return None


def _summary(name: str, scores: list[NoteScore], seed: int) -> EngineSummary:
  return EngineSummary(
    name=name,
    scores=scores,
    macro_f1_ci=_ci([s.macro_f1 for s in scores], seed),
    weighted_f1_ci=_ci([s.weighted_f1 for s in scores], seed),
  )


def compare_engines(
  dataset: list[LabeledNote],
  predictions_a: list[list[str]],
  predictions_b: list[list[str]],
  label_set: LabelSet,
  seed: int = 42,
  names: tuple[str, str] = ('a', 'b'),
  exclude: tuple[str, ...] = (),
) -> ComparisonReport:
  """Per-note macro and weighted F1 for two engines, Wilcoxon tests on both and bootstrap intervals."""
  gold = [n.labels for n in dataset]
  ids = [n.note_id for n in dataset]
  scores_a = per_note_scores(gold, predictions_a, label_set, ids, exclude)
  scores_b = per_note_scores(gold, predictions_b, label_set, ids, exclude)
  macro_test, macro_same = _test([s.macro_f1 for s in scores_a], [s.macro_f1 for s in scores_b], 'macro_f1')
  weighted_test, weighted_same = _test([s.weighted_f1 for s in scores_a], [s.weighted_f1 for s in scores_b], 'weighted_f1')
  return ComparisonReport(
    a=_summary(names[0], scores_a, seed),
    b=_summary(names[1], scores_b, seed),
    macro_f1_test=macro_test,
    weighted_f1_test=weighted_test,
    no_difference={'macro_f1': macro_same, 'weighted_f1': weighted_same},
    seed=seed,
  )
