import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

from errors import LengthMismatch, RemoteServiceError
from llm_segmenter.completion_client import CompletionClient
from llm_segmenter.prompts import load_template
from models import OUTSIDE_LABEL, ChatMessage, LabeledNote

logger = logging.getLogger(__name__)

OMISSION = 'omission'
LABEL_CONFUSION = 'label_confusion'
VALID_LOCAL = 'valid_local_interpretation'
OTHER = 'other'
CATEGORIES = (OMISSION, LABEL_CONFUSION, VALID_LOCAL, OTHER)

CLASSIFICATION_TEMPLATE = 'error_classification_v1'
CLASSIFICATION_SYSTEM_TEXT = 'You are a clinical documentation expert reviewing section labels of clinical notes.'
CLASSIFICATION_MAX_TOKENS = 16


@dataclass
class ErrorRecord:
  note_id: str
  line_index: int
  gold: str
  predicted: str
  category: str


@dataclass
class ErrorBreakdown:
  counts: dict[str, int] = field(default_factory=lambda: dict.fromkeys(CATEGORIES, 0))
  records: list[ErrorRecord] = field(default_factory=list)
  rule_only: bool = False

  @property
  def total(self) -> int:
    return sum(self.counts.values())

  def as_dict(self) -> dict:
    return {'counts': dict(self.counts), 'total': self.total, 'rule_only': self.rule_only, 'records': [asdict(r) for r in self.records]}


def classification_messages(line: str, gold: str, predicted: str) -> list[ChatMessage]:
  user = load_template(CLASSIFICATION_TEMPLATE).format(line=line, gold=gold, predicted=predicted)
  return [{'role': 'system', 'content': CLASSIFICATION_SYSTEM_TEXT}, {'role': 'user', 'content': user}]


def parse_category(reply: str) -> str:
  first = next((line for line in reply.splitlines() if line.strip()), '')
  word = first.strip().strip('.*`"\'').lower().replace('-', '_').replace(' ', '_')
  return word if word in (LABEL_CONFUSION, VALID_LOCAL, OTHER) else OTHER


def _classify(client: CompletionClient, line: str, gold: str, predicted: str) -> str:
  try:
    return parse_category(client.chat(classification_messages(line, gold, predicted), CLASSIFICATION_MAX_TOKENS).text)
  except RemoteServiceError as e:
    logger.warning('error_classification_failed=%s', e)
    return OTHER


def categorize_errors(
  dataset: list[LabeledNote],
  predictions: list[list[str]],
  client: CompletionClient | None = None,
  max_in_flight: int = 4,
) -> ErrorBreakdown:
  """Omissions by rule; remaining mismatches by the classification LLM, or 'other' without one."""
  if len(dataset) != len(predictions):
    raise LengthMismatch(f'{len(dataset)} notes but {len(predictions)} prediction lists')
  errors: list[tuple[ErrorRecord, str]] = []
  for note, preds in zip(dataset, predictions):
    if len(note.labels) != len(preds):
      raise LengthMismatch(f'{len(note.labels)} gold labels but {len(preds)} predictions', note.note_id)
    for i, (gold, pred) in enumerate(zip(note.labels, preds)):
      if gold != pred:
        errors.append((ErrorRecord(note.note_id, i, gold, pred, OTHER), note.lines[i]))

  pending = []
  for record, line in errors:
    if is_omission(record.gold, record.predicted):
      record.category = OMISSION
    elif client is not None:
      pending.append((record, line))
  if pending:
    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
      categories = list(pool.map(lambda rl: _classify(client, rl[1], rl[0].gold, rl[0].predicted), pending))
    for (record, _), category in zip(pending, categories):
      record.category = category

  counts = Counter(r.category for r, _ in errors)
  return ErrorBreakdown(
    counts={c: counts.get(c, 0) for c in CATEGORIES},
    records=[r for r, _ in errors],
    rule_only=client is None,
  )


def is_omission(gold: str, predicted: str) -> bool:
  return gold != OUTSIDE_LABEL and predicted == OUTSIDE_LABEL
