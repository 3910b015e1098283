import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from errors import InvalidLabelSet
from models import OUTSIDE_LABEL, LabeledNote, LabelSet

logger = logging.getLogger(__name__)

IO_PREFIX = 'I_'


def load_label_set(path: str | Path, name: str | None = None) -> LabelSet:
  """One slug per line; blank lines and '#' comments ignored. Name defaults to the file stem."""
  p = Path(path)
  labels = []
  for raw in p.read_text(encoding='utf-8').splitlines():
    line = raw.strip()
    if line and not line.startswith('#'):
      labels.append(line)
  if not labels:
    raise InvalidLabelSet(f'{p}: empty label-set file')
  return LabelSet(name=name or p.name.split('.')[0], labels=tuple(labels))


def load_consolidation_map(path: str | Path) -> dict[str, str]:
  mapping: dict[str, str] = {}
  for number, raw in enumerate(Path(path).read_text(encoding='utf-8').splitlines(), start=1):
    if not raw.strip() or raw.startswith('#'):
      continue
    parts = raw.split('\t')
    if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
      raise InvalidLabelSet(f'{path}: line {number}: expected "from<TAB>to"')
    mapping[parts[0].strip()] = parts[1].strip()
  return mapping


def to_io_tag(label: str) -> str:
  return label if label == OUTSIDE_LABEL else IO_PREFIX + label


def from_io_tag(tag: str) -> str:
  return tag[len(IO_PREFIX):] if tag.startswith(IO_PREFIX) else tag


def consolidate_labels(note: LabeledNote, mapping: dict[str, str]) -> LabeledNote:
  return LabeledNote(
    note_id=note.note_id, lines=list(note.lines),
    labels=[mapping.get(l, l) for l in note.labels],
    category=note.category,
  )


def consolidate_label_set(label_set: LabelSet, mapping: dict[str, str], name: str | None = None) -> LabelSet:
  """Image of a label set under a consolidation map; first occurrence keeps its position."""
  seen: dict[str, None] = {}
  for label in label_set.labels:
    seen.setdefault(mapping.get(label, label), None)
  return LabelSet(name=name or f'{label_set.name}-consolidated', labels=tuple(seen))


@dataclass
class ExclusionReport:
  excluded: Counter = field(default_factory=Counter)

  @property
  def total(self) -> int:
    return sum(self.excluded.values())

  def as_dict(self) -> dict[str, int]:
    return dict(sorted(self.excluded.items()))


def restrict_label_set(dataset: list[LabeledNote], allowed: LabelSet) -> tuple[list[LabeledNote], ExclusionReport]:
  """Drop lines whose gold label is outside `allowed`; notes left empty are kept as empty notes."""
  report = ExclusionReport()
  kept: list[LabeledNote] = []
  for note in dataset:
    lines, labels = [], []
    for line, label in zip(note.lines, note.labels):
      if label in allowed:
        lines.append(line)
        labels.append(label)
      else:
        report.excluded[label] += 1
    kept.append(LabeledNote(note_id=note.note_id, lines=lines, labels=labels, category=note.category))
  if report.total:
    logger.info('label_set=%s excluded_lines=%d labels=%s', allowed.name, report.total, report.as_dict())
  return kept, report
