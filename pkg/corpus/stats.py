from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from helpers import percent
from models import OUTSIDE_LABEL, AnnotatedNote, LabeledNote

from .ingest import split_into_lines


@dataclass
class FrequencyRow:
  label: str
  span_count: int
  overall_percent: float


@dataclass
class FrequencyReport:
  rows: list[FrequencyRow] = field(default_factory=list)
  total_spans: int = 0

  def row(self, label: str) -> FrequencyRow | None:
    return next((r for r in self.rows if r.label == label), None)

  def as_dict(self) -> dict:
    return {
      'total_spans': self.total_spans,
      'rows': [{'label': r.label, 'span_count': r.span_count, 'overall_percent': r.overall_percent} for r in self.rows],
    }


@dataclass
class TokenLengthStats:
  lines: int
  under_threshold: float
  max_tokens: int
  mean_tokens: float
  threshold: int


def frequency_report(counts: Counter) -> FrequencyReport:
  counts = Counter({k: v for k, v in counts.items() if k != OUTSIDE_LABEL and v > 0})
  total = sum(counts.values())
  ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
  return FrequencyReport(
    rows=[FrequencyRow(label, n, percent(n, total)) for label, n in ordered],
    total_spans=total,
  )


def corpus_stats(dataset: list[AnnotatedNote]) -> FrequencyReport:
  """Span counts per header, '<none>' excluded, count descending then slug ascending."""
  return frequency_report(Counter(span.label for note in dataset for span in note.spans))


def token_length_stats(dataset: list[LabeledNote] | list[AnnotatedNote], threshold: int = 100) -> TokenLengthStats:
  # imported here to keep corpus free of an import cycle with encoders
  from encoders.features import tokenize

  lengths = []
  for note in dataset:
    lines = note.lines if hasattr(note, 'lines') else split_into_lines(note.text)
    lengths.extend(len(tokenize(line)) for line in lines)
  if not lengths:
    return TokenLengthStats(0, 0.0, 0, 0.0, threshold)
  arr = np.asarray(lengths)
  return TokenLengthStats(
    lines=len(arr),
    under_threshold=float((arr < threshold).mean()),
    max_tokens=int(arr.max()),
    mean_tokens=float(arr.mean()),
    threshold=threshold,
  )


def format_frequency_report(report: FrequencyReport) -> str:
  width = max([len('Section Header')] + [len(r.label) for r in report.rows])
  sep = '  ' + '-' * (width + 28)
  lines = ['', f'  {"Section Header":<{width}}  {"Total Spans":>11}  {"Overall %":>11}', sep]
  for r in report.rows:
    lines.append(f'  {r.label:<{width}}  {r.span_count:>11}  {r.overall_percent:>11.2f}')
  lines.append(sep)
  lines.append(f'  {"total":<{width}}  {report.total_spans:>11}')
  lines.append('')
  return '\n'.join(lines)
