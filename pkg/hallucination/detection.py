from collections import Counter
from dataclasses import dataclass, field

from helpers import percent
from llm_segmenter.parsing import normalize_header
from models import LabelSet


@dataclass
class HallucinationReport:
  """HL hallucinated lines out of total_lines; HS distinct invalid headers."""
  HL: int = 0
  total_lines: int = 0
  per_header_counts: Counter = field(default_factory=Counter)

  @property
  def HS(self) -> int:
    return len(self.per_header_counts)

  @property
  def H_percent(self) -> float:
    return percent(self.HL, self.total_lines)

  def as_dict(self) -> dict:
    return {
      'HL': self.HL,
      'total_lines': self.total_lines,
      'H_percent': self.H_percent,
      'HS': self.HS,
      'per_header_counts': dict(sorted(self.per_header_counts.items())),
    }


def is_hallucinated(prediction: str, label_set: LabelSet) -> bool:
  return normalize_header(prediction) not in label_set


def detect_hallucinations(predictions: list[list[str]], label_set: LabelSet) -> HallucinationReport:
  counts: Counter = Counter()
  total = 0
  for labels in predictions:
    total += len(labels)
    for p in labels:
      h = normalize_header(p)
      if h not in label_set:
        counts[h] += 1
  return HallucinationReport(HL=sum(counts.values()), total_lines=total, per_header_counts=counts)


def top_hallucinated(report: HallucinationReport, k: int = 5) -> list[tuple[str, int]]:
  return sorted(report.per_header_counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]


def format_hallucination_table(rows: list[tuple[str, HallucinationReport]]) -> str:
  width = max([len('Model')] + [len(name) for name, _ in rows])
  sep = '  ' + '-' * (width + 30)
  lines = ['', f'  {"Model":<{width}}  {"HL":>8}  {"H%":>8}  {"HS":>6}', sep]
  for name, r in rows:
    lines.append(f'  {name:<{width}}  {r.HL:>8,}  {r.H_percent:>7.2f}%  {r.HS:>6}')
  lines.append(sep)
  lines.append('')
  return '\n'.join(lines)


def format_top_hallucinated(rows: list[tuple[str, list[tuple[str, int]]]]) -> str:
  lines = ['']
  for name, top in rows:
    lines.append(f'  {name}')
    for rank, (header, count) in enumerate(top, start=1):
      lines.append(f'    {rank}. {header} ({count})')
  lines.append('')
  return '\n'.join(lines)
