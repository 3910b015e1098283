import re
from dataclasses import asdict, dataclass, field, replace

from errors import NoParsableLines
from models import OUTSIDE_LABEL

_ENTRY = r'\bline\s*{}\s*(?:\*\*)?\s*[:\-–]'
# a header runs to the next "Line N:" entry on the same line, or to the end of the line
_LINE_RE = re.compile(
  _ENTRY.format(r'(\d+)') + r'\s*(.*?)\s*(?=[,;]?\s*(?:[-*•>]\s*)?(?:\*\*)?\s*' + _ENTRY.format(r'\d+') + r'|$)',
  re.IGNORECASE,
)
_STRIP_CHARS_RE = re.compile(r'[*`"“”\']')
_NON_ALNUM_RE = re.compile(r'[^a-z0-9]+')


def normalize_header(header: str) -> str:
  """Slug form of a predicted header; '<none>' in any case is kept as the outside label."""
  h = _STRIP_CHARS_RE.sub('', header).strip()
  if h.lower() == OUTSIDE_LABEL:
    return OUTSIDE_LABEL
  return _NON_ALNUM_RE.sub('-', h.lower()).strip('-')


@dataclass
class Diagnostics:
  parsed_count: int = 0
  expected_count: int = 0
  padded: int = 0
  truncated: int = 0
  unparseable_lines: list[str] = field(default_factory=list)
  index_regressions: int = 0

  def as_dict(self) -> dict:
    return asdict(self)


@dataclass
class ParsedPrediction:
  note_id: str
  labels: list[str]
  diagnostics: Diagnostics
  error: str | None = None
  raw_completion: str | None = None
  retries: int = 0


def parse_predictions(raw: str, expected_count: int, note_id: str = '') -> ParsedPrediction:
  """Every `Line N: header` match anywhere in the completion, in order of appearance; non-blank lines without one are recorded."""
  labels, unparseable = [], []
  regressions, last_index = 0, -1
  for text in raw.splitlines():
    matches = list(_LINE_RE.finditer(text))
    if not matches:
      if text.strip():
        unparseable.append(text)
      continue
    for m in matches:
      index = int(m.group(1))
      if index < last_index:
        regressions += 1
      last_index = index
      labels.append(normalize_header(m.group(2)) or OUTSIDE_LABEL)
  if not labels:
    raise NoParsableLines(f'{note_id or "completion"}: no "Line N: header" lines found')
  diagnostics = Diagnostics(
    parsed_count=len(labels),
    expected_count=expected_count,
    unparseable_lines=unparseable,
    index_regressions=regressions,
  )
  return ParsedPrediction(note_id=note_id, labels=labels, diagnostics=diagnostics, raw_completion=raw)


def reconcile_length(parsed: ParsedPrediction, expected_count: int) -> ParsedPrediction:
  """Truncate extra labels or pad with '<none>' so the result has exactly expected_count labels."""
  n = len(parsed.labels)
  labels = parsed.labels[:expected_count] + [OUTSIDE_LABEL] * max(0, expected_count - n)
  diagnostics = replace(
    parsed.diagnostics,
    expected_count=expected_count,
    truncated=max(0, n - expected_count),
    padded=max(0, expected_count - n),
  )
  return replace(parsed, labels=labels, diagnostics=diagnostics)


def failed_prediction(note_id: str, line_count: int, error: str, raw: str | None = None, retries: int = 0) -> ParsedPrediction:
  return ParsedPrediction(
    note_id=note_id,
    labels=[OUTSIDE_LABEL] * line_count,
    diagnostics=Diagnostics(expected_count=line_count, padded=line_count),
    error=error,
    raw_completion=raw,
    retries=retries,
  )
