"""
Span-annotated notes -> line-labeled notes.

Lines come from a deterministic splitter: newlines first, then sentence-final
punctuation (. ! ?) followed by whitespace and an uppercase letter or digit.
Each line takes the label of the span covering its character midpoint.
"""
import re

from errors import MalformedMaskedToken, OverlappingSpans, SpanOutOfBounds, UnknownLabel
from models import OUTSIDE_LABEL, AnnotatedNote, LabeledNote, LabelSet, SectionSpan

_FRAGMENT_RE = re.compile(r'[^\r\n]+')
_BOUNDARY_RE = re.compile(r'(?<=[.!?])\s+(?=[A-Z0-9])')
# masked identifiers such as <DATE>, <NAME>, <MEDICAL_RECORD>
_PHI_RE = re.compile(r'<[A-Z]+(?:_[A-Z]+)*>')
_PHI_OPEN_RE = re.compile(r'<[A-Z]{2,}(?:_[A-Z]+)*(?![A-Z_>])')

LineOffsets = tuple[str, int, int]


def _trimmed(text: str, start: int, end: int) -> LineOffsets | None:
  piece = text[start:end]
  stripped = piece.strip()
  if not stripped:
    return None
  lead = len(piece) - len(piece.lstrip())
  return stripped, start + lead, start + lead + len(stripped)


def split_with_offsets(raw_text: str) -> list[LineOffsets]:
  """Lines with their [start, end) character offsets in `raw_text`."""
  out: list[LineOffsets] = []
  for frag in _FRAGMENT_RE.finditer(raw_text):
    base, text = frag.start(), frag.group()
    cursor = 0
    for b in _BOUNDARY_RE.finditer(text):
      piece = _trimmed(raw_text, base + cursor, base + b.start())
      if piece:
        out.append(piece)
      cursor = b.end()
    piece = _trimmed(raw_text, base + cursor, base + len(text))
    if piece:
      out.append(piece)
  return out


def split_into_lines(raw_text: str) -> list[str]:
  return [line for line, _, _ in split_with_offsets(raw_text)]


def masked_tokens(raw_text: str) -> list[str]:
  return _PHI_RE.findall(raw_text)


def check_masked_tokens(raw_text: str, note_id: str = '') -> None:
  """Raise on a masked identifier that opens with '<' but is never closed."""
  m = _PHI_OPEN_RE.search(raw_text)
  if m:
    raise MalformedMaskedToken(f'{note_id}: unterminated masked token {m.group()!r} at offset {m.start()}')


def validate_spans(raw_text: str, spans: list[SectionSpan], label_set: LabelSet) -> list[SectionSpan]:
  """Spans sorted by start; raises on bad bounds, overlap or unknown labels."""
  n = len(raw_text)
  ordered = sorted(spans, key=lambda s: (s.start, s.end))
  prev: SectionSpan | None = None
  for span in ordered:
    if not (0 <= span.start < span.end <= n):
      raise SpanOutOfBounds(f'span [{span.start}, {span.end}) out of bounds for text of length {n}')
    if span.label not in label_set:
      raise UnknownLabel(f'{span.label} not in label set {label_set.name}')
    if prev is not None and span.start < prev.end:
      raise OverlappingSpans(
        f'span [{span.start}, {span.end}) {span.label} overlaps [{prev.start}, {prev.end}) {prev.label}'
      )
    prev = span
  return ordered


def project_spans_to_lines(raw_text: str, spans: list[SectionSpan], label_set: LabelSet, note_id: str = '') -> LabeledNote:
  check_masked_tokens(raw_text, note_id)
  ordered = validate_spans(raw_text, spans, label_set)
  lines, labels = [], []
  j = 0
  for line, start, end in split_with_offsets(raw_text):
    mid = (start + end) / 2
    while j < len(ordered) and ordered[j].end <= mid:
      j += 1
    if j < len(ordered) and ordered[j].start <= mid < ordered[j].end:
      labels.append(ordered[j].label)
    else:
      labels.append(OUTSIDE_LABEL)
    lines.append(line)
  return LabeledNote(note_id=note_id, lines=lines, labels=labels)


def ingest_note(note: AnnotatedNote, label_set: LabelSet) -> LabeledNote:
  labeled = project_spans_to_lines(note.text, note.spans, label_set, note_id=note.note_id)
  labeled.category = note.category
  return labeled
