"""JSONL readers and writers for span notes, line notes and predictions."""
from pathlib import Path
from typing import Iterable

from errors import MalformedRecord, MissingGold
from helpers import read_jsonl, write_jsonl
from models import OUTSIDE_LABEL, AnnotatedNote, LabeledNote, LineNoteRecord, PredictionRecord, SectionSpan, SpanNoteRecord

from .labels import from_io_tag, to_io_tag


def _require(path, number: int, obj: dict, key: str, kind: type | tuple):
  if key not in obj:
    raise MalformedRecord(str(path), number, f'missing field "{key}"')
  value = obj[key]
  if not isinstance(value, kind) or isinstance(value, bool):
    raise MalformedRecord(str(path), number, f'field "{key}" has wrong type {type(value).__name__}')
  return value


def _check_unique(path, number: int, note_id: str, seen: set[str]) -> None:
  if note_id in seen:
    raise MalformedRecord(str(path), number, f'duplicate note_id {note_id}')
  seen.add(note_id)


def read_span_notes(path: str | Path) -> list[AnnotatedNote]:
  notes, seen = [], set()
  for number, obj in read_jsonl(path):
    note_id = _require(path, number, obj, 'note_id', str)
    text = _require(path, number, obj, 'text', str)
    category = obj.get('category')
    if category is not None and not isinstance(category, str):
      raise MalformedRecord(str(path), number, 'field "category" must be a string or null')
    spans = []
    for raw in _require(path, number, obj, 'spans', list):
      if not isinstance(raw, dict):
        raise MalformedRecord(str(path), number, 'span must be an object')
      spans.append(SectionSpan(
        start=_require(path, number, raw, 'start', int),
        end=_require(path, number, raw, 'end', int),
        label=_require(path, number, raw, 'label', str),
      ))
    _check_unique(path, number, note_id, seen)
    notes.append(AnnotatedNote(note_id=note_id, text=text, spans=spans, category=category))
  return notes


def write_span_notes(path: str | Path, notes: Iterable[AnnotatedNote]) -> int:
  def records():
    for n in notes:
      rec: SpanNoteRecord = {
        'note_id': n.note_id, 'category': n.category, 'text': n.text,
        'spans': [{'start': s.start, 'end': s.end, 'label': s.label} for s in n.spans],
      }
      yield rec
  return write_jsonl(path, records())


def read_line_notes(path: str | Path) -> list[LabeledNote]:
  notes, seen = [], set()
  for number, obj in read_jsonl(path):
    note_id = _require(path, number, obj, 'note_id', str)
    lines = _require(path, number, obj, 'lines', list)
    labels = _require(path, number, obj, 'labels', list)
    if len(lines) != len(labels):
      raise MalformedRecord(str(path), number, f'{len(lines)} lines but {len(labels)} labels')
    if not all(isinstance(x, str) for x in lines + labels):
      raise MalformedRecord(str(path), number, 'lines and labels must be strings')
    category = obj.get('category')
    _check_unique(path, number, note_id, seen)
    notes.append(LabeledNote(note_id=note_id, lines=lines, labels=[from_io_tag(t) for t in labels], category=category))
  return notes


def write_line_notes(path: str | Path, notes: Iterable[LabeledNote]) -> int:
  def records():
    for n in notes:
      rec: LineNoteRecord = {'note_id': n.note_id, 'lines': list(n.lines), 'labels': [to_io_tag(l) for l in n.labels]}
      if n.category is not None:
        rec['category'] = n.category
      yield rec
  return write_jsonl(path, records())


def read_predictions(path: str | Path) -> list[PredictionRecord]:
  out, seen = [], set()
  for number, obj in read_jsonl(path):
    note_id = _require(path, number, obj, 'note_id', str)
    predictions = _require(path, number, obj, 'predictions', list)
    if not all(isinstance(p, str) for p in predictions):
      raise MalformedRecord(str(path), number, 'predictions must be strings')
    _check_unique(path, number, note_id, seen)
    rec: PredictionRecord = {'note_id': note_id, 'engine': obj.get('engine', ''), 'predictions': predictions}
    if obj.get('error'):
      rec['error'] = str(obj['error'])
    out.append(rec)
  return out


def write_predictions(path: str | Path, records: Iterable[PredictionRecord]) -> int:
  return write_jsonl(path, (dict(r) for r in records))


def align_predictions(notes: list, predictions: list[PredictionRecord]) -> list[list[str]]:
  """Prediction label lists in note order; a note without a record is a data error."""
  by_id = {p['note_id']: p['predictions'] for p in predictions}
  missing = [n.note_id for n in notes if n.note_id not in by_id]
  if missing:
    raise MissingGold(f'no predictions for notes {missing[:5]}')
  return [list(by_id[n.note_id]) for n in notes]


def read_notes(path: str | Path) -> list[LabeledNote]:
  """Line notes where labels are optional; unlabeled notes get '<none>' placeholders."""
  notes, seen = [], set()
  for number, obj in read_jsonl(path):
    note_id = _require(path, number, obj, 'note_id', str)
    lines = _require(path, number, obj, 'lines', list)
    labels = obj.get('labels') or [OUTSIDE_LABEL] * len(lines)
    if len(labels) != len(lines) or not all(isinstance(x, str) for x in lines + labels):
      raise MalformedRecord(str(path), number, 'lines and labels must be equal-length string lists')
    _check_unique(path, number, note_id, seen)
    notes.append(LabeledNote(note_id=note_id, lines=lines, labels=[from_io_tag(t) for t in labels], category=obj.get('category')))
  return notes
