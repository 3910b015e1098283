"""
Map hallucinated headers back into the label set.

Each distinct invalid header is corrected once: a header that already
normalizes into the set maps to itself; otherwise the mapping LLM is asked
(header strings only, never note text) and a non-compliant or failed reply
falls through to a deterministic edit-distance match.
"""
import logging
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from errors import RemoteServiceError
from helpers import append_jsonl, read_jsonl
from llm_segmenter.completion_client import CompletionClient
from llm_segmenter.parsing import normalize_header
from llm_segmenter.prompts import load_template
from models import ChatMessage, LabelSet

logger = logging.getLogger(__name__)

MAPPING_TEMPLATE = 'header_mapping_v1'
MAPPING_SYSTEM_TEXT = 'You are a clinical documentation assistant who maps section headers onto a fixed vocabulary.'
MAPPING_MAX_TOKENS = 32
CAVEAT = (
  'Note: corrected labels are chosen for validity; a corrected label may be semantically '
  'closer to a different valid label than the gold one.'
)


def levenshtein(a: str, b: str) -> int:
  if not a or not b:
    return max(len(a), len(b))
  prev = np.arange(len(b) + 1)
  bs = np.frombuffer(b.encode('utf-32-le'), dtype=np.uint32)
  for i, ch in enumerate(a, start=1):
    cost = (bs != ord(ch)).astype(np.int64)
    cur = np.empty_like(prev)
    cur[0] = i
    # substitution and deletion are vectorised; insertion needs a running minimum
    sub_del = np.minimum(prev[:-1] + cost, prev[1:] + 1)
    for j in range(1, len(b) + 1):
      cur[j] = min(sub_del[j - 1], cur[j - 1] + 1)
    prev = cur
  return int(prev[-1])


def normalized_distance(a: str, b: str) -> Fraction:
  longest = max(len(a), len(b))
  return Fraction(levenshtein(a, b), longest) if longest else Fraction(0)


def token_overlap(a: str, b: str) -> int:
  return len(set(filter(None, a.split('-'))) & set(filter(None, b.split('-'))))


def fallback_similarity_map(invalid: str, label_set: LabelSet) -> str:
  """Closest label by normalized edit distance; ties by token overlap, then alphabetically."""
  h = normalize_header(invalid)
  if h in label_set:
    return h
  candidates = [l for l in label_set.labels if l != label_set.outside_label] or [label_set.outside_label]
  return min(candidates, key=lambda l: (normalized_distance(h, l), -token_overlap(h, l), l))


@dataclass(frozen=True)
class CacheEntry:
  invalid: str
  label_set: str
  mapped_to: str
  method: str


class CorrectionCache:
  """(invalid header, label set name) -> (label, method); the first value stored for a key wins."""

  def __init__(self, path: str | Path | None = None):
    self.path = Path(path) if path else None
    self._entries: dict[tuple[str, str], CacheEntry] = {}
    self._lock = threading.Lock()
    if self.path is not None and self.path.exists():
      for _, obj in read_jsonl(self.path):
        entry = CacheEntry(obj['invalid'], obj['label_set'], obj['mapped_to'], obj['method'])
        self._entries.setdefault((entry.invalid, entry.label_set), entry)

  def __len__(self) -> int:
    return len(self._entries)

  def get(self, invalid: str, label_set: LabelSet) -> CacheEntry | None:
    entry = self._entries.get((invalid, label_set.name))
    if entry is not None and entry.mapped_to not in label_set:
      return None
    return entry

  def put(self, invalid: str, label_set: LabelSet, mapped_to: str, method: str) -> CacheEntry:
    with self._lock:
      key = (invalid, label_set.name)
      if key in self._entries:
        return self._entries[key]
      entry = CacheEntry(invalid, label_set.name, mapped_to, method)
      self._entries[key] = entry
      if self.path is not None:
        append_jsonl(self.path, {'invalid': invalid, 'label_set': label_set.name, 'mapped_to': mapped_to, 'method': method})
      return entry


def mapping_messages(header: str, label_set: LabelSet) -> list[ChatMessage]:
  user = load_template(MAPPING_TEMPLATE).format(header=header, options=', '.join(label_set.labels))
  return [{'role': 'system', 'content': MAPPING_SYSTEM_TEXT}, {'role': 'user', 'content': user}]


def _ask_llm(client: CompletionClient, header: str, label_set: LabelSet) -> str | None:
  try:
    reply = client.chat(mapping_messages(header, label_set), MAPPING_MAX_TOKENS).text
  except RemoteServiceError as e:
    logger.warning('header=%s mapping_error=%s', header, e)
    return None
  first = next((line for line in reply.splitlines() if line.strip()), '')
  # accept "header" as well as "Label: header"
  for candidate in (normalize_header(first), normalize_header(first.split(':', 1)[-1])):
    if candidate in label_set:
      return candidate
  logger.info('header=%s mapping_reply=%r non_compliant=1', header, first)
  return None


def _resolve(h: str, label_set: LabelSet, client: CompletionClient | None) -> tuple[str, str]:
  label = _ask_llm(client, h, label_set) if client is not None else None
  if label is not None:
    return label, 'llm'
  return fallback_similarity_map(h, label_set), 'fallback'


def correct_header(
  invalid: str,
  label_set: LabelSet,
  client: CompletionClient | None = None,
  cache: CorrectionCache | None = None,
) -> tuple[str, str]:
  """(valid label, method) where method is 'llm' or 'fallback'."""
  h = normalize_header(invalid)
  if h in label_set:
    return h, 'fallback'
  if cache is not None:
    hit = cache.get(h, label_set)
    if hit is not None:
      return hit.mapped_to, hit.method
  label, method = _resolve(h, label_set, client)
  if cache is not None:
    entry = cache.put(h, label_set, label, method)
    return entry.mapped_to, entry.method
  return label, method


@dataclass
class CorrectionRow:
  invalid: str
  corrected: str
  count: int
  method: str


@dataclass
class CorrectionSummary:
  rows: list[CorrectionRow] = field(default_factory=list)
  caveat: str = CAVEAT

  @property
  def corrected_lines(self) -> int:
    return sum(r.count for r in self.rows)

  def as_dict(self) -> dict:
    return {
      'corrected_lines': self.corrected_lines,
      'rows': [{'invalid': r.invalid, 'corrected': r.corrected, 'count': r.count, 'method': r.method} for r in self.rows],
      'caveat': self.caveat,
    }


def apply_corrections(
  predictions: list[list[str]],
  label_set: LabelSet,
  cache: CorrectionCache | None = None,
  client: CompletionClient | None = None,
  max_in_flight: int = 4,
) -> tuple[list[list[str]], CorrectionSummary]:
  """Replace every prediction outside the label set; predictions already in the set are left as they are."""
  cache = cache if cache is not None else CorrectionCache()
  counts = Counter(p for labels in predictions for p in labels if p not in label_set)
  distinct = sorted(counts)
  normalized = {p: normalize_header(p) for p in distinct}
  resolved: dict[str, tuple[str, str]] = {}
  for h in sorted(set(normalized.values())):
    if h in label_set:
      resolved[h] = (h, 'fallback')
    elif (hit := cache.get(h, label_set)) is not None:
      resolved[h] = (hit.mapped_to, hit.method)
  misses = sorted(set(normalized.values()) - set(resolved))
  with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
    answers = list(pool.map(lambda h: _resolve(h, label_set, client), misses))
  # cache writes in header order
  for h, (label, method) in zip(misses, answers):
    entry = cache.put(h, label_set, label, method)
    resolved[h] = (entry.mapped_to, entry.method)
  mapping = {p: resolved[normalized[p]] for p in distinct}
  corrected = [[p if p in label_set else mapping[p][0] for p in labels] for labels in predictions]
  rows = [CorrectionRow(p, mapping[p][0], counts[p], mapping[p][1]) for p in distinct]
  rows.sort(key=lambda r: (-r.count, r.invalid))
  if rows:
    logger.info('corrected_lines=%d distinct_headers=%d', sum(counts.values()), len(rows))
  return corrected, CorrectionSummary(rows)


def format_correction_summary(summary: CorrectionSummary, k: int | None = None) -> str:
  rows = summary.rows[:k] if k else summary.rows
  width = max([len('Predicted')] + [len(r.invalid) for r in rows])
  lines = ['', f'  {"Predicted":<{width}}  {"Count":>6}  {"Method":<8}  Corrected', '  ' + '-' * (width + 40)]
  for r in rows:
    lines.append(f'  {r.invalid:<{width}}  {r.count:>6}  {r.method:<8}  {r.corrected}')
  lines.extend(['', f'  {summary.caveat}', ''])
  return '\n'.join(lines)
