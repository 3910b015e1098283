import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from errors import NoParsableLines, SectionSegError
from helpers import append_jsonl, sha256_hex
from models import CompletionClientConfig, LabelSet, Note, PredictionRecord

from .completion_client import CompletionClient
from .parsing import ParsedPrediction, failed_prediction, parse_predictions, reconcile_length
from .prompts import build_prompt, render_template

logger = logging.getLogger(__name__)


class RunLog:
  """Append-only JSONL of prompt digests and raw completions, one record per note in input order."""

  def __init__(self, path: str | Path | None):
    self.path = Path(path) if path else None

  def write_all(self, records: list[dict]) -> None:
    if self.path is None:
      return
    for record in records:
      append_jsonl(self.path, record)


def _segment_one(client: CompletionClient, note: Note, label_set: LabelSet, family: str) -> tuple[ParsedPrediction, dict]:
  L = len(note.lines)
  raw, retries, prompt_sha = None, 0, None
  try:
    bundle = build_prompt(note, label_set, family)
    prompt_sha = sha256_hex(render_template(bundle).encode('utf-8'))
    completion = client.complete(bundle)
    raw, retries = completion.text, completion.retries
    try:
      parsed = parse_predictions(raw, L, note.note_id)
    except NoParsableLines:
      logger.warning('note_id=%s reprompt=1 reason=no_parsable_lines', note.note_id)
      completion = client.complete(bundle)
      raw, retries = completion.text, retries + completion.retries + 1
      parsed = parse_predictions(raw, L, note.note_id)
    result = reconcile_length(parsed, L)
    result.retries = retries
  except SectionSegError as e:
    logger.error('note_id=%s error=%s', note.note_id, e)
    result = failed_prediction(note.note_id, L, str(e), raw, retries)
  d = result.diagnostics
  logger.info(
    'note_id=%s family=%s parsed=%d expected=%d padded=%d truncated=%d retries=%d',
    note.note_id, family, d.parsed_count, d.expected_count, d.padded, d.truncated, result.retries,
  )
  record = {
    'note_id': note.note_id,
    'family': family,
    'prompt_sha256': prompt_sha,
    'raw_completion': raw,
    'diagnostics': d.as_dict(),
  }
  if result.error:
    record['error'] = result.error
  return result, record


def segment_with_llm(
  config: CompletionClientConfig,
  notes: list[Note],
  label_set: LabelSet,
  family: str,
  client: CompletionClient | None = None,
  run_log_path: str | Path | None = None,
) -> list[ParsedPrediction]:
  """One prediction per note, in input order; a failing note carries an error instead of stopping the batch."""
  run_log = RunLog(run_log_path)
  own_client = client is None
  if own_client:
    client = CompletionClient(config)
    client.connect()
  try:
    with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
      outcomes = list(pool.map(lambda n: _segment_one(client, n, label_set, family), notes))
  finally:
    if own_client:
      client.close()
  run_log.write_all([record for _, record in outcomes])
  return [result for result, _ in outcomes]


def to_prediction_records(results: list[ParsedPrediction], engine: str = 'llm') -> list[PredictionRecord]:
  records: list[PredictionRecord] = []
  for r in results:
    rec: PredictionRecord = {'note_id': r.note_id, 'engine': engine, 'predictions': list(r.labels)}
    if r.error:
      rec['error'] = r.error
    records.append(rec)
  return records
