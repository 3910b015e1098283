import hashlib
import json
import logging
import os
import sys
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Any, Iterable, Iterator

import msgpack
import requests
from tenacity import Retrying, retry_if_exception, stop_after_attempt, wait_exponential
from dotenv import load_dotenv  # type: ignore[import-untyped]

from errors import ConfigError, HttpStatus, MalformedRecord, RemoteServiceError, TransportError

logger = logging.getLogger(__name__)

load_dotenv()

API_KEY_ENV = 'SECTIONSEG_API_KEY'
API_BASE_ENV = 'SECTIONSEG_API_BASE'

_FNV_OFFSET = 0xcbf29ce484222325
_FNV_PRIME = 0x100000001b3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: str | bytes) -> int:
  if isinstance(data, str):
    data = data.encode('utf-8')
  h = _FNV_OFFSET
  for byte in data:
    h ^= byte
    h = (h * _FNV_PRIME) & _MASK64
  return h


def percent(numerator: int, denominator: int, places: int = 2) -> float:
  if denominator == 0:
    return 0.0
  exact = Decimal(100 * numerator) / Decimal(denominator)
  return float(exact.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP))


def _canonical(obj: Any) -> Any:
  if isinstance(obj, dict):
    return {str(k): _canonical(obj[k]) for k in sorted(obj, key=str)}
  if isinstance(obj, (list, tuple)):
    return [_canonical(v) for v in obj]
  if isinstance(obj, Path):
    return str(obj)
  return obj


def canonical_bytes(obj: Any) -> bytes:
  return msgpack.packb(_canonical(obj), use_bin_type=True)


def sha256_hex(obj: Any) -> str:
  data = obj if isinstance(obj, bytes) else canonical_bytes(obj)
  return hashlib.sha256(data).hexdigest()


def config_fingerprint(config: Any) -> str:
  """Short stable digest of a config (dataclass or dict), keys sorted."""
  from dataclasses import asdict, is_dataclass
  payload = asdict(config) if is_dataclass(config) else config
  return sha256_hex(payload)[:16]


def read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
  """Yield (record_number, object); record numbers are 1-based, blank lines skipped."""
  with open(path, encoding='utf-8') as f:
    for number, raw in enumerate(f, start=1):
      if not raw.strip():
        continue
      try:
        obj = json.loads(raw)
      except json.JSONDecodeError as e:
        raise MalformedRecord(str(path), number, f'invalid JSON ({e.msg})') from None
      if not isinstance(obj, dict):
        raise MalformedRecord(str(path), number, 'expected a JSON object')
      yield number, obj


def write_jsonl(path: str | Path, records: Iterable[dict]) -> int:
  Path(path).parent.mkdir(parents=True, exist_ok=True)
  n = 0
  with open(path, 'w', encoding='utf-8') as f:
    for record in records:
      f.write(json.dumps(record, ensure_ascii=False) + '\n')
      n += 1
  return n


def append_jsonl(path: str | Path, record: dict) -> None:
  Path(path).parent.mkdir(parents=True, exist_ok=True)
  with open(path, 'a', encoding='utf-8') as f:
    f.write(json.dumps(record, ensure_ascii=False) + '\n')


def write_json(path: str | Path, obj: Any) -> None:
  Path(path).parent.mkdir(parents=True, exist_ok=True)
  with open(path, 'w', encoding='utf-8') as f:
    json.dump(obj, f, ensure_ascii=False, indent=2, sort_keys=True)
    f.write('\n')


def get_api_key(api_key: str | None = None) -> str | None:
  return api_key or os.getenv(API_KEY_ENV) or None


def get_api_base(base_url: str | None = None) -> str:
  base = base_url or os.getenv(API_BASE_ENV)
  if not base:
    raise ConfigError(f'Set {API_BASE_ENV} in .env or pass a base URL explicitly.')
  return base.rstrip('/')


def setup_logging(log_file: str | None = None, verbose: bool = False) -> None:
  """Send log messages to stderr and, optionally, to an appended log file."""
  root = logging.getLogger()
  root.setLevel(logging.DEBUG if verbose else logging.INFO)
  root.handlers.clear()
  fmt = logging.Formatter('%(message)s')
  sh = logging.StreamHandler(sys.stderr)
  sh.setFormatter(fmt)
  root.addHandler(sh)
  if log_file:
    fh = logging.FileHandler(log_file, mode='a', encoding='utf-8')
    fh.setFormatter(fmt)
    root.addHandler(fh)


def post_json(session: requests.Session, url: str, body: dict, timeout_ms: int, api_key: str | None = None) -> dict:
  """POST a JSON body and return the decoded JSON reply, mapping failures to RemoteServiceError."""
  headers = {'Content-Type': 'application/json'}
  if api_key:
    headers['Authorization'] = f'Bearer {api_key}'
  data = json.dumps(body, ensure_ascii=False).encode('utf-8')
  try:
    resp = session.post(url, data=data, headers=headers, timeout=timeout_ms / 1000)
  except requests.Timeout:
    raise TransportError(f'timeout after {timeout_ms} ms: {url}') from None
  except requests.RequestException as e:
    raise TransportError(f'{url}: {e}') from None
  if resp.status_code != 200:
    raise HttpStatus(resp.status_code, resp.text)
  try:
    return resp.json()
  except ValueError:
    raise TransportError(f'{url}: response is not JSON', retryable=False) from None


def _is_retryable(exc: BaseException) -> bool:
  return isinstance(exc, RemoteServiceError) and exc.retryable


def _log_retry(state) -> None:
  logger.warning('retry attempt=%d error=%s', state.attempt_number, state.outcome.exception())


def retrying(max_retries: int, backoff_ms: int) -> Retrying:
  """Retry retryable remote errors up to `max_retries` times with exponential backoff."""
  return Retrying(
    retry=retry_if_exception(_is_retryable),
    stop=stop_after_attempt(max_retries + 1),
    wait=wait_exponential(multiplier=backoff_ms / 1000, max=30),
    before_sleep=_log_retry,
    reraise=True,
  )
