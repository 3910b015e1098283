import json
import re
import threading
from collections import deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import pytest

from models import AnnotatedNote, LabeledNote, LabelSet, SectionSpan

FIXTURES = Path(__file__).parent / 'fixtures'
GOLDEN = FIXTURES / 'golden'

SMALL_LABELS = ('<none>', 'chief-complaint', 'history-of-present-illness', 'imaging', 'labs', 'social-history')
TRANSITION_LABELS = ('<none>', 'alpha', 'beta', 'gamma', 'delta')

_LINE_RE = re.compile(r'^Line (\d+): ', re.MULTILINE)


class StubServer:
  """
  Local JSON endpoint. Replies come from a scripted queue of (status, body)
  and, once it is empty, from `responder(path, request_body)`.
  """

  def __init__(self):
    self.requests: list[dict] = []
    self.replies: deque = deque()
    self.responder = None
    self._lock = threading.Lock()
    stub = self

    class Handler(BaseHTTPRequestHandler):
      def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers['Content-Length'])))
        status, payload = stub._reply(self.path, body, dict(self.headers))
        data = payload.encode('utf-8') if isinstance(payload, str) else json.dumps(payload).encode('utf-8')
        self.send_response(status)
        self.send_header('Content-Type', 'application/json')
        self.send_header('Content-Length', str(len(data)))
        self.end_headers()
        self.wfile.write(data)

      def log_message(self, *args):
        pass

    self._server = ThreadingHTTPServer(('127.0.0.1', 0), Handler)
    self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

  @property
  def base_url(self) -> str:
    host, port = self._server.server_address[:2]
    return f'http://{host}:{port}'

  def script(self, *replies) -> None:
    self.replies.extend(replies)

  def _reply(self, path: str, body: dict, headers: dict):
    with self._lock:
      self.requests.append({'path': path, 'body': body, 'headers': headers})
      if self.replies:
        return self.replies.popleft()
    if self.responder is None:
      return 500, {'error': 'no scripted reply'}
    return self.responder(path, body)

  def start(self) -> None:
    self._thread.start()

  def stop(self) -> None:
    self._server.shutdown()
    self._server.server_close()


def chat_reply(text: str) -> tuple[int, dict]:
  return 200, {'choices': [{'index': 0, 'message': {'role': 'assistant', 'content': text}}]}


def user_text(body: dict) -> str:
  return body['messages'][-1]['content']


def note_block(body: dict) -> list[str]:
  """The enumerated 'Line N: text' rows of a segmentation prompt."""
  text = user_text(body)
  start = text.find('Clinical Note:\n')
  if start < 0:
    return []
  end = text.find('\n\nSelect the most', start)
  return text[start + len('Clinical Note:\n'):end].split('\n')


def echo_segmenter(headers: dict[str, str], fallback: str = 'assessment-and-plan'):
  """Responder answering every segmentation prompt by keyword lookup on each enumerated line."""

  def respond(path: str, body: dict):
    rows = []
    for row in note_block(body):
      match = _LINE_RE.match(row)
      line = row[match.end():].lower()
      header = next((h for key, h in headers.items() if key in line), '<none>')
      rows.append(f'Line {match.group(1)}: {header}')
    return chat_reply('\n'.join(rows) if rows else fallback)

  return respond


@pytest.fixture
def stub_server():
  server = StubServer()
  server.start()
  yield server
  server.stop()


@pytest.fixture
def golden():
  """
  Compare a JSON value with tests/fixtures/golden/<name>.json. A missing file is
  written from the current value and the test is skipped; commit it to freeze it.
  """
  def check(name: str, value) -> None:
    path = GOLDEN / f'{name}.json'
    text = json.dumps(value, indent=2, sort_keys=True) + '\n'
    if not path.exists():
      path.parent.mkdir(parents=True, exist_ok=True)
      path.write_text(text, encoding='utf-8')
      pytest.skip(f'wrote {path.name}')
    assert text == path.read_text(encoding='utf-8')

  return check


@pytest.fixture
def small_labels() -> LabelSet:
  return LabelSet('small', SMALL_LABELS)


@pytest.fixture
def transition_labels() -> LabelSet:
  return LabelSet('transition', TRANSITION_LABELS)


def transition_corpus(n_notes: int) -> list[LabeledNote]:
  """
  Cue line then two identical 'shared' lines. After an alpha cue the shared
  lines are beta, after a delta cue they are gamma, so only the transition
  tells them apart. Cue types alternate so any even count is balanced.
  """
  notes = []
  for i in range(n_notes):
    cue, follow = ('alpha', 'beta') if i % 2 == 0 else ('delta', 'gamma')
    notes.append(LabeledNote(
      note_id=f't{i}',
      lines=[f'{cue} cue marker', 'shared finding line', 'shared finding line'],
      labels=[cue, follow, follow],
    ))
  return notes


_SECTIONS = (
  ('chief-complaint', 'Chief Complaint: {} for three days.', ('cough', 'fever', 'chest pain', 'headache')),
  ('history-of-present-illness', 'HPI: Patient reports worsening {} since <DATE>.', ('dyspnea', 'fatigue', 'nausea')),
  ('social-history', 'Social History: {}.', ('Never smoker', 'Drinks socially', 'Lives with family')),
  ('labs', 'Labs: {} within normal limits.', ('CBC', 'BMP', 'troponin')),
  ('imaging', 'Imaging: {} unremarkable.', ('Chest x-ray', 'CT head', 'Ultrasound')),
)


def span_corpus(n_notes: int = 20, seed: int = 7) -> list[AnnotatedNote]:
  """Seeded span-annotated notes: an unlabeled preamble line then 3-5 one-line sections."""
  rng = np.random.default_rng(seed)
  notes = []
  for i in range(n_notes):
    k = int(rng.integers(3, 6))
    chosen = sorted(rng.choice(len(_SECTIONS), size=k, replace=False))
    text = f'Patient <NAME> seen in clinic note {i}.'
    spans = []
    for j in chosen:
      label, template, fillers = _SECTIONS[j]
      line = template.format(fillers[int(rng.integers(len(fillers)))])
      start = len(text) + 1
      text += '\n' + line
      spans.append(SectionSpan(start, len(text), label))
    notes.append(AnnotatedNote(note_id=f'n{i:02d}', text=text, spans=spans, category='physician' if i % 4 else 'radiology'))
  return notes


def write_span_jsonl(path: Path, notes: list[AnnotatedNote]) -> Path:
  with open(path, 'w', encoding='utf-8') as f:
    for n in notes:
      f.write(json.dumps({
        'note_id': n.note_id,
        'category': n.category,
        'text': n.text,
        'spans': [{'start': s.start, 'end': s.end, 'label': s.label} for s in n.spans],
      }) + '\n')
  return path


KEYWORD_HEADERS = {
  'chief complaint': 'Chief Complaint',
  'hpi:': 'history of present illness',
  'social history': 'social-history',
  'labs:': 'labs',
  'imaging:': 'Imaging Studies',
}
