"""
Segmentation prompt and its per-family chat framing.

The task text is the same for every family; only the role framing changes.
"""
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from errors import ConfigError, EmptyNote
from models import FAMILIES, ChatMessage, LabelSet, Note

PROMPT_DIR = Path(__file__).resolve().parent.parent / 'data' / 'prompts'
SEGMENTATION_TEMPLATE = 'segmentation_v1'
SYSTEM_TEXT = 'You are a clinical assistant specializing in segmenting clinical notes.'
ASSISTANT_CUE = 'Section Headers:'

_RAW_TEMPLATES = {
  'llama': (
    '<|begin_of_text|><|start_header_id|>system<|end_header_id|>\n\n{system}<|eot_id|>'
    '<|start_header_id|>user<|end_header_id|>\n\n{user}<|eot_id|>'
    '<|start_header_id|>assistant<|end_header_id|>\n\n{cue}'
  ),
  'mistral': '<s>[INST] {user} [/INST]{cue}',
  'qwen': (
    '<|im_start|>system\n{system}<|im_end|>\n'
    '<|im_start|>user\n{user}<|im_end|>\n'
    '<|im_start|>assistant\n{cue}'
  ),
}


@dataclass
class PromptBundle:
  family: str
  messages: list[ChatMessage]
  expected_line_count: int
  label_set_name: str
  note_id: str = ''
  template: str = SEGMENTATION_TEMPLATE
  meta: dict = field(default_factory=dict)

  def role_content(self, role: str) -> str:
    return next((m['content'] for m in self.messages if m['role'] == role), '')


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
  path = PROMPT_DIR / f'{name}.txt'
  if not path.exists():
    raise ConfigError(f'prompt template not found: {path}')
  return path.read_text(encoding='utf-8').rstrip('\n')


def enumerate_lines(lines: list[str]) -> str:
  return '\n'.join(f'Line {i}: {text}' for i, text in enumerate(lines))


def user_content(note: Note, label_set: LabelSet) -> str:
  return load_template(SEGMENTATION_TEMPLATE).format(
    note=enumerate_lines(note.lines),
    options=', '.join(label_set.labels),
    line_count=len(note.lines),
  )


def check_family(family: str) -> str:
  if family not in FAMILIES:
    raise ConfigError(f'unknown model family {family}; expected one of {", ".join(FAMILIES)}')
  return family


def build_prompt(note: Note, label_set: LabelSet, family: str) -> PromptBundle:
  check_family(family)
  if not note.lines:
    raise EmptyNote(f'{note.note_id}: note has no lines')
  user = user_content(note, label_set)
  if family == 'mistral':
    # no system role; the system text leads the first user turn
    messages: list[ChatMessage] = [{'role': 'user', 'content': f'{SYSTEM_TEXT}\n\n{user}'}]
  else:
    messages = [{'role': 'system', 'content': SYSTEM_TEXT}, {'role': 'user', 'content': user}]
  return PromptBundle(
    family=family,
    messages=messages,
    expected_line_count=len(note.lines),
    label_set_name=label_set.name,
    note_id=note.note_id,
  )


def render_template(bundle: PromptBundle) -> str:
  """Raw prompt string in the family's chat syntax, ending with the assistant cue."""
  return _RAW_TEMPLATES[check_family(bundle.family)].format(
    system=bundle.role_content('system'),
    user=bundle.role_content('user'),
    cue=ASSISTANT_CUE,
  )
