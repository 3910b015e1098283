import re
from dataclasses import dataclass, field
import sys
from typing import Literal, TypedDict

if sys.version_info >= (3, 11):
  from typing import NotRequired
else:
  from typing_extensions import NotRequired

from errors import InvalidLabelSet

OUTSIDE_LABEL = '<none>'
_SLUG_RE = re.compile(r'[a-z0-9<>][a-z0-9<>-]*')

EngineName = Literal['crf', 'classifier', 'llm']
Family = Literal['llama', 'mistral', 'qwen']
EncoderKind = Literal['feature_linear', 'remote_embedding']
CorrectionMode = Literal['off', 'fallback_only', 'llm']

ENGINES: tuple[str, ...] = ('crf', 'classifier', 'llm')
FAMILIES: tuple[str, ...] = ('llama', 'mistral', 'qwen')
CORRECTION_MODES: tuple[str, ...] = ('off', 'fallback_only', 'llm')


@dataclass(frozen=True)
class LabelSet:
  name: str
  labels: tuple[str, ...]
  outside_label: str = OUTSIDE_LABEL
  _index: dict[str, int] = field(init=False, repr=False, compare=False)

  def __post_init__(self) -> None:
    labels = tuple(self.labels)
    object.__setattr__(self, 'labels', labels)
    bad = [l for l in labels if not _SLUG_RE.fullmatch(l)]
    if bad:
      raise InvalidLabelSet(f'{self.name}: malformed labels {bad[:5]}')
    if len(set(labels)) != len(labels):
      dupes = sorted({l for l in labels if labels.count(l) > 1})
      raise InvalidLabelSet(f'{self.name}: duplicate labels {dupes}')
    if labels.count(self.outside_label) != 1:
      raise InvalidLabelSet(f'{self.name}: must contain {self.outside_label} exactly once')
    object.__setattr__(self, '_index', {l: i for i, l in enumerate(labels)})

  def __len__(self) -> int:
    return len(self.labels)

  def __contains__(self, label: object) -> bool:
    return label in self._index

  def __iter__(self):
    return iter(self.labels)

  def index(self, label: str) -> int:
    return self._index[label]

  def label(self, index: int) -> str:
    return self.labels[index]


@dataclass(frozen=True)
class SectionSpan:
  start: int
  end: int
  label: str


@dataclass
class Note:
  note_id: str
  lines: list[str]
  category: str | None = None

  def contexts(self) -> list["LineContext"]:
    n = len(self.lines)
    return [LineContext(text, i, n) for i, text in enumerate(self.lines)]


@dataclass
class AnnotatedNote:
  """Raw note text plus character-offset section spans."""
  note_id: str
  text: str
  spans: list[SectionSpan]
  category: str | None = None


@dataclass(frozen=True)
class LineContext:
  """One line plus where it sits in its note."""
  text: str
  position: int = 0
  note_length: int = 1


@dataclass
class LabeledNote:
  note_id: str
  lines: list[str]
  labels: list[str]
  category: str | None = None

  def as_note(self) -> Note:
    return Note(note_id=self.note_id, lines=list(self.lines), category=self.category)

  def contexts(self) -> list[LineContext]:
    n = len(self.lines)
    return [LineContext(text, i, n) for i, text in enumerate(self.lines)]


@dataclass
class FeatureConfig:
  feature_space_size: int = 2 ** 20
  max_tokens: int = 100
  char_ngram: int = 3
  position_buckets: int = 5


@dataclass
class ClassifierTrainConfig:
  epochs: int = 20
  learning_rate: float = 0.1
  l2: float = 1e-4
  seed: int = 0
  batch_size: int = 64


@dataclass
class CrfTrainConfig:
  epochs: int = 10
  learning_rate: float = 0.05
  l2: float = 1e-4
  seed: int = 0
  max_tokens: int = 100


@dataclass
class EmbeddingProviderConfig:
  base_url: str | None = None
  model_name: str = 'text-embedding'
  embed_dim: int = 768
  timeout_ms: int = 30000
  max_in_flight: int = 4
  batch_size: int = 32

  def __post_init__(self) -> None:
    if self.embed_dim < 1 or self.max_in_flight < 1:
      raise ValueError('embed_dim and max_in_flight must be >= 1')


@dataclass
class CompletionClientConfig:
  base_url: str | None = None
  model_name: str = 'llama-3.3-70b-instruct'
  temperature: float = 0.0
  max_output_tokens: int | None = None
  timeout_ms: int = 120000
  max_retries: int = 2
  max_in_flight: int = 4
  backoff_ms: int = 500

  def __post_init__(self) -> None:
    if self.temperature < 0 or self.max_retries < 0:
      raise ValueError('temperature and max_retries must be >= 0')
    if self.max_in_flight < 1:
      raise ValueError('max_in_flight must be >= 1')


@dataclass
class SplitConfig:
  fraction: float = 0.8
  seed: int = 42
  level: Literal['line', 'note'] = 'note'


@dataclass
class RunConfig:
  labels_path: str
  train_path: str | None = None
  eval_path: str | None = None
  consolidation_path: str | None = None
  engine: str = 'crf'
  encoder_kind: str = 'feature_linear'
  family: str = 'llama'
  features: FeatureConfig = field(default_factory=FeatureConfig)
  classifier: ClassifierTrainConfig = field(default_factory=ClassifierTrainConfig)
  crf: CrfTrainConfig = field(default_factory=CrfTrainConfig)
  completion: CompletionClientConfig = field(default_factory=CompletionClientConfig)
  embedding: EmbeddingProviderConfig | None = None
  split: SplitConfig = field(default_factory=SplitConfig)
  max_note_lines: int | None = 100
  correction_mode: str = 'fallback_only'
  correction_cache_path: str | None = None
  out_dir: str = 'runs'
  seed: int = 42


class SpanRecord(TypedDict):
  start: int
  end: int
  label: str


class SpanNoteRecord(TypedDict):
  note_id: str
  category: str | None
  text: str
  spans: list[SpanRecord]


class LineNoteRecord(TypedDict):
  note_id: str
  lines: list[str]
  labels: list[str]
  category: NotRequired[str | None]


class PredictionRecord(TypedDict, total=False):
  note_id: str
  engine: str
  predictions: list[str]
  error: str


class ChatMessage(TypedDict):
  role: str
  content: str
