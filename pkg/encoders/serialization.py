"""
Versioned JSON model envelope.

Weights are stored by their non-zero columns only: hashed feature spaces are
wide and mostly untouched by any one corpus.
"""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from errors import ConfigError
from helpers import sha256_hex, write_json
from models import EmbeddingProviderConfig, FeatureConfig, LabelSet

from .params import EncoderParams

FORMAT_VERSION = 1


@dataclass
class SavedModel:
  engine: str
  params: EncoderParams
  features: FeatureConfig
  config_fingerprint: str
  loss_trace: list[float] = field(default_factory=list)
  embedding: EmbeddingProviderConfig | None = None
  extra: dict[str, np.ndarray] = field(default_factory=dict)


def encode_weights(W: np.ndarray) -> dict:
  cols = np.flatnonzero(np.any(W != 0, axis=0))
  return {'shape': list(W.shape), 'columns': cols.tolist(), 'values': W[:, cols].tolist()}


def decode_weights(obj: dict) -> np.ndarray:
  rows, dim = obj['shape']
  W = np.zeros((rows, dim))
  cols = np.asarray(obj['columns'], dtype=np.int64)
  if len(cols):
    W[:, cols] = np.asarray(obj['values'], dtype=np.float64).reshape(rows, len(cols))
  return W


def model_envelope(model: SavedModel) -> dict:
  envelope = {
    'format_version': FORMAT_VERSION,
    'engine': model.engine,
    'label_set': {'name': model.params.label_set.name, 'labels': list(model.params.label_set.labels)},
    'encoder_kind': model.params.encoder_kind,
    'dims': {'labels': model.params.weights.shape[0], 'input': model.params.dim},
    'weights': encode_weights(model.params.weights),
    'features': asdict(model.features),
    'embedding': asdict(model.embedding) if model.embedding else None,
    'config_fingerprint': model.config_fingerprint,
    'loss_trace': [float(x) for x in model.loss_trace],
  }
  for key, value in model.extra.items():
    envelope[key] = np.asarray(value, dtype=np.float64).tolist()
  return envelope


def save_model(path: str | Path, model: SavedModel) -> str:
  """Write the envelope; returns the SHA-256 of the file bytes."""
  write_json(path, model_envelope(model))
  return sha256_hex(Path(path).read_bytes())


def load_model(path: str | Path, extra_keys: tuple[str, ...] = ()) -> SavedModel:
  p = Path(path)
  if not p.exists():
    raise ConfigError(f'model file not found: {p}')
  obj = json.loads(p.read_text(encoding='utf-8'))
  if obj.get('format_version') != FORMAT_VERSION:
    raise ConfigError(f'{p}: unsupported model format_version {obj.get("format_version")}')
  label_set = LabelSet(name=obj['label_set']['name'], labels=tuple(obj['label_set']['labels']))
  params = EncoderParams(decode_weights(obj['weights']), label_set, obj['encoder_kind'])
  missing = [k for k in extra_keys if k not in obj]
  if missing:
    raise ConfigError(f'{p}: {obj["engine"]} model file lacks {missing}')
  return SavedModel(
    engine=obj['engine'],
    params=params,
    features=FeatureConfig(**obj['features']),
    config_fingerprint=obj['config_fingerprint'],
    loss_trace=list(obj.get('loss_trace', [])),
    embedding=EmbeddingProviderConfig(**obj['embedding']) if obj.get('embedding') else None,
    extra={k: np.asarray(obj[k], dtype=np.float64) for k in extra_keys},
  )
