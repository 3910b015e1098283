"""
Run configuration: one JSON file plus command-line overrides (flags win).

Relative paths in the file resolve against the file's directory.
"""
import json
from dataclasses import fields, replace
from pathlib import Path
from typing import Any

from errors import ConfigError
from models import (
  CORRECTION_MODES, ENGINES, FAMILIES, ClassifierTrainConfig, CompletionClientConfig, CrfTrainConfig,
  EmbeddingProviderConfig, FeatureConfig, RunConfig, SplitConfig,
)

_NESTED = {
  'features': FeatureConfig,
  'classifier': ClassifierTrainConfig,
  'crf': CrfTrainConfig,
  'completion': CompletionClientConfig,
  'embedding': EmbeddingProviderConfig,
  'split': SplitConfig,
}
_INPUT_PATHS = ('labels_path', 'train_path', 'eval_path', 'consolidation_path')
_OUTPUT_PATHS = ('correction_cache_path', 'out_dir')
ENCODER_KINDS = ('feature_linear', 'remote_embedding')


def _build(cls: type, obj: dict, where: str) -> Any:
  if not isinstance(obj, dict):
    raise ConfigError(f'{where}: expected an object')
  known = {f.name for f in fields(cls)}
  unknown = sorted(set(obj) - known)
  if unknown:
    raise ConfigError(f'{where}: unknown keys {unknown}')
  try:
    return cls(**obj)
  except (TypeError, ValueError) as e:
    raise ConfigError(f'{where}: {e}') from None


def run_config_from_dict(obj: dict, base_dir: Path | None = None) -> RunConfig:
  obj = dict(obj)
  for key, cls in _NESTED.items():
    if obj.get(key) is not None:
      obj[key] = _build(cls, obj[key], key)
  if base_dir is not None:
    for key in _INPUT_PATHS + _OUTPUT_PATHS:
      if obj.get(key) and not Path(obj[key]).is_absolute():
        obj[key] = str(base_dir / obj[key])
  if 'labels_path' not in obj:
    obj['labels_path'] = ''
  return _build(RunConfig, obj, 'run config')


def apply_overrides(config: RunConfig, overrides: dict[str, Any]) -> RunConfig:
  """Dotted keys reach nested configs: {'crf.epochs': 0}. None values are ignored."""
  top: dict[str, Any] = {}
  nested: dict[str, dict[str, Any]] = {}
  for key, value in overrides.items():
    if value is None:
      continue
    if '.' in key:
      section, name = key.split('.', 1)
      nested.setdefault(section, {})[name] = value
    else:
      top[key] = value
  for section, values in nested.items():
    current = getattr(config, section)
    if current is None:
      current = _NESTED[section]()
    try:
      top[section] = replace(current, **values)
    except (TypeError, ValueError) as e:
      raise ConfigError(f'{section}: {e}') from None
  return replace(config, **top)


def validate_run_config(config: RunConfig, require: tuple[str, ...] = ('labels_path',)) -> RunConfig:
  if config.engine not in ENGINES:
    raise ConfigError(f'unknown engine {config.engine}; expected one of {", ".join(ENGINES)}')
  if config.family not in FAMILIES:
    raise ConfigError(f'unknown family {config.family}; expected one of {", ".join(FAMILIES)}')
  if config.correction_mode not in CORRECTION_MODES:
    raise ConfigError(f'unknown correction mode {config.correction_mode}')
  if config.encoder_kind not in ENCODER_KINDS:
    raise ConfigError(f'unknown encoder kind {config.encoder_kind}')
  if config.encoder_kind == 'remote_embedding' and config.embedding is None:
    raise ConfigError('encoder_kind remote_embedding needs an "embedding" section')
  for key in require:
    if not getattr(config, key):
      raise ConfigError(f'{key} is required (set it in the config file or with a flag)')
  for key in _INPUT_PATHS:
    value = getattr(config, key)
    if value and not Path(value).exists():
      raise ConfigError(f'{key}: file not found: {value}')
  return config


def load_run_config(path: str | Path | None, overrides: dict[str, Any] | None = None) -> RunConfig:
  if path is None:
    config = RunConfig(labels_path='')
  else:
    p = Path(path)
    if not p.exists():
      raise ConfigError(f'config file not found: {p}')
    try:
      obj = json.loads(p.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
      raise ConfigError(f'{p}: invalid JSON ({e.msg})') from None
    config = run_config_from_dict(obj, p.resolve().parent)
  return apply_overrides(config, overrides or {})

