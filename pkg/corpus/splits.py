import logging
from decimal import Decimal
from typing import Iterable

import numpy as np

from errors import ConfigError, EmptyTrainingSet
from models import LabeledNote, LineContext

logger = logging.getLogger(__name__)

LinePair = tuple[LineContext, str]


def _train_size(fraction: float, n: int) -> int:
  if not 0 < fraction <= 1:
    raise ConfigError(f'train fraction must be in (0, 1], got {fraction}')
  # floor on the decimal value so 0.8 * 10 is 8, not 7
  return int(Decimal(repr(fraction)) * n)


def split_line_level(dataset: list[LabeledNote], train_fraction: float, seed: int) -> tuple[list[LinePair], list[LinePair]]:
  """Pool (line context, label) pairs across notes, shuffle with a seeded generator and cut at floor(fraction * N)."""
  pairs = [(ctx, label) for note in dataset for ctx, label in zip(note.contexts(), note.labels)]
  if not pairs:
    raise EmptyTrainingSet('no lines to split')
  n_train = _train_size(train_fraction, len(pairs))
  order = np.random.default_rng(seed).permutation(len(pairs))
  train = [pairs[i] for i in order[:n_train]]
  held = [pairs[i] for i in order[n_train:]]
  logger.info('split=line seed=%d train=%d eval=%d', seed, len(train), len(held))
  return train, held


def split_note_level(dataset: list[LabeledNote], train_fraction: float, seed: int) -> tuple[list[LabeledNote], list[LabeledNote]]:
  """Note-level partition; both halves keep the input note order."""
  if not dataset:
    raise EmptyTrainingSet('no notes to split')
  n_train = _train_size(train_fraction, len(dataset))
  order = np.random.default_rng(seed).permutation(len(dataset))
  chosen = set(int(i) for i in order[:n_train])
  train = [n for i, n in enumerate(dataset) if i in chosen]
  held = [n for i, n in enumerate(dataset) if i not in chosen]
  logger.info('split=note seed=%d train=%d eval=%d', seed, len(train), len(held))
  return train, held


def filter_notes_by_length(dataset: list, max_lines: int) -> list:
  if max_lines < 1:
    raise ConfigError(f'max_lines must be >= 1, got {max_lines}')
  kept = [n for n in dataset if len(n.lines) <= max_lines]
  if len(kept) != len(dataset):
    logger.info('max_lines=%d dropped_notes=%d kept=%d', max_lines, len(dataset) - len(kept), len(kept))
  return kept


def filter_by_category(dataset: list, categories: Iterable[str]) -> list:
  wanted = {c.lower() for c in categories}
  return [n for n in dataset if n.category is not None and n.category.lower() in wanted]
