import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm, rankdata

from errors import DegenerateSample, LengthMismatch, TooFewValues

logger = logging.getLogger(__name__)

EXACT_MAX_N = 25
BOOTSTRAP_RESAMPLES = 10_000


@dataclass
class StatTestResult:
  statistic: float
  p_value: float
  n_effective: int
  method: str

  def as_dict(self) -> dict:
    return asdict(self)


def _exact_p(doubled_ranks: np.ndarray, doubled_w: int) -> float:
  """Two-sided p from the exact null distribution of W+ over all 2^n sign assignments."""
  total = int(doubled_ranks.sum())
  dist = np.zeros(total + 1, dtype=np.int64)
  dist[0] = 1
  for r in doubled_ranks:
    shifted = np.zeros_like(dist)
    shifted[r:] = dist[:-r]
    dist += shifted
  tail = int(dist[:doubled_w + 1].sum())
  return min(1.0, 2 * tail / 2 ** len(doubled_ranks))


def _normal_p(abs_d: np.ndarray, w: float) -> float:
  n = len(abs_d)
  mean = n * (n + 1) / 4
  _, ties = np.unique(abs_d, return_counts=True)
  var = n * (n + 1) * (2 * n + 1) / 24 - float(np.sum(ties ** 3 - ties)) / 48
  z = max(0.0, abs(w - mean) - 0.5) / np.sqrt(var)
  return float(min(1.0, 2 * norm.sf(z)))


def wilcoxon_signed_rank(a, b) -> StatTestResult:
  """Zeros dropped, average ranks for ties, W = min(W+, W-); exact p for up to 25 non-zero pairs."""
  a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
  if a.shape != b.shape:
    raise LengthMismatch(f'paired samples differ in length: {len(a)} vs {len(b)}')
  if len(a) < 2:
    raise TooFewValues(f'need at least 2 pairs, got {len(a)}')
  d = a - b
  d = d[d != 0]
  if len(d) == 0:
    raise DegenerateSample('all paired differences are zero')
  abs_d = np.abs(d)
  ranks = rankdata(abs_d, method='average')
  w_plus = float(ranks[d > 0].sum())
  w_minus = float(ranks[d < 0].sum())
  w = min(w_plus, w_minus)
  n = len(d)
  if n <= EXACT_MAX_N:
    doubled = np.rint(2 * ranks).astype(np.int64)
    p, method = _exact_p(doubled, int(round(2 * w))), 'exact'
  else:
    p, method = _normal_p(abs_d, w), 'normal_approx'
  return StatTestResult(statistic=w, p_value=p, n_effective=n, method=method)


def confidence_interval(values, level: float = 0.95, seed: int = 42, resamples: int = BOOTSTRAP_RESAMPLES) -> tuple[float, float]:
  """Percentile bootstrap interval of the mean."""
  x = np.asarray(values, dtype=np.float64)
  if len(x) < 2:
    raise TooFewValues(f'need at least 2 values for an interval, got {len(x)}')
  if np.all(x == x[0]):
    return float(x[0]), float(x[0])
  rng = np.random.default_rng(seed)
  means = x[rng.integers(0, len(x), size=(resamples, len(x)))].mean(axis=1)
  alpha = (1 - level) / 2
  low, high = np.percentile(means, [100 * alpha, 100 * (1 - alpha)])
  mean = float(x.mean())
  return float(min(low, mean)), float(max(high, mean))
