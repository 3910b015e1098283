import numpy as np

_RESCALE_BELOW = 1e-9


class LazyScaledWeights:
  """
  Dense weights stored as scale * raw so that L2 weight decay is a scalar
  update and a gradient step only touches the active columns.
  """

  def __init__(self, raw: np.ndarray) -> None:
    self._raw = np.array(raw, dtype=np.float64)
    self.scale = 1.0

  @classmethod
  def zeros(cls, rows: int, cols: int) -> 'LazyScaledWeights':
    return cls(np.zeros((rows, cols)))

  @property
  def shape(self) -> tuple[int, int]:
    return self._raw.shape

  def columns(self, cols: np.ndarray) -> np.ndarray:
    return self.scale * self._raw[:, cols]

  def scores(self, X) -> np.ndarray:
    """X (N x D, sparse or dense) times W^T."""
    return np.asarray(X @ self._raw.T) * self.scale

  def squared_norm(self) -> float:
    return self.scale ** 2 * float(np.vdot(self._raw, self._raw))

  def decay(self, factor: float) -> None:
    self.scale *= factor
    if self.scale < _RESCALE_BELOW:
      self._raw *= self.scale
      self.scale = 1.0

  def add_to_columns(self, cols: np.ndarray, delta: np.ndarray) -> None:
    self._raw[:, cols] += delta / self.scale

  def sgd_step(self, cols: np.ndarray, grad: np.ndarray, lr: float, l2: float) -> None:
    """W <- W - lr * (grad + l2 * W), with grad given only on `cols`."""
    self.decay(1.0 - lr * l2)
    self.add_to_columns(cols, -lr * grad)

  def dense(self) -> np.ndarray:
    return self._raw * self.scale


def active_columns(X) -> tuple[np.ndarray, object]:
  """Columns used by a row block and the block restricted to them."""
  if hasattr(X, 'indices'):
    cols = np.unique(X.indices)
    return cols, X[:, cols]
  cols = np.arange(X.shape[1])
  return cols, X
