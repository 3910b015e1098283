class SectionSegError(Exception):
  pass


class ConfigError(SectionSegError, ValueError):
  pass


class DataError(SectionSegError, ValueError):
  pass


class RemoteServiceError(SectionSegError, RuntimeError):
  retryable = False


class OverlappingSpans(DataError):
  pass


class SpanOutOfBounds(DataError):
  pass


class MalformedMaskedToken(DataError):
  pass


class UnknownLabel(DataError):
  pass


class InvalidLabelSet(DataError):
  pass


class MalformedRecord(DataError):

  def __init__(self, path: str, record_number: int, reason: str) -> None:
    super().__init__(f'{path}: record {record_number}: {reason}')
    self.path, self.record_number, self.reason = path, record_number, reason


class DimensionMismatch(DataError):
  pass


class EmptyTrainingSet(DataError):
  pass


class EmptyNote(DataError):
  pass


class MissingGold(DataError):
  pass


class LengthMismatch(DataError):

  def __init__(self, message: str, note_id: str | None = None) -> None:
    super().__init__(f'{note_id}: {message}' if note_id else message)
    self.note_id = note_id


class DegenerateSample(DataError):
  pass


class TooFewValues(DataError):
  pass


class NoParsableLines(DataError):
  pass


class TransportError(RemoteServiceError):

  def __init__(self, message: str, retryable: bool = True) -> None:
    super().__init__(message)
    self.retryable = retryable


class HttpStatus(RemoteServiceError):

  def __init__(self, code: int, body: str = '') -> None:
    super().__init__(f'HTTP {code}: {body[:200]}')
    self.code = code
    self.retryable = code == 429 or code >= 500


class EmptyCompletion(RemoteServiceError):
  retryable = True


EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_REMOTE = 0, 1, 2, 3


def exit_code_for(exc: BaseException) -> int:
  if isinstance(exc, RemoteServiceError):
    return EXIT_REMOTE
  if isinstance(exc, ConfigError):
    return EXIT_USAGE
  if isinstance(exc, (DataError, OSError)):
    return EXIT_DATA
  return EXIT_USAGE
