"""
Chat-completion endpoint client: POST {base_url}/v1/chat/completions.

Endpoint defaults come from .env: SECTIONSEG_API_BASE, SECTIONSEG_API_KEY (optional bearer token).

- CompletionClient: one HTTP session, reuse for many notes and for the
  header-mapping and error-classification prompts.
- request_completion: one-off completion for a prompt bundle.
"""
import logging
from dataclasses import dataclass

import requests

from errors import EmptyCompletion, TransportError
from helpers import get_api_base, get_api_key, post_json, retrying
from models import ChatMessage, CompletionClientConfig

from .prompts import PromptBundle

logger = logging.getLogger(__name__)


@dataclass
class Completion:
  text: str
  retries: int = 0


def output_budget(config: CompletionClientConfig, line_count: int) -> int:
  return config.max_output_tokens or 8 * line_count + 64


def build_chat_request(config: CompletionClientConfig, messages: list[ChatMessage], max_tokens: int) -> dict:
  return {
    'model': config.model_name,
    'messages': [{'role': m['role'], 'content': m['content']} for m in messages],
    'temperature': config.temperature,
    'max_tokens': max_tokens,
  }


def _content(reply: dict) -> str:
  try:
    text = reply['choices'][0]['message']['content']
  except (KeyError, IndexError, TypeError):
    raise TransportError('response lacks choices[0].message.content', retryable=False) from None
  if not isinstance(text, str) or not text.strip():
    raise EmptyCompletion('endpoint returned an empty completion')
  return text


class CompletionClient:
  """
  Session-backed chat client. Transport failures, 429/5xx and empty content
  are retried up to max_retries times with exponential backoff.
  """

  def __init__(self, config: CompletionClientConfig, api_key: str | None = None):
    self.config = config
    self._url = f'{get_api_base(config.base_url)}/v1/chat/completions'
    self._api_key = get_api_key(api_key)
    self._session: requests.Session | None = None

  def connect(self) -> None:
    if self._session is None:
      self._session = requests.Session()

  def close(self) -> None:
    if self._session is not None:
      try:
        self._session.close()
      finally:
        self._session = None

  def __enter__(self) -> 'CompletionClient':
    self.connect()
    return self

  def __exit__(self, *args: object) -> None:
    self.close()

  def _request(self, body: dict) -> Completion:
    if self._session is None:
      raise RuntimeError('Not connected. Call connect() or use context manager.')
    retries = 0
    for attempt in retrying(self.config.max_retries, self.config.backoff_ms):
      with attempt:
        retries = attempt.retry_state.attempt_number - 1
        text = _content(post_json(self._session, self._url, body, self.config.timeout_ms, self._api_key))
    return Completion(text, retries)

  def chat(self, messages: list[ChatMessage], max_tokens: int) -> Completion:
    return self._request(build_chat_request(self.config, messages, max_tokens))

  def complete(self, bundle: PromptBundle) -> Completion:
    return self.chat(bundle.messages, output_budget(self.config, bundle.expected_line_count))


def request_completion(config: CompletionClientConfig, bundle: PromptBundle, api_key: str | None = None) -> str:
  with CompletionClient(config, api_key) as client:
    return client.complete(bundle).text
