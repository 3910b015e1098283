import itertools

import numpy as np
import pytest
from scipy.stats import norm, rankdata

from conftest import SMALL_LABELS, chat_reply, user_text
from errors import DegenerateSample, LengthMismatch, TooFewValues, UnknownLabel
from evaluation.comparison import compare_engines
from evaluation.display import format_comparison, format_error_breakdown, format_metrics_extras, format_metrics_table
from evaluation.error_analysis import (
  LABEL_CONFUSION, OMISSION, OTHER, VALID_LOCAL, categorize_errors, is_omission, parse_category,
)
from evaluation.metrics import MetricsReport, confusion_counts, corpus_counts, per_note_scores, prf_metrics
from evaluation.significance import BOOTSTRAP_RESAMPLES, confidence_interval, wilcoxon_signed_rank
from llm_segmenter.completion_client import CompletionClient
from models import CompletionClientConfig, LabeledNote

GOLD = ['chief-complaint', 'chief-complaint', 'labs', '<none>']
PRED = ['chief-complaint', 'labs', 'labs', 'bogus']
CI_VALUES = [
  0.91, 0.84, 0.77, 0.95, 0.62, 0.88, 0.73, 0.99, 0.58, 0.81,
  0.69, 0.92, 0.86, 0.74, 0.65, 0.97, 0.79, 0.83, 0.71, 0.9,
]


def _brute_force(gold: list[str], pred: list[str], labels: tuple[str, ...]) -> tuple[float, ...]:
  ps, rs, fs, supports = [], [], [], []
  for label in labels:
    tp = sum(g == label and p == label for g, p in zip(gold, pred))
    fp = sum(g != label and p == label for g, p in zip(gold, pred))
    fn = sum(g == label and p != label for g, p in zip(gold, pred))
    if tp + fn == 0:
      continue
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn)
    ps.append(p)
    rs.append(r)
    fs.append(2 * p * r / (p + r) if p + r else 0.0)
    supports.append(tp + fn)
  w = np.array(supports, dtype=float) / sum(supports)
  return (float(np.mean(ps)), float(np.mean(rs)), float(np.mean(fs)), float(w @ ps), float(w @ rs), float(w @ fs))


class TestMetrics:
  """Per-label counts and averaged precision, recall and F1."""

  def test_perfect_predictions(self, small_labels):
    report = prf_metrics(confusion_counts(GOLD, GOLD, small_labels))
    assert report.aggregates() == pytest.approx((1.0,) * 6)
    assert report.accuracy == 1.0

  def test_hand_computed(self, small_labels):
    report = prf_metrics(confusion_counts(GOLD, PRED, small_labels))
    assert report.aggregates() == pytest.approx((0.5, 0.5, 4 / 9, 0.625, 0.5, 0.5))
    assert report.accuracy == 0.5
    assert report.invalid_predictions == 1
    assert 'bogus' not in report.per_label
    assert report.per_label['labs'].precision == 0.5

  def test_excluding_outside(self, small_labels):
    report = prf_metrics(confusion_counts(GOLD, PRED, small_labels), exclude=('<none>',))
    assert report.MP == pytest.approx(0.75)
    assert report.MF1 == pytest.approx(2 / 3)
    assert report.wP == pytest.approx(5 / 6)

  def test_all_labels_average(self, small_labels):
    report = prf_metrics(confusion_counts(GOLD, PRED, small_labels), include='all')
    assert report.MF1 == pytest.approx((4 / 3) / len(SMALL_LABELS))
    assert report.macro_f1_all_labels == pytest.approx(report.MF1)

  def test_against_brute_force(self, small_labels):
    rng = np.random.default_rng(99)
    choices = list(SMALL_LABELS) + ['bogus']
    for _ in range(200):
      n = int(rng.integers(1, 30))
      gold = [SMALL_LABELS[i] for i in rng.integers(0, len(SMALL_LABELS), size=n)]
      pred = [choices[i] for i in rng.integers(0, len(choices), size=n)]
      report = prf_metrics(confusion_counts(gold, pred, small_labels))
      assert report.aggregates() == pytest.approx(_brute_force(gold, pred, SMALL_LABELS), abs=1e-12)
      assert report.invalid_predictions == pred.count('bogus')

  def test_corpus_counts_sum_notes(self, small_labels):
    total = corpus_counts([GOLD, ['labs']], [PRED, ['labs']], small_labels)
    assert total.total == 5
    assert int(total.tp.sum()) == 3

  def test_length_mismatch_names_note(self, small_labels):
    with pytest.raises(LengthMismatch, match='note-7'):
      corpus_counts([GOLD], [PRED[:3]], small_labels, ['note-7'])

  def test_unknown_gold(self, small_labels):
    with pytest.raises(UnknownLabel):
      confusion_counts(['vitals'], ['labs'], small_labels)

  def test_empty(self, small_labels):
    report = prf_metrics(confusion_counts([], [], small_labels))
    assert report.aggregates() == (0.0,) * 6
    assert report.n_lines == 0

  def test_report_dict(self, small_labels):
    report = prf_metrics(confusion_counts(GOLD, PRED, small_labels))
    again = MetricsReport.from_dict(report.as_dict())
    assert again.aggregates() == report.aggregates()
    assert again.per_label['labs'] == report.per_label['labs']

  def test_per_note_scores(self, small_labels):
    scores = per_note_scores([['chief-complaint', 'labs']], [['chief-complaint', 'chief-complaint']], small_labels, ['x'])
    assert scores[0].note_id == 'x'
    assert scores[0].macro_f1 == pytest.approx(1 / 3)
    assert scores[0].weighted_f1 == pytest.approx(1 / 3)


class TestSignificance:
  """Wilcoxon signed-rank test and bootstrap intervals."""

  def test_six_positive_differences(self):
    result = wilcoxon_signed_rank([1, 2, 3, 4, 5, 6], [0, 0, 0, 0, 0, 0])
    assert result.statistic == 0
    assert result.p_value == pytest.approx(0.03125)
    assert (result.n_effective, result.method) == (6, 'exact')

  def test_exact_against_sign_enumeration(self):
    rng = np.random.default_rng(3)
    for _ in range(50):
      n = int(rng.integers(2, 11))
      d = rng.integers(-3, 4, size=n).astype(float)
      d = d[d != 0]
      if len(d) < 2:
        continue
      ranks = rankdata(np.abs(d))
      w = min(ranks[d > 0].sum(), ranks[d < 0].sum())
      below = sum(
        ranks[list(signs)].sum() <= w + 1e-9
        for signs in itertools.product([False, True], repeat=len(d))
      )
      expected = min(1.0, 2 * below / 2 ** len(d))
      result = wilcoxon_signed_rank(d, np.zeros(len(d)))
      assert result.statistic == pytest.approx(w)
      assert result.p_value == pytest.approx(expected)

  def test_zero_differences_dropped(self):
    result = wilcoxon_signed_rank([1, 2, 3, 0], [0, 0, 0, 0])
    assert result.n_effective == 3

  def test_symmetric(self):
    a, b = [0.9, 0.4, 0.7, 0.3, 0.8], [0.5, 0.6, 0.2, 0.1, 0.65]
    ab, ba = wilcoxon_signed_rank(a, b), wilcoxon_signed_rank(b, a)
    assert ab.p_value == ba.p_value
    assert ab.statistic == ba.statistic

  def test_normal_approximation(self):
    n = 30
    result = wilcoxon_signed_rank(np.arange(1, n + 1), np.zeros(n))
    mean = n * (n + 1) / 4
    sd = np.sqrt(n * (n + 1) * (2 * n + 1) / 24)
    assert result.method == 'normal_approx'
    assert result.p_value == pytest.approx(2 * norm.sf((mean - 0.5) / sd))

  def test_errors(self):
    with pytest.raises(DegenerateSample):
      wilcoxon_signed_rank([0.5, 0.5], [0.5, 0.5])
    with pytest.raises(TooFewValues):
      wilcoxon_signed_rank([1.0], [0.0])
    with pytest.raises(LengthMismatch):
      wilcoxon_signed_rank([1.0, 2.0], [0.0])

  def test_interval(self):
    values = np.random.default_rng(0).uniform(size=40)
    low, high = confidence_interval(values)
    assert low <= values.mean() <= high
    assert confidence_interval(values) == (low, high)
    assert high - low < 0.3

  def test_interval_against_plain_resampling(self, golden):
    low, high = confidence_interval(CI_VALUES, seed=42)
    # same draws, means and linear-interpolated percentiles computed one resample at a time
    n = len(CI_VALUES)
    rows = np.random.default_rng(42).integers(0, n, size=(BOOTSTRAP_RESAMPLES, n))
    means = sorted(sum(CI_VALUES[int(i)] for i in row) / n for row in rows)

    def percentile(q: float) -> float:
      pos = q * (len(means) - 1)
      lo = int(pos)
      hi = min(lo + 1, len(means) - 1)
      return means[lo] + (means[hi] - means[lo]) * (pos - lo)

    assert low == pytest.approx(percentile(0.025), abs=1e-12)
    assert high == pytest.approx(percentile(0.975), abs=1e-12)
    golden('bootstrap_ci_seed42', {'values': CI_VALUES, 'low': low, 'high': high})

  def test_interval_narrows_with_more_values(self):
    base = np.random.default_rng(3).uniform(size=20)
    widths = []
    for copies in (1, 4, 16):
      low, high = confidence_interval(np.tile(base, copies))
      widths.append(high - low)
    assert widths[0] > widths[1] > widths[2] > 0
    assert widths[2] < widths[0] / 2

  def test_constant_interval(self):
    assert confidence_interval([0.7, 0.7, 0.7]) == (0.7, 0.7)
    with pytest.raises(TooFewValues):
      confidence_interval([0.7])


def _dataset(n: int) -> list[LabeledNote]:
  return [LabeledNote(f'd{i}', ['CC: cough', 'Labs: ok', 'x' * (i + 1)], ['chief-complaint', 'labs', '<none>']) for i in range(n)]


class TestComparison:
  """Two engines scored on the same notes."""

  def test_better_engine(self, small_labels):
    data = _dataset(8)
    perfect = [n.labels for n in data]
    worse = [['chief-complaint', 'chief-complaint', '<none>'] for _ in data]
    report = compare_engines(data, perfect, worse, small_labels, names=('crf', 'llm'))
    assert report.a.name == 'crf' and len(report.b.scores) == 8
    assert report.macro_f1_test.p_value == pytest.approx(2 / 2 ** 8)
    assert report.no_difference == {'macro_f1': False, 'weighted_f1': False}
    assert report.a.macro_f1_ci == (1.0, 1.0)
    text = format_comparison(report)
    assert 'crf: notes=8' in text and 'method=exact' in text

  def test_identical_engines(self, small_labels):
    data = _dataset(4)
    preds = [n.labels for n in data]
    report = compare_engines(data, preds, preds, small_labels)
    assert report.macro_f1_test is None
    assert report.no_difference['macro_f1']
    assert 'no difference' in format_comparison(report)
    assert report.as_dict()['seed'] == 42


class TestErrorAnalysis:
  """Error categories for mismatched lines."""

  def test_rule_only(self):
    data = _dataset(1)
    breakdown = categorize_errors(data, [['labs', '<none>', '<none>']])
    assert breakdown.rule_only
    assert breakdown.counts[OMISSION] == 1
    assert breakdown.counts[OTHER] == 1
    assert [r.line_index for r in breakdown.records] == [0, 1]
    assert 'rule-only' in format_error_breakdown(breakdown)

  def test_with_classifier(self, stub_server):
    stub_server.responder = lambda path, body: chat_reply('Label Confusion.')
    data = _dataset(2)
    client = CompletionClient(CompletionClientConfig(base_url=stub_server.base_url, model_name='stub-model', max_retries=0))
    with client:
      breakdown = categorize_errors(data, [['labs', '<none>', '<none>'], ['imaging', 'labs', '<none>']], client, max_in_flight=2)
    assert breakdown.counts == {OMISSION: 1, LABEL_CONFUSION: 2, VALID_LOCAL: 0, OTHER: 0}
    assert not breakdown.rule_only
    assert len(stub_server.requests) == 2
    assert 'Gold header: chief-complaint' in user_text(stub_server.requests[0]['body'])

  def test_length_checked(self):
    with pytest.raises(LengthMismatch, match='d0'):
      categorize_errors(_dataset(1), [['labs']])

  @pytest.mark.parametrize('reply, category', [
    ('valid local interpretation.', VALID_LOCAL),
    ('**label_confusion**', LABEL_CONFUSION),
    ('omission', OTHER),
    ('', OTHER),
    ('Other\nbecause it is unclear', OTHER),
  ])
  def test_parse_category(self, reply, category):
    assert parse_category(reply) == category

  def test_omission_rule(self):
    assert is_omission('labs', '<none>')
    assert not is_omission('<none>', 'labs')


class TestDisplay:

  def test_metrics_table(self, small_labels):
    report = prf_metrics(confusion_counts(GOLD, PRED, small_labels))
    text = format_metrics_table([('Models', [('crf', report)]), ('LLMs', [('llama-3.3-70b', report)])])
    assert 'Models' in text and 'LLMs' in text
    assert '0.62' in text or '0.63' in text
    assert 'invalid_predictions=1' in format_metrics_extras(report)
