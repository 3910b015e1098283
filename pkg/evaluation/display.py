from .comparison import ComparisonReport
from .error_analysis import CATEGORIES, ErrorBreakdown
from .metrics import MetricsReport

_COLUMNS = ('MP', 'MR', 'MF1', 'wP', 'wR', 'wF1')


def format_metrics_table(sections: list[tuple[str, list[tuple[str, MetricsReport]]]]) -> str:
  """Grouped rows of MP MR MF1 wP wR wF1, two decimals."""
  names = [name for _, rows in sections for name, _ in rows]
  width = max([len('Model')] + [len(n) for n in names])
  sep = '  ' + '-' * (width + 8 * len(_COLUMNS))
  header = f'  {"Model":<{width}}' + ''.join(f'  {c:>6}' for c in _COLUMNS)
  lines = ['', header, sep]
  for title, rows in sections:
    lines.append(f'  {title}')
    for name, r in rows:
      lines.append(f'  {name:<{width}}' + ''.join(f'  {v:>6.2f}' for v in r.aggregates()))
    lines.append(sep)
  lines.append('')
  return '\n'.join(lines)


def format_metrics_extras(report: MetricsReport) -> str:
  return (
    f'  accuracy={report.accuracy:.4f} macro_f1_all_labels={report.macro_f1_all_labels:.4f} '
    f'lines={report.n_lines} invalid_predictions={report.invalid_predictions}'
  )


def format_error_breakdown(breakdown: ErrorBreakdown) -> str:
  lines = ['', f'  {"Category":<28}  {"Count":>6}']
  for c in CATEGORIES:
    lines.append(f'  {c:<28}  {breakdown.counts.get(c, 0):>6}')
  lines.append(f'  {"total":<28}  {breakdown.total:>6}')
  if breakdown.rule_only:
    lines.append('  (rule-only: no classification model, non-omission errors counted as other)')
  lines.append('')
  return '\n'.join(lines)


def format_comparison(report: ComparisonReport) -> str:
  def ci(bounds: tuple[float, float] | None) -> str:
    return f'[{bounds[0]:.4f}, {bounds[1]:.4f}]' if bounds else 'n/a'

  lines = ['']
  for eng in (report.a, report.b):
    lines.append(f'  {eng.name}: notes={len(eng.scores)} macro_f1_ci={ci(eng.macro_f1_ci)} weighted_f1_ci={ci(eng.weighted_f1_ci)}')
  for metric, test in (('macro_f1', report.macro_f1_test), ('weighted_f1', report.weighted_f1_test)):
    if test is None:
      lines.append(f'  {metric}: no difference (all per-note differences are zero)')
    else:
      lines.append(f'  {metric}: W={test.statistic:g} p={test.p_value:.5f} n={test.n_effective} method={test.method}')
  lines.append('')
  return '\n'.join(lines)
