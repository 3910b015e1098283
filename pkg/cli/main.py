"""
Command-line surface: ingest, train, predict, correct, evaluate, compare, report.

  python -m cli.main ingest --labels data/onc.labels --input notes.jsonl --output lines.jsonl
  python -m cli.main train --config run.json --engine crf --split
  python -m cli.main predict --config run.json --engine llm --family mistral --input eval.jsonl
"""
import argparse
import json
import logging
import sys
from collections import Counter, defaultdict
from dataclasses import asdict, replace
from pathlib import Path

from corpus.ingest import ingest_note
from corpus.io import (
  align_predictions, read_line_notes, read_notes, read_predictions, read_span_notes, write_line_notes, write_predictions,
)
from corpus.labels import consolidate_labels, load_consolidation_map, load_label_set, restrict_label_set
from corpus.splits import filter_by_category, filter_notes_by_length, split_line_level, split_note_level
from corpus.stats import corpus_stats, format_frequency_report, token_length_stats
from crf_labeler.labeler import load_crf, predict_note, save_crf, train_crf
from encoders.classifier import accuracy, predict_contexts, predict_lines, train_line_classifier
from encoders.line_encoder import build_encoder
from encoders.serialization import SavedModel, load_model, save_model
from errors import EXIT_OK, EXIT_REMOTE, EXIT_USAGE, ConfigError, SectionSegError, exit_code_for
from evaluation.comparison import compare_engines
from evaluation.display import format_comparison, format_error_breakdown, format_metrics_extras, format_metrics_table
from evaluation.error_analysis import categorize_errors
from evaluation.metrics import MetricsReport, corpus_counts, prf_metrics
from hallucination.correction import CorrectionCache, CorrectionSummary, apply_corrections, format_correction_summary
from hallucination.detection import (
  HallucinationReport, detect_hallucinations, format_hallucination_table, format_top_hallucinated, top_hallucinated,
)
from helpers import config_fingerprint, setup_logging, write_json, write_jsonl
from llm_segmenter.completion_client import CompletionClient
from llm_segmenter.segmenter import segment_with_llm, to_prediction_records
from models import ENGINES, FAMILIES, OUTSIDE_LABEL, CORRECTION_MODES, LabeledNote, RunConfig

from .config import load_run_config, validate_run_config

logger = logging.getLogger(__name__)

SUPERVISED = ('crf', 'classifier')


class _Parser(argparse.ArgumentParser):
  """Usage errors exit 1, like configuration errors."""

  def error(self, message: str):
    self.print_usage(sys.stderr)
    self.exit(EXIT_USAGE, f'{self.prog}: error: {message}\n')


def _shared() -> argparse.ArgumentParser:
  p = argparse.ArgumentParser(add_help=False)
  p.add_argument('--config', metavar='PATH', help='Run configuration JSON; flags override its values')
  p.add_argument('--labels', metavar='PATH', help='Label set file, one label per line')
  p.add_argument('--seed', type=int, help='Seed for splits, training and bootstrap resampling')
  p.add_argument('--out', metavar='DIR', help='Output directory for default file names (default: runs)')
  p.add_argument('--verbose', action='store_true', help='Debug logging')
  p.add_argument('--log-file', metavar='PATH', help='Also append log lines to this file')
  return p


def _parse_args(argv: list[str] | None = None) -> argparse.Namespace:
  shared = _shared()
  p = _Parser(prog='sectionseg', description='Clinical note section segmentation.')
  sub = p.add_subparsers(dest='command', required=True, parser_class=_Parser)

  s = sub.add_parser('ingest', parents=[shared], help='Span-annotated notes -> line-level notes')
  s.add_argument('-i', '--input', required=True, metavar='PATH', help='Span-annotated notes JSONL')
  s.add_argument('-o', '--output', metavar='PATH', help='Line-level notes JSONL (default: <out>/lines.jsonl)')
  s.add_argument('--category', action='append', metavar='NAME', help='Keep only this note type (repeatable)')
  s.add_argument('--consolidation', metavar='PATH', help='Label consolidation map (TSV)')
  s.add_argument('--allowed-labels', metavar='PATH', help='Drop lines whose label is not in this label set')

  s = sub.add_parser('train', parents=[shared], help='Train a supervised engine')
  s.add_argument('-e', '--engine', choices=SUPERVISED, help='Engine to train (default from config)')
  s.add_argument('-t', '--train', metavar='PATH', help='Line-level training notes JSONL')
  s.add_argument('-m', '--model-out', metavar='PATH', help='Model file (default: <out>/model.<engine>.json)')
  s.add_argument('--epochs', type=int, help='Training epochs')
  s.add_argument('--lr', type=float, help='Learning rate')
  s.add_argument('--split', action='store_true', help='Hold out part of the data per the split settings')
  s.add_argument('--split-fraction', type=float, help='Training share of the split (default: 0.8)')
  s.add_argument('--split-level', choices=('line', 'note'), help='Split unit (default: note)')

  s = sub.add_parser('predict', parents=[shared], help='Label the lines of notes with one engine')
  s.add_argument('-e', '--engine', choices=ENGINES, help='Engine (default from config)')
  s.add_argument('-m', '--model', metavar='PATH', help='Model file for crf/classifier')
  s.add_argument('-i', '--input', required=True, metavar='PATH', help='Line-level notes JSONL (labels optional)')
  s.add_argument('-o', '--output', metavar='PATH', help='Predictions JSONL (default: <out>/predictions.<engine>.jsonl)')
  s.add_argument('-f', '--family', choices=FAMILIES, help='Prompt family for the llm engine')
  s.add_argument('--max-note-lines', type=int, help='Skip notes longer than this (default: 100)')
  s.add_argument('--base-url', help='Chat completion endpoint base URL')
  s.add_argument('--model-name', help='Chat model name sent with each request')
  s.add_argument('--max-in-flight', type=int, help='Concurrent LLM requests')
  s.add_argument('--max-retries', type=int, help='Retries per LLM request')

  s = sub.add_parser('correct', parents=[shared], help='Map hallucinated headers onto the label set')
  s.add_argument('-i', '--input', required=True, metavar='PATH', help='Raw predictions JSONL')
  s.add_argument('-o', '--output', metavar='PATH', help='Corrected predictions JSONL (default: <input stem>.corrected.jsonl)')
  s.add_argument('--mode', choices=CORRECTION_MODES, help='Correction mode (default: fallback_only)')
  s.add_argument('--cache', metavar='PATH', help='Correction cache JSONL')
  s.add_argument('--base-url', help='Chat completion endpoint base URL for --mode llm')
  s.add_argument('--top', type=int, default=10, help='Rows of the correction summary to print (default: 10)')

  s = sub.add_parser('evaluate', parents=[shared], help='Score predictions against gold labels')
  s.add_argument('-g', '--gold', required=True, metavar='PATH', help='Gold line-level notes JSONL')
  s.add_argument('-p', '--predictions', required=True, metavar='PATH', help='Predictions JSONL')
  s.add_argument('-o', '--output', metavar='PATH', help='Report JSON (default: <out>/report.<name>.json)')
  s.add_argument('--name', help='Display name of the engine (default: predictions file stem)')
  s.add_argument('--section', default='Models', help='Table section the row belongs to')
  s.add_argument('--exclude-outside', action='store_true', help=f'Leave {OUTSIDE_LABEL} out of the averages')
  s.add_argument('--raw', action='store_true', help='Add the hallucination block')
  s.add_argument('--errors', action='store_true', help='Add the error breakdown (LLM classification when correction_mode is llm)')
  s.add_argument('--max-note-lines', type=int, help='Score only notes up to this length (default: 100)')

  s = sub.add_parser('compare', parents=[shared], help='Paired per-note test between two engines')
  s.add_argument('-g', '--gold', required=True, metavar='PATH', help='Gold line-level notes JSONL')
  s.add_argument('-a', required=True, metavar='PATH', help='Predictions of the first engine')
  s.add_argument('-b', required=True, metavar='PATH', help='Predictions of the second engine')
  s.add_argument('--names', nargs=2, metavar=('A', 'B'), help='Display names of the two engines')
  s.add_argument('-o', '--output', metavar='PATH', help='Comparison JSON (default: <out>/comparison.json)')
  s.add_argument('--exclude-outside', action='store_true', help=f'Leave {OUTSIDE_LABEL} out of the per-note scores')
  s.add_argument('--max-note-lines', type=int, help='Compare only notes up to this length (default: 100)')

  s = sub.add_parser('report', parents=[shared], help='Combine evaluation reports into tables')
  s.add_argument('inputs', nargs='+', metavar='REPORT', help='Evaluation report JSON files')
  s.add_argument('-o', '--output', metavar='PATH', help='Also write the tables to this text file')
  s.add_argument('-k', '--top', type=int, default=5, help='Most frequent hallucinated headers per model (default: 5)')
  return p.parse_args(argv)


def _overrides(args: argparse.Namespace) -> dict:
  get = lambda name: getattr(args, name, None)
  seed = get('seed')
  return {
    'labels_path': get('labels'),
    'out_dir': get('out'),
    'seed': seed,
    'crf.seed': seed,
    'classifier.seed': seed,
    'split.seed': seed,
    'engine': get('engine'),
    'family': get('family'),
    'train_path': get('train'),
    'consolidation_path': get('consolidation'),
    'max_note_lines': get('max_note_lines'),
    'correction_mode': get('mode'),
    'correction_cache_path': get('cache'),
    'crf.epochs': get('epochs'),
    'classifier.epochs': get('epochs'),
    'crf.learning_rate': get('lr'),
    'classifier.learning_rate': get('lr'),
    'split.fraction': get('split_fraction'),
    'split.level': get('split_level'),
    'completion.base_url': get('base_url'),
    'completion.model_name': get('model_name'),
    'completion.max_in_flight': get('max_in_flight'),
    'completion.max_retries': get('max_retries'),
  }


def _load_gold(path: str, config: RunConfig) -> list[LabeledNote]:
  notes = read_line_notes(path)
  if config.max_note_lines:
    notes = filter_notes_by_length(notes, config.max_note_lines)
  return notes


def _default(path: str | None, config: RunConfig, name: str) -> Path:
  return Path(path) if path else Path(config.out_dir) / name


def cmd_ingest(args: argparse.Namespace, config: RunConfig) -> int:
  label_set = load_label_set(config.labels_path)
  notes = read_span_notes(args.input)
  if args.category:
    notes = filter_by_category(notes, args.category)
  labeled = [ingest_note(n, label_set) for n in notes]
  if config.consolidation_path:
    mapping = load_consolidation_map(config.consolidation_path)
    labeled = [consolidate_labels(n, mapping) for n in labeled]
  excluded = {}
  if args.allowed_labels:
    labeled, report = restrict_label_set(labeled, load_label_set(args.allowed_labels))
    excluded = report.as_dict()
  out = _default(args.output, config, 'lines.jsonl')
  n = write_line_notes(out, labeled)
  stats = corpus_stats(notes)
  tokens = token_length_stats(labeled)
  logger.info(
    'notes=%d lines=%d under_threshold=%.4f max_tokens=%d mean_tokens=%.2f output=%s',
    n, tokens.lines, tokens.under_threshold, tokens.max_tokens, tokens.mean_tokens, out,
  )
  write_json(out.with_suffix('.stats.json'), {
    'config_fingerprint': config_fingerprint(config),
    'frequency': stats.as_dict(),
    'token_lengths': asdict(tokens),
    'excluded_lines': excluded,
  })
  print(format_frequency_report(stats))
  return EXIT_OK


def _train_classifier(notes: list[LabeledNote], config: RunConfig, label_set, encoder, out_dir: Path, use_split: bool) -> tuple:
  split = config.split
  held_acc = None
  if not use_split:
    examples = [(ctx, label) for n in notes for ctx, label in zip(n.contexts(), n.labels)]
    result = train_line_classifier(examples, label_set, config.classifier, encoder)
  elif split.level == 'line':
    train, held = split_line_level(notes, split.fraction, split.seed)
    result = train_line_classifier(train, label_set, config.classifier, encoder)
    if held:
      predicted = predict_contexts(result.params, [ctx for ctx, _ in held], encoder)
      held_acc = accuracy([[label for _, label in held]], [predicted])
  else:
    train, held = split_note_level(notes, split.fraction, split.seed)
    write_line_notes(out_dir / 'heldout.jsonl', held)
    examples = [(ctx, label) for n in train for ctx, label in zip(n.contexts(), n.labels)]
    result = train_line_classifier(examples, label_set, config.classifier, encoder)
    if held:
      held_acc = accuracy([n.labels for n in held], predict_lines(result.params, held, encoder))
  return result.params, result.loss_trace, held_acc


def _train_crf(notes: list[LabeledNote], config: RunConfig, label_set, encoder, out_dir: Path, use_split: bool) -> tuple:
  held: list[LabeledNote] = []
  if use_split:
    if config.split.level != 'note':
      raise ConfigError('the crf engine trains on whole notes; use split level "note"')
    notes, held = split_note_level(notes, config.split.fraction, config.split.seed)
    write_line_notes(out_dir / 'heldout.jsonl', held)
  result = train_crf(notes, label_set, config.crf, encoder)
  held_acc = None
  if held:
    held_acc = accuracy([n.labels for n in held], [predict_note(result.model, n) if n.lines else [] for n in held])
  return result.model, result.loss_trace, held_acc


def cmd_train(args: argparse.Namespace, config: RunConfig) -> int:
  if config.engine not in SUPERVISED:
    raise ConfigError(f'engine {config.engine} cannot be trained; expected one of {", ".join(SUPERVISED)}')
  if not config.train_path:
    raise ConfigError('train_path is required (set it in the config file or with --train)')
  label_set = load_label_set(config.labels_path)
  notes = read_line_notes(config.train_path)
  if config.consolidation_path:
    mapping = load_consolidation_map(config.consolidation_path)
    notes = [consolidate_labels(n, mapping) for n in notes]
  out_dir = Path(config.out_dir)
  fingerprint = config_fingerprint(config)
  features = config.features
  if config.engine == 'crf':
    features = replace(features, max_tokens=config.crf.max_tokens)
  encoder = build_encoder(config.encoder_kind, features, config.embedding)
  model_path = _default(args.model_out, config, f'model.{config.engine}.json')
  if config.engine == 'crf':
    model, trace, held_acc = _train_crf(notes, config, label_set, encoder, out_dir, args.split)
    digest = save_crf(model_path, model, features, fingerprint, trace, config.embedding)
  else:
    params, trace, held_acc = _train_classifier(notes, config, label_set, encoder, out_dir, args.split)
    digest = save_model(model_path, SavedModel(
      engine='classifier', params=params, features=features, config_fingerprint=fingerprint,
      loss_trace=trace, embedding=config.embedding,
    ))
  for epoch, loss in enumerate(trace, start=1):
    print(f'epoch={epoch} loss={loss:.6f}')
  if held_acc is not None:
    print(f'heldout_accuracy={held_acc:.4f}')
  print(f'model={model_path} sha256={digest}')
  return EXIT_OK


def cmd_predict(args: argparse.Namespace, config: RunConfig) -> int:
  notes = read_notes(args.input)
  if config.max_note_lines:
    notes = filter_notes_by_length(notes, config.max_note_lines)
  out = _default(args.output, config, f'predictions.{config.engine}.jsonl')
  if config.engine == 'llm':
    label_set = load_label_set(config.labels_path)
    run_log = out.with_suffix('.runlog.jsonl')
    if run_log.exists():
      run_log.unlink()
    results = segment_with_llm(config.completion, notes, label_set, config.family, run_log_path=run_log)
    records = to_prediction_records(results)
    failed = sum(1 for r in results if r.error)
    write_predictions(out, records)
    logger.info('notes=%d failed=%d family=%s output=%s run_log=%s', len(records), failed, config.family, out, run_log)
    if records and failed == len(records):
      logger.error('every note failed; see %s', run_log)
      return EXIT_REMOTE
    return EXIT_OK
  if not args.model:
    raise ConfigError(f'--model is required for engine {config.engine}')
  if config.engine == 'crf':
    model, _ = load_crf(args.model)
    predictions = [predict_note(model, n) if n.lines else [] for n in notes]
  else:
    saved = load_model(args.model)
    if saved.engine != 'classifier':
      raise ConfigError(f'{args.model}: expected a classifier model, found {saved.engine}')
    encoder = build_encoder(saved.params.encoder_kind, saved.features, saved.embedding)
    predictions = predict_lines(saved.params, notes, encoder)
  records = [{'note_id': n.note_id, 'engine': config.engine, 'predictions': p} for n, p in zip(notes, predictions)]
  write_predictions(out, records)
  logger.info('notes=%d engine=%s output=%s', len(records), config.engine, out)
  return EXIT_OK


def cmd_correct(args: argparse.Namespace, config: RunConfig) -> int:
  label_set = load_label_set(config.labels_path)
  records = read_predictions(args.input)
  raw = [r['predictions'] for r in records]
  before = detect_hallucinations(raw, label_set)
  if config.correction_mode == 'off':
    corrected, summary = raw, CorrectionSummary()
  else:
    cache = CorrectionCache(config.correction_cache_path)
    if config.correction_mode == 'llm':
      with CompletionClient(config.completion) as client:
        corrected, summary = apply_corrections(raw, label_set, cache, client, config.completion.max_in_flight)
    else:
      corrected, summary = apply_corrections(raw, label_set, cache)
  after = detect_hallucinations(corrected, label_set)
  out = Path(args.output) if args.output else Path(args.input).with_suffix('.corrected.jsonl')
  write_predictions(out, [{**r, 'predictions': p} for r, p in zip(records, corrected)])
  write_json(out.with_suffix('.summary.json'), {
    'config_fingerprint': config_fingerprint(config),
    'mode': config.correction_mode,
    'before': before.as_dict(),
    'after': after.as_dict(),
    'correction': summary.as_dict(),
  })
  print(format_hallucination_table([('raw', before), ('corrected', after)]))
  print(format_top_hallucinated([('raw', top_hallucinated(before))]))
  print(format_correction_summary(summary, k=args.top))
  return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> int:
  label_set = load_label_set(config.labels_path)
  gold = _load_gold(args.gold, config)
  predictions = align_predictions(gold, read_predictions(args.predictions))
  exclude = (OUTSIDE_LABEL,) if args.exclude_outside else ()
  counts = corpus_counts([n.labels for n in gold], predictions, label_set, [n.note_id for n in gold])
  metrics = prf_metrics(counts, exclude=exclude)
  name = args.name or Path(args.predictions).stem
  report = {
    'name': name,
    'section': args.section,
    'label_set': label_set.name,
    'exclude_outside': args.exclude_outside,
    'config_fingerprint': config_fingerprint(config),
    'metrics': metrics.as_dict(),
  }
  text = [format_metrics_table([(args.section, [(name, metrics)])]), format_metrics_extras(metrics)]
  if args.raw:
    hall = detect_hallucinations(predictions, label_set)
    report['hallucination'] = hall.as_dict()
    text.append(format_hallucination_table([(name, hall)]))
  if args.errors:
    if config.correction_mode == 'llm':
      with CompletionClient(config.completion) as client:
        breakdown = categorize_errors(gold, predictions, client, config.completion.max_in_flight)
    else:
      breakdown = categorize_errors(gold, predictions)
    report['errors'] = breakdown.as_dict()
    text.append(format_error_breakdown(breakdown))
  out = _default(args.output, config, f'report.{name}.json')
  write_json(out, report)
  out.with_suffix('.txt').write_text('\n'.join(text) + '\n', encoding='utf-8')
  print('\n'.join(text))
  return EXIT_OK


def cmd_compare(args: argparse.Namespace, config: RunConfig) -> int:
  for path in (args.a, args.b):
    if not Path(path).exists():
      raise FileNotFoundError(f'predictions file not found: {path}')
  label_set = load_label_set(config.labels_path)
  gold = _load_gold(args.gold, config)
  preds_a = align_predictions(gold, read_predictions(args.a))
  preds_b = align_predictions(gold, read_predictions(args.b))
  names = tuple(args.names) if args.names else (Path(args.a).stem, Path(args.b).stem)
  exclude = (OUTSIDE_LABEL,) if args.exclude_outside else ()
  report = compare_engines(gold, preds_a, preds_b, label_set, seed=config.seed, names=names, exclude=exclude)
  out = _default(args.output, config, 'comparison.json')
  write_json(out, {**report.as_dict(), 'config_fingerprint': config_fingerprint(config)})
  for summary in (report.a, report.b):
    write_jsonl(out.parent / f'scores.{summary.name}.jsonl', [
      {'note_id': s.note_id, 'macro_f1': s.macro_f1, 'weighted_f1': s.weighted_f1} for s in summary.scores
    ])
  print(format_comparison(report))
  return EXIT_OK


def _read_report(path: str) -> dict:
  try:
    obj = json.loads(Path(path).read_text(encoding='utf-8'))
  except json.JSONDecodeError as e:
    raise ConfigError(f'{path}: invalid JSON ({e.msg})') from None
  if 'metrics' not in obj:
    raise ConfigError(f'{path}: not an evaluation report')
  return obj


def cmd_report(args: argparse.Namespace, config: RunConfig) -> int:
  reports = [_read_report(p) for p in args.inputs]
  sections: dict[str, list] = defaultdict(list)
  hall_rows, top_rows = [], []
  for path, r in zip(args.inputs, reports):
    name = r.get('name') or Path(path).stem
    sections[r.get('section', 'Models')].append((name, MetricsReport.from_dict(r['metrics'])))
    h = r.get('hallucination')
    if h:
      hall = HallucinationReport(h['HL'], h['total_lines'], Counter(h['per_header_counts']))
      hall_rows.append((name, hall))
      top_rows.append((name, top_hallucinated(hall, args.top)))
  text = [format_metrics_table(list(sections.items()))]
  if hall_rows:
    text.append(format_hallucination_table(hall_rows))
    text.append(format_top_hallucinated(top_rows))
  if args.output:
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    Path(args.output).write_text('\n'.join(text) + '\n', encoding='utf-8')
  print('\n'.join(text))
  return EXIT_OK


_COMMANDS = {
  'ingest': (cmd_ingest, ('labels_path',)),
  'train': (cmd_train, ('labels_path',)),
  'predict': (cmd_predict, ()),
  'correct': (cmd_correct, ('labels_path',)),
  'evaluate': (cmd_evaluate, ('labels_path',)),
  'compare': (cmd_compare, ('labels_path',)),
  'report': (cmd_report, ()),
}


def main(argv: list[str] | None = None) -> int:
  args = _parse_args(argv)
  setup_logging(args.log_file, args.verbose)
  command, required = _COMMANDS[args.command]
  try:
    config = load_run_config(args.config, _overrides(args))
    if args.command == 'predict' and config.engine == 'llm':
      required = ('labels_path',)
    validate_run_config(config, required)
    return command(args, config)
  except (SectionSegError, OSError) as e:
    logger.error('command=%s error=%s', args.command, e)
    return exit_code_for(e)


if __name__ == '__main__':
  sys.exit(main())
