"""
Command-line interface.

    afd-analyzer collect --mode date --date 2023-01-01 --out data/raw
    afd-analyzer build-dataset --input data/raw/discussions.jsonl --out data/full
    afd-analyzer train-baseline --data data/full --out models/outcome.model
    afd-analyzer analyze --task outcome --url <log-page-url>#<Article> --model models/outcome.model
    afd-analyzer evaluate --data data/full --model models/outcome.model
    afd-analyzer correlate --data data/full --aux sentiment

Exit codes: 0 success, 1 fatal I/O or missing inputs, 2 argument errors,
3 explanation requested without LLM credentials.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import pandas as pd

from afd_analyzer import classify, dataset, metrics, pipeline
from afd_analyzer import config as cfg
from afd_analyzer.collector import AfdCollector, CollectRequest, resolve_plan
from afd_analyzer.logger_utils import (
    AfdAnalyzerError,
    ConfigError,
    ExplanationUnavailable,
    InvalidDateRange,
    MalformedUrl,
    ParseError,
    log_exception,
    set_console_level,
    setup_logger,
)
from afd_analyzer.parser import (
    discussion_from_raw,
    extract_discussions,
    load_policy_shortcuts,
    load_variant_table,
)

logger = setup_logger(__name__)

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_NO_CREDENTIALS = 3

FORMATS = ('text', 'records', 'csv')
DISCUSSIONS_FILE = 'discussions.jsonl'


class UsageError(AfdAnalyzerError):
    """Invalid combination of command-line arguments."""
    pass


class MissingCredentials(AfdAnalyzerError):
    """The LLM backend was selected but its API key variable is unset."""
    pass


# --------------------------
# Output Helpers
# --------------------------

def _emit_records(rows: Iterable[Dict], stream=None) -> None:
    stream = stream or sys.stdout
    for row in rows:
        stream.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + '\n')


def _emit_frame(frame: pd.DataFrame, fmt: str) -> None:
    if fmt == 'csv':
        frame.to_csv(sys.stdout, index=False)
    elif fmt == 'records':
        _emit_records(json.loads(frame.to_json(orient='records')))
    else:
        print(frame.to_string(index=False))


def _load_discussions(path: str) -> List:
    """Discussions from a dataset directory (all splits) or a .jsonl record file."""
    source = Path(path)
    if source.is_dir():
        if (source / dataset.MANIFEST_NAME).is_file():
            splits = dataset.load(source)
            return [d for _, items in splits.items() for d in items]
        source = source / DISCUSSIONS_FILE
    if not source.is_file():
        raise FileNotFoundError(f"No discussions at {path}")
    return dataset.read_records(source)


def _parse_ratios(text: str):
    try:
        ratios = tuple(float(part) for part in text.split(','))
    except ValueError:
        raise UsageError(f"--ratios must be three comma-separated fractions, got {text!r}")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise UsageError(f"--ratios must be three non-negative fractions summing to 1, got {text!r}")
    return ratios


def _backend_for(args, config: cfg.Config, task: classify.AnalysisTask) -> classify.Backend:
    kind = args.backend
    if kind is None:
        if getattr(args, 'model', None):
            kind = 'baseline'
        elif task in (classify.AnalysisTask.SENTIMENT, classify.AnalysisTask.OFFENSIVE):
            kind = 'lexicon'
        else:
            raise UsageError(f"--model or --backend is required for the {task} task")
    backend = classify.build_backend(config, task, kind, model_path=getattr(args, 'model', None))
    if kind == 'llm' and not backend.has_credentials:
        raise MissingCredentials(f"the llm backend needs an API key in ${config.llm_api_key_env}")
    return backend


# --------------------------
# Commands
# --------------------------

def cmd_collect(args, config: cfg.Config) -> int:
    if args.mode == 'url':
        req = CollectRequest('url', url=args.url)
    elif args.mode == 'date':
        req = CollectRequest('date', start_date=args.date)
    elif args.mode == 'date_range':
        req = CollectRequest('date_range', start_date=args.start, end_date=args.end)
    else:
        req = CollectRequest('wide_2023')
    plan = resolve_plan(req, config.log_url_template)

    collector = AfdCollector.from_config(config)
    result = collector.fetch(plan)
    variants = load_variant_table(config.variant_table_path)
    shortcuts = load_policy_shortcuts(config.policy_shortcuts_path)

    discussions = []
    failures = [{'url': f.url, 'error': str(f.cause)} for f in result.failures]
    for page in result.pages:
        try:
            raws = extract_discussions(page)
        except ParseError as e:
            logger.warning(str(e))
            failures.append({'url': page.url, 'error': e.reason})
            continue
        discussions.extend(discussion_from_raw(raw, variants, shortcuts) for raw in raws)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset.write_records(out_dir / DISCUSSIONS_FILE, discussions)
    if failures:
        with open(out_dir / 'failures.jsonl', 'w', encoding='utf-8') as handle:
            _emit_records(failures, handle)

    counts = pd.Series([d.label.value if d.label else ('open' if not d.closed else 'unlabeled')
                        for d in discussions], dtype=object).value_counts()
    summary = pd.DataFrame({'label': counts.index, 'count': counts.values})
    if args.format == 'text':
        print(f"Collected {len(discussions)} discussion(s) from {len(result.pages)} page(s); "
              f"{len(failures)} failure(s); written to {out_dir / DISCUSSIONS_FILE}")
    _emit_frame(summary, args.format)

    if not result.pages and failures:
        logger.error("Every page failed")
        return EXIT_IO
    return EXIT_OK


def cmd_build_dataset(args, config: cfg.Config) -> int:
    ratios = _parse_ratios(args.ratios) if args.ratios else config.split_ratios
    seed = args.seed if args.seed is not None else config.split_seed
    discussions = []
    for path in args.input:
        discussions.extend(_load_discussions(path))
    splits = dataset.build_dataset(discussions, ratios=ratios, seed=seed)
    if args.masked:
        splits = dataset.masked_variant(
            splits, load_variant_table(config.variant_table_path),
            mode=config.mask_mode, token=config.mask_token,
        )
    dataset.save(splits, args.out)
    sizes = pd.DataFrame([splits.sizes])
    if args.format == 'text':
        print(f"Dataset written to {args.out}{' (masked)' if args.masked else ''}")
    _emit_frame(sizes, args.format)
    return EXIT_OK


def cmd_stats(args, config: cfg.Config) -> int:
    stats = dataset.compute_stats(dataset.load(args.data))
    _emit_frame(stats.to_frame(), args.format)
    return EXIT_OK


def _policy_labels(args, config: cfg.Config, frame: pd.DataFrame) -> List[str]:
    """--policy-labels, then a configured label file, then the most frequent policies in frame."""
    if args.policy_labels:
        return classify.load_policy_labels(args.policy_labels)
    if config.policy_labels_path != cfg.POLICY_LABELS_PATH:
        return classify.load_policy_labels(config.policy_labels_path)
    return dataset.top_policies(frame, cfg.POLICY_LABEL_COUNT)


def _comment_frame(args, config: cfg.Config, task: str) -> pd.DataFrame:
    source = Path(args.data)
    if source.is_dir() and (source / dataset.MANIFEST_NAME).is_file():
        data = dataset.load(source)
    else:
        data = _load_discussions(args.data)
    variants = load_variant_table(config.variant_table_path)
    frame = dataset.build_comment_dataset(data, task, variants=variants, mask_mode=config.mask_mode,
                                          shortcuts=load_policy_shortcuts(config.policy_shortcuts_path))
    if task == 'policy':
        labels = _policy_labels(args, config, frame)
        frame = frame[frame['label'].isin(labels)].reset_index(drop=True)
    return frame


def cmd_comments(args, config: cfg.Config) -> int:
    frame = _comment_frame(args, config, args.task)
    if args.out:
        frame.to_csv(args.out, index=False)
    counts = frame['label'].value_counts()
    summary = pd.DataFrame({'label': counts.index, 'count': counts.values})
    if args.format == 'text':
        print(f"{len(frame)} {args.task} comment(s){' written to ' + args.out if args.out else ''}")
    _emit_frame(summary, args.format)
    return EXIT_OK


def cmd_train_baseline(args, config: cfg.Config) -> int:
    task = classify.AnalysisTask(args.task)
    params = {
        'l2': args.l2, 'epochs': args.epochs, 'learning_rate': args.lr,
        'min_df': args.min_df, 'seed': args.seed,
    }
    hyperparams = classify.BaselineHyperparams(**{k: v for k, v in params.items() if v is not None})

    if task is classify.AnalysisTask.OUTCOME:
        data = dataset.load(args.data)
        label_space = classify.LabelSpace.default(task)
    elif task in (classify.AnalysisTask.STANCE, classify.AnalysisTask.POLICY):
        if args.comments:
            data = pd.read_csv(args.comments)
        else:
            data = _comment_frame(args, config, task.value)
        if task is classify.AnalysisTask.POLICY:
            labels = _policy_labels(args, config, data)
            label_space = classify.LabelSpace(task, labels)
        else:
            label_space = classify.LabelSpace.default(task)
    else:
        raise UsageError(f"No trainable baseline for {task}; use the lexicon or remote backend")

    model = classify.train_baseline(data, task, hyperparams, label_space=label_space,
                                    allow_missing_labels=args.allow_missing_labels)
    classify.save_model(model, args.out)
    row = {'task': task.value, 'model': args.out, 'validation_macro_f1': model.validation_macro_f1}
    if args.format == 'text':
        f1 = model.validation_macro_f1
        print(f"Model written to {args.out}; validation macro-F1 "
              f"{'n/a' if f1 is None else format(f1, '.3f')}")
    else:
        _emit_frame(pd.DataFrame([row]), args.format)
    return EXIT_OK


def cmd_analyze(args, config: cfg.Config) -> int:
    task = classify.AnalysisTask(args.task)
    if bool(args.url) == bool(args.text):
        raise UsageError("give exactly one of --url or --text")
    try:
        req = pipeline.AnalyzeRequest(
            input=args.url or args.text,
            mode='url' if args.url else 'text',
            task=task,
            want_explanation=args.explanation,
            title=args.title,
        )
    except ValueError as e:
        raise UsageError(str(e)) from e

    explainer = None
    if args.explanation:
        explainer = classify.LLMBackend.from_config(config)
        if not explainer.has_credentials:
            print(f"error: --explanation needs an LLM API key in ${config.llm_api_key_env}", file=sys.stderr)
            return EXIT_NO_CREDENTIALS
    backend = explainer if args.backend == 'llm' and explainer is not None else _backend_for(args, config, task)
    collector = AfdCollector.from_config(config) if req.mode == 'url' else None
    result = pipeline.analyze(req, backend, explainer=explainer, collector=collector,
                              variants=load_variant_table(config.variant_table_path))
    records = pipeline.records_for(result)
    if args.format == 'records':
        _emit_records(records)
    else:
        _emit_frame(pd.DataFrame(records), args.format)
    return EXIT_OK


def _read_pairs(path: str) -> List:
    frame = pd.read_csv(path, dtype=str) if str(path).endswith('.csv') else pd.read_json(path, lines=True, dtype=str)
    missing = {'gold', 'predicted'} - set(frame.columns)
    if missing:
        raise UsageError(f"{path} lacks column(s): {', '.join(sorted(missing))}")
    return list(zip(frame['gold'], frame['predicted']))


def _default_labels(pairs) -> List[str]:
    seen = {label for pair in pairs for label in pair}
    ordered = [label for label in cfg.OUTCOME_LABELS if label in seen]
    return ordered + sorted(seen - set(ordered))


def cmd_evaluate(args, config: cfg.Config) -> int:
    errors = []
    if args.pairs:
        pairs = _read_pairs(args.pairs)
        labels = args.labels.split(',') if args.labels else _default_labels(pairs)
    else:
        if not args.data:
            raise UsageError("give --pairs or --data")
        task = classify.AnalysisTask(args.task)
        splits = dataset.load(args.data)
        if args.masked and not splits.masked:
            splits = dataset.masked_variant(splits, load_variant_table(config.variant_table_path),
                                            mode=config.mask_mode, token=config.mask_token)
        backend = _backend_for(args, config, task)
        batch = pipeline.batch_analyze(splits.split(args.split), task, backend)
        pairs = [(gold, prediction.label) for gold, prediction in batch.pairs]
        errors = batch.errors
        labels = args.labels.split(',') if args.labels else list(backend.label_space.labels)
        if not pairs:
            logger.error("Every prediction failed")
            return EXIT_IO

    report = metrics.evaluate(pairs, labels)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        payload = metrics.report_to_dict(report)
        payload['errors'] = [e.__dict__ for e in errors]
        (out_dir / 'report.json').write_text(json.dumps(payload, indent=2, sort_keys=True), encoding='utf-8')
        (out_dir / 'confusion.csv').write_text(metrics.confusion_to_csv(report), encoding='utf-8')

    if args.format == 'csv':
        sys.stdout.write(metrics.confusion_to_csv(report))
    elif args.format == 'records':
        _emit_records([metrics.report_to_dict(report)])
    else:
        print(metrics.format_report_table(report))
        print(f"\nmacro-F1 {report.macro_f1:.3f}")
        if errors:
            print(f"{len(errors)} item(s) failed")
    return EXIT_OK


def _scored_for(args, config: cfg.Config, task: classify.AnalysisTask):
    if args.split != 'all':
        discussions = dataset.load(args.data).split(args.split)
    else:
        discussions = _load_discussions(args.data)
    backend = _backend_for(args, config, task)
    return pipeline.score_discussions(discussions, task, backend), backend


def cmd_correlate(args, config: cfg.Config) -> int:
    task = classify.AnalysisTask(args.aux)
    scored, backend = _scored_for(args, config, task)
    report = metrics.correlate(scored, backend.label_space.labels, mode=args.mode)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(metrics.correlation_to_json(report), encoding='utf-8')

    if args.format == 'csv':
        report.matrix.to_csv(sys.stdout, index_label=task.value)
    elif args.format == 'records':
        _emit_records([report.to_dict()])
    else:
        print(f"Pearson r, {task.value} ({args.mode}) x outcome, n={report.sample_size}")
        print(report.matrix.round(2).to_string(na_rep='-'))
    return EXIT_OK


def cmd_controversial(args, config: cfg.Config) -> int:
    scored, _ = _scored_for(args, config, classify.AnalysisTask.OFFENSIVE)
    ranked = metrics.rank_controversial(scored, top_k=args.top_k)
    _emit_frame(pd.DataFrame(ranked, columns=['title', 'offensive_fraction']), args.format)
    return EXIT_OK


# --------------------------
# Parser
# --------------------------

def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='YAML config file')
    common.add_argument('--verbose', '-v', action='store_true', help='debug logging on the console')
    common.add_argument('--format', choices=FORMATS, default='text', help='output format (default: text)')
    common.add_argument('--cache-dir', help='page cache directory')
    return common


def _add_backend_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument('--backend', choices=classify.BACKEND_KINDS, help='inference backend')
    sub.add_argument('--model', help='baseline model file')


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog='afd-analyzer',
        description='Collect, build datasets from, and analyze Wikipedia AfD discussions.',
    )
    subparsers = parser.add_subparsers(dest='command', required=True)

    sub = subparsers.add_parser('collect', parents=[common], help='fetch and parse AfD log pages')
    sub.add_argument('--mode', choices=['url', 'date', 'date_range', 'wide_2023'], required=True)
    sub.add_argument('--url', help='log page URL (mode url)')
    sub.add_argument('--date', help='YYYY-MM-DD (mode date)')
    sub.add_argument('--start', help='YYYY-MM-DD, inclusive (mode date_range)')
    sub.add_argument('--end', help='YYYY-MM-DD, inclusive (mode date_range)')
    sub.add_argument('--out', required=True, help='output directory')
    sub.add_argument('--rate-limit', type=float, help='requests per second')
    sub.add_argument('--workers', type=int, help='parallel requests')
    sub.add_argument('--refresh', action='store_true', default=None, help='re-fetch cached pages')
    sub.add_argument('--log-url-template', help='daily log URL format string')
    sub.set_defaults(handler=cmd_collect)

    sub = subparsers.add_parser('build-dataset', parents=[common], help='build train/validation/test splits')
    sub.add_argument('--input', nargs='+', required=True, help='discussions .jsonl files or directories')
    sub.add_argument('--out', required=True, help='dataset directory')
    sub.add_argument('--ratios', help='train,validation,test fractions (default 0.7,0.1,0.2)')
    sub.add_argument('--seed', type=int, help='split seed')
    sub.add_argument('--masked', action='store_true', help='mask bolded votes in every text')
    sub.set_defaults(handler=cmd_build_dataset)

    sub = subparsers.add_parser('stats', parents=[common], help='per-label counts and lengths')
    sub.add_argument('--data', required=True, help='dataset directory')
    sub.set_defaults(handler=cmd_stats)

    sub = subparsers.add_parser('comments', parents=[common], help='comment-level stance/policy dataset')
    sub.add_argument('--data', required=True, help='dataset directory or discussions .jsonl')
    sub.add_argument('--task', choices=['stance', 'policy'], required=True)
    sub.add_argument('--policy-labels', help='policy label list (default: 15 most frequent)')
    sub.add_argument('--out', help='CSV output file')
    sub.set_defaults(handler=cmd_comments)

    sub = subparsers.add_parser('train-baseline', parents=[common], help='train the TF-IDF baseline')
    sub.add_argument('--task', choices=['outcome', 'stance', 'policy'], default='outcome')
    sub.add_argument('--data', help='dataset directory')
    sub.add_argument('--comments', help='comment CSV from the comments command (stance/policy)')
    sub.add_argument('--policy-labels', help='policy label list (default: 15 most frequent)')
    sub.add_argument('--out', required=True, help='model file')
    sub.add_argument('--epochs', type=int)
    sub.add_argument('--lr', type=float, help='learning rate')
    sub.add_argument('--l2', type=float, help='L2 strength')
    sub.add_argument('--min-df', type=int, help='minimum document frequency')
    sub.add_argument('--seed', type=int)
    sub.add_argument('--allow-missing-labels', action='store_true',
                     help='train even if some labels have fewer than 2 items')
    sub.set_defaults(handler=cmd_train_baseline)

    sub = subparsers.add_parser('analyze', parents=[common], help='one-click analysis of a URL or text')
    sub.add_argument('--task', choices=[t.value for t in classify.AnalysisTask], required=True)
    sub.add_argument('--url', help='AfD log or discussion URL, optionally with #Article anchor')
    sub.add_argument('--text', help='raw discussion text')
    sub.add_argument('--title', help='title for --text input')
    sub.add_argument('--explanation', action='store_true', help='add an LLM explanation (outcome)')
    _add_backend_flags(sub)
    sub.set_defaults(handler=cmd_analyze)

    sub = subparsers.add_parser('evaluate', parents=[common], help='accuracy, macro P/R/F1, confusion matrix')
    sub.add_argument('--data', help='dataset directory')
    sub.add_argument('--split', choices=dataset.SPLIT_NAMES, default='test')
    sub.add_argument('--task', choices=[t.value for t in classify.AnalysisTask], default='outcome')
    sub.add_argument('--pairs', help='CSV or .jsonl with gold and predicted columns')
    sub.add_argument('--labels', help='comma-separated label space')
    sub.add_argument('--masked', action='store_true', help='evaluate on the masked texts')
    sub.add_argument('--out', help='report directory (report.json, confusion.csv)')
    _add_backend_flags(sub)
    sub.set_defaults(handler=cmd_evaluate)

    sub = subparsers.add_parser('correlate', parents=[common], help='Pearson r of sentence scores vs outcomes')
    sub.add_argument('--data', required=True, help='dataset directory or discussions .jsonl')
    sub.add_argument('--split', choices=list(dataset.SPLIT_NAMES) + ['all'], default='all')
    sub.add_argument('--aux', choices=['sentiment', 'stance'], default='sentiment')
    sub.add_argument('--mode', choices=cfg.CORRELATION_MODES, default='mean_probability')
    sub.add_argument('--out', help='JSON report file')
    _add_backend_flags(sub)
    sub.set_defaults(handler=cmd_correlate)

    sub = subparsers.add_parser('controversial', parents=[common], help='rank discussions by offensive share')
    sub.add_argument('--data', required=True, help='dataset directory or discussions .jsonl')
    sub.add_argument('--split', choices=list(dataset.SPLIT_NAMES) + ['all'], default='all')
    sub.add_argument('--top-k', type=int, default=cfg.CONTROVERSIAL_TOP_K)
    _add_backend_flags(sub)
    sub.set_defaults(handler=cmd_controversial)

    return parser


def _overrides(args) -> Dict:
    return {
        'cache_dir': getattr(args, 'cache_dir', None),
        'rate_limit': getattr(args, 'rate_limit', None),
        'max_workers': getattr(args, 'workers', None),
        'refresh': getattr(args, 'refresh', None),
        'log_url_template': getattr(args, 'log_url_template', None),
    }


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        set_console_level(logging.DEBUG)

    try:
        config = cfg.load_config(args.config, overrides=_overrides(args))
        if not args.verbose:
            set_console_level(config.log_level.upper())
        return args.handler(args, config)
    except (UsageError, ConfigError, InvalidDateRange, MalformedUrl) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ExplanationUnavailable, MissingCredentials) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NO_CREDENTIALS
    except (AfdAnalyzerError, OSError, ValueError) as e:
        log_exception(logger, e, context=args.command)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == '__main__':
    sys.exit(main())
