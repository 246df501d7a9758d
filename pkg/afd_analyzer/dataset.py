"""
Dataset assembly for AfD outcome prediction.

Builds stratified train/validation/test splits from labeled discussions,
computes per-label statistics, derives the masked variant and the
comment-level stance/policy datasets, and reads/writes the versioned
on-disk layout (train.jsonl, validation.jsonl, test.jsonl, manifest.json).
"""

import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.model_selection import train_test_split

from afd_analyzer import config as cfg
from afd_analyzer.logger_utils import (
    CorruptRecord,
    DatasetError,
    DegenerateStratum,
    EmptyInput,
    SchemaVersionMismatch,
    setup_logger,
)
from afd_analyzer.parser import (
    Discussion,
    OutcomeLabel,
    find_policies,
    mask_votes,
    segment_sentences,
    strip_bold_markers,
)

logger = setup_logger(__name__)

SPLIT_NAMES = ('train', 'validation', 'test')
MANIFEST_NAME = 'manifest.json'
DEDUP_POLICY = 'collapse by title before splitting; first record in (title, url, date) order wins'


@dataclass
class DatasetSplits:
    train: List[Discussion]
    validation: List[Discussion]
    test: List[Discussion]
    split_seed: int = cfg.DEFAULT_SPLIT_SEED
    ratios: Tuple[float, float, float] = cfg.DEFAULT_SPLIT_RATIOS
    masked: bool = False
    duplicates_collapsed: int = 0
    degenerate_labels: Tuple[str, ...] = ()

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)
        self.degenerate_labels = tuple(self.degenerate_labels)
        _check_ratios(self.ratios)

    def split(self, name: str) -> List[Discussion]:
        if name not in SPLIT_NAMES:
            raise KeyError(f"Unknown split {name!r}; expected one of {SPLIT_NAMES}")
        return getattr(self, name)

    def items(self) -> Iterable[Tuple[str, List[Discussion]]]:
        return ((name, getattr(self, name)) for name in SPLIT_NAMES)

    @property
    def sizes(self) -> Dict[str, int]:
        return {name: len(items) for name, items in self.items()}

    def __len__(self):
        return sum(self.sizes.values())


@dataclass
class LabelStats:
    """
    Per-label statistics behind the dataset summary table and length plots.

    Attributes:
        counts (dict): split -> label -> number of discussions
        mean_length (dict): label -> mean whitespace-token count of cleaned text
        mean_sentences (dict): label -> mean number of sentences per discussion
        sentence_length (dict): label -> {'mean', 'q25', 'q50', 'q75'} tokens per sentence
    """

    counts: Dict[str, Dict[str, int]]
    mean_length: Dict[str, float]
    mean_sentences: Dict[str, float]
    sentence_length: Dict[str, Dict[str, float]]

    @property
    def totals(self) -> Dict[str, int]:
        return {split: sum(per_label.values()) for split, per_label in self.counts.items()}

    def to_frame(self) -> pd.DataFrame:
        """One row per label: counts per split, overall count and length columns."""
        rows = []
        for label in cfg.OUTCOME_LABELS:
            row = {'label': label}
            for split in SPLIT_NAMES:
                row[split] = self.counts[split][label]
            row['overall'] = sum(row[split] for split in SPLIT_NAMES)
            row['mean_length'] = self.mean_length.get(label, 0.0)
            row['mean_sentences'] = self.mean_sentences.get(label, 0.0)
            for key, value in self.sentence_length.get(label, {}).items():
                row[f'sentence_{key}'] = value
            rows.append(row)
        return pd.DataFrame(rows)


def _check_ratios(ratios: Sequence[float]) -> None:
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be three non-negative fractions, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")


# --------------------------
# Building
# --------------------------

def _record_order(discussion: Discussion) -> Tuple:
    return (
        discussion.title,
        discussion.source_url or '',
        discussion.log_date.isoformat() if discussion.log_date else '',
        discussion.text,
    )


def deduplicate(discussions: Iterable[Discussion]) -> Tuple[List[Discussion], int]:
    """Collapse repeated titles to one discussion; returns (title-sorted unique list, collapsed count)."""
    unique: Dict[str, Discussion] = {}
    collapsed = 0
    for discussion in sorted(discussions, key=_record_order):
        if discussion.title in unique:
            collapsed += 1
            continue
        unique[discussion.title] = discussion
    return list(unique.values()), collapsed


def _take(items: List[Discussion], n_take: int, seed: int) -> Tuple[List[Discussion], List[Discussion]]:
    """Split off n_take items, stratified by label when every class can be represented."""
    if n_take <= 0:
        return items, []
    if n_take >= len(items):
        return [], items
    labels = [d.label.value for d in items]
    counts = pd.Series(labels).value_counts()
    n_classes = len(counts)
    stratify = labels if (counts.min() >= 2 and n_take >= n_classes
                          and len(items) - n_take >= n_classes) else None
    if stratify is None and n_classes > 1:
        logger.debug(f"Unstratified split of {n_take}/{len(items)} items")
    kept, taken = train_test_split(
        items, test_size=n_take, random_state=seed, shuffle=True, stratify=stratify
    )
    return list(kept), list(taken)


def build_dataset(discussions: Iterable[Discussion],
                  ratios: Sequence[float] = cfg.DEFAULT_SPLIT_RATIOS,
                  seed: int = cfg.DEFAULT_SPLIT_SEED) -> DatasetSplits:
    """
    Build stratified train/validation/test splits.

    Open or unlabeled discussions are dropped, duplicate titles collapse to
    one instance, and the input is sorted by title first so the result does
    not depend on input order. Split sizes are round(n * ratio) for test and
    validation; train takes the rest. A label with fewer items than there are
    non-empty splits cannot be stratified: all of its items go to train and a
    DegenerateStratum warning is issued.

    Args:
        discussions (iterable): Parsed discussions
        ratios (tuple): (train, validation, test) fractions summing to 1
        seed (int): Random seed

    Returns:
        DatasetSplits: Disjoint (by title) splits

    Raises:
        EmptyInput: If no labeled discussion remains
        ValueError: If ratios are invalid

    Example:
        >>> splits = build_dataset(discussions, ratios=(0.7, 0.1, 0.2), seed=42)
        >>> splits.sizes
        {'train': 12969, 'validation': 1853, 'test': 3706}
    """
    ratios = tuple(float(r) for r in ratios)
    _check_ratios(ratios)

    discussions = list(discussions)
    labeled = [d for d in discussions if d.is_labeled]
    if len(labeled) < len(discussions):
        logger.info(f"Dropped {len(discussions) - len(labeled)} open or unlabeled discussion(s)")
    if not labeled:
        raise EmptyInput("No closed, labeled discussions to build a dataset from")

    unique, collapsed = deduplicate(labeled)
    if collapsed:
        logger.info(f"Collapsed {collapsed} duplicate title(s)")

    active_splits = sum(1 for r in ratios if r > 0)
    counts = pd.Series([d.label.value for d in unique]).value_counts()
    degenerate = sorted(label for label, n in counts.items() if n < active_splits)
    if degenerate:
        message = (f"Label(s) {', '.join(degenerate)} have fewer items than splits; "
                   f"placing them in train")
        warnings.warn(message, DegenerateStratum, stacklevel=2)
        logger.warning(message)

    forced_train = [d for d in unique if d.label.value in degenerate]
    pool = [d for d in unique if d.label.value not in degenerate]

    n_test = int(round(len(pool) * ratios[2]))
    n_val = int(round(len(pool) * ratios[1]))
    remaining, test = _take(pool, n_test, seed)
    train, validation = _take(remaining, n_val, seed)
    train = train + forced_train

    splits = DatasetSplits(
        train=train,
        validation=validation,
        test=test,
        split_seed=seed,
        ratios=ratios,
        duplicates_collapsed=collapsed,
        degenerate_labels=tuple(degenerate),
    )
    check_disjoint(splits)
    logger.info(f"Built dataset: {splits.sizes}")
    return splits


def check_disjoint(splits: DatasetSplits) -> None:
    """Raise DatasetError if any title sits in more than one split."""
    seen: Dict[str, str] = {}
    for name, items in splits.items():
        for discussion in items:
            other = seen.setdefault(discussion.title, name)
            if other != name:
                raise DatasetError(f"Title {discussion.title!r} appears in both {other} and {name}")


def label_proportions(items: Sequence[Discussion]) -> Dict[str, float]:
    total = len(items)
    if not total:
        return {}
    counts = pd.Series([d.label.value for d in items]).value_counts()
    return {label: counts.get(label, 0) / total for label in cfg.OUTCOME_LABELS}


def masked_variant(splits: DatasetSplits, variants: Optional[Dict[str, OutcomeLabel]] = None,
                   mode: str = cfg.DEFAULT_MASK_MODE, token: str = cfg.MASK_TOKEN) -> DatasetSplits:
    """
    Same items and labels with bolded votes masked out of every text.

    Texts come from the marked text when available, so bold positions
    recorded during cleaning are honored.
    """
    def _mask(discussion: Discussion) -> Discussion:
        source = discussion.marked_text if discussion.marked_text is not None else discussion.text
        masked = mask_votes(source, variants, mode=mode, token=token)
        return replace(discussion, text=strip_bold_markers(masked), marked_text=masked)

    return replace(
        splits,
        train=[_mask(d) for d in splits.train],
        validation=[_mask(d) for d in splits.validation],
        test=[_mask(d) for d in splits.test],
        masked=True,
    )


def to_frame(splits: DatasetSplits) -> pd.DataFrame:
    """Flatten splits into a DataFrame with a `split` column."""
    rows = []
    for name, items in splits.items():
        for discussion in items:
            record = discussion.to_record()
            rows.append({
                'split': name,
                'title': record['title'],
                'text': record['text'],
                'label': record['label'],
                'url': record['url'],
                'date': record['date'],
            })
    return pd.DataFrame(rows, columns=['split', 'title', 'text', 'label', 'url', 'date'])


# --------------------------
# Statistics
# --------------------------

def discussion_length(text: str) -> int:
    """Length unit: whitespace tokens of cleaned text."""
    return len(text.split())


def compute_stats(splits: DatasetSplits) -> LabelStats:
    """
    Per-label counts per split plus length distributions over all splits.

    Raises:
        EmptyInput: If every split is empty

    Example:
        >>> stats = compute_stats(splits)
        >>> stats.counts['train']['delete']
        7032
    """
    if len(splits) == 0:
        raise EmptyInput("Cannot compute statistics of an empty dataset")

    counts = {
        name: {label: 0 for label in cfg.OUTCOME_LABELS}
        for name in SPLIT_NAMES
    }
    doc_rows = []
    sentence_rows = []
    for name, items in splits.items():
        for discussion in items:
            label = discussion.label.value
            counts[name][label] += 1
            sentences = segment_sentences(discussion.text)
            doc_rows.append({
                'label': label,
                'length': discussion_length(discussion.text),
                'sentences': len(sentences),
            })
            sentence_rows.extend(
                {'label': label, 'length': discussion_length(s.text)} for s in sentences
            )

    docs = pd.DataFrame(doc_rows, columns=['label', 'length', 'sentences'])
    sents = pd.DataFrame(sentence_rows, columns=['label', 'length'])
    by_label = docs.groupby('label')
    mean_length = by_label['length'].mean().astype(float).to_dict()
    mean_sentences = by_label['sentences'].mean().astype(float).to_dict()

    sentence_length = {}
    for label, group in sents.groupby('label'):
        lengths = group['length'].to_numpy(dtype=float)
        summary = {'mean': float(np.mean(lengths))}
        for q in cfg.SENTENCE_LENGTH_QUANTILES:
            summary[f'q{int(round(q * 100))}'] = float(np.quantile(lengths, q))
        sentence_length[label] = summary

    return LabelStats(
        counts=counts,
        mean_length=mean_length,
        mean_sentences=mean_sentences,
        sentence_length=sentence_length,
    )


# --------------------------
# Comment-Level Datasets
# --------------------------

def build_comment_dataset(source: Union[DatasetSplits, Iterable[Discussion]], task: str,
                          variants: Optional[Dict[str, OutcomeLabel]] = None,
                          policy_labels: Optional[Sequence[str]] = None,
                          mask_mode: str = cfg.DEFAULT_MASK_MODE,
                          shortcuts: Optional[Dict[str, str]] = None) -> pd.DataFrame:
    """
    Comment-level training data for the stance or policy task.

    Stance: gold label is the comment's bold vote (keep/delete/merge/comment),
    and the vote itself is masked out of the text. Policy: gold label is the
    first cited policy (restricted to policy_labels when given); comments
    citing none are dropped. With a shortcut table, citations are re-read
    from the comment text instead of taken from the parsed comment. When source is a DatasetSplits, each comment
    inherits its discussion's split.

    Returns:
        pd.DataFrame: columns split, title, comment_index, text, label, outcome
    """
    if task not in ('stance', 'policy'):
        raise ValueError(f"comment datasets exist for stance and policy, not {task!r}")

    if isinstance(source, DatasetSplits):
        tagged = [(name, d) for name, items in source.items() for d in items]
    else:
        tagged = [(None, d) for d in source]

    allowed = set(policy_labels) if policy_labels is not None else None
    rows = []
    for split, discussion in tagged:
        for comment in discussion.comments:
            if task == 'stance':
                if comment.vote is None:
                    continue
                label = comment.vote
                text = strip_bold_markers(mask_votes(comment.text, variants, mode=mask_mode))
            else:
                policies = find_policies(comment.plain_text, shortcuts) if shortcuts is not None else comment.policies
                cited = [p for p in policies if allowed is None or p in allowed]
                if not cited:
                    continue
                label = cited[0]
                text = comment.plain_text
            if not text:
                continue
            rows.append({
                'split': split,
                'title': discussion.title,
                'comment_index': comment.index,
                'text': text,
                'label': label,
                'outcome': discussion.label.value if discussion.label else None,
            })

    frame = pd.DataFrame(rows, columns=['split', 'title', 'comment_index', 'text', 'label', 'outcome'])
    logger.info(f"Built {task} comment dataset with {len(frame)} row(s)")
    return frame


def top_policies(comment_frame: pd.DataFrame, k: int = cfg.POLICY_LABEL_COUNT) -> List[str]:
    """The k most frequent policy labels; ties go to the alphabetically first name."""
    if comment_frame.empty:
        return []
    counts = comment_frame['label'].value_counts()
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return [label for label, _ in ranked[:k]]


# --------------------------
# Persistence
# --------------------------

def write_records(path: Union[str, Path], discussions: Iterable[Discussion]) -> int:
    """Write one JSON record per line; returns the number written."""
    count = 0
    with open(path, 'w', encoding='utf-8') as handle:
        for discussion in discussions:
            handle.write(json.dumps(discussion.to_record(), ensure_ascii=False, sort_keys=True))
            handle.write('\n')
            count += 1
    return count


def read_records(path: Union[str, Path], require_label: bool = False) -> List[Discussion]:
    """
    Read a .jsonl file of discussion records.

    Raises:
        CorruptRecord: On the first undecodable or incomplete line
    """
    discussions = []
    with open(path, 'r', encoding='utf-8') as handle:
        for number, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                discussion = Discussion.from_record(record)
            except (ValueError, KeyError, TypeError) as e:
                raise CorruptRecord(str(path), number, e) from e
            if require_label and not discussion.is_labeled:
                raise CorruptRecord(str(path), number, "record has no outcome label")
            discussions.append(discussion)
    return discussions


def save(splits: DatasetSplits, out_dir: Union[str, Path]) -> Path:
    """
    Write the three split files plus manifest.json.

    Returns:
        Path: The dataset directory
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, items in splits.items():
        write_records(out_dir / f"{name}.jsonl", items)

    dates = sorted(d.log_date.isoformat() for _, items in splits.items() for d in items if d.log_date)
    manifest = {
        'schema_version': cfg.DATASET_SCHEMA_VERSION,
        'seed': splits.split_seed,
        'ratios': list(splits.ratios),
        'masked': splits.masked,
        'sizes': splits.sizes,
        'counts': {
            name: {label: sum(1 for d in items if d.label.value == label) for label in cfg.OUTCOME_LABELS}
            for name, items in splits.items()
        },
        'source_date_range': [dates[0], dates[-1]] if dates else None,
        'dedup_policy': DEDUP_POLICY,
        'duplicates_collapsed': splits.duplicates_collapsed,
        'degenerate_labels': list(splits.degenerate_labels),
    }
    with open(out_dir / MANIFEST_NAME, 'w', encoding='utf-8') as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
    logger.info(f"Saved dataset to {out_dir}: {splits.sizes}")
    return out_dir


def load(data_dir: Union[str, Path]) -> DatasetSplits:
    """
    Load a dataset written by save().

    Raises:
        DatasetError: If the directory or manifest is missing
        SchemaVersionMismatch: If the manifest names another schema version
        CorruptRecord: On a bad record line
    """
    data_dir = Path(data_dir)
    manifest_path = data_dir / MANIFEST_NAME
    if not manifest_path.is_file():
        raise DatasetError(f"No dataset manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding='utf-8'))
    except ValueError as e:
        raise DatasetError(f"Unreadable manifest {manifest_path}: {e}") from e

    version = manifest.get('schema_version')
    if version != cfg.DATASET_SCHEMA_VERSION:
        raise SchemaVersionMismatch(version, cfg.DATASET_SCHEMA_VERSION)

    parts = {}
    for name in SPLIT_NAMES:
        path = data_dir / f"{name}.jsonl"
        if not path.is_file():
            raise DatasetError(f"Missing split file {path}")
        parts[name] = read_records(path, require_label=True)

    return DatasetSplits(
        train=parts['train'],
        validation=parts['validation'],
        test=parts['test'],
        split_seed=manifest.get('seed', cfg.DEFAULT_SPLIT_SEED),
        ratios=tuple(manifest.get('ratios', cfg.DEFAULT_SPLIT_RATIOS)),
        masked=bool(manifest.get('masked', False)),
        duplicates_collapsed=manifest.get('duplicates_collapsed', 0),
        degenerate_labels=tuple(manifest.get('degenerate_labels', ())),
    )
