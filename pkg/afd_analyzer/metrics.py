"""
Evaluation metrics and correlation analytics.

evaluate() turns (gold, predicted) pairs into accuracy, macro and per-label
precision/recall/F1 plus a confusion matrix. correlate() relates
per-discussion auxiliary scores (sentiment or stance) to one-hot outcome
indicators with Pearson's r. rank_controversial() orders discussions by
their share of offensive sentences.
"""

import io
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support

from afd_analyzer import config as cfg
from afd_analyzer.logger_utils import MetricsError, UnknownLabelInPairs, ZeroVariance, setup_logger

logger = setup_logger(__name__)


@dataclass
class EvalReport:
    """
    Attributes:
        labels (list): Label order of every per-label list and of the matrix axes
        confusion (np.ndarray): gold (rows) x predicted (columns) counts
        zero_division (dict): label -> list of metric names that hit 0/0
    """

    labels: List[str]
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    precision: Dict[str, float]
    recall: Dict[str, float]
    f1: Dict[str, float]
    support: Dict[str, int]
    confusion: np.ndarray
    zero_division: Dict[str, List[str]] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())


def _labels_of(label_space) -> List[str]:
    labels = getattr(label_space, 'labels', label_space)
    return [str(label) for label in labels]


def evaluate(pairs: Sequence[Tuple[str, str]], label_space) -> EvalReport:
    """
    Score predictions against gold labels.

    Macro averages are unweighted means over every label of the label space,
    including labels with zero support. A 0/0 precision or recall counts as 0
    and is listed in ``zero_division``.

    Args:
        pairs (list): (gold, predicted) label pairs
        label_space: LabelSpace or ordered list of label names

    Returns:
        EvalReport: Metrics in label-space order

    Raises:
        UnknownLabelInPairs: If a pair holds a label outside the label space
        MetricsError: If pairs is empty

    Example:
        >>> report = evaluate([('keep', 'keep'), ('delete', 'keep')], ['keep', 'delete'])
        >>> report.accuracy
        0.5
    """
    labels = _labels_of(label_space)
    pairs = [(str(gold), str(pred)) for gold, pred in pairs]
    if not pairs:
        raise MetricsError("Cannot evaluate an empty set of pairs")
    known = set(labels)
    for gold, pred in pairs:
        for label in (gold, pred):
            if label not in known:
                raise UnknownLabelInPairs(label)

    gold = [g for g, _ in pairs]
    predicted = [p for _, p in pairs]
    matrix = confusion_matrix(gold, predicted, labels=labels)
    precision, recall, f1, support = precision_recall_fscore_support(
        gold, predicted, labels=labels, average=None, zero_division=0
    )

    predicted_totals = matrix.sum(axis=0)
    gold_totals = matrix.sum(axis=1)
    flags = {}
    for index, label in enumerate(labels):
        hit = []
        if predicted_totals[index] == 0:
            hit.append('precision')
        if gold_totals[index] == 0:
            hit.append('recall')
        if hit:
            flags[label] = hit

    report = EvalReport(
        labels=labels,
        accuracy=float(np.trace(matrix) / matrix.sum()),
        macro_precision=float(np.mean(precision)),
        macro_recall=float(np.mean(recall)),
        macro_f1=float(np.mean(f1)),
        precision={label: float(v) for label, v in zip(labels, precision)},
        recall={label: float(v) for label, v in zip(labels, recall)},
        f1={label: float(v) for label, v in zip(labels, f1)},
        support={label: int(v) for label, v in zip(labels, support)},
        confusion=matrix,
        zero_division=flags,
    )
    logger.info(f"Evaluated {len(pairs)} pair(s): accuracy {report.accuracy:.4f}, macro-F1 {report.macro_f1:.4f}")
    return report


def report_to_dict(report: EvalReport) -> Dict:
    """JSON-ready form of an EvalReport."""
    return {
        'labels': report.labels,
        'accuracy': report.accuracy,
        'macro_precision': report.macro_precision,
        'macro_recall': report.macro_recall,
        'macro_f1': report.macro_f1,
        'per_label': {
            label: {
                'precision': report.precision[label],
                'recall': report.recall[label],
                'f1': report.f1[label],
                'support': report.support[label],
            }
            for label in report.labels
        },
        'confusion': report.confusion.tolist(),
        'zero_division': report.zero_division,
    }


def confusion_to_csv(report: EvalReport) -> str:
    """Confusion matrix as CSV, gold labels as rows and predicted labels as columns."""
    frame = pd.DataFrame(report.confusion, index=report.labels, columns=report.labels)
    frame.index.name = 'gold'
    buffer = io.StringIO()
    frame.to_csv(buffer)
    return buffer.getvalue()


def format_report_table(report: EvalReport) -> str:
    """Aligned plain-text table: one row per label plus accuracy and macro rows."""
    width = max(len('macro avg'), *(len(label) for label in report.labels))
    lines = [f"{'':<{width}}  {'precision':>9}  {'recall':>9}  {'f1':>9}  {'support':>7}"]
    for label in report.labels:
        lines.append(
            f"{label:<{width}}  {report.precision[label]:>9.4f}  {report.recall[label]:>9.4f}"
            f"  {report.f1[label]:>9.4f}  {report.support[label]:>7d}"
        )
    lines.append('')
    lines.append(f"{'accuracy':<{width}}  {'':>9}  {'':>9}  {report.accuracy:>9.4f}  {report.total:>7d}")
    lines.append(
        f"{'macro avg':<{width}}  {report.macro_precision:>9.4f}  {report.macro_recall:>9.4f}"
        f"  {report.macro_f1:>9.4f}  {report.total:>7d}"
    )
    return '\n'.join(lines)


# --------------------------
# Correlation
# --------------------------

@dataclass
class ScoredDiscussion:
    """A discussion's outcome plus one auxiliary Prediction per sentence."""

    title: str
    outcome: str
    predictions: list


@dataclass
class CorrelationReport:
    """
    Attributes:
        matrix (pd.DataFrame): auxiliary class (rows) x outcome label (columns);
            NaN marks an undefined (zero-variance) cell
        absent (list): (class, label) cells left undefined
    """

    matrix: pd.DataFrame
    sample_size: int
    mode: str = 'mean_probability'
    absent: List[Tuple[str, str]] = field(default_factory=list)

    def value(self, aux_class: str, label: str) -> Optional[float]:
        r = self.matrix.loc[aux_class, label]
        return None if pd.isna(r) else float(r)

    def to_dict(self) -> Dict:
        return {
            'mode': self.mode,
            'sample_size': self.sample_size,
            'matrix': {
                aux: {label: self.value(aux, label) for label in self.matrix.columns}
                for aux in self.matrix.index
            },
            'absent': [list(cell) for cell in self.absent],
        }


def _is_constant(values: np.ndarray) -> bool:
    # means over uneven sentence counts leave float noise on constant columns
    return values.size == 0 or bool(np.allclose(values, values[0], rtol=1e-9, atol=1e-12))


def pearson(x: Sequence[float], y: Sequence[float], cell=None) -> float:
    """
    Pearson's r.

    Raises:
        ZeroVariance: If either column is constant
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if _is_constant(x) or _is_constant(y):
        raise ZeroVariance(cell)
    dx = x - x.mean()
    dy = y - y.mean()
    denom = np.sqrt(np.sum(dx * dx) * np.sum(dy * dy))
    if denom == 0 or not np.isfinite(denom):
        raise ZeroVariance(cell)
    return float(np.clip(np.sum(dx * dy) / denom, -1.0, 1.0))


def _feature(predictions: Sequence, aux_class: str, mode: str) -> float:
    if mode == 'mean_probability':
        values = []
        for prediction in predictions:
            if prediction.per_label_scores is not None:
                values.append(prediction.per_label_scores.get(aux_class, 0.0))
            else:
                values.append(prediction.probability if prediction.label == aux_class else 0.0)
        return float(np.mean(values))
    return float(np.mean([prediction.label == aux_class for prediction in predictions]))


def correlate(scored: Sequence[ScoredDiscussion], aux_classes: Sequence[str],
              outcome_labels: Sequence[str] = tuple(cfg.OUTCOME_LABELS),
              mode: str = 'mean_probability') -> CorrelationReport:
    """
    Pearson correlation between per-discussion auxiliary scores and outcomes.

    The feature of a discussion for class c is the mean probability of c
    over its sentences (``mean_probability``) or the fraction of sentences
    whose predicted label is c (``vote_fraction``). The target for outcome L
    is 1 when the discussion closed as L, else 0. Cells where either column
    is constant are left undefined and listed in ``absent``.

    Raises:
        MetricsError: With fewer than 3 discussions, an unscored discussion or an unknown mode
    """
    if mode not in cfg.CORRELATION_MODES:
        raise MetricsError(f"Unknown correlation mode {mode!r}; expected one of {cfg.CORRELATION_MODES}")
    scored = list(scored)
    if len(scored) < 3:
        raise MetricsError(f"Correlation needs at least 3 discussions, got {len(scored)}")
    for item in scored:
        if not item.predictions:
            raise MetricsError(f"Discussion {item.title!r} has no scored sentences")

    aux_classes = [str(c) for c in aux_classes]
    outcome_labels = [str(label) for label in outcome_labels]
    features = {c: [_feature(item.predictions, c, mode) for item in scored] for c in aux_classes}
    targets = {label: [1.0 if str(item.outcome) == label else 0.0 for item in scored] for label in outcome_labels}

    matrix = pd.DataFrame(np.nan, index=aux_classes, columns=outcome_labels, dtype=float)
    absent = []
    for c in aux_classes:
        for label in outcome_labels:
            try:
                matrix.loc[c, label] = pearson(features[c], targets[label], cell=(c, label))
            except ZeroVariance:
                absent.append((c, label))
    if absent:
        logger.info(f"{len(absent)} correlation cell(s) undefined (zero variance)")
    return CorrelationReport(matrix=matrix, sample_size=len(scored), mode=mode, absent=absent)


def rank_controversial(scored: Sequence[ScoredDiscussion], top_k: int = cfg.CONTROVERSIAL_TOP_K,
                       offensive_label: str = 'offensive') -> List[Tuple[str, float]]:
    """Top-k (title, offensive sentence fraction), highest first; ties by title."""
    ranked = []
    for item in scored:
        if not item.predictions:
            continue
        fraction = sum(p.label == offensive_label for p in item.predictions) / len(item.predictions)
        ranked.append((item.title, float(fraction)))
    ranked.sort(key=lambda entry: (-entry[1], entry[0]))
    return ranked[:top_k]


def correlation_to_json(report: CorrelationReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True)
