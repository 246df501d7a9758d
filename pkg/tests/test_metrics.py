"""
Unit tests for evaluation metrics and correlation analytics.
"""

import json

import numpy as np
import pytest

from afd_analyzer import config as cfg
from afd_analyzer.classify import LabelSpace, Prediction
from afd_analyzer.logger_utils import MetricsError, UnknownLabelInPairs, ZeroVariance
from afd_analyzer.metrics import (
    ScoredDiscussion,
    confusion_to_csv,
    correlate,
    correlation_to_json,
    evaluate,
    format_report_table,
    pearson,
    rank_controversial,
    report_to_dict,
)


def _pairs_from_confusion(matrix, labels):
    pairs = []
    for row, gold in enumerate(labels):
        for col, predicted in enumerate(labels):
            pairs.extend([(gold, predicted)] * matrix[row][col])
    return pairs


def _brute_force(pairs, labels):
    """Recount every metric directly from the pairs."""
    precision, recall, f1 = {}, {}, {}
    for label in labels:
        tp = sum(1 for g, p in pairs if g == label and p == label)
        predicted = sum(1 for _, p in pairs if p == label)
        gold = sum(1 for g, _ in pairs if g == label)
        precision[label] = tp / predicted if predicted else 0.0
        recall[label] = tp / gold if gold else 0.0
        total = precision[label] + recall[label]
        f1[label] = 2 * precision[label] * recall[label] / total if total else 0.0
    accuracy = sum(1 for g, p in pairs if g == p) / len(pairs)
    return accuracy, precision, recall, f1


def _sentences(label_scores):
    """Predictions from a list of per-label score dicts."""
    return [Prediction(max(s, key=s.get), max(s.values()), per_label_scores=s) for s in label_scores]


class TestEvaluate:
    """Test evaluate() and its report forms."""

    def test_two_label_oracle(self):
        pairs = _pairs_from_confusion([[8, 2], [3, 7]], ['keep', 'delete'])
        report = evaluate(pairs, ['keep', 'delete'])

        assert report.accuracy == pytest.approx(0.75)
        assert report.macro_f1 == pytest.approx(0.7494, abs=1e-4)
        assert report.precision['keep'] == pytest.approx(8 / 11)
        assert report.recall['delete'] == pytest.approx(0.7)
        assert report.confusion.tolist() == [[8, 2], [3, 7]]
        assert report.total == 20

    def test_order_of_pairs_does_not_matter(self):
        np.random.seed(7)
        labels = cfg.OUTCOME_LABELS
        pairs = list(zip(np.random.choice(labels, 300).tolist(), np.random.choice(labels, 300).tolist()))
        shuffled = [pairs[i] for i in np.random.permutation(len(pairs))]

        assert report_to_dict(evaluate(shuffled, labels)) == report_to_dict(evaluate(pairs, labels))

    def test_matches_brute_force_recount(self):
        """100 random pair sets over the eight outcome labels agree with a direct recount."""
        np.random.seed(42)
        labels = cfg.OUTCOME_LABELS
        for _ in range(100):
            gold = np.random.choice(labels, size=500)
            noise = np.random.choice(labels, size=500)
            keep_gold = np.random.random(500) < 0.6
            predicted = np.where(keep_gold, gold, noise)
            pairs = list(zip(gold.tolist(), predicted.tolist()))

            report = evaluate(pairs, LabelSpace.default('outcome'))
            accuracy, precision, recall, f1 = _brute_force(pairs, labels)

            assert abs(report.accuracy - accuracy) <= 1e-9
            for label in labels:
                assert abs(report.precision[label] - precision[label]) <= 1e-9
                assert abs(report.recall[label] - recall[label]) <= 1e-9
                assert abs(report.f1[label] - f1[label]) <= 1e-9
            assert abs(report.macro_f1 - np.mean([f1[label] for label in labels])) <= 1e-9
            assert report.confusion.sum() == 500

    def test_zero_support_labels_count_in_macro_average(self):
        report = evaluate([('keep', 'keep'), ('keep', 'keep')], ['keep', 'delete'])

        assert report.f1 == {'keep': 1.0, 'delete': 0.0}
        assert report.macro_f1 == pytest.approx(0.5)
        assert report.zero_division == {'delete': ['precision', 'recall']}

    def test_unpredicted_label_is_flagged(self):
        report = evaluate([('keep', 'delete'), ('delete', 'delete')], ['keep', 'delete'])
        assert report.zero_division == {'keep': ['precision']}

    def test_unknown_label_raises(self):
        with pytest.raises(UnknownLabelInPairs):
            evaluate([('keep', 'banana')], ['keep', 'delete'])

    def test_empty_pairs_raise(self):
        with pytest.raises(MetricsError):
            evaluate([], ['keep'])

    def test_report_forms(self):
        report = evaluate(_pairs_from_confusion([[8, 2], [3, 7]], ['keep', 'delete']), ['keep', 'delete'])

        as_dict = json.loads(json.dumps(report_to_dict(report)))
        assert as_dict['per_label']['keep']['support'] == 10
        assert as_dict['confusion'] == [[8, 2], [3, 7]]

        csv_lines = confusion_to_csv(report).strip().splitlines()
        assert csv_lines == ['gold,keep,delete', 'keep,8,2', 'delete,3,7']

        table = format_report_table(report)
        assert 'macro avg' in table
        assert '0.7494' in table


class TestCorrelate:
    """Test Pearson correlation between auxiliary scores and outcomes."""

    def test_pearson(self):
        assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
        assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
        with pytest.raises(ZeroVariance):
            pearson([1, 1, 1], [1, 2, 3])

    def test_pearson_affine_invariance(self):
        np.random.seed(3)
        x = np.random.random(50)
        y = x + np.random.random(50)
        r = pearson(x, y)

        assert pearson(2.5 * x + 4.0, y) == pytest.approx(r, abs=1e-12)
        assert pearson(-0.3 * x + 1.0, y) == pytest.approx(-r, abs=1e-12)

    def test_nearly_constant_column_is_zero_variance(self):
        with pytest.raises(ZeroVariance):
            pearson([np.mean([0.1] * 3), 0.1, 0.1], [1, 0, 0])

    def test_constant_feature_over_uneven_sentence_counts(self):
        """A constant score averaged over 3, 1 and 1 sentences stays undefined."""
        flat = {'positive': 0.45, 'negative': 0.45, 'neutral': 0.1}
        scored = [
            ScoredDiscussion('A', 'delete', _sentences([flat, flat, flat])),
            ScoredDiscussion('B', 'keep', _sentences([flat])),
            ScoredDiscussion('C', 'keep', _sentences([flat])),
        ]

        report = correlate(scored, ['neutral'], ['delete'])

        assert report.value('neutral', 'delete') is None
        assert report.absent == [('neutral', 'delete')]

    def test_aligned_and_anti_aligned(self):
        negative = {'positive': 0.1, 'negative': 0.8, 'neutral': 0.1}
        positive = {'positive': 0.8, 'negative': 0.1, 'neutral': 0.1}
        scored = [
            ScoredDiscussion('A', 'delete', _sentences([negative, negative])),
            ScoredDiscussion('B', 'delete', _sentences([negative])),
            ScoredDiscussion('C', 'keep', _sentences([positive])),
            ScoredDiscussion('D', 'keep', _sentences([positive, positive])),
        ]

        report = correlate(scored, cfg.SENTIMENT_LABELS)

        assert report.value('negative', 'delete') == pytest.approx(1.0)
        assert report.value('positive', 'delete') == pytest.approx(-1.0)
        assert report.value('negative', 'keep') == pytest.approx(-1.0)
        assert report.sample_size == 4
        # neutral is constant and no discussion was merged
        assert report.value('neutral', 'delete') is None
        assert ('neutral', 'keep') in report.absent
        assert ('negative', 'merge') in report.absent

    def test_vote_fraction_mode(self):
        scored = [
            ScoredDiscussion('A', 'delete', [Prediction('delete', 0.9), Prediction('delete', 0.6)]),
            ScoredDiscussion('B', 'keep', [Prediction('keep', 0.9), Prediction('delete', 0.6)]),
            ScoredDiscussion('C', 'keep', [Prediction('keep', 0.7)]),
        ]
        report = correlate(scored, ['delete', 'keep'], ['delete', 'keep'], mode='vote_fraction')

        # delete fractions (1, 0.5, 0) against delete outcomes (1, 0, 0)
        assert report.value('delete', 'delete') == pytest.approx(np.corrcoef([1, 0.5, 0], [1, 0, 0])[0, 1])

    def test_mean_probability_without_distribution(self):
        scored = [
            ScoredDiscussion('A', 'delete', [Prediction('delete', 0.9)]),
            ScoredDiscussion('B', 'keep', [Prediction('keep', 0.8)]),
            ScoredDiscussion('C', 'keep', [Prediction('delete', 0.2)]),
        ]
        report = correlate(scored, ['delete'], ['delete'])
        assert report.value('delete', 'delete') == pytest.approx(np.corrcoef([0.9, 0.0, 0.2], [1, 0, 0])[0, 1])

    def test_too_few_discussions(self):
        scored = [ScoredDiscussion('A', 'delete', [Prediction('delete', 1.0)])] * 2
        with pytest.raises(MetricsError):
            correlate(scored, ['delete'])

    def test_unscored_discussion(self):
        scored = [ScoredDiscussion(t, 'delete', [Prediction('delete', 1.0)]) for t in 'AB']
        scored.append(ScoredDiscussion('C', 'keep', []))
        with pytest.raises(MetricsError):
            correlate(scored, ['delete'])

    def test_unknown_mode(self):
        scored = [ScoredDiscussion(t, 'delete', [Prediction('delete', 1.0)]) for t in 'ABC']
        with pytest.raises(MetricsError):
            correlate(scored, ['delete'], mode='median')

    def test_json_form(self):
        scored = [
            ScoredDiscussion('A', 'delete', [Prediction('delete', 1.0)]),
            ScoredDiscussion('B', 'keep', [Prediction('keep', 1.0)]),
            ScoredDiscussion('C', 'keep', [Prediction('keep', 1.0)]),
        ]
        data = json.loads(correlation_to_json(correlate(scored, ['delete'], ['delete', 'merge'])))

        assert data['sample_size'] == 3
        assert data['matrix']['delete']['delete'] == pytest.approx(1.0)
        assert data['matrix']['delete']['merge'] is None
        assert data['absent'] == [['delete', 'merge']]


class TestRankControversial:
    """Test ranking by offensive sentence share."""

    def test_ranking_and_ties(self):
        def preds(*labels):
            return [Prediction(label, 1.0) for label in labels]

        scored = [
            ScoredDiscussion('Calm', 'keep', preds('non-offensive', 'non-offensive')),
            ScoredDiscussion('Heated', 'delete', preds('offensive', 'offensive', 'non-offensive')),
            ScoredDiscussion('Beta', 'delete', preds('offensive', 'non-offensive')),
            ScoredDiscussion('Alpha', 'keep', preds('offensive', 'non-offensive')),
            ScoredDiscussion('Empty', 'keep', []),
        ]

        ranked = rank_controversial(scored, top_k=3)

        assert [title for title, _ in ranked] == ['Heated', 'Alpha', 'Beta']
        assert ranked[0][1] == pytest.approx(2 / 3)
        assert len(rank_controversial(scored)) == 4
