"""
Unit tests for the analysis pipeline: single requests, batches and
sentence scoring.
"""

import json

import pandas as pd
import pytest
import requests

from afd_analyzer.classify import Backend, LabelSpace, LexiconBackend, LLMBackend, Prediction
from afd_analyzer.collector import AfdCollector
from afd_analyzer.logger_utils import DiscussionNotFound, ExplanationUnavailable
from afd_analyzer.pipeline import (
    AnalyzeRequest,
    analyze,
    batch_analyze,
    records_for,
    score_discussions,
)


class KeywordBackend(Backend):
    """Outcome backend answering 'keep' when the text mentions keep, else 'delete'."""

    kind = 'keyword'

    def __init__(self, explanation=None, fail_on=None):
        super().__init__(LabelSpace.default('outcome'))
        self.explanation = explanation
        self.fail_on = fail_on
        self.seen = []

    def predict(self, text, title=None):
        self.seen.append((title, text))
        if self.fail_on and self.fail_on in text:
            raise RuntimeError(f"cannot score {title!r}")
        label = 'keep' if 'keep' in text.lower() else 'delete'
        return Prediction(label, 0.9, explanation=self.explanation)


class ChatSession(requests.Session):
    def __init__(self, reply):
        super().__init__()
        self.reply = reply
        self.prompts = []

    def post(self, url, json=None, headers=None, **kwargs):
        self.prompts.append(json['messages'][0]['content'])
        response = requests.Response()
        response.status_code = 200
        response._content = _dumps({'choices': [{'message': {'content': self.reply}}]})
        response.encoding = 'utf-8'
        return response


def _dumps(payload):
    return json.dumps(payload).encode('utf-8')


@pytest.fixture
def explainer(monkeypatch):
    monkeypatch.setenv('OPENAI_API_KEY', 'sk-test')
    session = ChatSession('Sources are thin. Nobody argued otherwise. Deletion follows.')
    return LLMBackend(session=session, rate_limit=1000.0)


class TestAnalyzeRequest:
    """Test request validation."""

    def test_defaults(self):
        req = AnalyzeRequest('Delete. Junk.')
        assert req.mode == 'text'
        assert req.task.value == 'outcome'

    @pytest.mark.parametrize('kwargs', [
        {'input': '   '},
        {'input': 'x', 'mode': 'file'},
        {'input': 'en.wikipedia.org/wiki/X', 'mode': 'url'},
        {'input': 'Delete.', 'task': 'sentiment', 'want_explanation': True},
    ])
    def test_invalid_requests(self, kwargs):
        with pytest.raises(ValueError):
            AnalyzeRequest(**kwargs)

    def test_unknown_task(self):
        with pytest.raises(ValueError):
            AnalyzeRequest('Delete.', task='toxicity')


class TestAnalyze:
    """Test analyze() in text and url modes."""

    def test_sentiment_text(self):
        result = analyze(AnalyzeRequest('Delete. Junk.', task='sentiment'), LexiconBackend('sentiment'))

        assert [p.label for _, p in result.sentences] == ['neutral', 'negative']
        records = records_for(result)
        assert records[1] == {'sentence': 'Junk.', 'sentiment': 'negative', 'score': pytest.approx(0.5065, abs=1e-4)}

    def test_offensive_record_keys(self):
        result = analyze(AnalyzeRequest('This is garbage. Keep.', task='offensive'), LexiconBackend('offensive'))
        records = records_for(result)

        assert [set(r) for r in records] == [{'sentence', 'offensive_label', 'score'}] * 2
        assert records[0]['offensive_label'] == 'offensive'

    def test_outcome_text(self):
        backend = KeywordBackend(explanation='not wanted')
        result = analyze(AnalyzeRequest('Keep, notable.', title='Mary Quill'), backend)

        assert result.prediction.label == 'keep'
        assert result.prediction.explanation is None
        assert records_for(result) == [{'prediction': 'keep', 'probability': 0.9}]
        assert backend.seen == [('Mary Quill', 'Keep, notable.')]

    def test_markup_is_cleaned(self):
        backend = KeywordBackend()
        analyze(AnalyzeRequest('<p><b>Delete</b> per nom.</p>'), backend)
        assert backend.seen[0][1].startswith('Delete per nom')

    @pytest.mark.parametrize('text', [
        'Delete, see <ref> here.',
        'Keep since a < b > c holds.',
        'Delete & salt <not a tag>.',
    ])
    def test_plain_text_keeps_angle_brackets(self, text):
        backend = KeywordBackend()
        analyze(AnalyzeRequest(text), backend)
        assert backend.seen[0][1] == text

    def test_url_with_anchor(self, config, log_server):
        backend = KeywordBackend()
        url = log_server.url_for('2023_January_1') + '#Zorblax_Industries'

        result = analyze(AnalyzeRequest(url, mode='url'), backend, collector=AfdCollector.from_config(config))

        assert result.title == 'Zorblax Industries'
        assert result.prediction.label == 'delete'
        assert 'non-notable company' in backend.seen[0][1]
        assert result.source_url.startswith(log_server.base_url)

    def test_url_anchor_with_parentheses(self, config, log_server):
        url = log_server.url_for('2023_January_1') + '#Mary_Quill_(singer)'
        result = analyze(AnalyzeRequest(url, mode='url'), KeywordBackend(),
                         collector=AfdCollector.from_config(config))
        assert result.title == 'Mary Quill (singer)'

    def test_url_sentence_task(self, config, log_server):
        url = log_server.url_for('2023_January_1') + '#Zorblax_Industries'
        result = analyze(AnalyzeRequest(url, mode='url', task='sentiment'), LexiconBackend('sentiment'),
                         collector=AfdCollector.from_config(config))

        assert len(result.sentences) >= 3
        assert all(set(r) == {'sentence', 'sentiment', 'score'} for r in records_for(result))

    def test_ambiguous_url_lists_candidates(self, config, log_server):
        with pytest.raises(DiscussionNotFound) as excinfo:
            analyze(AnalyzeRequest(log_server.url_for('2023_January_1'), mode='url'), KeywordBackend(),
                    collector=AfdCollector.from_config(config))
        assert 'Zorblax Industries' in excinfo.value.candidates

    def test_unknown_anchor(self, config, log_server):
        url = log_server.url_for('2023_January_1') + '#No_Such_Article'
        with pytest.raises(DiscussionNotFound):
            analyze(AnalyzeRequest(url, mode='url'), KeywordBackend(), collector=AfdCollector.from_config(config))

    def test_url_mode_needs_collector(self):
        with pytest.raises(ValueError):
            analyze(AnalyzeRequest('https://en.wikipedia.org/wiki/X', mode='url'), KeywordBackend())

    def test_explanation_keeps_predicted_label(self, explainer):
        result = analyze(AnalyzeRequest('Delete, junk.', title='Zorblax', want_explanation=True),
                         KeywordBackend(), explainer=explainer)

        assert result.prediction.label == 'delete'
        assert result.prediction.explanation.startswith('Sources are thin.')
        assert 'resolved with the label "delete"' in explainer.session.prompts[0]
        assert set(records_for(result)[0]) == {'prediction', 'probability', 'explanation'}

    def test_explanation_without_explainer(self):
        with pytest.raises(ExplanationUnavailable):
            analyze(AnalyzeRequest('Delete.', want_explanation=True), KeywordBackend())

    def test_explanation_without_credentials(self, monkeypatch):
        monkeypatch.delenv('OPENAI_API_KEY', raising=False)
        with pytest.raises(ExplanationUnavailable):
            analyze(AnalyzeRequest('Delete.', want_explanation=True), KeywordBackend(), explainer=LLMBackend())


class TestBatches:
    """Test batch_analyze and score_discussions."""

    def test_failures_are_isolated_and_order_kept(self, make_discussion):
        items = [
            make_discussion('First', label='keep', text='Keep, notable.'),
            make_discussion('Second', label='delete', text='boom'),
            make_discussion('Third', label='delete', text='Delete, junk.'),
        ]

        result = batch_analyze(items, 'outcome', KeywordBackend(fail_on='boom'), max_workers=3)

        assert [(gold, p.label) for gold, p in result.pairs] == [('keep', 'keep'), ('delete', 'delete')]
        assert result.indices == [0, 2]
        assert len(result.errors) == 1
        assert result.errors[0].index == 1
        assert result.errors[0].title == 'Second'
        assert 'cannot score' in result.errors[0].error

    def test_many_items_keep_order(self, make_discussion):
        items = [make_discussion(f"Item {i}", label='keep' if i % 2 else 'delete',
                                 text='Keep.' if i % 2 else 'Delete.') for i in range(40)]
        result = batch_analyze(items, 'outcome', KeywordBackend(), max_workers=8)

        assert [gold for gold, _ in result.pairs] == [p.label for _, p in result.pairs]
        assert result.indices == list(range(40))

    def test_dataframe_input(self):
        frame = pd.DataFrame({'text': ['Keep it.', 'Junk.'], 'label': ['keep', 'delete']})
        result = batch_analyze(frame, 'outcome', KeywordBackend())
        assert [p.label for _, p in result.pairs] == ['keep', 'delete']

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            batch_analyze([], 'outcome', KeywordBackend())

    def test_score_discussions(self, make_discussion):
        items = [
            make_discussion('A', label='delete', text='Delete. Junk.'),
            make_discussion('B', label='keep', text='Keep. Clearly notable.'),
            make_discussion('Still open', closed=False, text='Keep.'),
        ]

        scored = score_discussions(items, 'sentiment', LexiconBackend('sentiment'))

        assert [s.title for s in scored] == ['A', 'B']
        assert scored[0].outcome == 'delete'
        assert [p.label for p in scored[0].predictions] == ['neutral', 'negative']
        assert scored[1].predictions[1].label == 'positive'

    def test_score_discussions_rejects_outcome(self, make_discussion):
        with pytest.raises(ValueError):
            score_discussions([make_discussion('A')], 'outcome', KeywordBackend())
