"""
One-click analysis: resolve the input, clean it, predict, optionally explain.

analyze() handles a single URL or text; batch_analyze() and
score_discussions() run a backend over many discussions with a bounded
worker pool, keeping input order and recording per-item failures.
"""

import html
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union
from urllib.parse import unquote, urlsplit, urlunsplit

import pandas as pd

from afd_analyzer import config as cfg
from afd_analyzer.classify import AnalysisTask, Backend, LLMBackend, Prediction, predict
from afd_analyzer.collector import AfdCollector
from afd_analyzer.logger_utils import (
    DiscussionNotFound,
    ExplanationUnavailable,
    safe_operation,
    setup_logger,
)
from afd_analyzer.metrics import ScoredDiscussion
from afd_analyzer.parser import (
    Discussion,
    OutcomeLabel,
    RawDiscussion,
    Sentence,
    clean_text,
    discussion_from_raw,
    extract_discussions,
    segment_sentences,
)

logger = setup_logger(__name__)

RECORD_LABEL_KEYS = {
    AnalysisTask.STANCE: 'label',
    AnalysisTask.POLICY: 'label',
    AnalysisTask.SENTIMENT: 'sentiment',
    AnalysisTask.OFFENSIVE: 'offensive_label',
}


@dataclass(frozen=True)
class AnalyzeRequest:
    input: str
    mode: str = 'text'
    task: AnalysisTask = AnalysisTask.OUTCOME
    want_explanation: bool = False
    title: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, 'task', AnalysisTask(self.task))
        if self.mode not in ('url', 'text'):
            raise ValueError(f"mode must be 'url' or 'text', got {self.mode!r}")
        if self.input is None or not str(self.input).strip():
            raise ValueError("analyze input must be non-empty")
        if self.mode == 'url':
            parts = urlsplit(self.input)
            if parts.scheme not in ('http', 'https') or not parts.netloc:
                raise ValueError(f"not an absolute URL: {self.input!r}")
        if self.want_explanation and self.task.sentence_level:
            raise ValueError("explanations are available for the outcome task only")


@dataclass
class AnalysisResult:
    task: AnalysisTask
    title: Optional[str] = None
    source_url: Optional[str] = None
    prediction: Optional[Prediction] = None
    sentences: List[Tuple[Sentence, Prediction]] = field(default_factory=list)


@dataclass(frozen=True)
class ItemError:
    index: int
    title: str
    error: str


@dataclass
class BatchResult:
    """Predictions in input order; failed items appear only in errors."""

    pairs: List[Tuple[str, Prediction]] = field(default_factory=list)
    errors: List[ItemError] = field(default_factory=list)
    indices: List[int] = field(default_factory=list)


# --------------------------
# Input Resolution
# --------------------------

def _anchor_key(value: str) -> str:
    return unquote(value).replace(' ', '_').strip('_').lower()


def select_discussion(raws: Sequence[RawDiscussion], url: str) -> RawDiscussion:
    """
    Pick the discussion a URL refers to.

    With a fragment, the section whose anchor (or title) matches it; without
    one, the page's only discussion.

    Raises:
        DiscussionNotFound: Listing candidate titles when the choice is not unique
    """
    fragment = urlsplit(url).fragment
    titles = [raw.title for raw in raws]
    if fragment:
        wanted = _anchor_key(fragment)
        matches = [raw for raw in raws if raw.anchor and _anchor_key(raw.anchor) == wanted]
        if not matches:
            matches = [raw for raw in raws if _anchor_key(raw.title) == wanted]
        if len(matches) == 1:
            return matches[0]
        raise DiscussionNotFound(url, titles)
    if len(raws) == 1:
        return raws[0]
    raise DiscussionNotFound(url, titles)


def resolve_discussion(url: str, collector: AfdCollector,
                       variants: Optional[Dict[str, OutcomeLabel]] = None) -> Discussion:
    """Fetch the page behind url and return the referenced discussion."""
    parts = urlsplit(url)
    page_url = urlunsplit((parts.scheme, parts.netloc, parts.path, parts.query, ''))
    page = collector.fetch_page(page_url)
    raw = select_discussion(extract_discussions(page), url)
    return discussion_from_raw(raw, variants)


# Pasted page markup; anything else is plain text and is escaped before cleaning
_MARKUP_TAG = re.compile(
    r'</?(?:p|b|i|u|s|a|br|hr|em|strong|small|span|div|ul|ol|li|dl|dt|dd|h[1-6]|table|tr|td|th|tbody|'
    r'code|pre|sup|sub|blockquote|font|del|ins)(?:\s[^<>]*)?/?>',
    re.IGNORECASE,
)


def _text_input(req: AnalyzeRequest) -> Tuple[str, str]:
    title = req.title or 'Untitled'
    body = req.input if _MARKUP_TAG.search(req.input) else html.escape(req.input, quote=False)
    raw = RawDiscussion(title=title, body_html=body, source_url='text:')
    return title, clean_text(raw)


# --------------------------
# Analysis
# --------------------------

def analyze(req: AnalyzeRequest, backend: Backend, explainer: Optional[LLMBackend] = None,
            collector: Optional[AfdCollector] = None,
            variants: Optional[Dict[str, OutcomeLabel]] = None) -> AnalysisResult:
    """
    Run one analysis request.

    The outcome task scores the whole cleaned discussion; the other tasks
    score each segmented sentence. With want_explanation, the explainer is
    asked to justify the predicted label; the predicted label is never
    replaced.

    Args:
        req (AnalyzeRequest): What to analyze
        backend (Backend): Backend for req.task
        explainer (LLMBackend): Needed when req.want_explanation is set
        collector (AfdCollector): Needed in url mode

    Returns:
        AnalysisResult

    Raises:
        ExplanationUnavailable: If an explanation is wanted without a usable LLM
        DiscussionNotFound: If the URL does not identify one discussion
        ValueError: If the cleaned text is empty

    Example:
        >>> result = analyze(AnalyzeRequest('Delete. Junk.', task='sentiment'), LexiconBackend('sentiment'))
        >>> [p.label for _, p in result.sentences]
        ['neutral', 'negative']
    """
    if req.want_explanation and (explainer is None or not explainer.has_credentials):
        raise ExplanationUnavailable("An explanation needs a configured LLM backend with credentials")

    if req.mode == 'url':
        if collector is None:
            raise ValueError("url mode needs a collector")
        discussion = resolve_discussion(req.input, collector, variants)
        title, text, source_url = discussion.title, discussion.text, discussion.source_url
    else:
        title, text = _text_input(req)
        source_url = None
    if not text:
        raise ValueError("analyze input has no text after cleaning")

    result = AnalysisResult(task=req.task, title=title, source_url=source_url)
    if req.task is AnalysisTask.OUTCOME:
        prediction = predict(backend, req.task, text, title=title)
        if req.want_explanation:
            if not prediction.explanation or backend is not explainer:
                prediction = replace(prediction, explanation=explainer.explain(title, text, prediction.label))
        elif prediction.explanation:
            prediction = replace(prediction, explanation=None)
        result.prediction = prediction
        logger.info(f"{title!r}: {prediction.label} ({prediction.probability:.3f})")
    else:
        for sentence in segment_sentences(text):
            result.sentences.append((sentence, predict(backend, req.task, sentence.text)))
        logger.info(f"{title!r}: scored {len(result.sentences)} sentence(s) for {req.task}")
    return result


def records_for(result: AnalysisResult) -> List[Dict]:
    """
    Line-delimited output records.

    outcome -> {prediction, probability[, explanation]};
    stance/policy -> {sentence, label, score};
    sentiment -> {sentence, sentiment, score};
    offensive -> {sentence, offensive_label, score}.
    """
    if result.task is AnalysisTask.OUTCOME:
        if result.prediction is None:
            return []
        record = {'prediction': result.prediction.label, 'probability': result.prediction.probability}
        if result.prediction.explanation:
            record['explanation'] = result.prediction.explanation
        return [record]
    key = RECORD_LABEL_KEYS[result.task]
    return [
        {'sentence': sentence.text, key: prediction.label, 'score': prediction.probability}
        for sentence, prediction in result.sentences
    ]


# --------------------------
# Batches
# --------------------------

def _items_of(items) -> List[Tuple[str, str, str]]:
    """(title, text, gold) triples from Discussions or a DataFrame with text/label columns."""
    if isinstance(items, pd.DataFrame):
        titles = items['title'] if 'title' in items.columns else items.index.astype(str)
        return [(str(t), str(text), str(label)) for t, text, label in zip(titles, items['text'], items['label'])]
    return [(d.title, d.text, d.label.value if d.label else None) for d in items]


def batch_analyze(items: Union[Sequence[Discussion], pd.DataFrame], task: Union[str, AnalysisTask],
                  backend: Backend, max_workers: int = cfg.BACKEND_MAX_WORKERS) -> BatchResult:
    """
    Predict every item of a split, keeping input order.

    A failing item becomes an ItemError instead of aborting the batch.

    Returns:
        BatchResult: (gold, Prediction) pairs for the successful items
    """
    task = AnalysisTask(task)
    triples = _items_of(items)
    if not triples:
        raise ValueError("batch_analyze needs a non-empty split")

    def _one(triple):
        title, text, _ = triple
        return safe_operation(logger, f"predict {title!r}", predict, backend, task, text, title=title)

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        outcomes = list(pool.map(_one, triples))

    result = BatchResult()
    for index, ((title, _, gold), (prediction, error)) in enumerate(zip(triples, outcomes)):
        if error is not None:
            result.errors.append(ItemError(index=index, title=title, error=str(error)))
        else:
            result.pairs.append((gold, prediction))
            result.indices.append(index)
    level = logging.WARNING if result.errors else logging.INFO
    logger.log(level, f"Batch {task}: {len(result.pairs)} prediction(s), {len(result.errors)} error(s)")
    return result


def score_discussions(discussions: Sequence[Discussion], task: Union[str, AnalysisTask],
                      backend: Backend, max_workers: int = cfg.BACKEND_MAX_WORKERS) -> List[ScoredDiscussion]:
    """
    Sentence-level predictions per labeled discussion, the input of correlate()
    and rank_controversial(). Discussions that fail or have no sentences are skipped.
    """
    task = AnalysisTask(task)
    if not task.sentence_level:
        raise ValueError("score_discussions runs sentence-level tasks only")

    def _score(discussion: Discussion):
        return [predict(backend, task, s.text) for s in segment_sentences(discussion.text)]

    def _one(discussion: Discussion):
        return safe_operation(logger, f"score {discussion.title!r}", _score, discussion)

    discussions = [d for d in discussions if d.is_labeled]
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        outcomes = list(pool.map(_one, discussions))

    scored = []
    for discussion, (predictions, error) in zip(discussions, outcomes):
        if error is None and predictions:
            scored.append(ScoredDiscussion(discussion.title, discussion.label.value, predictions))
    logger.info(f"Scored {len(scored)} of {len(discussions)} discussion(s) for {task}")
    return scored
