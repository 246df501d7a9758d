"""
Prediction backends for AfD analysis tasks.

A uniform ``predict(text) -> Prediction`` interface over:
- BaselineBackend: TF-IDF features + multinomial logistic regression trained
  natively with full-batch gradient descent
- RemoteBackend: an HTTP inference endpoint
- LLMBackend: a chat-completion model driven by the outcome prompt
- LexiconBackend: offline heuristic sentiment/offensive scorer
"""

import json
import os
import re
import threading
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import joblib
import numpy as np
import pandas as pd
import requests
from scipy import sparse
from sklearn.feature_extraction.text import TfidfVectorizer
from sklearn.metrics import f1_score
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt, wait_exponential

from afd_analyzer import config as cfg
from afd_analyzer.collector import RateLimiter
from afd_analyzer.dataset import DatasetSplits
from afd_analyzer.logger_utils import (
    BackendUnavailable,
    ConfigError,
    InsufficientData,
    LabelSpaceMismatch,
    ModelError,
    ModelFormatError,
    UnparseableResponse,
    setup_logger,
)
from afd_analyzer.parser import OutcomeLabel, canonicalize_label, load_variant_table

logger = setup_logger(__name__)


# --------------------------
# Tasks & Label Spaces
# --------------------------

class AnalysisTask(str, Enum):
    OUTCOME = 'outcome'
    STANCE = 'stance'
    POLICY = 'policy'
    SENTIMENT = 'sentiment'
    OFFENSIVE = 'offensive'

    def __str__(self):
        return self.value

    @property
    def sentence_level(self) -> bool:
        return self is not AnalysisTask.OUTCOME


def load_policy_labels(path: Union[str, Path] = cfg.POLICY_LABELS_PATH) -> List[str]:
    with open(path, 'r', encoding='utf-8') as handle:
        return [line.strip() for line in handle if line.strip() and not line.startswith('#')]


@dataclass(frozen=True)
class LabelSpace:
    task: AnalysisTask
    labels: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, 'task', AnalysisTask(self.task))
        object.__setattr__(self, 'labels', tuple(self.labels))
        if not self.labels:
            raise ValueError(f"Label space for {self.task} is empty")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"Label space for {self.task} has duplicate labels")

    @classmethod
    def default(cls, task: Union[str, AnalysisTask],
                policy_labels: Optional[Sequence[str]] = None) -> 'LabelSpace':
        """Default label space of a task; policy labels come from the shipped list unless given."""
        task = AnalysisTask(task)
        if task is AnalysisTask.OUTCOME:
            labels = [label.value for label in OutcomeLabel]
        elif task is AnalysisTask.STANCE:
            labels = cfg.STANCE_LABELS
        elif task is AnalysisTask.POLICY:
            labels = policy_labels if policy_labels is not None else load_policy_labels()
        elif task is AnalysisTask.SENTIMENT:
            labels = cfg.SENTIMENT_LABELS
        else:
            labels = cfg.OFFENSIVE_LABELS
        return cls(task, tuple(labels))

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __contains__(self, label):
        return label in self.labels

    def index(self, label: str) -> int:
        return self.labels.index(label)


@dataclass(frozen=True)
class Prediction:
    label: str
    probability: float
    explanation: Optional[str] = None
    per_label_scores: Optional[Dict[str, float]] = None

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0 + 1e-9:
            raise ValueError(f"probability must lie in [0, 1], got {self.probability}")
        if self.per_label_scores is not None:
            total = sum(self.per_label_scores.values())
            if abs(total - 1.0) > 1e-6:
                raise ValueError(f"per_label_scores must sum to 1, got {total}")
            best = max(self.per_label_scores.values())
            if self.per_label_scores.get(self.label) != best:
                raise ValueError(f"label {self.label!r} is not the argmax of per_label_scores")


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _require_text(text: str) -> None:
    if text is None or not str(text).strip():
        raise ValueError("text must be non-empty")


# --------------------------
# Native Baseline
# --------------------------

@dataclass(frozen=True)
class BaselineHyperparams:
    l2: float = cfg.BASELINE_L2
    epochs: int = cfg.BASELINE_EPOCHS
    learning_rate: float = cfg.BASELINE_LEARNING_RATE
    min_df: int = cfg.BASELINE_MIN_DF
    ngram_range: Tuple[int, int] = cfg.BASELINE_NGRAM_RANGE
    seed: int = cfg.BASELINE_SEED


class BaselineModel:
    """
    TF-IDF (unigram + bigram) multinomial logistic regression.

    Trained with full-batch gradient descent on the L2-regularized mean
    cross-entropy; the bias is the last weight column and is not
    regularized.

    Attributes:
        label_space (LabelSpace): Task and ordered labels
        vectorizer (TfidfVectorizer): Fitted on the training split only
        weights (np.ndarray): |labels| x (|vocabulary| + 1)
        loss_history (list): Training loss per epoch
        validation_macro_f1 (float): Macro-F1 on the validation data, if given
        is_trained (bool): Whether the model has been trained

    Example:
        >>> model = BaselineModel(LabelSpace.default('outcome'))
        >>> model.train(texts, labels, validation_texts, validation_labels)
        >>> model.predict('Fails WP:GNG, no coverage.').label
        'delete'
    """

    def __init__(self, label_space: LabelSpace, hyperparams: Optional[BaselineHyperparams] = None):
        self.label_space = label_space
        self.hyperparams = hyperparams or BaselineHyperparams()
        self.vectorizer = TfidfVectorizer(
            ngram_range=tuple(self.hyperparams.ngram_range),
            min_df=self.hyperparams.min_df,
            sublinear_tf=True,
        )
        self.weights: Optional[np.ndarray] = None
        self.loss_history: List[float] = []
        self.validation_macro_f1: Optional[float] = None
        self.is_trained: bool = False

    @property
    def task(self) -> AnalysisTask:
        return self.label_space.task

    @property
    def vocabulary(self) -> Dict[str, int]:
        return dict(self.vectorizer.vocabulary_) if self.is_trained else {}

    @property
    def idf(self) -> Optional[np.ndarray]:
        return self.vectorizer.idf_ if self.is_trained else None

    def _design(self, texts: Sequence[str]) -> sparse.csr_matrix:
        features = self.vectorizer.transform(texts)
        bias = sparse.csr_matrix(np.ones((features.shape[0], 1)))
        return sparse.hstack([features, bias], format='csr')

    def loss_and_gradient(self, W: np.ndarray, X, Y: np.ndarray) -> Tuple[float, np.ndarray]:
        """
        Mean cross-entropy plus L2 penalty, and its gradient with respect to W.

        Args:
            W (np.ndarray): Weights, |labels| x n_features (last column is the bias)
            X: Design matrix (dense or sparse), n_items x n_features
            Y (np.ndarray): One-hot targets, n_items x |labels|

        Returns:
            Tuple of (loss, gradient shaped like W)
        """
        n = X.shape[0]
        probs = _softmax(np.asarray(X @ W.T))
        log_likelihood = np.sum(Y * np.log(np.clip(probs, 1e-300, None)))
        penalized = W.copy()
        penalized[:, -1] = 0.0
        loss = -log_likelihood / n + 0.5 * self.hyperparams.l2 * float(np.sum(penalized ** 2))
        grad = np.asarray(X.T @ (probs - Y)).T / n + self.hyperparams.l2 * penalized
        return float(loss), grad

    def _targets(self, labels: Sequence[str]) -> np.ndarray:
        Y = np.zeros((len(labels), len(self.label_space)))
        for row, label in enumerate(labels):
            Y[row, self.label_space.index(label)] = 1.0
        return Y

    def _check_labels(self, labels: Sequence[str], allow_missing_labels: bool) -> None:
        for label in labels:
            if label not in self.label_space:
                raise LabelSpaceMismatch(label, self.task.value)
        counts = pd.Series(list(labels)).value_counts()
        for label in self.label_space:
            count = int(counts.get(label, 0))
            if count < 2:
                if not allow_missing_labels:
                    raise InsufficientData(label, count)
                logger.warning(f"Label {label!r} has {count} training item(s); training anyway")

    def train(self, texts: Sequence[str], labels: Sequence[str],
              validation_texts: Optional[Sequence[str]] = None,
              validation_labels: Optional[Sequence[str]] = None,
              allow_missing_labels: bool = False) -> 'BaselineModel':
        """
        Fit the vectorizer and the weights.

        Returns:
            BaselineModel: Self for method chaining

        Raises:
            InsufficientData: If a label of the space has fewer than 2 training items
            LabelSpaceMismatch: If a training label is outside the label space
            ModelError: If no features can be extracted
        """
        texts = list(texts)
        labels = [str(label) for label in labels]
        if len(texts) != len(labels):
            raise ValueError("texts and labels differ in length")
        self._check_labels(labels, allow_missing_labels)

        logger.info(f"Training {self.task} baseline on {len(texts)} item(s)")
        try:
            self.vectorizer.fit(texts)
        except ValueError as e:
            raise ModelError(f"Could not build a vocabulary: {e}") from e
        self.is_trained = True

        X = self._design(texts)
        Y = self._targets(labels)
        rng = np.random.default_rng(self.hyperparams.seed)
        W = rng.normal(0.0, 0.01, size=(len(self.label_space), X.shape[1]))

        self.loss_history = []
        for epoch in range(self.hyperparams.epochs):
            loss, grad = self.loss_and_gradient(W, X, Y)
            self.loss_history.append(loss)
            W -= self.hyperparams.learning_rate * grad
            if epoch % 50 == 0:
                logger.debug(f"epoch {epoch}: loss {loss:.5f}")
        self.weights = W
        logger.info(f"Vocabulary size {len(self.vectorizer.vocabulary_)}, final loss {self.loss_history[-1]:.5f}")

        if validation_texts is not None and len(validation_texts) > 0:
            self.validation_macro_f1 = self.score(validation_texts, validation_labels)
            logger.info(f"Validation macro-F1: {self.validation_macro_f1:.4f}")
        return self

    def predict_proba(self, texts: Sequence[str]) -> np.ndarray:
        if not self.is_trained:
            raise ValueError("Model must be trained before making predictions")
        return _softmax(np.asarray(self._design(list(texts)) @ self.weights.T))

    def predict(self, text: str) -> Prediction:
        _require_text(text)
        probs = self.predict_proba([text])[0]
        best = int(np.argmax(probs))
        scores = {label: float(p) for label, p in zip(self.label_space.labels, probs)}
        return Prediction(
            label=self.label_space.labels[best],
            probability=float(probs[best]),
            per_label_scores=scores,
        )

    def score(self, texts: Sequence[str], labels: Sequence[str]) -> float:
        """Macro-F1 over the whole label space."""
        predicted = np.argmax(self.predict_proba(texts), axis=1)
        gold = [self.label_space.index(str(label)) for label in labels]
        return float(f1_score(gold, predicted, labels=list(range(len(self.label_space))),
                              average='macro', zero_division=0))

    def get_feature_importance(self, top_n: int = 10) -> Optional[pd.DataFrame]:
        """
        Highest-weighted terms per label.

        Returns:
            pd.DataFrame: columns label, term, weight; None if not trained
        """
        if not self.is_trained:
            logger.warning("Cannot compute feature importance: model not trained")
            return None
        terms = self.vectorizer.get_feature_names_out()
        rows = []
        for row, label in enumerate(self.label_space.labels):
            weights = self.weights[row, :-1]
            for index in np.argsort(-weights)[:top_n]:
                rows.append({'label': label, 'term': terms[index], 'weight': float(weights[index])})
        return pd.DataFrame(rows, columns=['label', 'term', 'weight'])


def train_baseline(data, task: Union[str, AnalysisTask] = AnalysisTask.OUTCOME,
                   hyperparams: Optional[BaselineHyperparams] = None,
                   label_space: Optional[LabelSpace] = None,
                   allow_missing_labels: bool = False) -> BaselineModel:
    """
    Train a BaselineModel on a DatasetSplits (outcome) or a comment-level DataFrame.

    A DataFrame with a ``split`` column trains on 'train' rows and validates on
    'validation' rows; without one every row is training data.

    Returns:
        BaselineModel: Trained model (validation_macro_f1 set when validation data exists)
    """
    task = AnalysisTask(task)
    label_space = label_space or LabelSpace.default(task)
    if isinstance(data, DatasetSplits):
        train_texts = [d.text for d in data.train]
        train_labels = [d.label.value for d in data.train]
        val_texts = [d.text for d in data.validation]
        val_labels = [d.label.value for d in data.validation]
    elif isinstance(data, pd.DataFrame):
        if 'split' in data.columns and data['split'].notna().any():
            train_frame = data[data['split'] == 'train']
            val_frame = data[data['split'] == 'validation']
        else:
            train_frame, val_frame = data, data.iloc[0:0]
        train_texts, train_labels = train_frame['text'].tolist(), train_frame['label'].tolist()
        val_texts, val_labels = val_frame['text'].tolist(), val_frame['label'].tolist()
    else:
        raise TypeError(f"Cannot train on {type(data).__name__}")

    if not train_texts:
        raise InsufficientData(label_space.labels[0], 0)
    model = BaselineModel(label_space, hyperparams)
    return model.train(train_texts, train_labels, val_texts, val_labels,
                       allow_missing_labels=allow_missing_labels)


def save_model(model: BaselineModel, path: Union[str, Path]) -> Path:
    """Write ``AFDBASELINE <version>\\n`` followed by a joblib payload."""
    if not model.is_trained:
        raise ModelError("Cannot save an untrained model")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        'task': model.task.value,
        'labels': list(model.label_space.labels),
        'hyperparams': asdict(model.hyperparams),
        'vectorizer': model.vectorizer,
        'weights': model.weights,
        'loss_history': model.loss_history,
        'validation_macro_f1': model.validation_macro_f1,
    }
    with open(path, 'wb') as handle:
        handle.write(cfg.MODEL_MAGIC + b' ' + str(cfg.MODEL_FORMAT_VERSION).encode('ascii') + b'\n')
        joblib.dump(payload, handle)
    logger.info(f"Saved {model.task} baseline to {path}")
    return path


def load_model(path: Union[str, Path]) -> BaselineModel:
    """
    Read a model written by save_model.

    Raises:
        ModelFormatError: On a wrong magic header, unknown version or bad payload
    """
    with open(path, 'rb') as handle:
        header = handle.readline().rstrip(b'\n').split(b' ')
        if len(header) != 2 or header[0] != cfg.MODEL_MAGIC:
            raise ModelFormatError(f"{path} is not a baseline model file")
        if header[1] != str(cfg.MODEL_FORMAT_VERSION).encode('ascii'):
            raise ModelFormatError(
                f"{path} has model format version {header[1].decode('ascii', 'replace')}, "
                f"expected {cfg.MODEL_FORMAT_VERSION}"
            )
        try:
            payload = joblib.load(handle)
        except Exception as e:
            raise ModelFormatError(f"Corrupt model payload in {path}: {e}") from e

    params = dict(payload['hyperparams'])
    params['ngram_range'] = tuple(params['ngram_range'])
    model = BaselineModel(LabelSpace(payload['task'], payload['labels']), BaselineHyperparams(**params))
    model.vectorizer = payload['vectorizer']
    model.weights = payload['weights']
    model.loss_history = list(payload.get('loss_history') or [])
    model.validation_macro_f1 = payload.get('validation_macro_f1')
    model.is_trained = True
    return model


# --------------------------
# LLM Prompt
# --------------------------

PROMPT_HEADER = (
    "You are a helpful knowledge management expert, and you excel at identifying the resolution "
    "of the Wikipedia deletion discussion for an Article.\n"
    "\n"
    "Given an article flagged for deletion on Wikipedia along with its deletion discussions, your "
    "task is to analyze the article text and discussions to identify the most suitable consensus "
    "label based on the deletion discussion.\n"
    "\n"
    "Your output should be a JSON dictionary with the label that you found and a three-sentence "
    "explanation of choosing that label. It is crucial to provide specific reasons based on the "
    "content of the deletion discussions and article text. Here is the list of labels with what "
    "they mean:\n"
    "- \"keep\": The article should be kept as it is.\n"
    "- \"delete\": The article should be deleted.\n"
    "- \"merge\": The article should be merged with another article.\n"
    "- \"redirect\": The article should be redirected to another existing article that is a "
    "better target for the content.\n"
    "- \"withdraw\": The nominator withdraws their nomination for deletion.\n"
    "- \"no consensus\": When there is no clear agreement on the deletion discussion.\n"
    "- \"speedy keep\": The article should be kept and there are reasons to bypass deletion "
    "discussions to keep the article immediately.\n"
    "- \"speedy delete\": The article should be deleted and there are reasons to bypass deletion "
    "discussions to delete the article immediately.\n"
    "Your input will be in the following format:\n"
    "\n"
    "INPUT:\n"
    "{\n"
    "     Title: <Article Title>,\n"
    "     Discussion: <Discussion text>\n"
    "}\n"
    "\n"
    "OUTPUT:\n"
    "{\n"
    "    Label: <One of the labels from the list of labels.>,\n"
    "    Explanation: <Your explanation for the label.>\n"
    "}\n"
)
PROMPT_INSTRUCTION = (
    "Now, you must read the following Input which is a dictionary with Title and deletion "
    "discussion. Your task is to analyze the article text and discussions to identify the most "
    "suitable consensus label based on the deletion discussion.\n"
)
PROMPT_INPUT_BLOCK = (
    "INPUT:\n"
    "{\n"
    "    Title: TOREPLACE_ARTICLE,\n"
    "    Discussion: TOREPLACE_DISCUSSION\n"
    "}\n"
)
PROMPT_TAIL = "OUTPUT:\n"
PROMPT_TEMPLATE = PROMPT_HEADER + PROMPT_INSTRUCTION + PROMPT_INPUT_BLOCK + PROMPT_TAIL

# Labels as the prompt names them; everything else matches OutcomeLabel values
PROMPT_LABEL_NAMES = {OutcomeLabel.WITHDRAWN: 'withdraw'}


@dataclass(frozen=True)
class Exemplar:
    """A solved example for few-shot prompting."""

    title: str
    discussion: str
    label: OutcomeLabel
    explanation: str


def _fill_input(title: str, discussion: str) -> str:
    # Single pass so that placeholder text inside the title is never re-substituted
    return re.sub(
        r'TOREPLACE_(ARTICLE|DISCUSSION)',
        lambda m: title if m.group(1) == 'ARTICLE' else discussion,
        PROMPT_INPUT_BLOCK,
    )


def render_llm_prompt(title: str, discussion: str, shots: Sequence[Exemplar] = ()) -> str:
    """
    Fill the outcome prompt for one discussion.

    Zero-shot when shots is empty; otherwise each exemplar is inserted as an
    INPUT/OUTPUT pair ahead of the final INPUT block.

    Example:
        >>> 'Title: Foo' in render_llm_prompt('Foo', 'Delete. Junk.')
        True
    """
    _require_text(title)
    _require_text(discussion)
    parts = [PROMPT_HEADER, PROMPT_INSTRUCTION]
    for shot in shots:
        answer = json.dumps({
            'Label': PROMPT_LABEL_NAMES.get(OutcomeLabel(shot.label), OutcomeLabel(shot.label).value),
            'Explanation': shot.explanation,
        }, ensure_ascii=False)
        parts.append(_fill_input(shot.title, shot.discussion))
        parts.append(f"OUTPUT:\n{answer}\n")
    parts.append(_fill_input(title, discussion))
    parts.append(PROMPT_TAIL)
    return ''.join(parts)


_FENCE = re.compile(r'```(?:json|JSON)?\s*(.*?)```', re.S)


def _candidate_objects(raw: str):
    decoder = json.JSONDecoder()
    sources = [m.group(1) for m in _FENCE.finditer(raw)] + [raw]
    for source in sources:
        for start in (m.start() for m in re.finditer(r'\{', source)):
            try:
                obj, _ = decoder.raw_decode(source, start)
            except ValueError:
                continue
            if isinstance(obj, dict):
                yield obj


# The prompt shows OUTPUT as {Label: ..., Explanation: ...} with bare keys
_LOOSE_OBJECT = re.compile(r'\{([^{}]*)\}')
_LOOSE_LABEL = re.compile(
    r'''(?:^|[\s,])["']?label["']?\s*:\s*["']?(?P<value>[A-Za-z][A-Za-z _-]*?)["']?\s*(?:,|\n|$)''',
    re.I,
)
_LOOSE_EXPLANATION = re.compile(r'''(?:^|[\s,])["']?explanation["']?\s*:\s*(?P<value>.*)''', re.I | re.S)
_JSON_LITERALS = frozenset({'null', 'true', 'false', 'none'})


def _loose_answer(raw: str) -> Optional[Tuple[str, str]]:
    for block in _LOOSE_OBJECT.finditer(raw):
        content = block.group(1)
        label = _LOOSE_LABEL.search(content)
        if label is None or label.group('value').strip().lower() in _JSON_LITERALS:
            continue
        explanation = ''
        found = _LOOSE_EXPLANATION.search(content)
        if found is not None:
            end = label.start() if found.start() < label.start() else len(content)
            explanation = content[found.start('value'):end].strip().rstrip(',').strip().strip('"\'')
        return label.group('value').strip(), explanation
    return None


def parse_llm_response(raw: str, variants: Optional[Dict[str, OutcomeLabel]] = None) -> Tuple[OutcomeLabel, str]:
    """
    Extract (label, explanation) from a model reply.

    The first JSON object carrying a ``Label`` key (keys matched
    case-insensitively) wins; an object that also has ``Explanation`` is
    preferred. Failing that, the bare-key form the prompt itself shows
    (``{Label: keep, Explanation: ...}``) is accepted. Surrounding prose and
    code fences are ignored.

    Raises:
        UnparseableResponse: If no such object exists
        UnknownLabel: If the label is not an outcome variant
        ValueError: If raw is empty
    """
    _require_text(raw)
    label_only = None
    for obj in _candidate_objects(raw):
        keys = {str(k).strip().lower(): v for k, v in obj.items()}
        if not isinstance(keys.get('label'), str):
            continue
        explanation = keys.get('explanation')
        if isinstance(explanation, str):
            return canonicalize_label(keys['label'], variants), explanation.strip()
        if label_only is None:
            label_only = keys['label']
    if label_only is not None:
        return canonicalize_label(label_only, variants), ''
    loose = _loose_answer(raw)
    if loose is not None:
        return canonicalize_label(loose[0], variants), loose[1]
    raise UnparseableResponse(f"No JSON object with a Label key in response: {raw[:120]!r}")


EXPLANATION_PROMPT = (
    "You are a helpful knowledge management expert, and you excel at explaining the resolution "
    "of Wikipedia deletion discussions.\n"
    "\n"
    "The deletion discussion below was resolved with the label \"{label}\". Write a three-sentence "
    "explanation of why this label fits, citing specific reasons from the discussion. Do not "
    "propose a different label.\n"
    "\n"
    "Title: {title}\n"
    "Discussion: {discussion}\n"
    "\n"
    "Explanation:"
)


# --------------------------
# Backends
# --------------------------

class Backend(ABC):
    """Common interface; implementations are safe to share across threads."""

    kind = 'abstract'

    def __init__(self, label_space: LabelSpace):
        self.label_space = label_space

    @property
    def task(self) -> AnalysisTask:
        return self.label_space.task

    @abstractmethod
    def predict(self, text: str, title: Optional[str] = None) -> Prediction:
        raise NotImplementedError


class BaselineBackend(Backend):
    kind = 'baseline'

    def __init__(self, model: BaselineModel):
        if not model.is_trained:
            raise BackendUnavailable("Baseline backend needs a trained model")
        super().__init__(model.label_space)
        self.model = model

    def predict(self, text: str, title: Optional[str] = None) -> Prediction:
        return self.model.predict(text)


class _HttpBackend(Backend):
    """Shared POST-with-retries plumbing for the remote and LLM backends."""

    def __init__(self, label_space: LabelSpace, session: Optional[requests.Session] = None,
                 timeout: float = cfg.HTTP_TIMEOUT, rate_limit: float = cfg.BACKEND_RATE_LIMIT,
                 max_retries: int = cfg.DEFAULT_MAX_RETRIES, backoff_min: float = cfg.RETRY_BACKOFF_MIN,
                 backoff_max: float = cfg.RETRY_BACKOFF_MAX):
        super().__init__(label_space)
        self.session = session or requests.Session()
        self.timeout = timeout
        self.limiter = RateLimiter(rate_limit)
        self.max_retries = max(1, int(max_retries))
        self.backoff_min = backoff_min
        self.backoff_max = backoff_max
        self._semaphore = threading.BoundedSemaphore(cfg.BACKEND_MAX_WORKERS)

    def _post(self, url: str, payload: Dict, headers: Dict[str, str]) -> Dict:
        retrying = Retrying(
            stop=stop_after_attempt(self.max_retries),
            wait=wait_exponential(multiplier=self.backoff_min, min=self.backoff_min, max=self.backoff_max),
            retry=retry_if_exception_type((requests.ConnectionError, requests.Timeout)),
            reraise=True,
        )
        try:
            with self._semaphore:
                for attempt in retrying:
                    with attempt:
                        self.limiter.acquire()
                        response = self.session.post(url, json=payload, headers=headers, timeout=self.timeout)
                        if response.status_code == 429 or response.status_code >= 500:
                            raise requests.ConnectionError(f"HTTP {response.status_code} from {url}")
                        response.raise_for_status()
        except requests.RequestException as e:
            raise BackendUnavailable(f"{self.kind} backend at {url} failed: {e}") from e
        try:
            return response.json()
        except ValueError as e:
            raise UnparseableResponse(f"{self.kind} backend returned non-JSON: {e}") from e


class RemoteBackend(_HttpBackend):
    """
    Hosted classifier endpoint.

    Request: ``{"task": str, "labels": [str], "text": str}``.
    Response: ``{"labels": [{"label": str, "score": float}, ...]}`` ranked best first.
    A bearer token is sent when the configured environment variable is set.
    """

    kind = 'remote'

    def __init__(self, endpoint: str, label_space: LabelSpace,
                 token_env: str = cfg.REMOTE_TOKEN_ENV, **kwargs):
        if not endpoint:
            raise BackendUnavailable("No remote endpoint configured")
        super().__init__(label_space, **kwargs)
        self.endpoint = endpoint
        self.token_env = token_env

    def predict(self, text: str, title: Optional[str] = None) -> Prediction:
        _require_text(text)
        headers = {'Content-Type': 'application/json'}
        token = os.getenv(self.token_env)
        if token:
            headers['Authorization'] = f"Bearer {token}"
        body = self._post(self.endpoint, {
            'task': self.task.value,
            'labels': list(self.label_space.labels),
            'text': text,
        }, headers)

        ranked = body.get('labels') if isinstance(body, dict) else None
        if not ranked or not isinstance(ranked, list):
            raise UnparseableResponse(f"Remote response has no ranked labels: {body!r}")
        scores: Dict[str, float] = {}
        for entry in ranked:
            try:
                label, score = str(entry['label']), float(entry['score'])
            except (KeyError, TypeError, ValueError) as e:
                raise UnparseableResponse(f"Malformed ranked entry {entry!r}") from e
            if label not in self.label_space:
                raise LabelSpaceMismatch(label, self.task.value)
            scores[label] = score

        top = max(scores, key=scores.get)
        full = set(scores) == set(self.label_space.labels) and abs(sum(scores.values()) - 1.0) <= 1e-6
        return Prediction(
            label=top,
            probability=min(max(scores[top], 0.0), 1.0),
            per_label_scores=scores if full else None,
        )


class LLMBackend(_HttpBackend):
    """
    Chat-completion backend for outcome prediction and explanations.

    Decoding is fixed (temperature 0, bounded max tokens). The API key is
    read from the environment variable named by api_key_env at call time.
    The model states no confidence, so predictions carry probability 1.0.
    """

    kind = 'llm'

    def __init__(self, api_base: str = cfg.LLM_API_BASE, model: str = cfg.LLM_MODEL,
                 api_key_env: str = cfg.LLM_API_KEY_ENV, temperature: float = cfg.LLM_TEMPERATURE,
                 max_tokens: int = cfg.LLM_MAX_TOKENS, shots: Sequence[Exemplar] = (),
                 variants: Optional[Dict[str, OutcomeLabel]] = None, **kwargs):
        super().__init__(LabelSpace.default(AnalysisTask.OUTCOME), **kwargs)
        self.api_base = api_base.rstrip('/')
        self.model = model
        self.api_key_env = api_key_env
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.shots = tuple(shots)
        self.variants = variants

    @classmethod
    def from_config(cls, config: cfg.Config, session: Optional[requests.Session] = None,
                    shots: Sequence[Exemplar] = ()) -> 'LLMBackend':
        return cls(
            api_base=config.llm_api_base,
            model=config.llm_model,
            api_key_env=config.llm_api_key_env,
            temperature=config.llm_temperature,
            max_tokens=config.llm_max_tokens,
            shots=shots,
            variants=load_variant_table(config.variant_table_path),
            session=session,
            timeout=config.http_timeout,
            rate_limit=config.backend_rate_limit,
            max_retries=config.max_retries,
        )

    @property
    def has_credentials(self) -> bool:
        return bool(os.getenv(self.api_key_env))

    def complete(self, prompt: str) -> str:
        """Send one user message and return the reply text."""
        key = os.getenv(self.api_key_env)
        if not key:
            raise BackendUnavailable(f"LLM API key not set (environment variable {self.api_key_env})")
        body = self._post(f"{self.api_base}/chat/completions", {
            'model': self.model,
            'messages': [{'role': 'user', 'content': prompt}],
            'temperature': self.temperature,
            'max_tokens': self.max_tokens,
        }, {'Authorization': f"Bearer {key}", 'Content-Type': 'application/json'})
        try:
            return body['choices'][0]['message']['content']
        except (KeyError, IndexError, TypeError) as e:
            raise UnparseableResponse(f"Unexpected chat completion payload: {body!r}") from e

    def predict(self, text: str, title: Optional[str] = None) -> Prediction:
        _require_text(text)
        reply = self.complete(render_llm_prompt(title or 'Untitled', text, self.shots))
        label, explanation = parse_llm_response(reply, self.variants)
        return Prediction(label=label.value, probability=1.0, explanation=explanation or None)

    def explain(self, title: str, discussion: str, label: Union[str, OutcomeLabel]) -> str:
        """Three-sentence justification for a label decided elsewhere."""
        _require_text(discussion)
        name = OutcomeLabel(label)
        reply = self.complete(EXPLANATION_PROMPT.format(
            label=PROMPT_LABEL_NAMES.get(name, name.value),
            title=title or 'Untitled',
            discussion=discussion,
        ))
        for obj in _candidate_objects(reply):
            keys = {str(k).strip().lower(): v for k, v in obj.items()}
            if isinstance(keys.get('explanation'), str):
                return keys['explanation'].strip()
        return reply.strip()


HEURISTIC_NOTE = 'heuristic lexicon score'
NEGATORS = frozenset({'not', 'no', 'never', "n't", 'hardly', 'without', 'nor', 'neither'})
NEGATION_WINDOW = 3
NEUTRAL_BIAS = 0.5
OFFENSIVE_THRESHOLD = 1.0


def load_lexicon(path: Union[str, Path] = cfg.LEXICON_PATH) -> Dict[str, Dict[str, float]]:
    """term -> {class: weight} from ``term<TAB>class<TAB>weight`` lines."""
    lexicon: Dict[str, Dict[str, float]] = {}
    with open(path, 'r', encoding='utf-8') as handle:
        for number, line in enumerate(handle, 1):
            if not line.strip() or line.startswith('#'):
                continue
            parts = line.rstrip('\n').split('\t')
            if len(parts) != 3:
                raise ConfigError(f"{path} line {number}: expected 'term<TAB>class<TAB>weight'")
            term, category, weight = parts
            lexicon.setdefault(term.strip().lower(), {})[category.strip()] = float(weight)
    return lexicon


class LexiconBackend(Backend):
    """
    Offline sentiment/offensive scorer over a small weighted lexicon.

    Sentiment logits: positive and negative are summed term weights (a
    positive or negative term within three tokens after a negator counts for
    the opposite class), neutral is a constant 0.5. Offensive logits:
    offensive = summed offensive weights - 1.0, non-offensive = 0. Every
    prediction is marked as heuristic in its explanation.
    """

    kind = 'lexicon'

    def __init__(self, task: Union[str, AnalysisTask], lexicon_path: Union[str, Path] = cfg.LEXICON_PATH):
        task = AnalysisTask(task)
        if task not in (AnalysisTask.SENTIMENT, AnalysisTask.OFFENSIVE):
            raise BackendUnavailable(f"The lexicon backend covers sentiment and offensive, not {task}")
        super().__init__(LabelSpace.default(task))
        self.lexicon = load_lexicon(lexicon_path)

    @staticmethod
    def tokenize(text: str) -> List[str]:
        return re.findall(r"[a-z]+(?:[-'][a-z]+)*|n't", text.lower())

    def logits(self, text: str) -> np.ndarray:
        tokens = self.tokenize(text)
        positive = negative = offensive = 0.0
        last_negator = -NEGATION_WINDOW - 1
        for position, token in enumerate(tokens):
            if token in NEGATORS or token.endswith("n't"):
                last_negator = position
                continue
            entry = self.lexicon.get(token)
            if not entry:
                continue
            negated = position - last_negator <= NEGATION_WINDOW
            pos_weight, neg_weight = entry.get('positive', 0.0), entry.get('negative', 0.0)
            if negated:
                pos_weight, neg_weight = neg_weight, pos_weight
            positive += pos_weight
            negative += neg_weight
            offensive += entry.get('offensive', 0.0)

        if self.task is AnalysisTask.SENTIMENT:
            scores = {'positive': positive, 'negative': negative, 'neutral': NEUTRAL_BIAS}
        else:
            scores = {'offensive': offensive - OFFENSIVE_THRESHOLD, 'non-offensive': 0.0}
        return np.array([scores[label] for label in self.label_space.labels])

    def predict(self, text: str, title: Optional[str] = None) -> Prediction:
        _require_text(text)
        probs = _softmax(self.logits(text))
        best = int(np.argmax(probs))
        return Prediction(
            label=self.label_space.labels[best],
            probability=float(probs[best]),
            explanation=HEURISTIC_NOTE,
            per_label_scores={label: float(p) for label, p in zip(self.label_space.labels, probs)},
        )


BACKEND_KINDS = ('baseline', 'remote', 'llm', 'lexicon')


def predict(model_or_backend: Union[BaselineModel, Backend], task: Union[str, AnalysisTask],
            text: str, title: Optional[str] = None) -> Prediction:
    """
    Predict one text with a trained model or any backend.

    Raises:
        ValueError: If text is empty
        BackendUnavailable: If the backend serves another task
        LabelSpaceMismatch: If the backend answers outside the task's labels
    """
    _require_text(text)
    task = AnalysisTask(task)
    backend = BaselineBackend(model_or_backend) if isinstance(model_or_backend, BaselineModel) else model_or_backend
    if backend.task is not task:
        raise BackendUnavailable(f"{backend.kind} backend serves {backend.task}, not {task}")
    prediction = backend.predict(text, title=title)
    if prediction.label not in backend.label_space:
        raise LabelSpaceMismatch(prediction.label, task.value)
    return prediction


def build_backend(config: cfg.Config, task: Union[str, AnalysisTask], kind: str,
                  model_path: Optional[Union[str, Path]] = None,
                  session: Optional[requests.Session] = None,
                  policy_labels: Optional[Sequence[str]] = None) -> Backend:
    """
    Construct a backend of the given kind for a task from configuration.

    Raises:
        ConfigError: If the kind is unknown or required settings are missing
        BackendUnavailable: If the kind cannot serve the task
    """
    task = AnalysisTask(task)
    if kind not in BACKEND_KINDS:
        raise ConfigError(f"Unknown backend kind {kind!r}; expected one of {BACKEND_KINDS}")

    if kind == 'baseline':
        if not model_path:
            raise ConfigError("The baseline backend needs a model file (--model)")
        model = load_model(model_path)
        if model.task is not task:
            raise BackendUnavailable(f"Model at {model_path} was trained for {model.task}, not {task}")
        return BaselineBackend(model)
    if kind == 'remote':
        if not config.remote_endpoint:
            raise ConfigError("remote_endpoint is not configured")
        if policy_labels is None and task is AnalysisTask.POLICY:
            policy_labels = load_policy_labels(config.policy_labels_path)
        return RemoteBackend(
            config.remote_endpoint,
            LabelSpace.default(task, policy_labels),
            token_env=config.remote_token_env,
            session=session,
            timeout=config.http_timeout,
            rate_limit=config.backend_rate_limit,
            max_retries=config.max_retries,
        )
    if kind == 'llm':
        if task is not AnalysisTask.OUTCOME:
            raise BackendUnavailable("The LLM backend predicts outcomes only")
        return LLMBackend.from_config(config, session=session)
    return LexiconBackend(task, config.lexicon_path)
