"""
AfD collector - fetches Articles for Deletion daily-log pages over HTTP.

Pages are cached on disk keyed by the SHA-256 of their canonical URL, so
reruns over the same date range are reproducible offline. Live fetches go
through a shared token-bucket rate limiter and are retried with
exponential backoff.
"""

import hashlib
import json
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union
from urllib.parse import unquote, urlsplit, urlunsplit

import pandas as pd
import requests
from tenacity import (
    Retrying,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from afd_analyzer import config as cfg
from afd_analyzer.logger_utils import (
    CacheIoError,
    InvalidDateRange,
    MalformedUrl,
    NetworkError,
    setup_logger,
)

logger = setup_logger(__name__)


# --------------------------
# Domain Types
# --------------------------

class CollectMode(str, Enum):
    URL = 'url'
    DATE = 'date'
    DATE_RANGE = 'date_range'
    WIDE_2023 = 'wide_2023'


def _to_date(value: Union[str, date, datetime, None]) -> Optional[date]:
    if value is None or isinstance(value, date) and not isinstance(value, datetime):
        return value
    if isinstance(value, datetime):
        return value.astimezone(timezone.utc).date() if value.tzinfo else value.date()
    try:
        return date.fromisoformat(str(value).strip())
    except ValueError as e:
        raise InvalidDateRange(value, value, f"unparseable date {value!r}") from e


def is_afd_log_url(url: str) -> bool:
    """True for absolute http(s) URLs whose path names an AfD daily log page."""
    parts = urlsplit(url)
    return (
        parts.scheme in ('http', 'https')
        and bool(parts.netloc)
        and cfg.AFD_LOG_PATH_MARKER in unquote(parts.path)
    )


@dataclass(frozen=True)
class CollectRequest:
    """What to collect: a single log URL, one day, a day range, or the 2023-2024 snapshot."""

    mode: CollectMode
    url: Optional[str] = None
    start_date: Optional[date] = None
    end_date: Optional[date] = None

    def __post_init__(self):
        object.__setattr__(self, 'mode', CollectMode(self.mode))
        object.__setattr__(self, 'start_date', _to_date(self.start_date))
        object.__setattr__(self, 'end_date', _to_date(self.end_date))

        if self.mode is CollectMode.URL:
            if not self.url or not is_afd_log_url(self.url):
                raise MalformedUrl(self.url)
        elif self.mode is CollectMode.DATE:
            if self.start_date is None:
                raise InvalidDateRange(None, None, "mode=date needs a start date")
            if self.end_date is not None:
                raise InvalidDateRange(self.start_date, self.end_date, "mode=date takes no end date")
        elif self.mode is CollectMode.DATE_RANGE:
            if self.start_date is None or self.end_date is None:
                raise InvalidDateRange(self.start_date, self.end_date, "mode=date_range needs both dates")
            if self.start_date > self.end_date:
                raise InvalidDateRange(self.start_date, self.end_date)

    def date_bounds(self) -> Tuple[Optional[date], Optional[date]]:
        """Inclusive (start, end) days covered by this request; (None, None) in url mode."""
        if self.mode is CollectMode.WIDE_2023:
            return date.fromisoformat(cfg.WIDE_2023_START), date.fromisoformat(cfg.WIDE_2023_END)
        if self.mode is CollectMode.DATE:
            return self.start_date, self.start_date
        if self.mode is CollectMode.DATE_RANGE:
            return self.start_date, self.end_date
        return None, None


@dataclass(frozen=True)
class FetchPlan:
    """Ordered (date, log-page URL) pairs; date is None for a plain URL request."""

    pages: Tuple[Tuple[Optional[date], str], ...]

    def __len__(self):
        return len(self.pages)

    @property
    def urls(self) -> List[str]:
        return [url for _, url in self.pages]


@dataclass(frozen=True)
class RawPage:
    url: str
    fetched_at: datetime
    body: str
    from_cache: bool
    log_date: Optional[date] = None


@dataclass
class FetchResult:
    """Successful pages in plan order plus one NetworkError per failed page."""

    pages: List[RawPage] = field(default_factory=list)
    failures: List[NetworkError] = field(default_factory=list)


# --------------------------
# Planning
# --------------------------

def log_url_for(day: date, template: str = cfg.AFD_LOG_URL_TEMPLATE) -> str:
    """Format the daily log-page URL for one day."""
    return template.format(
        year=day.year,
        month=day.month,
        month_name=cfg.MONTH_NAMES[day.month - 1],
        day=day.day,
        date=day,
    )


def resolve_plan(req: CollectRequest, template: str = cfg.AFD_LOG_URL_TEMPLATE) -> FetchPlan:
    """
    Expand a CollectRequest into the ordered list of log pages to fetch.

    Both bounds are included, one URL per calendar day. The function is pure,
    so equal requests always yield equal plans.

    Args:
        req (CollectRequest): Validated request
        template (str): Daily log URL format string

    Returns:
        FetchPlan: Pages in strictly increasing date order

    Example:
        >>> plan = resolve_plan(CollectRequest('date_range', start_date='2023-01-01', end_date='2023-01-03'))
        >>> len(plan)
        3
    """
    if req.mode is CollectMode.URL:
        return FetchPlan(pages=((None, req.url),))

    start, end = req.date_bounds()
    if start > end:
        raise InvalidDateRange(start, end)
    days = pd.date_range(start=start, end=end, freq='D')
    return FetchPlan(pages=tuple((d.date(), log_url_for(d.date(), template)) for d in days))


# --------------------------
# Rate Limiting & Cache
# --------------------------

class RateLimiter:
    """Thread-safe token bucket with a burst of one request."""

    def __init__(self, rate: float):
        if rate <= 0:
            raise ValueError(f"rate limit must be positive, got {rate}")
        self.interval = 1.0 / rate
        self._next_slot = 0.0
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            now = time.monotonic()
            wait = self._next_slot - now
            self._next_slot = max(now, self._next_slot) + self.interval
        if wait > 0:
            time.sleep(wait)


def canonical_url(url: str) -> str:
    """Lower-case scheme and host, drop the fragment; the page cache key source."""
    parts = urlsplit(url.strip())
    return urlunsplit((parts.scheme.lower(), parts.netloc.lower(), parts.path or '/', parts.query, ''))


CACHE_LOCK_STRIPES = 64


class PageCache:
    """
    On-disk cache: <cache_dir>/<2-hex-prefix>/<sha256>.html plus a .json sidecar
    holding the URL, response headers and fetch timestamp.
    """

    def __init__(self, cache_dir: Union[str, Path]):
        self.cache_dir = Path(cache_dir)
        self._locks = tuple(threading.Lock() for _ in range(CACHE_LOCK_STRIPES))
        try:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise CacheIoError(f"Cache directory {self.cache_dir} is not writable: {e}") from e

    @staticmethod
    def key_for(url: str) -> str:
        return hashlib.sha256(canonical_url(url).encode('utf-8')).hexdigest()

    def paths_for(self, url: str) -> Tuple[Path, Path]:
        key = self.key_for(url)
        folder = self.cache_dir / key[:2]
        return folder / f"{key}.html", folder / f"{key}.json"

    def _lock_for(self, key: str) -> threading.Lock:
        # keys are hex digests, so a prefix spreads evenly over the stripes
        return self._locks[int(key[:8], 16) % CACHE_LOCK_STRIPES]

    def get(self, url: str) -> Optional[RawPage]:
        body_path, meta_path = self.paths_for(url)
        if not body_path.is_file() or not meta_path.is_file():
            return None
        try:
            body = body_path.read_text(encoding='utf-8')
            meta = json.loads(meta_path.read_text(encoding='utf-8'))
        except (OSError, ValueError) as e:
            raise CacheIoError(f"Unreadable cache entry for {url}: {e}") from e
        return RawPage(
            url=url,
            fetched_at=datetime.fromisoformat(meta['fetched_at']),
            body=body,
            from_cache=True,
        )

    def put(self, url: str, body: str, headers: Dict[str, str], fetched_at: datetime) -> None:
        body_path, meta_path = self.paths_for(url)
        meta = {
            'url': canonical_url(url),
            'fetched_at': fetched_at.isoformat(),
            'headers': dict(headers),
        }
        with self._lock_for(self.key_for(url)):
            try:
                body_path.parent.mkdir(parents=True, exist_ok=True)
                _atomic_write(body_path, body)
                _atomic_write(meta_path, json.dumps(meta, indent=2, sort_keys=True))
            except OSError as e:
                raise CacheIoError(f"Could not write cache entry for {url}: {e}") from e


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix='.tmp-')
    try:
        with os.fdopen(fd, 'w', encoding='utf-8') as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class RetryableStatus(Exception):
    """A 429 or 5xx response worth retrying."""

    def __init__(self, response: requests.Response):
        self.response = response
        super().__init__(f"HTTP {response.status_code}")


# --------------------------
# Collector
# --------------------------

class AfdCollector:
    """
    Client for fetching AfD daily-log pages from Wikipedia (or a mirror).

    Attributes:
        cache (PageCache): On-disk page cache
        limiter (RateLimiter): Shared limiter for every live request
        session (requests.Session): HTTP session carrying the user agent

    Example:
        >>> collector = AfdCollector(cache_dir='.afd_cache', rate_limit=1.0)
        >>> result = collector.fetch(resolve_plan(CollectRequest('date', start_date='2023-01-01')))
    """

    def __init__(self, cache_dir: Union[str, Path] = cfg.DEFAULT_CACHE_DIR,
                 rate_limit: float = cfg.DEFAULT_RATE_LIMIT,
                 max_workers: int = cfg.DEFAULT_MAX_WORKERS,
                 max_retries: int = cfg.DEFAULT_MAX_RETRIES,
                 timeout: float = cfg.HTTP_TIMEOUT,
                 user_agent: str = cfg.USER_AGENT,
                 refresh: bool = False,
                 session: Optional[requests.Session] = None,
                 backoff_min: float = cfg.RETRY_BACKOFF_MIN,
                 backoff_max: float = cfg.RETRY_BACKOFF_MAX):
        if not user_agent:
            raise ValueError("A descriptive user agent is required")
        self.cache = PageCache(cache_dir)
        self.limiter = RateLimiter(rate_limit)
        self.max_workers = max(1, int(max_workers))
        self.max_retries = max(1, int(max_retries))
        self.timeout = timeout
        self.refresh = refresh
        self.backoff_min = backoff_min
        self.backoff_max = backoff_max
        self.session = session or requests.Session()
        self.session.headers.update({
            'User-Agent': user_agent,
            'Accept': 'text/html,application/xhtml+xml;q=0.9,*/*;q=0.8',
            'Accept-Encoding': 'gzip, deflate',
        })
        self.network_calls = 0
        self._counter_lock = threading.Lock()

    @classmethod
    def from_config(cls, config: cfg.Config, session: Optional[requests.Session] = None) -> 'AfdCollector':
        return cls(
            cache_dir=config.cache_dir,
            rate_limit=config.rate_limit,
            max_workers=config.max_workers,
            max_retries=config.max_retries,
            timeout=config.http_timeout,
            user_agent=config.user_agent,
            refresh=config.refresh,
            session=session,
        )

    def _get_live(self, url: str) -> requests.Response:
        retrying = Retrying(
            stop=stop_after_attempt(self.max_retries),
            wait=wait_exponential(multiplier=self.backoff_min, min=self.backoff_min, max=self.backoff_max),
            retry=retry_if_exception_type((requests.ConnectionError, requests.Timeout, RetryableStatus)),
            reraise=True,
        )
        for attempt in retrying:
            with attempt:
                self.limiter.acquire()
                with self._counter_lock:
                    self.network_calls += 1
                logger.debug(f"GET {url} (attempt {attempt.retry_state.attempt_number})")
                response = self.session.get(url, timeout=self.timeout)
                if response.status_code == 429 or response.status_code >= 500:
                    raise RetryableStatus(response)
                response.raise_for_status()
                return response

    def fetch_page(self, url: str, log_date: Optional[date] = None) -> RawPage:
        """
        Fetch one page, serving it from the cache when possible.

        Raises:
            NetworkError: If the page cannot be fetched or is empty
            CacheIoError: If the cache cannot be read or written
        """
        if not self.refresh:
            cached = self.cache.get(url)
            if cached is not None:
                logger.debug(f"Cache hit: {url}")
                return RawPage(cached.url, cached.fetched_at, cached.body, True, log_date)

        try:
            response = self._get_live(url)
        except (requests.RequestException, RetryableStatus) as e:
            raise NetworkError(url, e) from e

        body = response.text
        if not body.strip():
            raise NetworkError(url, 'empty response body')
        fetched_at = datetime.now(timezone.utc)
        self.cache.put(url, body, dict(response.headers), fetched_at)
        return RawPage(url=url, fetched_at=fetched_at, body=body, from_cache=False, log_date=log_date)

    def fetch(self, plan: FetchPlan) -> FetchResult:
        """
        Fetch every page of a plan with bounded parallelism.

        Failures are reported per page and never abort the batch.

        Args:
            plan (FetchPlan): Pages to fetch

        Returns:
            FetchResult: Pages in plan order and one NetworkError per failure
        """
        logger.info(f"Fetching {len(plan)} page(s) with {self.max_workers} worker(s)")

        def _one(entry):
            day, url = entry
            try:
                return self.fetch_page(url, day)
            except NetworkError as e:
                logger.warning(str(e))
                return e

        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            outcomes = list(pool.map(_one, plan.pages))

        result = FetchResult()
        for outcome in outcomes:
            if isinstance(outcome, RawPage):
                result.pages.append(outcome)
            else:
                result.failures.append(outcome)
        cached = sum(page.from_cache for page in result.pages)
        logger.info(
            f"Fetched {len(result.pages)} page(s) ({cached} from cache), {len(result.failures)} failure(s)"
        )
        return result


def fetch(plan: FetchPlan, cache_dir: Union[str, Path], rate_limit: float = cfg.DEFAULT_RATE_LIMIT,
          **kwargs) -> FetchResult:
    """Fetch a plan with a one-off AfdCollector; see AfdCollector.fetch."""
    if rate_limit <= 0:
        raise ValueError(f"rate limit must be positive, got {rate_limit}")
    return AfdCollector(cache_dir=cache_dir, rate_limit=rate_limit, **kwargs).fetch(plan)
