"""
Shared pytest fixtures.

The fixture corpus under tests/fixtures/ holds rendered AfD daily-log pages
(one per day, 2023 January 1-20) with hand-annotated `.expected.jsonl`
golden files. `log_server` serves them from a local HTTP server so that
every network-touching test runs offline.
"""

import json
import threading
from datetime import date, datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import unquote, urlsplit

import pytest

from afd_analyzer.collector import RawPage
from afd_analyzer.config import load_config
from afd_analyzer.parser import Comment, Discussion

FIXTURE_DIR = Path(__file__).parent / 'fixtures'
LOG_PREFIX = '/wiki/Wikipedia:Articles_for_deletion/Log/'


def fixture_pages():
    """Every fixture log page, in date order."""
    return sorted(FIXTURE_DIR.glob('*.html'), key=lambda p: int(p.stem.rsplit('_', 1)[1]))


def golden(page: Path):
    with open(page.with_suffix('.expected.jsonl'), 'r', encoding='utf-8') as handle:
        return [json.loads(line) for line in handle if line.strip()]


def raw_page(page: Path, url=None) -> RawPage:
    day = int(page.stem.rsplit('_', 1)[1])
    return RawPage(
        url=url or f"https://en.wikipedia.org{LOG_PREFIX}{page.stem}",
        fetched_at=datetime(2024, 7, 19, tzinfo=timezone.utc),
        body=page.read_text(encoding='utf-8'),
        from_cache=False,
        log_date=date(2023, 1, day),
    )


class LogPageHandler(BaseHTTPRequestHandler):
    """Serves tests/fixtures/<Year>_<Month>_<day>.html under the AfD log path; 404 otherwise."""

    def do_GET(self):
        path = unquote(urlsplit(self.path).path)
        self.server.requests.append(path)
        name = path[len(LOG_PREFIX):] if path.startswith(LOG_PREFIX) else ''
        page = FIXTURE_DIR / f"{name}.html"
        if not name or '/' in name or not page.is_file():
            self.send_error(404, 'Not Found')
            return
        body = page.read_bytes()
        self.send_response(200)
        self.send_header('Content-Type', 'text/html; charset=UTF-8')
        self.send_header('Content-Length', str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, format, *args):
        pass


class LogServer:
    def __init__(self):
        self.httpd = ThreadingHTTPServer(('127.0.0.1', 0), LogPageHandler)
        self.httpd.requests = []
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def template(self) -> str:
        return self.base_url + LOG_PREFIX + '{year}_{month_name}_{day}'

    def url_for(self, stem: str) -> str:
        return self.base_url + LOG_PREFIX + stem

    @property
    def requests(self):
        return self.httpd.requests


@pytest.fixture(scope='session')
def corpus():
    """(RawPage, golden records) for every fixture page."""
    return [(raw_page(page), golden(page)) for page in fixture_pages()]


@pytest.fixture
def load_page():
    """RawPage for one fixture by stem, e.g. load_page('2023_January_1')."""
    def _load(stem, url=None):
        return raw_page(FIXTURE_DIR / f"{stem}.html", url=url)
    return _load


@pytest.fixture(scope='session')
def log_server():
    """Local HTTP server over the fixture corpus."""
    server = LogServer()
    server.thread.start()
    yield server
    server.httpd.shutdown()
    server.httpd.server_close()


@pytest.fixture
def config(tmp_path, log_server):
    """Config pointing at the fixture server with a per-test cache and no rate limiting to speak of."""
    return load_config(env={}, overrides={
        'cache_dir': str(tmp_path / 'cache'),
        'log_url_template': log_server.template,
        'rate_limit': 1000.0,
        'max_workers': 8,
    })


@pytest.fixture
def make_discussion():
    """Factory for closed, labeled Discussions."""
    def _make(title, label='delete', text=None, comments=(), closed=True, day=1):
        body = text if text is not None else f"Discussion about {title}."
        return Discussion(
            title=title,
            text=body,
            source_url=f"https://en.wikipedia.org{LOG_PREFIX}2023_January_{day}",
            closed=closed,
            label=label if closed else None,
            log_date=date(2023, 1, day),
            marked_text=body,
            comments=tuple(comments),
        )
    return _make


@pytest.fixture
def make_comment():
    def _make(index, text, vote=None, policies=()):
        return Comment(index=index, text=text, vote=vote, policies=tuple(policies))
    return _make
