"""
AfD log-page parser.

Turns rendered daily-log HTML into per-article discussions, canonicalizes
closing labels against the shipped variant table, cleans discussion text,
masks bolded votes and splits text into sentences.

Bold spans survive cleaning as ``**...**`` markers in the *marked* text so
that vote masking can find them; the plain text has the markers stripped.
"""

import re
from dataclasses import dataclass
from datetime import date
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Optional, Tuple, Union

from bs4 import BeautifulSoup, NavigableString, Tag

from afd_analyzer import config as cfg
from afd_analyzer.logger_utils import ParseError, UnknownLabel, setup_logger

if TYPE_CHECKING:
    from afd_analyzer.collector import RawPage

logger = setup_logger(__name__)


# --------------------------
# Domain Types
# --------------------------

class OutcomeLabel(str, Enum):
    """The eight closing decisions of an AfD discussion."""

    DELETE = 'delete'
    KEEP = 'keep'
    REDIRECT = 'redirect'
    NO_CONSENSUS = 'no consensus'
    MERGE = 'merge'
    SPEEDY_KEEP = 'speedy keep'
    SPEEDY_DELETE = 'speedy delete'
    WITHDRAWN = 'withdrawn'

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class RawDiscussion:
    title: str
    body_html: str
    source_url: str
    log_date: Optional[date] = None
    closing_banner: Optional[str] = None
    raw_label: Optional[str] = None
    anchor: Optional[str] = None

    def __post_init__(self):
        if not self.title.strip():
            raise ParseError(self.source_url, "discussion without a title")
        if not self.body_html.strip():
            raise ParseError(self.source_url, f"discussion {self.title!r} has an empty body")


@dataclass(frozen=True)
class Comment:
    """One contribution to a discussion; index 0 is the nomination."""

    index: int
    text: str
    vote: Optional[str] = None
    policies: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'policies', tuple(self.policies))

    @property
    def plain_text(self) -> str:
        return strip_bold_markers(self.text)

    def to_record(self) -> Dict:
        return {'index': self.index, 'text': self.text, 'vote': self.vote, 'policies': list(self.policies)}


@dataclass(frozen=True)
class Discussion:
    title: str
    text: str
    source_url: str
    closed: bool = False
    label: Optional[OutcomeLabel] = None
    log_date: Optional[date] = None
    marked_text: Optional[str] = None
    comments: Tuple[Comment, ...] = ()

    def __post_init__(self):
        if self.label is not None:
            object.__setattr__(self, 'label', OutcomeLabel(self.label))
            if not self.closed:
                raise ValueError(f"Discussion {self.title!r} has a label but is not closed")
        object.__setattr__(self, 'comments', tuple(self.comments))

    @property
    def is_labeled(self) -> bool:
        return self.closed and self.label is not None

    def to_record(self) -> Dict:
        record = {
            'title': self.title,
            'text': self.text,
            'marked_text': self.marked_text,
            'label': self.label.value if self.label else None,
            'closed': self.closed,
            'url': self.source_url,
            'date': self.log_date.isoformat() if self.log_date else None,
        }
        if self.comments:
            record['comments'] = [comment.to_record() for comment in self.comments]
        return record

    @classmethod
    def from_record(cls, record: Dict) -> 'Discussion':
        return cls(
            title=record['title'],
            text=record['text'],
            source_url=record.get('url') or '',
            closed=bool(record.get('closed', record.get('label') is not None)),
            label=record.get('label'),
            log_date=date.fromisoformat(record['date']) if record.get('date') else None,
            marked_text=record.get('marked_text'),
            comments=tuple(
                Comment(index=c['index'], text=c['text'], vote=c.get('vote'), policies=c.get('policies') or ())
                for c in record.get('comments') or ()
            ),
        )


@dataclass(frozen=True)
class Sentence:
    index: int
    text: str


# --------------------------
# Label Tables
# --------------------------

_LABEL_STRIP = ' \t.,;:!?\'"()[]{}*'


def normalize_label_text(raw: str) -> str:
    """Lower-case, unify hyphens/underscores with spaces, trim punctuation."""
    text = re.sub(r'[-_]+', ' ', raw.lower())
    text = re.sub(r'\s+', ' ', text)
    return text.strip(_LABEL_STRIP)


def load_variant_table(path: Union[str, Path] = cfg.VARIANT_TABLE_PATH) -> Dict[str, OutcomeLabel]:
    """
    Load the variant table (``variant<TAB>canonical`` per line).

    Every canonical label maps to itself even if the file omits it.

    Raises:
        ParseError: On a malformed line or an unknown canonical label
    """
    table = {label.value: label for label in OutcomeLabel}
    with open(path, 'r', encoding='utf-8') as handle:
        for number, line in enumerate(handle, 1):
            line = line.rstrip('\n')
            if not line.strip() or line.lstrip().startswith('#'):
                continue
            parts = line.split('\t')
            if len(parts) != 2:
                raise ParseError(path, f"line {number}: expected 'variant<TAB>canonical'")
            variant, canonical = parts
            try:
                table[normalize_label_text(variant)] = OutcomeLabel(canonical.strip())
            except ValueError:
                raise ParseError(path, f"line {number}: {canonical!r} is not an outcome label")
    return table


def load_policy_shortcuts(path: Union[str, Path] = cfg.POLICY_SHORTCUTS_PATH) -> Dict[str, str]:
    """Load ``shortcut<TAB>policy`` lines into an upper-cased lookup table."""
    table = {}
    with open(path, 'r', encoding='utf-8') as handle:
        for number, line in enumerate(handle, 1):
            line = line.rstrip('\n')
            if not line.strip() or line.lstrip().startswith('#'):
                continue
            parts = line.split('\t')
            if len(parts) != 2:
                raise ParseError(path, f"line {number}: expected 'shortcut<TAB>policy'")
            table[_policy_key(parts[0])] = parts[1].strip()
    return table


def _policy_key(shortcut: str) -> str:
    return re.sub(r'[\s_]+', '_', shortcut.strip()).upper()


@lru_cache(maxsize=None)
def default_variants() -> Dict[str, OutcomeLabel]:
    return load_variant_table(cfg.VARIANT_TABLE_PATH)


@lru_cache(maxsize=None)
def default_policy_shortcuts() -> Dict[str, str]:
    return load_policy_shortcuts(cfg.POLICY_SHORTCUTS_PATH)


def canonicalize_label(raw: str, variants: Optional[Dict[str, OutcomeLabel]] = None) -> OutcomeLabel:
    """
    Map a raw closing label onto one of the eight outcome labels.

    Args:
        raw (str): Label text as written by the closing administrator
        variants (dict): Normalized variant -> label table (default: shipped table)

    Returns:
        OutcomeLabel: Canonical label

    Raises:
        UnknownLabel: If no variant matches
        ValueError: If raw is empty

    Example:
        >>> canonicalize_label('Withdrawn')
        <OutcomeLabel.WITHDRAWN: 'withdrawn'>
    """
    if raw is None or not raw.strip():
        raise ValueError("label text must be non-empty")
    table = variants if variants is not None else default_variants()
    key = normalize_label_text(raw)
    if key in table:
        return table[key]
    raise UnknownLabel(raw)


# --------------------------
# Extraction
# --------------------------

ARCHIVED_CLASSES = ('xfd-closed', 'archived', 'mw-archivedtalk')
BOILERPLATE_CLASSES = (
    'mw-editsection', 'plainlinks', 'lx', 'delsort-notice', 'xfd_relist',
    'mw-empty-elt', 'noprint', 'reference', 'mw-heading',
)
BANNER_PATTERNS = (
    re.compile(r'^\s*The following discussion is an archived debate', re.I),
    re.compile(r'^\s*The result was\b', re.I),
    re.compile(r'^\s*The above discussion is preserved as an archive', re.I),
    re.compile(r'^\s*\(\s*Find sources:', re.I),
)
RESULT_PATTERN = re.compile(r'The result was\s+(.+?)(?:\.(?:\s|$)|$)', re.I | re.S)
BLOCK_TAGS = ('p', 'li', 'dd', 'dt', 'div', 'br', 'ul', 'ol', 'dl', 'table', 'tr', 'h2', 'h3', 'h4')


def _is_archived(tag: Tag) -> bool:
    classes = tag.get('class') or []
    return any(name in classes for name in ARCHIVED_CLASSES)


def _heading_block(heading: Tag) -> Tag:
    """The element that sits in the section flow: the mw-heading wrapper if present."""
    parent = heading.parent
    if isinstance(parent, Tag) and parent.name == 'div' and 'mw-heading' in (parent.get('class') or []):
        return parent
    return heading


def _contains_heading(node) -> bool:
    if not isinstance(node, Tag):
        return False
    if node.name in ('h2', 'h3'):
        return True
    return node.find(['h2', 'h3']) is not None


def _heading_title(heading: Tag) -> str:
    for junk in heading.select('.mw-editsection'):
        junk.decompose()
    return re.sub(r'\s+', ' ', heading.get_text(' ', strip=True)).strip()


def _heading_anchor(heading: Tag) -> Optional[str]:
    if heading.get('id'):
        return heading['id']
    headline = heading.find(class_='mw-headline')
    if headline is not None and headline.get('id'):
        return headline['id']
    return None


def _normalize_space(text: str) -> str:
    return re.sub(r'\s+', ' ', text).strip()


def _result_of(container: Tag) -> Optional[Tag]:
    for node in container.find_all(['p', 'div', 'dd']):
        if node.find(['h2', 'h3']) is not None:
            continue
        if re.match(r'^\s*The result was\b', node.get_text(' '), re.I):
            return node
    return None


def extract_discussions(page: 'RawPage') -> List[RawDiscussion]:
    """
    Split a daily log page into one RawDiscussion per AfD section.

    The section heading is the title. A section is closed when it sits inside
    the archived-discussion wrapper and carries a "The result was ..." phrase;
    that phrase is kept as the closing banner and its bold text as the raw
    label. Everything else in the section, nomination first, is the body.

    Args:
        page (RawPage): Fetched log page

    Returns:
        list: RawDiscussion objects in page order

    Raises:
        ParseError: If the page is empty or has no AfD sections
    """
    if not page.body or not page.body.strip():
        raise ParseError(page.url, "empty page body")

    soup = BeautifulSoup(page.body, 'lxml')
    root = soup.select_one('div.mw-parser-output') or soup.body or soup
    headings = root.find_all('h3')
    if not headings:
        raise ParseError(page.url, "no AfD discussion sections found")

    discussions = []
    for heading in headings:
        title = _heading_title(heading)
        anchor = _heading_anchor(heading)
        block = _heading_block(heading)
        wrapper = block.find_parent(_is_archived)

        closing_banner = None
        raw_label = None
        if wrapper is not None:
            parts = [child for child in wrapper.children if child is not block]
            result = _result_of(wrapper)
            if result is not None:
                closing_banner = _normalize_space(result.get_text(' '))
                bold = result.find(['b', 'strong'])
                if bold is not None and bold.get_text(strip=True):
                    raw_label = bold.get_text(' ', strip=True)
                else:
                    match = RESULT_PATTERN.search(result.get_text(' '))
                    raw_label = match.group(1).strip() if match else None
        else:
            parts = []
            for sibling in block.next_siblings:
                if _contains_heading(sibling) or (isinstance(sibling, Tag) and _is_archived(sibling)):
                    break
                parts.append(sibling)

        body_html = ''.join(str(part) for part in parts).strip()
        if not body_html:
            logger.warning(f"Skipping section {title!r} on {page.url}: empty body")
            continue
        discussions.append(RawDiscussion(
            title=title,
            body_html=body_html,
            source_url=page.url,
            log_date=getattr(page, 'log_date', None),
            closing_banner=closing_banner,
            raw_label=raw_label,
            anchor=anchor,
        ))

    logger.info(f"Extracted {len(discussions)} discussion(s) from {page.url}")
    return discussions


# --------------------------
# Cleaning
# --------------------------

def _strip_boilerplate(fragment: BeautifulSoup) -> None:
    for tag in fragment.find_all(['style', 'script', 'h2', 'h3']):
        tag.decompose()
    for name in BOILERPLATE_CLASSES:
        for tag in fragment.find_all(class_=name):
            tag.decompose()
    # Banner blocks: innermost-first so the closing notice never takes the discussion with it
    for tag in reversed(fragment.find_all(['p', 'div', 'dl', 'dd', 'span', 'i'])):
        if getattr(tag, 'decomposed', False) or tag.parent is None:
            continue
        own = tag.get_text(' ')
        if any(pattern.match(own) for pattern in BANNER_PATTERNS):
            if len(tag.find_all(['li', 'ul'])) == 0:
                tag.decompose()


def _mark_bold(fragment: BeautifulSoup) -> None:
    for tag in fragment.find_all(['b', 'strong']):
        if tag.parent is None:
            continue
        inner = _normalize_space(tag.get_text(' '))
        if inner:
            tag.replace_with(NavigableString(f"{cfg.BOLD_OPEN}{inner}{cfg.BOLD_CLOSE}"))
        else:
            tag.decompose()


def _separate_blocks(fragment: BeautifulSoup) -> None:
    for tag in fragment.find_all(BLOCK_TAGS):
        tag.insert_before(NavigableString(' '))
        tag.append(NavigableString(' '))


def _escape_asterisks(fragment: BeautifulSoup) -> None:
    # literal asterisks must never pair with the bold markers
    for string in fragment.find_all(string=True):
        if '*' in string:
            string.replace_with(type(string)(string.replace('*', '\\*')))


def _prepared_fragment(body_html: str) -> BeautifulSoup:
    fragment = BeautifulSoup(body_html, 'lxml')
    _strip_boilerplate(fragment)
    _escape_asterisks(fragment)
    _mark_bold(fragment)
    return fragment


# A bold marker is an unescaped "**"; cleaning escapes literal asterisks as "\*"
BOLD_MARKED = re.compile(r'(?<!\\)\*\*(.+?)(?<!\\)\*\*')


def strip_bold_markers(text: str) -> str:
    """Remove the ``**`` bold annotation, keeping the bold content, and unescape literal asterisks."""
    stripped = BOLD_MARKED.sub(r'\1', text).replace('\\*', '*')
    return _normalize_space(stripped)


def clean_text(raw: RawDiscussion, keep_bold_markers: bool = False) -> str:
    """
    Strip markup and AfD boilerplate from a discussion body.

    Tags are removed, user links reduce to their visible names, signature
    timestamps stay, and the closing banner plus navigation links go.
    Whitespace is collapsed.

    Args:
        raw (RawDiscussion): Extracted discussion
        keep_bold_markers (bool): Keep ``**bold**`` markers for vote masking

    Returns:
        str: Cleaned text (may be empty; an empty result is logged)

    Example:
        >>> clean_text(RawDiscussion('T', '<b>Delete</b> per <a>WP:N</a>', 'u'))
        'Delete per WP:N'
    """
    fragment = _prepared_fragment(raw.body_html)
    _separate_blocks(fragment)
    text = _normalize_space(fragment.get_text(''))
    if not text:
        logger.warning(f"Cleaning left no text for {raw.title!r} ({raw.source_url})")
    return text if keep_bold_markers else strip_bold_markers(text)


POLICY_PATTERN = re.compile(
    r'\b(?:WP|Wikipedia):[A-Za-z0-9]+(?:[_ ][A-Za-z]+\b(?!:))*(?:\s\([a-z ]+\))?'
)


def find_policies(text: str, shortcuts: Optional[Dict[str, str]] = None) -> List[str]:
    """Policy page names cited in text, in order of first mention, via the shortcut table."""
    table = shortcuts if shortcuts is not None else default_policy_shortcuts()
    found = []
    for match in POLICY_PATTERN.finditer(text):
        candidate = match.group(0)
        # Longest prefix (word-wise) that the table knows
        words = re.split(r'([_ ])', candidate)
        for end in range(len(words), 0, -2):
            key = _policy_key(''.join(words[:end]))
            if key in table:
                if table[key] not in found:
                    found.append(table[key])
                break
    return found


NON_VOTE_BOLD = ('comment', 'note', 'question', 'reply', 'response', 'query', 'info')
STANCE_FOR_OUTCOME = {
    OutcomeLabel.KEEP: 'keep',
    OutcomeLabel.SPEEDY_KEEP: 'keep',
    OutcomeLabel.DELETE: 'delete',
    OutcomeLabel.SPEEDY_DELETE: 'delete',
    OutcomeLabel.MERGE: 'merge',
    OutcomeLabel.REDIRECT: 'merge',
    OutcomeLabel.NO_CONSENSUS: 'comment',
    OutcomeLabel.WITHDRAWN: 'comment',
}


def stance_for_bold(content: str, variants: Optional[Dict[str, OutcomeLabel]] = None) -> Optional[str]:
    """Stance label for a bolded keyword, or None when the bold text is not a vote."""
    key = normalize_label_text(content)
    table = variants if variants is not None else default_variants()
    if key in table:
        return STANCE_FOR_OUTCOME[table[key]]
    if key.split(' ')[0] in NON_VOTE_BOLD:
        return 'comment'
    return None


def extract_comments(raw: RawDiscussion, variants: Optional[Dict[str, OutcomeLabel]] = None,
                     shortcuts: Optional[Dict[str, str]] = None) -> List[Comment]:
    """
    Split a discussion into its nomination (comment 0) and individual comments.

    Each list item or indented reply is one comment; nested replies are
    separate comments and are excluded from their parent's text.

    Returns:
        list: Comment objects in document order; text keeps bold markers
    """
    fragment = _prepared_fragment(raw.body_html)
    units = fragment.find_all(['li', 'dd'])

    def _owner(node) -> Optional[Tag]:
        return node.find_parent(['li', 'dd'])

    nomination_parts = []
    own_parts: Dict[int, List[str]] = {id(unit): [] for unit in units}
    for string in fragment.find_all(string=True):
        if string.parent is not None and string.parent.name in ('style', 'script', '[document]'):
            continue
        owner = _owner(string)
        if owner is None:
            nomination_parts.append(str(string))
        else:
            own_parts[id(owner)].append(str(string))

    texts = [_normalize_space(' '.join(nomination_parts))]
    texts.extend(_normalize_space(' '.join(own_parts[id(unit)])) for unit in units)

    comments = []
    for text in texts:
        if not text:
            continue
        vote = None
        for bold in BOLD_MARKED.finditer(text):
            vote = stance_for_bold(bold.group(1), variants)
            if vote is not None:
                break
        comments.append(Comment(
            index=len(comments),
            text=text,
            vote=vote,
            policies=find_policies(strip_bold_markers(text), shortcuts),
        ))
    return comments


def discussion_from_raw(raw: RawDiscussion, variants: Optional[Dict[str, OutcomeLabel]] = None,
                        shortcuts: Optional[Dict[str, str]] = None) -> Discussion:
    """
    Build a Discussion: clean the text, detect closure and canonicalize the label.

    A closed discussion whose label matches no variant stays closed but unlabeled.
    """
    marked = clean_text(raw, keep_bold_markers=True)
    closed = raw.closing_banner is not None
    label = None
    if closed and raw.raw_label:
        try:
            label = canonicalize_label(raw.raw_label, variants)
        except UnknownLabel as e:
            logger.warning(f"{e} in {raw.title!r}; keeping the discussion unlabeled")
    return Discussion(
        title=raw.title,
        text=strip_bold_markers(marked),
        source_url=raw.source_url,
        closed=closed,
        label=label,
        log_date=raw.log_date,
        marked_text=marked,
        comments=tuple(extract_comments(raw, variants, shortcuts)),
    )


# --------------------------
# Masking
# --------------------------

_BOLD_SPAN = re.compile(BOLD_MARKED.pattern + r'([ \t]*[.:,;])?')


def mask_votes(text: str, variants: Optional[Dict[str, OutcomeLabel]] = None,
               mode: str = cfg.DEFAULT_MASK_MODE, token: str = cfg.MASK_TOKEN) -> str:
    """
    Remove bolded vote keywords from marked text.

    A bold span is a vote when its normalized content is in the variant
    table (so "**Strong keep**" goes, "**Comment**" stays). In ``delete``
    mode the span and a directly following ``.:,;`` are dropped; in
    ``replace`` mode the span becomes ``token``. The operation is idempotent.

    Example:
        >>> mask_votes('**Delete** Just a junk article')
        'Just a junk article'
    """
    if mode not in cfg.MASK_MODES:
        raise ValueError(f"mask mode must be one of {cfg.MASK_MODES}, got {mode!r}")
    table = variants if variants is not None else default_variants()

    def _replace(match):
        if normalize_label_text(match.group(1)) not in table:
            return match.group(0)
        return ' ' if mode == 'delete' else f" {token} "

    return _normalize_space(_BOLD_SPAN.sub(_replace, text))


# --------------------------
# Sentence Segmentation
# --------------------------

ABBREVIATIONS = frozenset({
    'p', 'pp', 'e.g', 'i.e', 'etc', 'vs', 'cf', 'mr', 'mrs', 'ms', 'dr', 'st',
    'no', 'nos', 'vol', 'vols', 'ch', 'fig', 'approx', 'inc', 'ltd', 'co',
    'corp', 'jr', 'sr', 'prof', 'ed', 'eds', 'al', 'u.s', 'u.k', 'ca', 'op',
    'cit', 'sec', 'para', 'ibid', 'viz', 'est', 'dept', 'univ', 'nom',
})
SENTENCE_END = re.compile(r'[.!?]+["\')\]]*$')
# Policy shortcuts and namespaced links; a dot inside them never ends a sentence
WIKI_TOKEN = re.compile(r'^(?:WP|WT|MOS|H|Help|Wikipedia|Template|User|User_talk|Talk|Category|Portal):\S+$')


def _ends_sentence(token: str, next_token: Optional[str]) -> bool:
    if token == '(UTC)':
        return True
    if not SENTENCE_END.search(token):
        return False
    if next_token is None:
        return True
    core = token.rstrip('"\')]')
    if core.endswith('.') and not core.endswith('..'):
        word = core[:-1].lstrip('("\'[').lower()
        if word in ABBREVIATIONS:
            return False
        if len(word) == 1 and word.isalpha():
            return False
        if WIKI_TOKEN.match(core[:-1]) and '.' in core[:-1].split(':', 1)[1]:
            return False
    if next_token[0].islower():
        return False
    return True


def segment_sentences(text: str) -> List[Sentence]:
    """
    Rule-based sentence splitter.

    Splits after sentence-final punctuation (and after signature ``(UTC)``
    stamps) when the next token does not start in lower case, except after
    known abbreviations and single-letter initials. Boundaries only fall on
    whitespace, so policy shortcuts like ``WP:N`` are never cut.

    Example:
        >>> [s.text for s in segment_sentences('Fails WP:GNG. See p. 4 of the source.')]
        ['Fails WP:GNG.', 'See p. 4 of the source.']
    """
    if text is None:
        raise ValueError("text must not be None")
    tokens = list(re.finditer(r'\S+', text))
    sentences = []
    start = None
    for position, match in enumerate(tokens):
        if start is None:
            start = match.start()
        next_token = tokens[position + 1].group(0) if position + 1 < len(tokens) else None
        if _ends_sentence(match.group(0), next_token) or next_token is None:
            chunk = _normalize_space(text[start:match.end()])
            if chunk:
                sentences.append(Sentence(index=len(sentences), text=chunk))
            start = None
    return sentences
