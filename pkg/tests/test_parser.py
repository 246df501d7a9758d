"""
Unit tests for the AfD log-page parser.

Covers label canonicalization, section extraction against the golden
fixture corpus, text cleaning, comment splitting, vote masking and
sentence segmentation.
"""

import random
import re
from datetime import datetime, timezone

import pytest

from afd_analyzer import config as cfg
from afd_analyzer.collector import RawPage
from afd_analyzer.logger_utils import ParseError, UnknownLabel
from afd_analyzer.parser import (
    Discussion,
    OutcomeLabel,
    RawDiscussion,
    canonicalize_label,
    clean_text,
    discussion_from_raw,
    extract_comments,
    extract_discussions,
    find_policies,
    load_variant_table,
    mask_votes,
    normalize_label_text,
    segment_sentences,
    stance_for_bold,
    strip_bold_markers,
)


def _page(body, url='https://en.wikipedia.org/wiki/Wikipedia:Articles_for_deletion/Log/2023_January_1'):
    return RawPage(url=url, fetched_at=datetime.now(timezone.utc), body=body, from_cache=False)


class TestCanonicalizeLabel:
    """Test label canonicalization against the variant table."""

    def test_every_shipped_variant_maps_to_its_canonical_label(self):
        """Exhaustive check over the shipped table file."""
        checked = 0
        with open(cfg.VARIANT_TABLE_PATH, 'r', encoding='utf-8') as handle:
            for line in handle:
                if not line.strip() or line.startswith('#'):
                    continue
                variant, canonical = line.rstrip('\n').split('\t')
                assert canonicalize_label(variant) is OutcomeLabel(canonical), variant
                checked += 1
        assert checked >= 40

    @pytest.mark.parametrize('raw,expected', [
        ('Withdrawn', OutcomeLabel.WITHDRAWN),
        ('No-Consensus', OutcomeLabel.NO_CONSENSUS),
        ('  Delete. ', OutcomeLabel.DELETE),
        ('SPEEDY_KEEP', OutcomeLabel.SPEEDY_KEEP),
        ('Merge and redirect', OutcomeLabel.MERGE),
    ])
    def test_case_and_punctuation_are_normalized(self, raw, expected):
        assert canonicalize_label(raw) is expected

    def test_canonical_labels_map_to_themselves(self):
        for label in OutcomeLabel:
            assert canonicalize_label(label.value) is label

    def test_unknown_label_raises(self):
        with pytest.raises(UnknownLabel):
            canonicalize_label('userfy')

    def test_empty_label_raises(self):
        with pytest.raises(ValueError):
            canonicalize_label('   ')

    def test_malformed_variant_table_reports_line(self, tmp_path):
        path = tmp_path / 'variants.tsv'
        path.write_text('delete\tdelete\nkeep it\n', encoding='utf-8')
        with pytest.raises(ParseError, match='line 2'):
            load_variant_table(path)

    def test_variant_table_rejects_unknown_canonical(self, tmp_path):
        path = tmp_path / 'variants.tsv'
        path.write_text('userfy\tuserfy\n', encoding='utf-8')
        with pytest.raises(ParseError):
            load_variant_table(path)

    def test_custom_table_is_used(self, tmp_path):
        path = tmp_path / 'variants.tsv'
        path.write_text('userfy\tdelete\n', encoding='utf-8')
        assert canonicalize_label('Userfy', load_variant_table(path)) is OutcomeLabel.DELETE

    def test_normalize_label_text(self):
        assert normalize_label_text('**Strong_Keep**.') == 'strong keep'


class TestExtractDiscussions:
    """Test section extraction on the fixture corpus."""

    def test_corpus_is_large_enough_and_covers_every_label(self, corpus):
        assert len(corpus) >= 20
        labels = {row['label'] for _, gold in corpus for row in gold if row['label']}
        assert labels == {label.value for label in OutcomeLabel}

    def test_golden_titles_and_labels(self, corpus):
        """Every title, closure flag and closing label is recovered."""
        for page, gold in corpus:
            discussions = [discussion_from_raw(raw) for raw in extract_discussions(page)]
            assert [d.title for d in discussions] == [row['title'] for row in gold], page.url
            assert [d.closed for d in discussions] == [row['closed'] for row in gold], page.url
            assert [d.label.value if d.label else None for d in discussions] == \
                [row['label'] for row in gold], page.url

    def test_three_closed_and_one_open(self, load_page):
        raws = extract_discussions(load_page('2023_January_1'))

        assert len(raws) == 4
        assert sum(raw.closing_banner is not None for raw in raws) == 3
        assert raws[3].closing_banner is None
        assert raws[0].raw_label == 'delete'
        assert raws[0].closing_banner.startswith('The result was delete')

    def test_anchor_and_date_are_kept(self, load_page):
        raws = extract_discussions(load_page('2023_January_1'))

        assert raws[1].anchor == 'Mary_Quill_(singer)'
        assert raws[1].log_date.isoformat() == '2023-01-01'

    def test_count_matches_section_headings(self, corpus):
        for page, gold in corpus:
            assert len(extract_discussions(page)) == page.body.count('<h3 ')

    def test_unknown_closing_label_stays_closed_without_label(self, load_page):
        discussions = [discussion_from_raw(raw) for raw in extract_discussions(load_page('2023_January_9'))]
        parrot = next(d for d in discussions if d.title == 'Parrot Theory')

        assert parrot.closed
        assert parrot.label is None
        assert not parrot.is_labeled

    def test_empty_page_raises(self):
        with pytest.raises(ParseError):
            extract_discussions(_page('   '))

    def test_page_without_sections_raises(self):
        with pytest.raises(ParseError, match='no AfD discussion sections'):
            extract_discussions(_page('<html><body><div class="mw-parser-output"><p>Nothing</p></div></body></html>'))

    def test_raw_discussion_requires_title(self):
        with pytest.raises(ParseError):
            RawDiscussion(title=' ', body_html='<p>x</p>', source_url='u')


class TestCleanText:
    """Test boilerplate removal and text normalization."""

    @pytest.fixture
    def zorblax(self, load_page):
        return extract_discussions(load_page('2023_January_1'))[0]

    def test_banners_are_removed(self, zorblax):
        text = clean_text(zorblax)

        assert 'archived debate' not in text
        assert 'The result was' not in text
        assert 'preserved as an archive' not in text
        assert 'Find sources' not in text
        assert 'history' not in text

    def test_relist_notice_is_removed(self, load_page):
        text = clean_text(extract_discussions(load_page('2023_January_1'))[3])

        assert 'Relisted' not in text
        assert 'Glimmerfield Festival' in text

    def test_comments_appear_in_document_order(self, zorblax):
        text = clean_text(zorblax)
        pieces = ['is a non-notable company', 'Junk article', 'two trade reviews',
                  'promotional spam', 'press releases']
        positions = [text.index(piece) for piece in pieces]

        assert positions == sorted(positions)

    def test_signatures_are_kept(self, zorblax):
        assert 'Alice (talk) 09:12, 1 January 2023 (UTC)' in clean_text(zorblax)

    def test_bold_markers(self, zorblax):
        marked = clean_text(zorblax, keep_bold_markers=True)
        plain = clean_text(zorblax)

        assert '**Delete** per nom.' in marked
        assert '**' not in plain
        assert 'Delete per nom.' in plain

    def test_inline_markup(self):
        raw = RawDiscussion('T', '<b>Delete</b> per <a href="/wiki/WP:N">WP:N</a>', 'u')
        assert clean_text(raw) == 'Delete per WP:N'

    def test_whitespace_is_collapsed(self):
        raw = RawDiscussion('T', '<p>Keep\n\n   this</p><p>now</p>', 'u')
        assert clean_text(raw) == 'Keep this now'


class TestExtractComments:
    """Test nomination/comment splitting."""

    @pytest.fixture
    def comments(self, load_page):
        return extract_comments(extract_discussions(load_page('2023_January_1'))[0])

    def test_five_comments_with_nomination_first(self, comments):
        assert len(comments) == 5
        assert comments[0].plain_text.startswith('Zorblax Industries is a non-notable company')
        assert [c.index for c in comments] == [0, 1, 2, 3, 4]

    def test_votes(self, comments):
        assert [c.vote for c in comments] == [None, 'delete', 'comment', 'delete', 'delete']

    def test_nested_reply_is_its_own_comment(self, comments):
        assert 'trade reviews' not in comments[1].text
        assert comments[2].plain_text.startswith('Comment I found two trade reviews')

    def test_policies(self, comments):
        assert comments[0].policies == (
            'Wikipedia:Notability',
            'Wikipedia:Notability (organizations and companies)',
        )
        assert comments[1].policies == ('Wikipedia:Reliable sources',)

    def test_comments_are_stored_on_discussion(self, load_page):
        discussion = discussion_from_raw(extract_discussions(load_page('2023_January_1'))[0])
        assert len(discussion.comments) == 5


class TestPoliciesAndStance:
    """Test policy citation lookup and bold-vote stance mapping."""

    def test_adjacent_shortcuts_are_both_found(self):
        assert find_policies('Fails WP:GNG and WP:BIO.') == [
            'Wikipedia:Notability', 'Wikipedia:Notability (people)'
        ]

    def test_duplicates_collapse(self):
        assert find_policies('WP:N, and also WP:GNG') == ['Wikipedia:Notability']

    def test_long_form_names(self):
        assert find_policies('None establish his Wikipedia:Notability .') == ['Wikipedia:Notability']

    def test_unknown_shortcut_is_ignored(self):
        assert find_policies('See WP:XYZZY') == []

    @pytest.mark.parametrize('bold,stance', [
        ('Strong delete', 'delete'),
        ('Speedy keep', 'keep'),
        ('Redirect', 'merge'),
        ('Merge', 'merge'),
        ('Comment', 'comment'),
        ('Note', 'comment'),
        ('Please do not modify it.', None),
    ])
    def test_stance_for_bold(self, bold, stance):
        assert stance_for_bold(bold) == stance


class TestMaskVotes:
    """Test bold-vote masking."""

    def test_removes_vote(self):
        assert mask_votes('**Delete** Just a junk article') == 'Just a junk article'

    def test_removes_trailing_punctuation(self):
        assert mask_votes('**Strong keep**: per WP:N') == 'per WP:N'

    def test_non_vote_bold_is_kept(self):
        assert mask_votes('**Comment** I am unsure') == '**Comment** I am unsure'

    def test_replace_mode(self):
        assert mask_votes('**Delete**. Junk.', mode='replace') == '[VOTE] Junk.'

    def test_invalid_mode(self):
        with pytest.raises(ValueError):
            mask_votes('**Delete**', mode='blank')

    def test_literal_asterisks_do_not_pair_with_bold(self):
        raw = RawDiscussion('T', '<p>Rated ** by critics. <b>Keep</b> per sources.</p>', 'u')
        marked = clean_text(raw, keep_bold_markers=True)

        assert mask_votes(marked) == 'Rated \\*\\* by critics. per sources.'
        assert clean_text(raw) == 'Rated ** by critics. Keep per sources.'

    def test_literal_asterisks_inside_bold(self):
        raw = RawDiscussion('T', '<p><b>Delete</b> as a *** rated stub.</p>', 'u')
        discussion = discussion_from_raw(raw)

        assert discussion.text == 'Delete as a *** rated stub.'
        assert discussion.comments[0].vote == 'delete'
        assert strip_bold_markers(mask_votes(discussion.marked_text)) == 'as a *** rated stub.'

    def test_no_vote_keywords_remain_in_corpus(self, corpus):
        variants = load_variant_table()
        scanned = 0
        for page, _ in corpus:
            for raw in extract_discussions(page):
                masked = mask_votes(discussion_from_raw(raw).marked_text)
                for match in re.finditer(r'\*\*(.+?)\*\*', masked):
                    assert normalize_label_text(match.group(1)) not in variants, (raw.title, match.group(0))
                scanned += 1
        assert scanned >= 40

    @pytest.mark.parametrize('mode', ['delete', 'replace'])
    def test_idempotent_on_random_texts(self, mode):
        rng = random.Random(7)
        vocabulary = [
            '**Delete**', '**Keep**', '**Strong keep**', '**Comment**', '**Merge**.',
            '**Speedy delete**:', '**Note**', 'per', 'nom', 'WP:GNG', 'junk', 'notable',
            '.', ',', 'Alice', '(UTC)', '**weak-delete**', '**No consensus**;',
        ]
        for _ in range(1000):
            text = ' '.join(rng.choice(vocabulary) for _ in range(rng.randint(1, 20)))
            once = mask_votes(text, mode=mode)
            assert mask_votes(once, mode=mode) == once


class TestSegmentSentences:
    """Test the rule-based sentence splitter."""

    def test_abbreviations_do_not_split(self):
        sentences = segment_sentences('Fails WP:GNG. See p. 4 of the source.')
        assert [s.text for s in sentences] == ['Fails WP:GNG.', 'See p. 4 of the source.']

    def test_signature_timestamp_ends_sentence(self):
        text = 'Delete, fails WP:GNG. Alice (talk) 09:12, 1 January 2023 (UTC) Keep, notable.'
        assert [s.text for s in segment_sentences(text)] == [
            'Delete, fails WP:GNG.',
            'Alice (talk) 09:12, 1 January 2023 (UTC)',
            'Keep, notable.',
        ]

    def test_initials_and_latin_abbreviations(self):
        assert len(segment_sentences('J. R. Smith wrote it, e.g. in 1990.')) == 1

    def test_lowercase_continuation(self):
        assert len(segment_sentences('The band released v. two albums. then nothing.')) == 1

    def test_indices_are_sequential(self):
        sentences = segment_sentences('One. Two! Three? Four.')
        assert [s.index for s in sentences] == [0, 1, 2, 3]

    def test_trailing_text_without_punctuation(self):
        assert [s.text for s in segment_sentences('Keep. no period at the end')] == [
            'Keep. no period at the end'
        ]

    def test_empty_and_none(self):
        assert segment_sentences('') == []
        with pytest.raises(ValueError):
            segment_sentences(None)


class TestDiscussionRecord:
    """Test the Discussion record form."""

    def test_record_round_trip_keeps_comments(self, load_page):
        discussion = discussion_from_raw(extract_discussions(load_page('2023_January_1'))[0])
        restored = Discussion.from_record(discussion.to_record())

        assert restored == discussion

    def test_label_requires_closed(self):
        with pytest.raises(ValueError):
            Discussion(title='T', text='x', source_url='u', closed=False, label='keep')
