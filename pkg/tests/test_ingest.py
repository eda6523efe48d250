import bz2
import io
import json
import tracemalloc
from collections import Counter

import pytest

from ingest import (
    CleanPost,
    CodeSnippet,
    DumpFormatError,
    IngestSummary,
    PostStoreError,
    PostType,
    RawRow,
    SnippetOrigin,
    clean_and_filter,
    extract_segments,
    group_questions,
    ingest_posts,
    load_posts,
    open_dump,
    parse_dump,
    parse_tags,
    store_posts,
)
from utils.errors import InputError


def _ingest(path, grouping='memory'):
    summary = IngestSummary()
    with open_dump(path) as stream:
        posts = list(ingest_posts(stream, grouping, summary=summary))
    return posts, summary


def test_parse_tags_both_encodings():
    assert parse_tags('<java><spring-boot>') == ('java', 'spring-boot')
    assert parse_tags('|java|spring|') == ('java', 'spring')
    assert parse_tags('<Java><JSON>') == ('java', 'json')
    assert parse_tags('') == ()
    assert parse_tags(None) == ()


def test_extract_segments_strips_code_and_markup():
    text, code = extract_segments(
        '<p>Use <b>this</b>:</p><pre><code>int a = 1 &lt; 2 ? 1 : 0;\n</code></pre><p>done   now</p>'
    )
    assert text == 'Use this : done now'
    assert code == ['int a = 1 < 2 ? 1 : 0;\n']


def test_extract_segments_inline_code_is_a_block():
    text, code = extract_segments('<p>Call <code>readLine()</code> in a loop.</p>')
    assert text == 'Call in a loop.'
    assert code == ['readLine()']


def test_extract_segments_nested_code_is_one_block():
    text, code = extract_segments('<pre><code>a<code>b</code></code></pre><p>t</p>')
    assert code == ['ab']
    assert text == 't'


def test_extract_segments_broken_markup_is_recovered():
    text, code = extract_segments('<p>unclosed <code>foo();')
    assert code == ['foo();']
    assert text == 'unclosed'
    assert extract_segments('') == ('', [])


def test_mini_dump_summary(mini_dump):
    posts, summary = _ingest(mini_dump)
    assert [p.question_id for p in posts] == [1, 3, 5, 7]
    assert summary.to_dict() == {
        'rows_read': 22,
        'questions': 10,
        'answers': 12,
        'kept': 4,
        'rejections': {'no_accept': 3, 'no_code': 2, 'no_java': 1},
        'skipped': {'missing_attribute': 1, 'other_post_type': 1},
        'orphan_answers': 1,
    }


def test_mini_dump_clean_post_contents(mini_dump):
    posts, _summary = _ingest(mini_dump)
    by_id = {p.question_id: p for p in posts}

    first = by_id[1]
    assert first.title == 'How to read a file line by line'
    assert first.question_text == 'I tried this: but it only reads one line.'
    assert first.answer_texts == ('Call in a loop until it returns null.',)
    assert first.code_snippets == (
        CodeSnippet(SnippetOrigin.QUESTION,
                    'BufferedReader reader = new BufferedReader(new FileReader(path));\n'
                    'String line = reader.readLine();\n'),
        CodeSnippet(SnippetOrigin.ACCEPTED_ANSWER, 'readLine()'),
    )
    assert first.tags == ('java', 'io')

    assert by_id[3].tags == ('java', 'spring')
    assert [s.origin for s in by_id[3].code_snippets] == [SnippetOrigin.ACCEPTED_ANSWER]

    # accepted answer first even though the other answer came earlier in the dump
    assert by_id[5].answer_texts == ('Let Jackson do it.', 'Write your own parser.')
    assert by_id[5].tags == ('java', 'json')
    assert by_id[5].code_snippets[0].source == 'Map<String, Object> map = parse(json);'

    # the accepted answer preceded its question
    assert by_id[7].code_snippets == (CodeSnippet(SnippetOrigin.ACCEPTED_ANSWER, 'int total = a + b;'),)


def test_sorted_grouping_needs_answers_after_questions(mini_dump):
    posts, summary = _ingest(mini_dump, 'sorted')
    assert [p.question_id for p in posts] == [1, 3, 5]
    assert summary.orphan_answers == 3
    assert summary.rejections == Counter({'no_accept': 4, 'no_code': 2, 'no_java': 1})


def test_unknown_grouping_strategy():
    with pytest.raises(ValueError):
        list(group_questions([], 'hash'))


def _question(body, accepted=2, tags=('java',)):
    return RawRow(id=1, post_type=PostType.QUESTION, body=body, accepted_answer_id=accepted, title='T', tags=tags)


def _answer(answer_id, body):
    return RawRow(id=answer_id, post_type=PostType.ANSWER, body=body, parent_id=1)


def test_rejection_rules_apply_in_order():
    rejections = Counter()
    # no accepted answer wins over the other rules
    assert clean_and_filter(_question('<p>x</p>', accepted=None, tags=('c',)), [], rejections) is None
    # code only in a non-accepted answer does not count
    assert clean_and_filter(_question('<p>x</p>'), [_answer(2, '<p>y</p>'), _answer(3, '<code>z();</code>')],
                            rejections) is None
    assert clean_and_filter(_question('<code>x();</code>', tags=('python',)), [_answer(2, '<p>y</p>')],
                            rejections) is None
    assert rejections == Counter({'no_accept': 1, 'no_code': 1, 'no_java': 1})


def test_required_tag_is_configurable():
    post = clean_and_filter(_question('<code>x</code>', tags=('kotlin',)), [_answer(2, '<p>y</p>')],
                            required_tag='kotlin')
    assert isinstance(post, CleanPost)


def test_corpus_dump_keeps_thirty_posts(corpus_posts):
    assert len(corpus_posts) == 30
    ids = {p.question_id for p in corpus_posts}
    assert {1000, 1100, 1200}.issubset(ids)
    assert not ids & {3000, 3010}
    camel = next(p for p in corpus_posts if p.question_id == 1000)
    assert [s.origin for s in camel.code_snippets] == [
        SnippetOrigin.QUESTION, SnippetOrigin.ACCEPTED_ANSWER, SnippetOrigin.ACCEPTED_ANSWER,
    ]
    assert 'from("file:data/inbox")' in camel.code_snippets[0].source
    assert len(camel.answer_texts) == 2


def test_malformed_xml_reports_byte_offset():
    data = (b'<posts>\n<row Id="1" PostTypeId="1" Title="t" Body="b" Tags="&lt;java&gt;" />\n'
            b'<row Id="2" PostTypeId="2" ParentId="1" Body="oops />\n')
    with pytest.raises(DumpFormatError) as excinfo:
        list(parse_dump(io.BytesIO(data)))
    assert 'byte offset' in str(excinfo.value)
    assert 0 <= excinfo.value.offset <= len(data)
    assert isinstance(excinfo.value, InputError)


def test_open_dump_decompresses_bz2(tmp_path, mini_dump):
    compressed = tmp_path / 'Posts.xml.bz2'
    compressed.write_bytes(bz2.compress(mini_dump.read_bytes()))
    posts, summary = _ingest(compressed)
    assert [p.question_id for p in posts] == [1, 3, 5, 7]
    assert summary.rows_read == 22


def test_open_dump_missing_file(tmp_path):
    with pytest.raises(InputError, match='dump not found'):
        open_dump(tmp_path / 'nope.xml')


def test_parse_dump_memory_stays_flat():
    def dump(n):
        rows = []
        for i in range(n):
            qid, aid = 2 * i + 1, 2 * i + 2
            rows.append(f'<row Id="{qid}" PostTypeId="1" AcceptedAnswerId="{aid}" Title="question {i}" '
                        f'Tags="&lt;java&gt;" Body="&lt;p&gt;{"text " * 40}&lt;/p&gt;'
                        f'&lt;code&gt;call{i}();&lt;/code&gt;" />')
            rows.append(f'<row Id="{aid}" PostTypeId="2" ParentId="{qid}" Body="&lt;p&gt;{"answer " * 40}&lt;/p&gt;" />')
        # a single line keeps the offset bookkeeping out of the measurement
        return io.BytesIO(('<posts>' + ''.join(rows) + '</posts>').encode('utf-8'))

    def peak(n):
        stream = dump(n)
        tracemalloc.start()
        try:
            kept = sum(1 for _post in ingest_posts(stream, 'sorted', progress_interval=0))
            return kept, tracemalloc.get_traced_memory()[1]
        finally:
            tracemalloc.stop()

    small_kept, small_peak = peak(500)
    large_kept, large_peak = peak(5000)
    assert (small_kept, large_kept) == (500, 5000)
    assert large_peak < 3 * small_peak + 1_000_000


class ForwardOnlyStream:
    """Binary reader over generated chunks: no seek, no tell, no rewind."""

    def __init__(self, chunks):
        self._chunks = iter(chunks)
        self._rest = b''

    def read(self, size=-1):
        parts, have = [self._rest], len(self._rest)
        while size < 0 or have < size:
            chunk = next(self._chunks, b'')
            if not chunk:
                break
            parts.append(chunk)
            have += len(chunk)
        data = b''.join(parts)
        if size < 0:
            self._rest = b''
            return data
        self._rest = data[size:]
        return data[:size]

    def seekable(self):
        return False


def _generated_dump(rows):
    """`rows` rows: question/answer pairs, every 50th question with an accepted answer and code."""
    yield b'<posts>'
    for i in range(rows // 2):
        qid, aid = 2 * i + 1, 2 * i + 2
        if i % 50 == 0:
            yield (f'<row Id="{qid}" PostTypeId="1" AcceptedAnswerId="{aid}" Title="question {i}" '
                   f'Tags="&lt;java&gt;" Body="&lt;p&gt;text&lt;/p&gt;&lt;code&gt;call{i}();&lt;/code&gt;" />').encode()
        else:
            yield f'<row Id="{qid}" PostTypeId="1" Title="question {i}" Tags="&lt;java&gt;" Body="text {i}" />'.encode()
        yield f'<row Id="{aid}" PostTypeId="2" ParentId="{qid}" Body="&lt;p&gt;answer {i}&lt;/p&gt;" />'.encode()
    # no newlines: line-offset bookkeeping stays out of the measurement
    yield b'</posts>'


def test_forward_only_stream_of_100k_rows():
    summary = IngestSummary()
    posts = list(ingest_posts(ForwardOnlyStream(_generated_dump(100_000)), 'memory', summary=summary,
                              progress_interval=0))
    assert len(posts) == 1000
    assert (summary.rows_read, summary.questions, summary.answers) == (100_000, 50_000, 50_000)
    assert summary.rejections == Counter({'no_accept': 49_000})
    assert summary.orphan_answers == 0
    assert posts[-1].question_id == 2 * 49_950 + 1


def test_memory_growth_is_sublinear_in_rows():
    def peak(rows):
        tracemalloc.start()
        try:
            kept = sum(1 for _post in ingest_posts(ForwardOnlyStream(_generated_dump(rows)), 'sorted',
                                                   progress_interval=0))
            return kept, tracemalloc.get_traced_memory()[1]
        finally:
            tracemalloc.stop()

    small_kept, small_peak = peak(10_000)
    large_kept, large_peak = peak(100_000)
    assert (small_kept, large_kept) == (100, 1000)
    assert large_peak < 3 * small_peak + 1_000_000


def test_store_and_load_round_trip(tmp_path, mini_dump):
    posts, _summary = _ingest(mini_dump)
    path = tmp_path / 'posts.jsonl'
    assert store_posts(posts, path) == 4
    assert list(load_posts(path)) == posts
    first = json.loads(path.read_text(encoding='utf-8').splitlines()[0])
    assert list(first) == sorted(first)


def test_load_posts_reports_corrupt_line(tmp_path):
    path = tmp_path / 'posts.jsonl'
    good = CleanPost(1, 't', 'q', ('a',), (CodeSnippet(SnippetOrigin.QUESTION, 'x();'),), ('java',))
    path.write_text(json.dumps(good.to_record()) + '\n{"id": 2}\n', encoding='utf-8')
    with pytest.raises(PostStoreError) as excinfo:
        list(load_posts(path))
    assert excinfo.value.line == 2


def test_load_posts_missing_store(tmp_path):
    with pytest.raises(PostStoreError):
        list(load_posts(tmp_path / 'missing.jsonl'))
