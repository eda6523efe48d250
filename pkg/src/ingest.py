# ingest.py
# ~~~~~~~~~
# StackExchange Posts.xml -> filtered, normalized Q&A posts (JSON lines)

import re
import bz2
import gzip
import json
import logging
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from bs4 import BeautifulSoup
from lxml import etree

from utils.errors import InputError

logger = logging.getLogger(__name__)

# keys of one post-store record, in serialization order
STORE_KEYS = ('answers', 'id', 'question', 'snippets', 'tags', 'title')

REJECT_NO_ACCEPT = 'no_accept'
REJECT_NO_CODE = 'no_code'
REJECT_NO_JAVA = 'no_java'

_ANGLE_TAGS = re.compile(r'<([^<>]+)>')
_WHITESPACE = re.compile(r'\s+')

class DumpFormatError(InputError):
    """Malformed XML in a post dump."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (near byte offset {offset})")
        self.offset = offset

class PostStoreError(InputError):
    """Unreadable or corrupt post store."""

    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line

class PostType(Enum):
    QUESTION = 'question'
    ANSWER = 'answer'

class SnippetOrigin(Enum):
    QUESTION = 'question'
    ACCEPTED_ANSWER = 'accepted_answer'

@dataclass(frozen=True)
class RawRow:
    id: int
    post_type: PostType
    body: str
    parent_id: int = None
    accepted_answer_id: int = None
    title: str = None
    tags: tuple = ()
    score: int = 0

@dataclass(frozen=True)
class CodeSnippet:
    origin: SnippetOrigin
    source: str

@dataclass(frozen=True)
class CleanPost:
    question_id: int
    title: str
    question_text: str
    answer_texts: tuple
    code_snippets: tuple
    tags: tuple

    def to_record(self):
        return {
            'id': self.question_id,
            'title': self.title,
            'question': self.question_text,
            'answers': list(self.answer_texts),
            'snippets': [{'origin': s.origin.value, 'source': s.source} for s in self.code_snippets],
            'tags': list(self.tags),
        }

    @classmethod
    def from_record(cls, record):
        if not isinstance(record, dict) or tuple(sorted(record)) != STORE_KEYS:
            raise ValueError(f"expected keys {list(STORE_KEYS)}")
        return cls(
            question_id=int(record['id']),
            title=record['title'],
            question_text=record['question'],
            answer_texts=tuple(record['answers']),
            code_snippets=tuple(
                CodeSnippet(SnippetOrigin(s['origin']), s['source']) for s in record['snippets']
            ),
            tags=tuple(record['tags']),
        )

@dataclass
class IngestSummary:
    rows_read: int = 0
    questions: int = 0
    answers: int = 0
    kept: int = 0
    rejections: Counter = field(default_factory=Counter)
    skipped: Counter = field(default_factory=Counter)
    orphan_answers: int = 0

    def to_dict(self):
        return {
            'rows_read': self.rows_read,
            'questions': self.questions,
            'answers': self.answers,
            'kept': self.kept,
            'rejections': dict(sorted(self.rejections.items())),
            'skipped': dict(sorted(self.skipped.items())),
            'orphan_answers': self.orphan_answers,
        }

# ~~~ dump streaming ~~~

class _CountingReader:
    """
    Read-only wrapper over a binary stream that counts bytes and remembers
    where the most recent lines start, so parser errors can be reported as
    byte offsets. Never seeks.
    """

    def __init__(self, stream, remembered_lines=65536):
        self._stream = stream
        self.bytes_read = 0
        self._lines_seen = 1
        self._line_starts = deque(maxlen=remembered_lines)
        self._line_starts.append((1, 0))

    def read(self, size=-1):
        data = self._stream.read(size)
        start = 0
        while True:
            newline = data.find(b'\n', start)
            if newline < 0:
                break
            self._lines_seen += 1
            self._line_starts.append((self._lines_seen, self.bytes_read + newline + 1))
            start = newline + 1
        self.bytes_read += len(data)
        return data

    def offset_of(self, line, column):
        for known_line, line_start in reversed(self._line_starts):
            if known_line == line:
                return line_start + max(column - 1, 0)
            if known_line < line:
                break
        return self.bytes_read

def parse_tags(raw):
    """Tags in either the `<a><b>` or the `|a|b|` dump encoding, lowercased."""
    if not raw:
        return ()
    if '<' in raw:
        names = _ANGLE_TAGS.findall(raw)
    else:
        names = raw.split('|')
    return tuple(name.strip().lower() for name in names if name.strip())

def _optional_int(value):
    return int(value) if value not in (None, '') else None

def _row_from_attributes(attrib, skipped):
    post_type_id = attrib.get('PostTypeId')
    if post_type_id is None or attrib.get('Id') is None:
        skipped['missing_attribute'] += 1
        return None
    if post_type_id not in ('1', '2'):
        skipped['other_post_type'] += 1
        return None
    is_question = post_type_id == '1'
    required = ('Body', 'Title') if is_question else ('Body', 'ParentId')
    if any(attrib.get(name) is None for name in required):
        skipped['missing_attribute'] += 1
        return None
    try:
        if is_question:
            return RawRow(
                id=int(attrib['Id']),
                post_type=PostType.QUESTION,
                body=attrib['Body'],
                accepted_answer_id=_optional_int(attrib.get('AcceptedAnswerId')),
                title=attrib['Title'],
                tags=parse_tags(attrib.get('Tags')),
                score=_optional_int(attrib.get('Score')) or 0,
            )
        return RawRow(
            id=int(attrib['Id']),
            post_type=PostType.ANSWER,
            body=attrib['Body'],
            parent_id=int(attrib['ParentId']),
            score=_optional_int(attrib.get('Score')) or 0,
        )
    except ValueError:
        skipped['bad_attribute'] += 1
        return None

def parse_dump(stream, skipped=None, progress_interval=100000):
    """
    Stream RawRows from a StackExchange Posts XML byte stream in file order.
    Memory stays constant in the dump size: each element is cleared once read.
    Rows with a missing or unusable attribute are tallied in `skipped`.
    """
    skipped = skipped if skipped is not None else Counter()
    reader = _CountingReader(stream)
    context = etree.iterparse(reader, events=('end',), tag='row', huge_tree=True)
    count = 0
    try:
        for _event, elem in context:
            row = _row_from_attributes(elem.attrib, skipped)
            # trim the tree, rows are never revisited
            elem.clear()
            while elem.getprevious() is not None:
                del elem.getparent()[0]
            count += 1
            if progress_interval and count % progress_interval == 0:
                logger.info(f"Parsed {count} dump rows ({reader.bytes_read} bytes)")
            if row is not None:
                yield row
    except etree.XMLSyntaxError as e:
        line, column = e.position if e.position else (0, 0)
        raise DumpFormatError(f"malformed dump XML: {e.msg}", reader.offset_of(line, column)) from e
    finally:
        del context

def open_dump(path):
    """Open a dump for binary streaming; `.bz2` and `.gz` are decompressed on the fly."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"dump not found: {path}")
    if path.suffix == '.bz2':
        return bz2.open(path, 'rb')
    if path.suffix == '.gz':
        return gzip.open(path, 'rb')
    return path.open('rb')

# ~~~ html bodies ~~~

def _collapse(text):
    return _WHITESPACE.sub(' ', text).strip()

def extract_segments(html_body):
    """
    Split a post body into (plain_text, code_blocks). Every <code> element
    becomes one code block (inner markup stripped, entities decoded) and is
    removed from the text; the remaining text is tag-free with whitespace
    collapsed. Broken markup is recovered best-effort, never raised.
    """
    if not html_body:
        return '', []
    soup = BeautifulSoup(html_body, 'html.parser')
    code_blocks = []
    # nested <code> belongs to its outermost <code> block
    outermost = [element for element in soup.find_all('code') if element.find_parent('code') is None]
    for element in outermost:
        code_blocks.append(element.get_text())
        element.decompose()
    return _collapse(soup.get_text(' ')), code_blocks

# ~~~ grouping and filtering ~~~

def group_questions(rows, strategy='memory', summary=None):
    """
    Pair every question with its answers.

    `memory` keeps an id-keyed map so answers may come before or after their
    question; questions without an accepted answer are emitted at once and
    their answers dropped, the rest are emitted in file order at end of stream.
    `sorted` expects each question's answers right after it and holds a
    single question at a time.
    """
    summary = summary if summary is not None else IngestSummary()
    if strategy == 'memory':
        yield from _group_in_memory(rows, summary)
    elif strategy == 'sorted':
        yield from _group_sorted(rows, summary)
    else:
        raise ValueError(f"unknown grouping strategy: {strategy}")

def _count(row, summary):
    summary.rows_read += 1
    if row.post_type is PostType.QUESTION:
        summary.questions += 1
    else:
        summary.answers += 1

def _group_in_memory(rows, summary):
    pending = {}
    released = set()
    answers = defaultdict(list)
    for row in rows:
        _count(row, summary)
        if row.post_type is PostType.QUESTION:
            if row.accepted_answer_id is None:
                released.add(row.id)
                answers.pop(row.id, None)
                yield row, []
            else:
                pending[row.id] = row
        elif row.parent_id not in released:
            answers[row.parent_id].append(row)
    for question_id, question in pending.items():
        yield question, answers.pop(question_id, [])
    summary.orphan_answers += sum(len(group) for group in answers.values())

def _group_sorted(rows, summary):
    current, current_answers = None, []
    for row in rows:
        _count(row, summary)
        if row.post_type is PostType.QUESTION:
            if current is not None:
                yield current, current_answers
            current, current_answers = row, []
        elif current is not None and row.parent_id == current.id:
            current_answers.append(row)
        else:
            summary.orphan_answers += 1
    if current is not None:
        yield current, current_answers

def rejection_reason(question, answers, required_tag='java'):
    """First failing filter rule for a grouped question, or None if it qualifies."""
    accepted = next((a for a in answers if a.id == question.accepted_answer_id), None)
    if question.accepted_answer_id is None or accepted is None:
        return REJECT_NO_ACCEPT
    if not extract_segments(question.body)[1] and not extract_segments(accepted.body)[1]:
        return REJECT_NO_CODE
    if required_tag not in question.tags:
        return REJECT_NO_JAVA
    return None

def clean_and_filter(question, answers, rejections=None, required_tag='java'):
    """
    Build a CleanPost when the question has its accepted answer among
    `answers`, code in the question or accepted answer, and the required tag.
    Otherwise return None and count the first failing rule in `rejections`.
    """
    reason = rejection_reason(question, answers, required_tag)
    if reason is not None:
        if rejections is not None:
            rejections[reason] += 1
        return None

    accepted = next(a for a in answers if a.id == question.accepted_answer_id)
    question_text, question_code = extract_segments(question.body)
    accepted_text, accepted_code = extract_segments(accepted.body)
    others = [extract_segments(a.body)[0] for a in answers if a is not accepted]
    snippets = [CodeSnippet(SnippetOrigin.QUESTION, code) for code in question_code]
    snippets += [CodeSnippet(SnippetOrigin.ACCEPTED_ANSWER, code) for code in accepted_code]
    return CleanPost(
        question_id=question.id,
        title=_collapse(question.title or ''),
        question_text=question_text,
        answer_texts=tuple([accepted_text] + others),
        code_snippets=tuple(snippets),
        tags=tuple(question.tags),
    )

def ingest_posts(stream, grouping='memory', required_tag='java', summary=None, progress_interval=100000):
    """parse_dump -> group_questions -> clean_and_filter, yielding kept posts."""
    summary = summary if summary is not None else IngestSummary()
    rows = parse_dump(stream, summary.skipped, progress_interval)
    for question, answers in group_questions(rows, grouping, summary):
        post = clean_and_filter(question, answers, summary.rejections, required_tag)
        if post is not None:
            summary.kept += 1
            yield post

# ~~~ post store ~~~

def _dump_record(post):
    return json.dumps(post.to_record(), sort_keys=True, ensure_ascii=False)

def store_posts(posts, path):
    """Write posts as UTF-8 JSON lines (sorted keys); returns the number written."""
    written = 0
    try:
        with open(path, 'w', encoding='utf-8', newline='\n') as handle:
            for post in posts:
                handle.write(_dump_record(post) + '\n')
                written += 1
    except OSError as e:
        raise PostStoreError(f"cannot write post store {path}: {e}") from e
    logger.info(f"Stored {written} posts to {path}")
    return written

def load_posts(path):
    """Stream CleanPosts back from a post store; a corrupt line is a hard error."""
    try:
        handle = open(path, 'r', encoding='utf-8')
    except OSError as e:
        raise PostStoreError(f"cannot read post store {path}: {e}") from e
    with handle:
        for line_number, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                yield CleanPost.from_record(json.loads(line))
            except (ValueError, KeyError, TypeError) as e:
                raise PostStoreError(f"corrupt record in {path}: {e}", line_number) from e
