# index.py
# ~~~~~~~~
# nine-field inverted index over cleaned posts with per-field BM25 scoring

import json
import math
import logging
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from enum import Enum
from functools import partial
from pathlib import Path

from codeparse import parse_facets, deduce_imports, FACET_NAMES
from utils.errors import InputError, ValidationError
from utils.text_analysis import AnalyzerOptions, analyze_text, normalize_term

logger = logging.getLogger(__name__)

INDEX_FORMAT_VERSION = 1
SCORER_MODES = ('standard', 'paper_eq2')
# extra spellings accepted wherever a scorer mode is read
SCORER_MODE_ALIASES = {'saturation': 'paper_eq2'}
POST_URL = 'https://stackoverflow.com/questions/{}'

MANIFEST_FILE = 'manifest.json'
DOCS_FILE = 'docs.jsonl'
POSTINGS_FILE = 'postings.jsonl'

class FieldId(str, Enum):
    TITLE = 'title'
    QUESTION = 'question'
    ANSWER = 'answer'
    IMPORT_DECLARATION = 'import_declaration'
    METHOD_DECLARATION = 'method_declaration'
    METHOD_INVOCATION = 'method_invocation'
    VARIABLE_TYPE = 'variable_type'
    VARIABLE_DECLARATION = 'variable_declaration'
    CLASS_INSTANCE = 'class_instance'

    @property
    def is_text(self):
        return self in TEXT_FIELDS

    @property
    def display_name(self):
        return DISPLAY_NAMES[self]

FIELD_ORDER = tuple(FieldId)
TEXT_FIELDS = (FieldId.TITLE, FieldId.QUESTION, FieldId.ANSWER)
CODE_FIELDS = tuple(f for f in FieldId if f not in TEXT_FIELDS)

# facet attribute of CodeFacets -> code field
FACET_FIELDS = dict(zip(FACET_NAMES, CODE_FIELDS))

DISPLAY_NAMES = {
    FieldId.TITLE: 'Title',
    FieldId.QUESTION: 'Question',
    FieldId.ANSWER: 'Answer',
    FieldId.IMPORT_DECLARATION: 'ImportDeclaration',
    FieldId.METHOD_DECLARATION: 'MethodDeclaration',
    FieldId.METHOD_INVOCATION: 'MethodInvocation',
    FieldId.VARIABLE_TYPE: 'VariableDeclarationType',
    FieldId.VARIABLE_DECLARATION: 'VariableDeclaration',
    FieldId.CLASS_INSTANCE: 'ClassInstance',
}

_FIELD_ALIASES = {
    **{f.value: f for f in FieldId},
    **{name.lower(): f for f, name in DISPLAY_NAMES.items()},
    'variabletype': FieldId.VARIABLE_TYPE,
    'variabledec': FieldId.VARIABLE_DECLARATION,
    'imports': FieldId.IMPORT_DECLARATION,
}

def field_from_name(name):
    """FieldId for a snake_case or display spelling, case-insensitive."""
    try:
        return _FIELD_ALIASES[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown field name: {name!r}") from None

class IndexFormatError(InputError):
    """Missing, corrupt or incompatible index directory."""
    pass

class DuplicateDocumentError(ValidationError):
    """The same question id was indexed twice."""

    def __init__(self, doc_id):
        super().__init__(f"duplicate document id {doc_id}")
        self.doc_id = doc_id

@dataclass(frozen=True)
class IndexOptions:
    wrapping: bool = True
    import_mining: bool = True
    analyzer: AnalyzerOptions = field(default_factory=AnalyzerOptions)

    def to_dict(self):
        return {'wrapping': self.wrapping, 'import_mining': self.import_mining,
                'analyzer': self.analyzer.to_dict()}

    @classmethod
    def from_dict(cls, data):
        return cls(wrapping=bool(data['wrapping']), import_mining=bool(data['import_mining']),
                   analyzer=AnalyzerOptions.from_dict(data.get('analyzer', {})))

def scorer_mode_name(value):
    """Canonical scorer mode for a mode name or one of its aliases."""
    mode = SCORER_MODE_ALIASES.get(value, value)
    if mode not in SCORER_MODES:
        raise ValueError(f"scorer_mode must be one of {SCORER_MODES + tuple(SCORER_MODE_ALIASES)}, got {value!r}")
    return mode

@dataclass(frozen=True)
class ScoringParams:
    k1: float = 2.0
    b: float = 0.75
    scorer_mode: str = 'standard'

    def __post_init__(self):
        object.__setattr__(self, 'scorer_mode', scorer_mode_name(self.scorer_mode))
        if self.k1 < 0 or not 0 <= self.b <= 1:
            raise ValueError(f"need k1 >= 0 and 0 <= b <= 1, got k1={self.k1}, b={self.b}")

    def to_dict(self):
        return asdict(self)

@dataclass
class FieldedDocument:
    doc_id: int
    title: str
    fields: dict

@dataclass(frozen=True)
class SearchHit:
    doc_id: int
    score: float
    title: str
    url: str

    def to_dict(self):
        return asdict(self)

@dataclass
class BuildStats:
    documents: int = 0
    snippets: int = 0
    without_imports: int = 0
    wrapped: int = 0
    parse_failed: int = 0
    deduced_imports: int = 0
    unresolved_names: int = 0

    def add(self, other):
        for name, value in asdict(other).items():
            setattr(self, name, getattr(self, name) + value)

    def to_dict(self):
        return asdict(self)

def bm25_weight(f, df, n_docs, length, avg_length, params):
    """BM25 contribution of one term occurring `f` times in a field of `length` terms."""
    if f <= 0 or avg_length <= 0:
        return 0.0
    norm = params.k1 * (1 - params.b + params.b * length / avg_length)
    if params.scorer_mode == 'paper_eq2':
        return f / (norm + f)
    idf = math.log(1 + (n_docs - df + 0.5) / (df + 0.5))
    return idf * (f * (params.k1 + 1)) / (f + norm)

# ~~~ document analysis ~~~

def document_fields(post, table=None, options=IndexOptions()):
    """Analyze one CleanPost into a FieldedDocument plus its snippet statistics."""
    stats = BuildStats(documents=1)
    fields = {
        FieldId.TITLE: analyze_text(post.title, options.analyzer),
        FieldId.QUESTION: analyze_text(post.question_text, options.analyzer),
        FieldId.ANSWER: analyze_text(' '.join(post.answer_texts), options.analyzer),
    }
    context = f"{post.title} {post.question_text}"
    code_terms = defaultdict(set)
    for snippet in post.code_snippets:
        stats.snippets += 1
        facets, outcome = parse_facets(snippet.source, options.wrapping)
        if not outcome.parsed:
            stats.parse_failed += 1
        elif outcome.wrapped:
            stats.wrapped += 1
        if not facets.imports:
            stats.without_imports += 1
            if options.import_mining and table is not None:
                unresolved = Counter()
                deduced = deduce_imports(facets, table, context, unresolved)
                stats.deduced_imports += len(deduced)
                stats.unresolved_names += sum(unresolved.values())
                facets = facets.with_imports(deduced)
        for facet_name, field_id in FACET_FIELDS.items():
            code_terms[field_id].update(getattr(facets, facet_name))
    for field_id in CODE_FIELDS:
        fields[field_id] = sorted(code_terms[field_id])
    return FieldedDocument(post.question_id, post.title, fields), stats

# ~~~ the index ~~~

class Index:
    """
    Immutable inverted index. `postings` maps (FieldId, term) to
    [(doc_id, tf)] sorted by doc_id; `doc_lengths` maps each field to the
    per-document term counts.
    """

    def __init__(self, postings, doc_lengths, doc_store, scoring=None, options=None, stats=None):
        self.postings = postings
        self.doc_lengths = doc_lengths
        self.doc_store = doc_store
        self.scoring = scoring or ScoringParams()
        self.options = options or IndexOptions()
        self.stats = stats or BuildStats(documents=len(doc_store))
        self.doc_count = len(doc_store)
        self.avg_lengths = {
            f: (sum(doc_lengths[f].values()) / self.doc_count if self.doc_count else 0.0)
            for f in FIELD_ORDER
        }
        self._tf = {key: dict(entries) for key, entries in postings.items()}

    @property
    def term_count(self):
        return len(self.postings)

    def field_term_counts(self):
        counts = Counter(field_id.value for field_id, _term in self.postings)
        return {f.value: counts.get(f.value, 0) for f in FIELD_ORDER}

    def _lookup_term(self, field_id, term):
        if field_id.is_text:
            return normalize_term(term, self.options.analyzer)
        return term

    def bm25(self, term, field_id, doc_id, scoring=None):
        params = scoring or self.scoring
        field_id = FieldId(field_id)
        key = (field_id, self._lookup_term(field_id, term))
        tf = self._tf.get(key)
        if not tf:
            return 0.0
        return bm25_weight(tf.get(doc_id, 0), len(tf), self.doc_count,
                           self.doc_lengths[field_id].get(doc_id, 0),
                           self.avg_lengths[field_id], params)

    def _clause_scores(self, clause, params):
        field_id = FieldId(clause.field)
        entries = self.postings.get((field_id, self._lookup_term(field_id, clause.term)), ())
        df = len(entries)
        lengths = self.doc_lengths[field_id]
        avg = self.avg_lengths[field_id]
        for doc_id, tf in entries:
            yield doc_id, clause.boost * bm25_weight(tf, df, self.doc_count, lengths.get(doc_id, 0), avg, params)

    def search(self, query, top_n=5, scoring=None):
        """
        Disjunctive evaluation: a document scores the boosted sum of its
        per-clause BM25 weights. Zero scores are dropped, ties go to the
        lower doc id.
        """
        if top_n < 1:
            raise ValueError(f"top_n must be >= 1, got {top_n}")
        params = scoring or self.scoring
        scores = defaultdict(float)
        for clause in query.clauses:
            for doc_id, contribution in self._clause_scores(clause, params):
                scores[doc_id] += contribution
        ranked = sorted(((s, d) for d, s in scores.items() if s > 0), key=lambda item: (-item[0], item[1]))
        return [self._hit(doc_id, score) for score, doc_id in ranked[:top_n]]

    def explain(self, query, doc_id, scoring=None):
        """Per-clause contributions to one document's score, in clause order."""
        params = scoring or self.scoring
        return [(clause, clause.boost * self.bm25(clause.term, clause.field, doc_id, params))
                for clause in query.clauses]

    def _hit(self, doc_id, score):
        stored = self.doc_store.get(doc_id, {})
        return SearchHit(doc_id, score, stored.get('title', ''), stored.get('url', POST_URL.format(doc_id)))

    # ~~~ persistence ~~~

    def manifest(self, run_config=None):
        manifest = {
            'format_version': INDEX_FORMAT_VERSION,
            'fields': [f.value for f in FIELD_ORDER],
            'scoring': self.scoring.to_dict(),
            'build': self.options.to_dict(),
            'stats': {
                **self.stats.to_dict(),
                'documents': self.doc_count,
                'terms': self.term_count,
                'field_terms': self.field_term_counts(),
                'avg_lengths': {f.value: self.avg_lengths[f] for f in FIELD_ORDER},
            },
        }
        if run_config is not None:
            manifest['config'] = run_config
        return manifest

    def persist(self, directory, run_config=None):
        """Write manifest, documents and postings with canonical ordering."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / MANIFEST_FILE, 'w', encoding='utf-8', newline='\n') as handle:
            handle.write(json.dumps(self.manifest(run_config), sort_keys=True, indent=2, ensure_ascii=False) + '\n')
        with open(directory / DOCS_FILE, 'w', encoding='utf-8', newline='\n') as handle:
            for doc_id in sorted(self.doc_store):
                record = {
                    'id': doc_id,
                    **self.doc_store[doc_id],
                    'lengths': {f.value: self.doc_lengths[f].get(doc_id, 0) for f in FIELD_ORDER},
                }
                handle.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + '\n')
        with open(directory / POSTINGS_FILE, 'w', encoding='utf-8', newline='\n') as handle:
            for field_id, term in sorted(self.postings, key=lambda key: (FIELD_ORDER.index(key[0]), key[1])):
                entries = self.postings[(field_id, term)]
                record = {'field': field_id.value, 'term': term, 'df': len(entries),
                          'postings': [[doc_id, tf] for doc_id, tf in entries]}
                handle.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + '\n')
        logger.info(f"Persisted index ({self.doc_count} docs, {self.term_count} terms) to {directory}")

    @classmethod
    def open(cls, directory):
        directory = Path(directory)
        manifest_path = directory / MANIFEST_FILE
        if not manifest_path.is_file():
            raise IndexFormatError(f"missing manifest in {directory}")
        manifest = _read_json(manifest_path)
        version = manifest.get('format_version')
        if version != INDEX_FORMAT_VERSION:
            raise IndexFormatError(
                f"index format version {version} in {directory} does not match supported version {INDEX_FORMAT_VERSION}"
            )
        doc_store = {}
        doc_lengths = {f: {} for f in FIELD_ORDER}
        for record in _read_jsonl(directory / DOCS_FILE):
            doc_id = record['id']
            doc_store[doc_id] = {'title': record['title'], 'url': record['url']}
            for name, length in record['lengths'].items():
                if length:
                    doc_lengths[FieldId(name)][doc_id] = length
        postings = {}
        for record in _read_jsonl(directory / POSTINGS_FILE):
            postings[(FieldId(record['field']), record['term'])] = [tuple(entry) for entry in record['postings']]
        stats_data = manifest.get('stats', {})
        stats = BuildStats(**{k: stats_data.get(k, 0) for k in BuildStats.__dataclass_fields__})
        try:
            scoring = ScoringParams(**manifest['scoring'])
            options = IndexOptions.from_dict(manifest['build'])
        except (KeyError, TypeError, ValueError) as e:
            raise IndexFormatError(f"bad manifest in {directory}: {e}") from e
        logger.info(f"Opened index at {directory} ({len(doc_store)} docs, {len(postings)} terms)")
        return cls(postings, doc_lengths, doc_store, scoring, options, stats)

def _read_json(path):
    try:
        with open(path, 'r', encoding='utf-8') as handle:
            return json.load(handle)
    except (OSError, ValueError) as e:
        raise IndexFormatError(f"cannot read {path}: {e}") from e

def _read_jsonl(path):
    if not path.is_file():
        raise IndexFormatError(f"missing {path.name} in {path.parent}")
    with open(path, 'r', encoding='utf-8') as handle:
        for line_number, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except ValueError as e:
                raise IndexFormatError(f"{path} line {line_number}: {e}") from e

# ~~~ building ~~~

def index_documents(analyzed, scoring=None, options=None, progress_interval=1000):
    """Merge (FieldedDocument, BuildStats) pairs into an Index, in the given order."""
    stats = BuildStats()
    postings = defaultdict(list)
    doc_lengths = {f: {} for f in FIELD_ORDER}
    doc_store = {}
    for document, doc_stats in analyzed:
        if document.doc_id in doc_store:
            raise DuplicateDocumentError(document.doc_id)
        doc_store[document.doc_id] = {'title': document.title, 'url': POST_URL.format(document.doc_id)}
        stats.add(doc_stats)
        for field_id, terms in document.fields.items():
            if not terms:
                continue
            doc_lengths[field_id][document.doc_id] = len(terms)
            for term, tf in Counter(terms).items():
                postings[(field_id, term)].append((document.doc_id, tf))
        if progress_interval and stats.documents % progress_interval == 0:
            logger.info(f"Indexed {stats.documents} posts")

    for entries in postings.values():
        entries.sort()
    return Index(dict(postings), doc_lengths, doc_store, scoring, options, stats)

def build_index(posts, table=None, options=None, scoring=None, jobs=1, progress_interval=1000):
    """
    Analyze every post and merge the results into an Index. With jobs > 1
    documents are analyzed in worker processes; the merge stays in order.
    """
    options = options or IndexOptions()
    analyze = partial(document_fields, table=table, options=options)
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            built = index_documents(executor.map(analyze, posts, chunksize=32), scoring, options, progress_interval)
    else:
        built = index_documents(map(analyze, posts), scoring, options, progress_interval)
    stats = built.stats
    logger.info(f"Built index over {stats.documents} posts: {stats.snippets} snippets, "
                f"{stats.without_imports} without imports, {stats.deduced_imports} imports deduced")
    return built
