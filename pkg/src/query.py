# query.py
# ~~~~~~~~
# context code -> boosted, fielded query

import re
import math
import logging
from collections import Counter
from dataclasses import dataclass, field

from codeparse import parse_facets, term_occurrences
from index import FieldId, FIELD_ORDER, FACET_FIELDS, field_from_name, scorer_mode_name

logger = logging.getLogger(__name__)

TECHNIQUES = ('wrapping', 'ranking', 'import_mining', 'tokenizing', 'entropy')

DEFAULT_TLD_PREFIXES = frozenset({'org', 'com', 'net', 'io', 'edu', 'gov'})
DEFAULT_GENERIC_SEGMENTS = frozenset({'impl', 'builder', 'core', 'api', 'util', 'internal', 'common'})

_CLAUSE_LINE = re.compile(r'^(?P<field>[A-Za-z_]+)\s*:\s*(?P<term>\S+)\^(?P<boost>\d+(?:\.\d+)?)$')

@dataclass(frozen=True)
class QueryClause:
    field: FieldId
    term: str
    boost: float = 1.0

    def __post_init__(self):
        if not self.term:
            raise ValueError("query clause term must be non-empty")
        if not self.boost > 0:
            raise ValueError(f"query clause boost must be positive, got {self.boost}")

    def to_text(self):
        return f"{self.field.display_name}: {self.term}^{self.boost}"

    def to_dict(self):
        return {'field': self.field.value, 'term': self.term, 'boost': self.boost}

@dataclass(frozen=True)
class Query:
    clauses: tuple = ()

    @classmethod
    def from_clauses(cls, clauses):
        """Collapse duplicate (field, term) pairs to their largest boost and order canonically."""
        best = {}
        for clause in clauses:
            key = (clause.field, clause.term)
            if key not in best or clause.boost > best[key].boost:
                best[key] = clause
        ordered = sorted(best.values(), key=lambda c: (FIELD_ORDER.index(c.field), c.term))
        return cls(tuple(ordered))

    def __len__(self):
        return len(self.clauses)

    def is_empty(self):
        return not self.clauses

    def to_text(self):
        """One `FieldName: term^boost` line per clause; clauses are OR-ed."""
        return '\n'.join(clause.to_text() for clause in self.clauses)

    @classmethod
    def parse_text(cls, text):
        clauses = []
        for line_number, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if line.endswith(' OR'):
                line = line[:-3].rstrip()
            if not line:
                continue
            match = _CLAUSE_LINE.match(line)
            if not match:
                raise ValueError(f"line {line_number}: cannot parse query clause {line!r}")
            raw_boost = match.group('boost')
            boost = float(raw_boost) if '.' in raw_boost else int(raw_boost)
            clauses.append(QueryClause(field_from_name(match.group('field')), match.group('term'), boost))
        return cls.from_clauses(clauses)

    def to_dict(self):
        return {'clauses': [clause.to_dict() for clause in self.clauses]}

    @classmethod
    def from_dict(cls, data):
        return cls.from_clauses(
            QueryClause(field_from_name(c['field']), c['term'], c['boost']) for c in data['clauses']
        )

@dataclass(frozen=True)
class ConfigFlags:
    wrapping: bool = True
    import_mining: bool = True
    entropy: bool = True
    tokenizing: bool = True
    scorer_mode: str = 'standard'

    def __post_init__(self):
        object.__setattr__(self, 'scorer_mode', scorer_mode_name(self.scorer_mode))

    @classmethod
    def from_techniques(cls, techniques):
        """Flags for a set of technique names; `ranking` selects the standard scorer."""
        techniques = set(techniques)
        unknown = techniques - set(TECHNIQUES)
        if unknown:
            raise ValueError(f"unknown techniques: {sorted(unknown)}")
        return cls(
            wrapping='wrapping' in techniques,
            import_mining='import_mining' in techniques,
            entropy='entropy' in techniques,
            tokenizing='tokenizing' in techniques,
            scorer_mode='standard' if 'ranking' in techniques else 'paper_eq2',
        )

    def to_dict(self):
        return {'wrapping': self.wrapping, 'import_mining': self.import_mining, 'entropy': self.entropy,
                'tokenizing': self.tokenizing, 'scorer_mode': self.scorer_mode}

@dataclass(frozen=True)
class TokenizerOptions:
    tld_prefixes: frozenset = field(default=DEFAULT_TLD_PREFIXES)
    generic_segments: frozenset = field(default=DEFAULT_GENERIC_SEGMENTS)
    title_boost: float = 4
    text_boost: float = 1.4

# ~~~ boosting ~~~

def entropy_scores(context_terms):
    """Each term's share -p ln p of the context's entropy; the values sum to H."""
    counts = context_terms if isinstance(context_terms, Counter) else Counter(context_terms)
    total = sum(counts.values())
    if not total:
        return {}
    scores = {}
    for term, count in counts.items():
        p = count / total
        scores[term] = -p * math.log(p)
    return scores

def rank_terms(scores, terms=None):
    """Terms by score descending, ties lexicographic."""
    terms = scores.keys() if terms is None else terms
    return sorted(terms, key=lambda term: (-scores.get(term, 0.0), term))

def assign_quartile_boosts(ranked_terms):
    """Rank r of n gets boost 4 - floor(4r/n): the four quarters get 4, 3, 2, 1."""
    n = len(ranked_terms)
    return {term: 4 - (4 * r) // n for r, term in enumerate(ranked_terms)}

# ~~~ tokenizing ~~~

def import_segments(name, options=None):
    options = options or TokenizerOptions()
    parts = name.split('.')
    if parts and parts[-1][:1].isupper():
        parts = parts[:-1]
    if parts and parts[0].lower() in options.tld_prefixes:
        parts = parts[1:]
    return [part.lower() for part in parts if part and part.lower() not in options.generic_segments]

def tokenize_imports(imports, options=None):
    """Package segments of the imports as title/answer/question clauses."""
    options = options or TokenizerOptions()
    segments = []
    for name in sorted(imports):
        for segment in import_segments(name, options):
            if segment not in segments:
                segments.append(segment)
    clauses = []
    for segment in segments:
        clauses.append(QueryClause(FieldId.TITLE, segment, options.title_boost))
        clauses.append(QueryClause(FieldId.ANSWER, segment, options.text_boost))
        clauses.append(QueryClause(FieldId.QUESTION, segment, options.text_boost))
    return clauses

# ~~~ query construction ~~~

def build_query(context_source, flags=None, tokenizer_options=None):
    """
    Query for a piece of context code: one clause per facet term on its code
    field, entropy-quartile boosted when `flags.entropy`, plus the tokenized
    import segments on the text fields when `flags.tokenizing`.
    """
    flags = flags or ConfigFlags()
    facets, outcome = parse_facets(context_source or '', flags.wrapping)
    if facets.is_empty():
        logger.warning("Context code produced no facets, query is empty")
        return Query()

    boosts = None
    if flags.entropy:
        scores = entropy_scores(term_occurrences(context_source))
        terms = set()
        for facet_name in FACET_FIELDS:
            terms.update(getattr(facets, facet_name))
        boosts = assign_quartile_boosts(rank_terms(scores, terms))

    clauses = []
    for facet_name, field_id in FACET_FIELDS.items():
        for term in getattr(facets, facet_name):
            clauses.append(QueryClause(field_id, term, boosts[term] if boosts else 1.0))
    if flags.tokenizing:
        clauses.extend(tokenize_imports(facets.imports, tokenizer_options))

    query = Query.from_clauses(clauses)
    logger.debug(f"Built query with {len(query)} clauses (parse mode {outcome.mode_used.name})")
    return query
