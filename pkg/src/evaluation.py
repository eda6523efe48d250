# evaluation.py
# ~~~~~~~~~~~~~
# configuration runs, relevance metrics and the rank-sum significance test

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from math import comb, sqrt
from pathlib import Path

import numpy as np
from scipy.stats import norm, rankdata

from index import build_index, IndexOptions, ScoringParams
from query import build_query, ConfigFlags
from utils.errors import InputError, ValidationError

logger = logging.getLogger(__name__)

SCORE_VALUES = (0, 1, 2, 3, 4)
HIT_SCORES = frozenset({3, 4})
LABEL_HEADER = ('query_id', 'post_id', 'rank', 'score')
EXACT_LIMIT = 20

class EvaluationError(ValidationError):
    """Metric or test requested on an empty evaluation set."""
    pass

class LabelCoverageError(ValidationError):
    """Returned (query, post) pairs without a confidence label."""

    def __init__(self, pairs):
        listed = ', '.join(f"{query_id}:{post_id}" for query_id, post_id in pairs)
        super().__init__(f"{len(pairs)} returned pairs have no label: {listed}")
        self.pairs = pairs

@dataclass(frozen=True)
class EvalLabel:
    query_id: str
    post_id: int
    rank: int
    score: int

@dataclass(frozen=True)
class Configuration:
    id: str
    flags: ConfigFlags

# ~~~ labels ~~~

def load_labels(path):
    """Read a `query_id,post_id,rank,score` CSV into EvalLabels."""
    try:
        handle = open(path, 'r', encoding='utf-8', newline='')
    except OSError as e:
        raise InputError(f"cannot read labels {path}: {e}") from e
    labels = []
    seen = {}
    with handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != LABEL_HEADER:
            raise InputError(f"labels {path} must have header {','.join(LABEL_HEADER)}")
        for row in reader:
            line = reader.line_num
            try:
                label = EvalLabel(row['query_id'].strip(), int(row['post_id']), int(row['rank']), int(row['score']))
            except (TypeError, ValueError) as e:
                raise InputError(f"labels {path} line {line}: {e}") from e
            if label.score not in SCORE_VALUES or label.rank < 1 or not label.query_id:
                raise InputError(f"labels {path} line {line}: score must be 0-4 and rank >= 1")
            key = (label.query_id, label.post_id)
            if key in seen and seen[key] != label.score:
                raise ValidationError(f"labels {path} line {line}: conflicting scores for {key[0]}:{key[1]}")
            seen[key] = label.score
            labels.append(label)
    logger.info(f"Loaded {len(labels)} labels from {path}")
    return labels

def group_labels(labels, n=5):
    """Scores per query in rank order, padded with 0 up to `n` slots."""
    by_query = {}
    for label in sorted(labels, key=lambda l: (l.query_id, l.rank)):
        by_query.setdefault(label.query_id, []).append(label.score)
    return {query_id: (scores + [0] * n)[:n] for query_id, scores in by_query.items()}

# ~~~ metrics ~~~

def _require(scores_by_query):
    if not scores_by_query:
        raise EvaluationError("empty evaluation set")

def success_rate(scores_by_query, n=5):
    """Fraction of queries with at least one top-n slot scored 3 or 4."""
    _require(scores_by_query)
    hits = sum(1 for scores in scores_by_query.values() if any(s in HIT_SCORES for s in list(scores)[:n]))
    return hits / len(scores_by_query)

def precision_at_n(scores_by_query, n=5):
    """Fraction of all n x |queries| slots scored 3 or 4."""
    _require(scores_by_query)
    hits = sum(sum(1 for s in list(scores)[:n] if s in HIT_SCORES) for scores in scores_by_query.values())
    return hits / (n * len(scores_by_query))

def _exact_sum_distribution(doubled_ranks, n_a):
    """Number of n_a-subsets of the (doubled, integral) ranks per subset sum."""
    max_sum = int(doubled_ranks.sum())
    counts = np.zeros((n_a + 1, max_sum + 1), dtype=np.int64)
    counts[0, 0] = 1
    for taken, rank in enumerate(doubled_ranks, 1):
        for k in range(min(taken, n_a), 0, -1):
            counts[k, rank:] += counts[k - 1, :max_sum + 1 - rank]
    return counts[n_a]

def wilcoxon_rank_sum(sample_a, sample_b):
    """
    Two-sided Wilcoxon rank-sum p-value with midranks for ties. Exact over
    all rank assignments when the pooled size is at most EXACT_LIMIT,
    otherwise the normal approximation with tie and continuity correction.
    """
    a = np.asarray(list(sample_a), dtype=float)
    b = np.asarray(list(sample_b), dtype=float)
    if a.size == 0 or b.size == 0:
        raise EvaluationError("rank-sum test needs two non-empty samples")
    n_a, n_b = a.size, b.size
    total = n_a + n_b
    ranks = rankdata(np.concatenate([a, b]))
    observed = ranks[:n_a].sum()
    expected = n_a * (total + 1) / 2

    if total <= EXACT_LIMIT:
        # midranks are multiples of 1/2, so doubled ranks are integers
        doubled = np.rint(ranks * 2).astype(np.int64)
        distribution = _exact_sum_distribution(doubled, n_a)
        deviation = abs(int(doubled[:n_a].sum()) - n_a * (total + 1))
        sums = np.arange(distribution.size)
        extreme = distribution[np.abs(sums - n_a * (total + 1)) >= deviation].sum()
        p = int(extreme) / comb(total, n_a)
    else:
        _values, ties = np.unique(ranks, return_counts=True)
        tie_term = float((ties ** 3 - ties).sum()) / (total * (total - 1))
        variance = n_a * n_b / 12 * ((total + 1) - tie_term)
        if variance <= 0:
            return 1.0
        z = max(abs(observed - expected) - 0.5, 0.0) / sqrt(variance)
        p = 2 * norm.sf(z)
    return float(min(max(p, np.finfo(float).tiny), 1.0))

# ~~~ configuration runs ~~~

class IndexCache:
    """Indexes keyed by their index-side flags, built once per distinct key."""

    def __init__(self, posts, table=None, analyzer=None, k1=2.0, b=0.75, jobs=1):
        self.posts = list(posts)
        self.table = table
        self.analyzer = analyzer
        self.k1 = k1
        self.b = b
        self.jobs = jobs
        self._indexes = {}

    def get(self, flags):
        key = (flags.wrapping, flags.import_mining)
        if key not in self._indexes:
            if flags.import_mining and self.table is None:
                raise InputError("import mining needs a canonical table (--table)")
            options = IndexOptions(wrapping=flags.wrapping, import_mining=flags.import_mining,
                                   **({'analyzer': self.analyzer} if self.analyzer else {}))
            logger.info(f"Building index for wrapping={key[0]}, import_mining={key[1]}")
            self._indexes[key] = build_index(self.posts, self.table, options,
                                             ScoringParams(self.k1, self.b), jobs=self.jobs)
        return self._indexes[key]

    def scoring_for(self, flags):
        return ScoringParams(self.k1, self.b, flags.scorer_mode)

def _query_records(path, configuration, index, scoring, n, tokenizer_options):
    query_id = Path(path).stem
    try:
        source = Path(path).read_text(encoding='utf-8')
    except (OSError, UnicodeDecodeError) as e:
        logger.warning(f"Skipping unreadable query {path}: {e}")
        return [{'query_id': query_id, 'configuration': configuration.id, 'error': str(e)}]
    query = build_query(source, configuration.flags, tokenizer_options)
    if query.is_empty():
        return [{'query_id': query_id, 'configuration': configuration.id, 'warning': 'empty query'}]
    return [
        {'query_id': query_id, 'configuration': configuration.id, 'rank': rank,
         'post_id': hit.doc_id, 'score': hit.score, 'title': hit.title}
        for rank, hit in enumerate(index.search(query, n, scoring), 1)
    ]

def run_configuration(configuration, cache, queries, n=5, tokenizer_options=None, jobs=1):
    """
    Run every query file under one configuration and return the result
    records in query-id order. A query that cannot be read yields an error
    record instead of stopping the run.
    """
    index = cache.get(configuration.flags)
    scoring = cache.scoring_for(configuration.flags)
    paths = sorted(queries, key=lambda p: (Path(p).stem, str(p)))
    with ThreadPoolExecutor(max_workers=max(jobs or 1, 1)) as executor:
        batches = executor.map(
            lambda path: _query_records(path, configuration, index, scoring, n, tokenizer_options), paths
        )
        records = [record for batch in batches for record in batch]
    logger.info(f"Configuration {configuration.id}: {len(paths)} queries, {len(records)} records")
    return records

def write_results(records, path):
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + '\n')

def load_results(path):
    records = []
    with open(path, 'r', encoding='utf-8') as handle:
        for line in handle:
            if line.strip():
                records.append(json.loads(line))
    return records

# ~~~ comparison ~~~

@dataclass
class EvalReport:
    configurations: dict = field(default_factory=dict)
    comparisons: list = field(default_factory=list)
    queries: list = field(default_factory=list)

    def to_dict(self):
        report = {'configurations': self.configurations, 'queries': self.queries}
        if len(self.configurations) > 1:
            report['comparisons'] = self.comparisons
        return report

def _slot_scores(records, label_scores, queries, n, missing):
    slots = {query_id: [0] * n for query_id in queries}
    for record in records:
        if 'post_id' not in record or record['query_id'] not in slots or not 1 <= record['rank'] <= n:
            continue
        key = (record['query_id'], record['post_id'])
        if key not in label_scores:
            missing.add(key)
            continue
        slots[record['query_id']][record['rank'] - 1] = label_scores[key]
    return slots

def compare(results, labels, n=5, exclude_empty=False):
    """
    Metrics per configuration and pairwise rank-sum p-values over the
    confidence scores, per-query precision and per-query success.
    `results` maps configuration id to its result records.
    """
    label_scores = {(label.query_id, label.post_id): label.score for label in labels}
    queries = sorted({record['query_id'] for records in results.values() for record in records})
    missing = set()
    slots = {config_id: _slot_scores(records, label_scores, queries, n, missing)
             for config_id, records in results.items()}
    if missing:
        raise LabelCoverageError(sorted(missing))

    if exclude_empty:
        answered = {config_id: {r['query_id'] for r in records if 'post_id' in r}
                    for config_id, records in results.items()}
        queries = [q for q in queries if all(q in ids for ids in answered.values())]
        slots = {config_id: {q: per_query[q] for q in queries} for config_id, per_query in slots.items()}
    if not queries:
        raise EvaluationError("empty evaluation set")

    report = EvalReport(queries=queries)
    samples = {}
    for config_id in sorted(slots):
        per_query = slots[config_id]
        confidence = [score for q in queries for score in per_query[q]]
        precision = [sum(1 for s in per_query[q] if s in HIT_SCORES) / n for q in queries]
        success = [1 if any(s in HIT_SCORES for s in per_query[q]) else 0 for q in queries]
        samples[config_id] = (confidence, precision, success)
        report.configurations[config_id] = {
            'histogram': {str(v): confidence.count(v) for v in SCORE_VALUES},
            'success_rate': success_rate(per_query, n),
            'precision': precision_at_n(per_query, n),
            'per_query': {q: per_query[q] for q in queries},
        }

    for a, b in combinations(sorted(slots), 2):
        report.comparisons.append({
            'a': a,
            'b': b,
            'confidence_p': wilcoxon_rank_sum(samples[a][0], samples[b][0]),
            'precision_p': wilcoxon_rank_sum(samples[a][1], samples[b][1]),
            'success_p': wilcoxon_rank_sum(samples[a][2], samples[b][2]),
        })
    return report

def write_histogram_tsv(report, path):
    """`score<TAB>A<TAB>B...` rows for plotting the confidence distribution."""
    config_ids = sorted(report.configurations)
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        handle.write('\t'.join(['score'] + config_ids) + '\n')
        for value in SCORE_VALUES:
            counts = [str(report.configurations[c]['histogram'][str(value)]) for c in config_ids]
            handle.write('\t'.join([str(value)] + counts) + '\n')
