# main.py
# ~~~~~~~
# code-aware Q&A post recommender: ingest, index, query and evaluate

# version of this program
version_number = "0.2.0"

import os
import sys
import json
import logging
from dataclasses import replace
from pathlib import Path

import click

from codeparse import load_canonical_table
from config_loader import ConfigLoader
from evaluation import IndexCache, compare, load_labels, run_configuration, write_histogram_tsv, write_results
from index import INDEX_FORMAT_VERSION, SCORER_MODE_ALIASES, SCORER_MODES, Index, build_index
from ingest import IngestSummary, ingest_posts, load_posts, open_dump, store_posts
from query import build_query
from utils.errors import InputError, ValidationError
from utils.utils import format_contributions, print_startup_message

logger = logging.getLogger(__name__)

LOG_FORMAT = '[%(asctime)s] %(name)s - %(levelname)s - %(message)s'

def emit(payload):
    """Machine-readable payload on stdout."""
    click.echo(json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False))

def _require_path(value, what):
    if not value:
        raise InputError(f"no {what} given (argument or [Paths] setting)")
    return value

def _load_table(path, run_config, explicit):
    """Canonical table for import mining; a missing default table disables mining."""
    if path and (explicit or os.path.isfile(path)):
        return load_canonical_table(path, run_config.table_top_n)
    logger.warning("No canonical table available, import mining is disabled")
    return None

class RecommenderGroup(click.Group):
    """Maps the two error roots to their exit codes."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (InputError, ValidationError) as e:
            logger.error(str(e))
            sys.stderr.flush()
            sys.exit(e.exit_code)

@click.group(cls=RecommenderGroup)
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), help='INI file layered over config/config.ini.')
@click.option('--jobs', default=1, show_default=True, type=click.IntRange(min=1), help='Worker parallelism cap.')
@click.option('--seed', default=None, type=int, help='Reserved; the pipeline has no randomness.')
@click.option('--verbose', '-v', is_flag=True, help='Debug logging.')
@click.version_option(version=version_number, message=f"%(prog)s %(version)s (index format {INDEX_FORMAT_VERSION})")
@click.pass_context
def cli(ctx, config_path, jobs, seed, verbose):
    logging.basicConfig(format=LOG_FORMAT, level=logging.DEBUG if verbose else logging.INFO,
                        stream=sys.stderr, force=True)
    ConfigLoader.reset()
    ConfigLoader.get_config()
    if config_path:
        ConfigLoader.load_overlay(config_path)
    run_config = ConfigLoader.get_run_config()
    if not verbose:
        logging.getLogger().setLevel(run_config.log_level)
    if seed is not None:
        logger.debug(f"Seed {seed} accepted (unused)")
    print_startup_message(version_number, ctx.invoked_subcommand)
    ctx.obj = {'config': run_config, 'jobs': jobs}

@cli.command()
@click.argument('dump', required=False)
@click.argument('out_store', required=False)
@click.option('--grouping', type=click.Choice(['memory', 'sorted']), default=None, help='Answer grouping strategy.')
@click.pass_obj
def ingest(obj, dump, out_store, grouping):
    """Filter a Posts.xml dump (plain, .bz2 or .gz) into a post store."""
    run_config = obj['config']
    dump = _require_path(dump or run_config.paths.dump, 'dump')
    out_store = _require_path(out_store or run_config.paths.post_store, 'output post store')
    summary = IngestSummary()
    with open_dump(dump) as stream:
        posts = ingest_posts(stream, grouping or run_config.grouping, run_config.required_tag,
                             summary, run_config.progress_interval)
        store_posts(posts, out_store)
    click.echo(f"kept {summary.kept} / {summary.questions} questions", err=True)
    emit({'store': str(out_store), **summary.to_dict()})

@cli.command()
@click.argument('store', required=False)
@click.argument('out_dir', required=False)
@click.option('--table', type=click.Path(dir_okay=False), default=None, help='Canonical-name TSV.')
@click.option('--wrapping/--no-wrapping', default=None)
@click.option('--import-mining/--no-import-mining', default=None)
@click.option('--stemming/--no-stemming', default=None)
@click.option('--k1', type=float, default=None)
@click.option('--b', type=float, default=None)
@click.option('--scorer-mode', type=click.Choice(SCORER_MODES + tuple(SCORER_MODE_ALIASES)), default=None)
@click.pass_obj
def index(obj, store, out_dir, table, wrapping, import_mining, stemming, k1, b, scorer_mode):
    """Build and persist the nine-field index of a post store."""
    run_config = obj['config'].with_flags(wrapping=wrapping, import_mining=import_mining, scorer_mode=scorer_mode)
    if stemming is not None:
        run_config = replace(run_config, analyzer=replace(run_config.analyzer, stemming=stemming))
    if k1 is not None or b is not None:
        run_config = replace(run_config, k1=run_config.k1 if k1 is None else k1, b=run_config.b if b is None else b)
    store = _require_path(store or run_config.paths.post_store, 'post store')
    out_dir = _require_path(out_dir or run_config.paths.index_dir, 'index directory')

    canonical_table = None
    if run_config.flags.import_mining:
        canonical_table = _load_table(table or run_config.paths.canonical_table, run_config, explicit=bool(table))
        if canonical_table is None:
            run_config = run_config.with_flags(import_mining=False)

    try:
        scoring = run_config.scoring
    except ValueError as e:
        raise ValidationError(str(e)) from e
    built = build_index(load_posts(store), canonical_table, run_config.index_options(), scoring,
                        jobs=obj['jobs'], progress_interval=run_config.progress_interval)
    built.persist(out_dir, run_config=run_config.to_dict())
    emit({
        'index_dir': str(out_dir),
        'format_version': INDEX_FORMAT_VERSION,
        'fields': len(built.field_term_counts()),
        'documents': built.doc_count,
        'terms': built.term_count,
        'field_terms': built.field_term_counts(),
        'stats': built.stats.to_dict(),
    })

@cli.command()
@click.argument('index_dir')
@click.argument('code_file')
@click.option('--top-n', type=click.IntRange(min=1), default=None)
@click.option('--configuration', 'configuration_id', default=None, help='Use the flags of an evaluation configuration.')
@click.option('--entropy/--no-entropy', default=None)
@click.option('--tokenizing/--no-tokenizing', default=None)
@click.option('--wrapping/--no-wrapping', default=None)
@click.option('--scorer-mode', type=click.Choice(SCORER_MODES + tuple(SCORER_MODE_ALIASES)), default=None)
@click.option('--explain', is_flag=True, help='Print the query and the top hit score breakdown to stderr.')
@click.pass_obj
def query(obj, index_dir, code_file, top_n, configuration_id, entropy, tokenizing, wrapping, scorer_mode, explain):
    """Recommend posts for the context code in CODE_FILE."""
    run_config = obj['config']
    if configuration_id:
        run_config = replace(run_config, flags=run_config.configuration(configuration_id).flags)
    run_config = run_config.with_flags(entropy=entropy, tokenizing=tokenizing, wrapping=wrapping,
                                       scorer_mode=scorer_mode)
    index_dir = _require_path(index_dir or run_config.paths.index_dir, 'index directory')
    top_n = top_n or run_config.top_n

    opened = Index.open(index_dir)
    if scorer_mode is None and not configuration_id:
        # the scorer mode saved with the index applies unless one is requested
        run_config = run_config.with_flags(scorer_mode=opened.scoring.scorer_mode)
    try:
        source = Path(code_file).read_text(encoding='utf-8')
    except (OSError, UnicodeDecodeError) as e:
        raise InputError(f"cannot read code file {code_file}: {e}") from e

    built_query = build_query(source, run_config.flags, run_config.tokenizer)
    scoring = replace(opened.scoring, scorer_mode=run_config.flags.scorer_mode)
    payload = {
        'configuration': configuration_id,
        'flags': run_config.flags.to_dict(),
        'index_format_version': INDEX_FORMAT_VERSION,
        'query': built_query.to_dict(),
        'results': [],
        'warnings': [],
    }
    if built_query.is_empty():
        payload['warnings'].append({'code_file': str(code_file), 'warning': 'empty query'})
    else:
        hits = opened.search(built_query, top_n, scoring)
        payload['results'] = [{'rank': rank, **hit.to_dict()} for rank, hit in enumerate(hits, 1)]
        if explain:
            click.echo(built_query.to_text(), err=True)
            if hits:
                contributions = opened.explain(built_query, hits[0].doc_id, scoring)
                click.echo(f"top hit {hits[0].doc_id}:", err=True)
                click.echo(format_contributions(contributions), err=True)
                payload['explain'] = {
                    'doc_id': hits[0].doc_id,
                    'contributions': [{**clause.to_dict(), 'contribution': value}
                                      for clause, value in contributions],
                }
    emit(payload)

@cli.command(name='eval')
@click.argument('store', required=False)
@click.argument('queries_dir', required=False)
@click.argument('labels', required=False)
@click.option('--table', type=click.Path(dir_okay=False), default=None, help='Canonical-name TSV.')
@click.option('--configurations', default=None, help='Comma-separated configuration ids (default: all).')
@click.option('--top-n', type=click.IntRange(min=1), default=None)
@click.option('--results-dir', type=click.Path(file_okay=False), default=None)
@click.option('--out', type=click.Path(dir_okay=False), default=None, help='Also write the report here.')
@click.option('--histogram-tsv', type=click.Path(dir_okay=False), default=None)
@click.option('--exclude-empty', is_flag=True, help='Drop queries any configuration left unanswered.')
@click.pass_obj
def evaluate(obj, store, queries_dir, labels, table, configurations, top_n, results_dir, out, histogram_tsv,
             exclude_empty):
    """Run evaluation configurations over query files and compare them."""
    run_config = obj['config']
    store = _require_path(store or run_config.paths.post_store, 'post store')
    queries_dir = _require_path(queries_dir or run_config.paths.queries_dir, 'queries directory')
    labels_path = _require_path(labels or run_config.paths.labels, 'labels file')
    results_dir = results_dir or run_config.paths.results_dir
    top_n = top_n or run_config.top_n

    if configurations:
        selected = [run_config.configuration(c.strip()) for c in configurations.split(',') if c.strip()]
    else:
        selected = list(run_config.configurations)
    if not selected:
        raise ValidationError("no evaluation configurations defined")
    if not Path(queries_dir).is_dir():
        raise InputError(f"queries directory not found: {queries_dir}")

    canonical_table = None
    if any(c.flags.import_mining for c in selected):
        canonical_table = _load_table(table or run_config.paths.canonical_table, run_config, explicit=True)

    cache = IndexCache(load_posts(store), canonical_table, run_config.analyzer, run_config.k1, run_config.b,
                       jobs=obj['jobs'])
    queries = sorted(Path(queries_dir).glob('*.java'))
    label_set = load_labels(labels_path)

    results = {}
    for configuration in selected:
        records = run_configuration(configuration, cache, queries, top_n, run_config.tokenizer, obj['jobs'])
        results[configuration.id] = records
        if results_dir:
            Path(results_dir).mkdir(parents=True, exist_ok=True)
            write_results(records, Path(results_dir) / f"{configuration.id}.jsonl")

    report = compare(results, label_set, top_n, exclude_empty)
    payload = {**report.to_dict(), 'config': run_config.to_dict(), 'index_format_version': INDEX_FORMAT_VERSION}
    if out:
        with open(out, 'w', encoding='utf-8', newline='\n') as handle:
            handle.write(json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + '\n')
    if histogram_tsv:
        write_histogram_tsv(report, histogram_tsv)
    emit(payload)

if __name__ == '__main__':
    cli()
