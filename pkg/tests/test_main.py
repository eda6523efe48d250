import json
import logging

import pytest
from click.testing import CliRunner

from config_loader import ConfigLoader
from main import cli


@pytest.fixture(autouse=True)
def fresh_loader():
    ConfigLoader.reset()
    yield
    ConfigLoader.reset()
    # handlers installed by the command point at the runner's captured streams
    for handler in list(logging.getLogger().handlers):
        logging.getLogger().removeHandler(handler)


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def store(tmp_path, runner, corpus_dump):
    path = tmp_path / 'posts.jsonl'
    result = runner.invoke(cli, ['ingest', str(corpus_dump), str(path)])
    assert result.exit_code == 0, result.stderr
    return path


def _index(runner, store, out_dir, *flags, table=None):
    args = ['index', str(store), str(out_dir), *flags]
    if table:
        args += ['--table', str(table)]
    result = runner.invoke(cli, args)
    assert result.exit_code == 0, result.stderr
    return json.loads(result.stdout)


def test_ingest_reports_counts(tmp_path, runner, mini_dump):
    out = tmp_path / 'posts.jsonl'
    result = runner.invoke(cli, ['ingest', str(mini_dump), str(out)])
    assert result.exit_code == 0
    payload = json.loads(result.stdout)
    assert payload['kept'] == 4
    assert payload['rejections'] == {'no_accept': 3, 'no_code': 2, 'no_java': 1}
    assert 'kept 4 / 10 questions' in result.stderr
    assert len(out.read_text(encoding='utf-8').splitlines()) == 4


def test_ingest_missing_dump_exits_2(tmp_path, runner):
    result = runner.invoke(cli, ['ingest', str(tmp_path / 'none.xml'), str(tmp_path / 'out.jsonl')])
    assert result.exit_code == 2
    assert 'dump not found' in result.stderr
    assert result.stdout == ''


def test_index_reports_nine_fields(tmp_path, runner, store, canonical_table_path):
    payload = _index(runner, store, tmp_path / 'index', table=canonical_table_path)
    assert payload['fields'] == 9
    assert payload['documents'] == 30
    assert payload['stats']['deduced_imports'] > 0
    assert (tmp_path / 'index' / 'manifest.json').is_file()


def test_query_ranks_camel_post_first(tmp_path, runner, store, canonical_table_path, fixtures_dir):
    index_dir = tmp_path / 'index'
    _index(runner, store, index_dir, table=canonical_table_path)
    code = fixtures_dir / 'listings' / 'listing1.java'
    result = runner.invoke(cli, ['query', str(index_dir), str(code), '--configuration', 'F', '--explain'])
    assert result.exit_code == 0, result.stderr
    payload = json.loads(result.stdout)
    assert payload['results'][0]['doc_id'] == 1000
    assert payload['results'][0]['rank'] == 1
    assert len(payload['results']) == 5
    assert payload['explain']['doc_id'] == 1000
    assert 'Title: apache^4' in result.stderr.splitlines()


def test_flat_query_misses_camel_post(tmp_path, runner, store, fixtures_dir):
    index_dir = tmp_path / 'flat'
    _index(runner, store, index_dir, '--no-wrapping', '--no-import-mining')
    code = fixtures_dir / 'listings' / 'listing1.java'
    result = runner.invoke(cli, ['query', str(index_dir), str(code), '--configuration', 'A'])
    assert result.exit_code == 0, result.stderr
    payload = json.loads(result.stdout)
    assert payload['flags']['scorer_mode'] == 'paper_eq2'
    assert payload['results'][0]['doc_id'] != 1000


def test_query_without_facets_warns(tmp_path, runner, store):
    index_dir = tmp_path / 'index'
    _index(runner, store, index_dir, '--no-import-mining')
    code = tmp_path / 'empty.java'
    code.write_text('/* nothing here */\n', encoding='utf-8')
    result = runner.invoke(cli, ['query', str(index_dir), str(code)])
    assert result.exit_code == 0
    payload = json.loads(result.stdout)
    assert payload['results'] == []
    assert payload['warnings'][0]['warning'] == 'empty query'


def test_query_missing_index_exits_2(tmp_path, runner, fixtures_dir):
    code = fixtures_dir / 'listings' / 'listing1.java'
    result = runner.invoke(cli, ['query', str(tmp_path), str(code)])
    assert result.exit_code == 2
    assert 'missing manifest' in result.stderr


def test_eval_with_unlabeled_pairs_exits_3(tmp_path, runner, store, canonical_table_path, fixtures_dir):
    result = runner.invoke(cli, [
        'eval', str(store), str(fixtures_dir / 'queries'), str(fixtures_dir / 'labels.csv'),
        '--table', str(canonical_table_path), '--configurations', 'A,F',
    ])
    assert result.exit_code == 3
    assert 'have no label' in result.stderr
    assert 'jdbc_query:2050' in result.stderr


def test_eval_writes_report(tmp_path, runner, store, canonical_table_path, fixtures_dir):
    queries = tmp_path / 'queries'
    queries.mkdir()
    (queries / 'jdt_parser.java').write_text(
        (fixtures_dir / 'queries' / 'jdt_parser.java').read_text(encoding='utf-8'), encoding='utf-8')
    # label every post so coverage is complete for any ranking
    labels = tmp_path / 'labels.csv'
    rows = ['query_id,post_id,rank,score']
    for line in store.read_text(encoding='utf-8').splitlines():
        post_id = json.loads(line)['id']
        rows.append(f"jdt_parser,{post_id},1,{4 if post_id == 1200 else 0}")
    labels.write_text('\n'.join(rows) + '\n', encoding='utf-8')

    out = tmp_path / 'report.json'
    result = runner.invoke(cli, [
        'eval', str(store), str(queries), str(labels), '--table', str(canonical_table_path),
        '--configurations', 'B,F', '--out', str(out), '--results-dir', str(tmp_path / 'results'),
    ])
    assert result.exit_code == 0, result.stderr
    report = json.loads(result.stdout)
    assert report['configurations']['F']['success_rate'] == 1.0
    assert report['configurations']['F']['per_query']['jdt_parser'][0] == 4
    assert report['comparisons'][0]['a'] == 'B'
    assert json.loads(out.read_text(encoding='utf-8')) == report
    assert (tmp_path / 'results' / 'F.jsonl').is_file()


def test_bad_config_overlay_exits_3(tmp_path, runner, mini_dump):
    overlay = tmp_path / 'bad.ini'
    overlay.write_text('[Scoring]\nk9 = 1\n', encoding='utf-8')
    result = runner.invoke(cli, ['--config', str(overlay), 'ingest', str(mini_dump), str(tmp_path / 'o.jsonl')])
    assert result.exit_code == 3
    assert 'unknown key' in result.stderr


def test_version_mentions_index_format(runner):
    result = runner.invoke(cli, ['--version'])
    assert result.exit_code == 0
    assert '0.2.0' in result.stdout
    assert 'index format 1' in result.stdout


def test_query_uses_scorer_mode_saved_with_index(tmp_path, runner, store, fixtures_dir):
    index_dir = tmp_path / 'index'
    _index(runner, store, index_dir, '--no-import-mining', '--scorer-mode', 'saturation')
    manifest = json.loads((index_dir / 'manifest.json').read_text(encoding='utf-8'))
    assert manifest['scoring']['scorer_mode'] == 'paper_eq2'

    code = fixtures_dir / 'listings' / 'listing1.java'
    saved = json.loads(runner.invoke(cli, ['query', str(index_dir), str(code)]).stdout)
    assert saved['flags']['scorer_mode'] == 'paper_eq2'
    # every saturated clause weight stays below 1, so a hit scores below the boost total
    boost_total = sum(clause['boost'] for clause in saved['query']['clauses'])
    assert all(hit['score'] < boost_total for hit in saved['results'])

    overridden = json.loads(runner.invoke(cli, ['query', str(index_dir), str(code), '--scorer-mode', 'standard']).stdout)
    assert overridden['flags']['scorer_mode'] == 'standard'
    assert overridden['results'][0]['score'] != saved['results'][0]['score']


def test_index_accepts_spelled_out_scorer_mode(tmp_path, runner, store):
    payload = _index(runner, store, tmp_path / 'index', '--no-import-mining', '--scorer-mode', 'paper_eq2')
    assert payload['documents'] == 30
