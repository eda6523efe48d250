# conftest.py
# source modules are imported flat, the way `python src/main.py` sees them

import os
import sys
from pathlib import Path

import pytest

SRC_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'src')
if SRC_DIR not in sys.path:
    sys.path.insert(0, SRC_DIR)

FIXTURES = Path(__file__).parent / 'fixtures'

@pytest.fixture
def fixtures_dir():
    return FIXTURES

@pytest.fixture
def mini_dump():
    return FIXTURES / 'mini_dump.xml'

@pytest.fixture
def corpus_dump():
    return FIXTURES / 'corpus_dump.xml'

@pytest.fixture
def canonical_table_path():
    return FIXTURES / 'canonical_names.tsv'

@pytest.fixture
def listing():
    def read(name):
        return (FIXTURES / 'listings' / name).read_text(encoding='utf-8')
    return read

@pytest.fixture(scope='session')
def corpus_posts():
    from ingest import ingest_posts
    with open(FIXTURES / 'corpus_dump.xml', 'rb') as stream:
        return list(ingest_posts(stream))

@pytest.fixture(scope='session')
def canonical_table():
    from codeparse import load_canonical_table
    return load_canonical_table(FIXTURES / 'canonical_names.tsv')
