# text_analysis.py
# ~~~~~~~~~~~~~~~~
# analyzer for the three textual fields (title, question, answer)

import re
import logging
from dataclasses import dataclass, field
from functools import lru_cache

logger = logging.getLogger(__name__)

# classic English stop set plus pronouns and auxiliaries; question words
# ("how", "why") and verbs ("add", "use") stay searchable
DEFAULT_STOPWORDS = frozenset("""
    a an and are as at be but by for if in into is it no not of on or such
    that the their then there these they this to was will with
    from has have had he her his i its me my our she so we were what when
    which who would you your been
""".split())

_TOKEN_PATTERN = re.compile(r"[^\W_]+")

@dataclass(frozen=True)
class AnalyzerOptions:
    stemming: bool = False
    stopwords: frozenset = field(default=DEFAULT_STOPWORDS)

    def to_dict(self):
        return {'stemming': self.stemming, 'stopwords': sorted(self.stopwords)}

    @classmethod
    def from_dict(cls, data):
        return cls(stemming=bool(data.get('stemming', False)),
                   stopwords=frozenset(data.get('stopwords', DEFAULT_STOPWORDS)))

@lru_cache(maxsize=1)
def _porter_stemmer():
    # nltk is only needed when stemming is switched on
    from nltk.stem import PorterStemmer
    return PorterStemmer()

def normalize_term(term, options=None):
    """Apply the token-level part of the analyzer (stemming) to one query term."""
    if options is not None and options.stemming:
        return _porter_stemmer().stem(term)
    return term

def analyze_text(text, options=None):
    """
    Lowercase, split on non-alphanumeric runs, drop tokens shorter than two
    characters and stopwords; optionally Porter-stem what remains.
    """
    if not text:
        return []
    options = options or AnalyzerOptions()
    tokens = [
        token for token in _TOKEN_PATTERN.findall(text.lower())
        if len(token) >= 2 and token not in options.stopwords
    ]
    if options.stemming:
        stemmer = _porter_stemmer()
        tokens = [stemmer.stem(token) for token in tokens]
    return tokens
