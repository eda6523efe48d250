# config_loader.py
# defaults from config/config.ini, an optional user file on top,
# and the typed RunConfig view the commands work with

import configparser
import os
import re
import logging
from dataclasses import dataclass, field, replace, asdict

from evaluation import Configuration
from index import ScoringParams, IndexOptions, scorer_mode_name
from query import ConfigFlags, TokenizerOptions, TECHNIQUES
from utils.errors import ConfigError, InputError
from utils.text_analysis import AnalyzerOptions, DEFAULT_STOPWORDS

logger = logging.getLogger(__name__)

CONFIGURATION_SECTION = re.compile(r'^Configuration (?P<id>[A-Za-z0-9_]+)$')

ALLOWED_KEYS = {
    'Paths': {'dump', 'post_store', 'index_dir', 'canonical_table', 'labels', 'queries_dir', 'results_dir'},
    'Techniques': {'wrapping', 'import_mining', 'entropy', 'tokenizing', 'scorer_mode'},
    'Scoring': {'k1', 'b'},
    'Search': {'top_n'},
    'Analyzer': {'stemming', 'stopwords', 'tld_prefixes', 'generic_segments', 'title_boost', 'text_boost'},
    'CanonicalTable': {'top_n'},
    'Ingest': {'grouping', 'required_tag'},
    'LoggingSettings': {'level', 'progressinterval'},
}
CONFIGURATION_KEYS = {'techniques'}
GROUPING_STRATEGIES = ('memory', 'sorted')

@dataclass(frozen=True)
class PathSettings:
    dump: str = None
    post_store: str = None
    index_dir: str = None
    canonical_table: str = None
    labels: str = None
    queries_dir: str = None
    results_dir: str = None

@dataclass(frozen=True)
class RunConfig:
    paths: PathSettings = field(default_factory=PathSettings)
    flags: ConfigFlags = field(default_factory=ConfigFlags)
    k1: float = 2.0
    b: float = 0.75
    top_n: int = 5
    analyzer: AnalyzerOptions = field(default_factory=AnalyzerOptions)
    tokenizer: TokenizerOptions = field(default_factory=TokenizerOptions)
    table_top_n: int = 10000
    grouping: str = 'memory'
    required_tag: str = 'java'
    log_level: str = 'INFO'
    progress_interval: int = 100000
    configurations: tuple = ()

    @property
    def scoring(self):
        return ScoringParams(self.k1, self.b, self.flags.scorer_mode)

    def index_options(self):
        return IndexOptions(self.flags.wrapping, self.flags.import_mining, self.analyzer)

    def configuration(self, config_id):
        for configuration in self.configurations:
            if configuration.id == config_id:
                return configuration
        raise ConfigError(f"unknown configuration {config_id!r}; known: "
                          f"{', '.join(c.id for c in self.configurations)}")

    def with_flags(self, **overrides):
        """Copy with the given ConfigFlags fields replaced (None values are ignored)."""
        overrides = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, flags=replace(self.flags, **overrides)) if overrides else self

    def to_dict(self):
        """Effective configuration for provenance in manifests and reports."""
        return {
            'paths': asdict(self.paths),
            'flags': self.flags.to_dict(),
            'scoring': {'k1': self.k1, 'b': self.b},
            'top_n': self.top_n,
            'analyzer': self.analyzer.to_dict(),
            'tokenizer': {
                'tld_prefixes': sorted(self.tokenizer.tld_prefixes),
                'generic_segments': sorted(self.tokenizer.generic_segments),
                'title_boost': self.tokenizer.title_boost,
                'text_boost': self.tokenizer.text_boost,
            },
            'canonical_table_top_n': self.table_top_n,
            'ingest': {'grouping': self.grouping, 'required_tag': self.required_tag},
            'configurations': {c.id: c.flags.to_dict() for c in self.configurations},
        }

class ConfigLoader:
    _instance = None
    _config = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super(ConfigLoader, cls).__new__(cls)
            cls._config = configparser.ConfigParser(interpolation=None)
            cls._config.optionxform = str
            base_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
            config_path = os.path.join(base_dir, 'config', 'config.ini')

            if os.path.exists(config_path):
                cls._merge(cls._read(config_path))
                logger.debug(f"Loaded config from {config_path}")
                for section in cls._config.sections():
                    logger.debug(f"Section [{section}]: {dict(cls._config[section])}")
            else:
                logger.warning(f"Config file not found at {config_path}")
        return cls._instance

    @classmethod
    def get_config(cls):
        if cls._config is None:
            cls()
        return cls._config

    @classmethod
    def reset(cls):
        cls._instance = None
        cls._config = None

    @staticmethod
    def _read(path):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path, 'r', encoding='utf-8') as handle:
                parser.read_file(handle)
        except configparser.Error as e:
            raise ConfigError(f"malformed config file {path}: {e}") from e
        _check_keys(parser, path)
        return parser

    @classmethod
    def _merge(cls, parser):
        for section in parser.sections():
            if not cls._config.has_section(section):
                cls._config.add_section(section)
            for key, value in parser.items(section):
                cls._config.set(section, key, value)

    @classmethod
    def load_overlay(cls, path):
        """Layer a user config file over the defaults."""
        cls.get_config()
        if not os.path.isfile(path):
            raise InputError(f"config file not found: {path}")
        cls._merge(cls._read(path))
        logger.info(f"Loaded config overlay from {path}")

    @classmethod
    def get_run_config(cls):
        return _run_config(cls.get_config())

def _check_keys(parser, path):
    for section in parser.sections():
        if CONFIGURATION_SECTION.match(section):
            allowed = CONFIGURATION_KEYS
        elif section in ALLOWED_KEYS:
            allowed = ALLOWED_KEYS[section]
        else:
            raise ConfigError(f"{path}: unknown section [{section}]")
        unknown = sorted(set(parser[section]) - allowed)
        if unknown:
            raise ConfigError(f"{path}: unknown key(s) in [{section}]: {', '.join(unknown)}")

def _split_list(value):
    return [item.strip() for item in value.split(',') if item.strip()]

def _number(value, name):
    try:
        return float(value) if '.' in value else int(value)
    except ValueError:
        raise ConfigError(f"{name} must be a number, got {value!r}") from None

def _get(config, section, key, fallback=None):
    value = config.get(section, key, fallback=fallback)
    if value is None:
        return fallback
    return value.strip()

def _get_bool(config, section, key, fallback):
    try:
        return config.getboolean(section, key, fallback=fallback)
    except ValueError:
        raise ConfigError(f"[{section}] {key} must be true or false") from None

def _get_int(config, section, key, fallback, minimum=None):
    try:
        value = config.getint(section, key, fallback=fallback)
    except ValueError:
        raise ConfigError(f"[{section}] {key} must be an integer") from None
    if minimum is not None and value < minimum:
        raise ConfigError(f"[{section}] {key} must be >= {minimum}, got {value}")
    return value

def _get_float(config, section, key, fallback):
    try:
        return config.getfloat(section, key, fallback=fallback)
    except ValueError:
        raise ConfigError(f"[{section}] {key} must be a number") from None

def _configurations(config):
    configurations = []
    for section in config.sections():
        match = CONFIGURATION_SECTION.match(section)
        if not match:
            continue
        techniques = _split_list(config.get(section, 'techniques', fallback=''))
        unknown = sorted(set(techniques) - set(TECHNIQUES))
        if unknown:
            raise ConfigError(f"[{section}] unknown techniques: {', '.join(unknown)}")
        configurations.append((match.group('id'), frozenset(techniques)))
    configurations.sort()
    # each configuration augments the previous one
    for (prev_id, prev), (next_id, current) in zip(configurations, configurations[1:]):
        if not prev <= current:
            raise ConfigError(f"configuration {next_id} drops techniques of {prev_id}: "
                              f"{', '.join(sorted(prev - current))}")
    return tuple(Configuration(config_id, ConfigFlags.from_techniques(t)) for config_id, t in configurations)

def _run_config(config):
    paths = PathSettings(**{
        key: (_get(config, 'Paths', key) or None) for key in sorted(ALLOWED_KEYS['Paths'])
    })

    try:
        scorer_mode = scorer_mode_name(_get(config, 'Techniques', 'scorer_mode', 'standard'))
    except ValueError as e:
        raise ConfigError(f"[Techniques] {e}") from None
    flags = ConfigFlags(
        wrapping=_get_bool(config, 'Techniques', 'wrapping', True),
        import_mining=_get_bool(config, 'Techniques', 'import_mining', True),
        entropy=_get_bool(config, 'Techniques', 'entropy', True),
        tokenizing=_get_bool(config, 'Techniques', 'tokenizing', True),
        scorer_mode=scorer_mode,
    )

    k1 = _get_float(config, 'Scoring', 'k1', 2.0)
    b = _get_float(config, 'Scoring', 'b', 0.75)
    if k1 < 0 or not 0 <= b <= 1:
        raise ConfigError(f"[Scoring] needs k1 >= 0 and 0 <= b <= 1, got k1={k1}, b={b}")

    stopwords = _get(config, 'Analyzer', 'stopwords', 'default')
    analyzer = AnalyzerOptions(
        stemming=_get_bool(config, 'Analyzer', 'stemming', False),
        stopwords=DEFAULT_STOPWORDS if stopwords == 'default' else frozenset(w.lower() for w in _split_list(stopwords)),
    )
    tokenizer = TokenizerOptions(
        tld_prefixes=frozenset(_split_list(_get(config, 'Analyzer', 'tld_prefixes', 'org, com, net, io, edu, gov'))),
        generic_segments=frozenset(_split_list(
            _get(config, 'Analyzer', 'generic_segments', 'impl, builder, core, api, util, internal, common'))),
        title_boost=_number(_get(config, 'Analyzer', 'title_boost', '4'), 'title_boost'),
        text_boost=_number(_get(config, 'Analyzer', 'text_boost', '1.4'), 'text_boost'),
    )
    if tokenizer.title_boost <= 0 or tokenizer.text_boost <= 0:
        raise ConfigError("[Analyzer] boosts must be positive")

    grouping = _get(config, 'Ingest', 'grouping', 'memory')
    if grouping not in GROUPING_STRATEGIES:
        raise ConfigError(f"[Ingest] grouping must be one of {', '.join(GROUPING_STRATEGIES)}")

    level = _get(config, 'LoggingSettings', 'level', 'INFO').upper()
    if level not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
        raise ConfigError(f"[LoggingSettings] unknown level {level!r}")

    return RunConfig(
        paths=paths,
        flags=flags,
        k1=k1,
        b=b,
        top_n=_get_int(config, 'Search', 'top_n', 5, minimum=1),
        analyzer=analyzer,
        tokenizer=tokenizer,
        table_top_n=_get_int(config, 'CanonicalTable', 'top_n', 10000, minimum=1),
        grouping=grouping,
        required_tag=_get(config, 'Ingest', 'required_tag', 'java').lower(),
        log_level=level,
        progress_interval=_get_int(config, 'LoggingSettings', 'progressinterval', 100000, minimum=0),
        configurations=_configurations(config),
    )
