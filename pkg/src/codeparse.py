# codeparse.py
# ~~~~~~~~~~~~
# code facets from (possibly incomplete) Java snippets, class wrapping,
# and import deduction against a canonical class-name table

import re
import string
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property

import javalang
from javalang import tokenizer as jt

from utils.errors import InputError
from utils.levenshtein import levenshtein

logger = logging.getLogger(__name__)

IMPORT_NAME_PATTERN = re.compile(r'([A-Za-z_$][\w$]*\.)+[A-Za-z_$][\w$]*')
_PACKAGE_LINE = re.compile(r'^\s*package\s+[\w$.]+\s*;[^\n]*\n?', re.MULTILINE)

WRAPPER_CLASS = 'Fix'

PRIMITIVE_TYPES = frozenset({
    'boolean', 'byte', 'char', 'double', 'float', 'int', 'long', 'short', 'void',
})

# tokens allowed between the brackets of a generic type when scanning backwards
_GENERIC_CONTENT = frozenset({'.', ',', '?', '&', '[', ']', 'extends', 'super'})
_CLOSERS = {'>': 1, '>>': 2, '>>>': 3}
CLASS_KEYWORDS = frozenset({'class', 'interface', 'enum'})

class CanonicalTableError(InputError):
    """Malformed canonical-name table."""

    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line

class ParseMode(IntEnum):
    """Parser entry points, strictest first."""
    COMPILATION_UNIT = 0
    CLASS_BODY_DECLARATIONS = 1
    STATEMENTS = 2
    EXPRESSION = 3

@dataclass(frozen=True)
class CodeFacets:
    imports: frozenset = frozenset()
    method_declarations: frozenset = frozenset()
    method_invocations: frozenset = frozenset()
    variable_types: frozenset = frozenset()
    variable_declarations: frozenset = frozenset()
    class_instances: frozenset = frozenset()

    def is_empty(self):
        return not any(getattr(self, name) for name in FACET_NAMES)

    def with_imports(self, names):
        return CodeFacets(
            imports=self.imports | frozenset(names),
            method_declarations=self.method_declarations,
            method_invocations=self.method_invocations,
            variable_types=self.variable_types,
            variable_declarations=self.variable_declarations,
            class_instances=self.class_instances,
        )

FACET_NAMES = (
    'imports', 'method_declarations', 'method_invocations',
    'variable_types', 'variable_declarations', 'class_instances',
)

@dataclass(frozen=True)
class WrapOutcome:
    source: str
    mode_used: ParseMode
    wrapped: bool
    parsed: bool = True

# ~~~ wrapping and parse validation ~~~

def wrap_snippet(source, target_mode):
    """Enclose `source` verbatim in the synthetic wrapper for `target_mode`."""
    # a trailing line comment would swallow the closing braces
    body = source + '\n' if '//' in source.rsplit('\n', 1)[-1] else source
    if target_mode is ParseMode.CLASS_BODY_DECLARATIONS:
        return f"class {WRAPPER_CLASS} {{ {body} }}"
    if target_mode is ParseMode.STATEMENTS:
        return f"class {WRAPPER_CLASS} {{ void wrap() {{ {body} }} }}"
    if target_mode is ParseMode.EXPRESSION:
        return f"class {WRAPPER_CLASS} {{ void wrap() {{ Object v = ({body}); }} }}"
    raise ValueError(f"no wrapper for parse mode {target_mode!r}")

def _parses(source):
    try:
        javalang.parse.parse(source)
        return True
    except Exception:
        # javalang raises a mix of JavaSyntaxError, LexerError and
        # internal errors on truncated input
        return False

def _tokenize(source):
    tokens = []
    try:
        for token in jt.tokenize(source, ignore_errors=True):
            tokens.append(token)
    except Exception as e:
        logger.debug(f"Tokenizer stopped early: {e}")
    return tokens

# ~~~ token-level facet recognizer ~~~

def _is_identifier(token):
    return isinstance(token, jt.Identifier)

def _is_keyword(token, value):
    return isinstance(token, jt.Keyword) and token.value == value

def _value(tokens, i):
    return tokens[i].value if 0 <= i < len(tokens) else None

def _skip_past(tokens, i, value):
    """Index just after the next token equal to `value` (or end of stream)."""
    while i < len(tokens) and tokens[i].value != value:
        i += 1
    return i + 1

def _matching_close(tokens, i, opening='(', closing=')'):
    depth = 0
    while i < len(tokens):
        if tokens[i].value == opening:
            depth += 1
        elif tokens[i].value == closing:
            depth -= 1
            if depth == 0:
                return i
        i += 1
    return None

def _skip_generic_forward(tokens, i):
    """Index after a balanced `<...>` starting at i (i itself when no generic)."""
    if _value(tokens, i) != '<':
        return i
    depth = 0
    while i < len(tokens):
        value = tokens[i].value
        if value == '<':
            depth += 1
        elif value in _CLOSERS:
            depth -= _CLOSERS[value]
            if depth <= 0:
                return i + 1
        elif value in ('(', ')', ';', '{', '}'):
            return i
        i += 1
    return i

def _generic_open(tokens, j):
    """Index of the `<` matching the closer at j, or None if j does not end a generic."""
    depth = 0
    while j >= 0:
        token = tokens[j]
        value = token.value
        if value in _CLOSERS:
            depth += _CLOSERS[value]
        elif value == '<':
            depth -= 1
            if depth == 0:
                return j
        elif not (_is_identifier(token) or isinstance(token, jt.BasicType) or value in _GENERIC_CONTENT):
            return None
        j -= 1
    return None

def _type_before(tokens, j):
    """The type token ending at index j (skipping `[]` and generics), or None."""
    while _value(tokens, j) == ']' and _value(tokens, j - 1) == '[':
        j -= 2
    if _value(tokens, j) in _CLOSERS:
        opening = _generic_open(tokens, j)
        if opening is None:
            return None
        j = opening - 1
    if j < 0:
        return None
    token = tokens[j]
    if _is_identifier(token) or isinstance(token, jt.BasicType):
        return token.value
    return None

def _declares_type_position(tokens, i):
    """True if the token before a `name(` can end a return type or modifier list."""
    prev = tokens[i - 1] if i > 0 else None
    if prev is None:
        return False
    if _is_identifier(prev) or isinstance(prev, (jt.BasicType, jt.Modifier)):
        return True
    if _is_keyword(prev, 'void') or prev.value == ']':
        return True
    if prev.value in _CLOSERS:
        opening = _generic_open(tokens, i - 1)
        # `obj.<T>call(` is an invocation with explicit type arguments
        return opening is not None and _value(tokens, opening - 1) != '.'
    return False

def _has_return_type(tokens, i):
    prev = tokens[i - 1] if i > 0 else None
    return prev is not None and (_is_identifier(prev) or isinstance(prev, jt.BasicType)
                                 or _is_keyword(prev, 'void') or prev.value == ']')

def _followed_by_body(tokens, close):
    j = close + 1
    if _is_keyword(tokens[j] if j < len(tokens) else None, 'throws'):
        j += 1
        while j < len(tokens) and (_is_identifier(tokens[j]) or tokens[j].value in ('.', ',')):
            j += 1
    return _value(tokens, j) == '{'

def _read_import(tokens, i):
    """Collect the dotted name of the import statement whose `import` token is at i."""
    j = i + 1
    if _is_keyword(tokens[j] if j < len(tokens) else None, 'static'):
        j += 1
    parts = []
    wildcard = False
    while j < len(tokens) and tokens[j].value != ';':
        value = tokens[j].value
        if value == '*':
            wildcard = True
        elif value != '.':
            parts.append(value)
        j += 1
    name = '.'.join(parts)
    if wildcard or not IMPORT_NAME_PATTERN.fullmatch(name):
        return None, j + 1
    return name, j + 1

def _skip_annotation(tokens, i):
    j = i + 1
    while j < len(tokens) and (_is_identifier(tokens[j]) or tokens[j].value == '.'):
        j += 1
    if _value(tokens, j) == '(':
        close = _matching_close(tokens, j)
        return close + 1 if close is not None else len(tokens)
    return j

def _read_instance_creation(tokens, i):
    """For `new` at i, return (simple class name or None, index to resume at)."""
    j = i + 1
    names = []
    while j < len(tokens) and _is_identifier(tokens[j]):
        names.append(tokens[j].value)
        if _value(tokens, j + 1) != '.':
            j += 1
            break
        j += 2
    j = _skip_generic_forward(tokens, j)
    if names and _value(tokens, j) == '(':
        return names[-1], j
    return None, max(j, i + 1)

def extract_facets(source):
    """
    Recognize the six facets in a token stream of `source`. Works on
    fragments: no grammar is required beyond local token patterns.
    """
    tokens = _tokenize(source)
    found = defaultdict(set)
    declared = set()
    class_names = set()
    receivers = []

    i = 0
    while i < len(tokens):
        token = tokens[i]
        value = token.value

        if _is_keyword(token, 'package'):
            i = _skip_past(tokens, i, ';')
            continue
        if _is_keyword(token, 'import'):
            name, i = _read_import(tokens, i)
            if name:
                found['imports'].add(name)
            continue
        if isinstance(token, jt.Annotation):
            i = _skip_annotation(tokens, i)
            continue
        if (token.value in CLASS_KEYWORDS and isinstance(token, jt.Keyword) and _value(tokens, i - 1) != '.'
                and i + 1 < len(tokens) and _is_identifier(tokens[i + 1])):
            class_names.add(tokens[i + 1].value)
        if _is_keyword(token, 'new'):
            name, i = _read_instance_creation(tokens, i)
            if name:
                found['class_instances'].add(name)
            continue

        if _is_identifier(token):
            following = _value(tokens, i + 1)
            if following == '(':
                if _value(tokens, i - 1) == '.':
                    found['method_invocations'].add(value)
                    receiver = tokens[i - 2] if i >= 2 else None
                    if (receiver is not None and _is_identifier(receiver)
                            and receiver.value[:1].isupper() and _value(tokens, i - 3) != '.'):
                        receivers.append(receiver.value)
                elif value in class_names and not _has_return_type(tokens, i):
                    # constructor: no return type, named after its class
                    close = _matching_close(tokens, i + 1)
                    if close is None or not _followed_by_body(tokens, close):
                        found['method_invocations'].add(value)
                elif _declares_type_position(tokens, i):
                    close = _matching_close(tokens, i + 1)
                    if close is not None and _followed_by_body(tokens, close):
                        found['method_declarations'].add(value)
                else:
                    found['method_invocations'].add(value)
            elif following in ('=', ';', ':'):
                type_name = _type_before(tokens, i - 1)
                if type_name is not None:
                    found['variable_types'].add(type_name)
                    found['variable_declarations'].add(value)
                    declared.add(value)
        i += 1

    # capitalized receivers of calls such as `JavaCore.getOptions()`
    for receiver in receivers:
        if receiver not in declared:
            found['variable_types'].add(receiver)

    return CodeFacets(**{name: frozenset(found[name]) for name in FACET_NAMES})

def parse_facets(source, wrapping=True):
    """
    Facets of `source` together with the parse mode that accepted it.

    Modes are tried strictest first, each on the correspondingly wrapped
    source; without `wrapping` only the compilation-unit mode is tried and a
    snippet that does not parse yields no facets. With `wrapping` and no
    accepting mode, facets are recovered from the raw token stream and the
    outcome is marked as not parsed. Extraction always runs on the original
    text, so the wrapper itself never contributes facets.
    """
    if not source or not source.strip():
        return CodeFacets(), WrapOutcome(wrap_snippet(source or '', ParseMode.EXPRESSION),
                                         ParseMode.EXPRESSION, True)

    modes = list(ParseMode) if wrapping else [ParseMode.COMPILATION_UNIT]
    for mode in modes:
        candidate = source if mode is ParseMode.COMPILATION_UNIT else wrap_snippet(source, mode)
        if _parses(candidate):
            return extract_facets(source), WrapOutcome(candidate, mode, mode is not ParseMode.COMPILATION_UNIT)

    if not wrapping:
        return CodeFacets(), WrapOutcome(source, ParseMode.COMPILATION_UNIT, False, parsed=False)
    logger.debug("Snippet rejected by every parse mode, using token-level facets")
    return extract_facets(source), WrapOutcome(wrap_snippet(source, ParseMode.EXPRESSION),
                                               ParseMode.EXPRESSION, True, parsed=False)

def term_occurrences(source):
    """
    Term multiset of a context for entropy weighting: every identifier
    outside package and import statements, plus each imported name once
    per import directive.
    """
    tokens = _tokenize(source)
    counts = Counter()
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if _is_keyword(token, 'package'):
            i = _skip_past(tokens, i, ';')
            continue
        if _is_keyword(token, 'import'):
            name, i = _read_import(tokens, i)
            if name:
                counts[name] += 1
            continue
        if _is_identifier(token):
            counts[token.value] += 1
        i += 1
    return counts

# ~~~ canonical names and import deduction ~~~

@dataclass(frozen=True)
class CanonicalTable:
    """Canonical class names by descending frequency (ties lexicographic)."""
    entries: tuple = ()
    top_n: int = 10000

    @classmethod
    def from_entries(cls, entries, top_n=10000):
        ranked = sorted(entries, key=lambda entry: (-entry[1], entry[0]))
        return cls(tuple(ranked[:top_n]), top_n)

    @cached_property
    def _by_simple_name(self):
        index = defaultdict(list)
        for name, _frequency in self.entries:
            index[name.rsplit('.', 1)[-1]].append(name)
        return index

    def candidates(self, simple_name):
        return list(self._by_simple_name.get(simple_name, ()))

    def __len__(self):
        return len(self.entries)

def load_canonical_table(path, top_n=10000):
    """Read a `name<TAB>frequency` TSV; `#` lines and blank lines are ignored."""
    entries = {}
    try:
        handle = open(path, 'r', encoding='utf-8')
    except OSError as e:
        raise CanonicalTableError(f"cannot read canonical table {path}: {e}") from e
    with handle:
        for line_number, line in enumerate(handle, 1):
            line = line.rstrip('\r\n')
            if not line.strip() or line.lstrip().startswith('#'):
                continue
            parts = line.split('\t')
            if len(parts) != 2:
                raise CanonicalTableError(f"expected name<TAB>frequency, got {line!r}", line_number)
            name, raw_frequency = parts[0].strip(), parts[1].strip()
            if not IMPORT_NAME_PATTERN.fullmatch(name):
                raise CanonicalTableError(f"not a canonical class name: {name!r}", line_number)
            try:
                frequency = int(raw_frequency)
            except ValueError:
                raise CanonicalTableError(f"frequency is not an integer: {raw_frequency!r}", line_number) from None
            if frequency < 0:
                raise CanonicalTableError(f"negative frequency {frequency} for {name}", line_number)
            if name in entries:
                raise CanonicalTableError(f"duplicate name {name}", line_number)
            entries[name] = frequency
    table = CanonicalTable.from_entries(entries.items(), top_n)
    logger.info(f"Loaded {len(table)} canonical names from {path}")
    return table

def _context_tokens(context_text):
    tokens = (token.strip(string.punctuation) for token in (context_text or '').split())
    return sorted({token for token in tokens if token})

def _closest_candidate(candidates, context_tokens):
    if not context_tokens:
        return min(candidates)
    return min(
        candidates,
        key=lambda name: (min(levenshtein(name, token) for token in context_tokens), name),
    )

def deduce_imports(facets, table, context_text, unresolved=None):
    """
    Canonical names for the classes a snippet uses without importing them.

    Each simple type name in `variable_types` or `class_instances` is looked
    up by its last dotted segment; several candidates are settled by the
    smallest edit distance to any whitespace-delimited token of
    `context_text`. Names without a candidate are counted in `unresolved`.
    """
    if facets.imports:
        return []
    context_tokens = None
    selected = set()
    for simple_name in sorted((facets.variable_types | facets.class_instances) - PRIMITIVE_TYPES):
        candidates = table.candidates(simple_name)
        if not candidates:
            if unresolved is not None:
                unresolved[simple_name] += 1
            continue
        if len(candidates) == 1:
            selected.add(candidates[0])
            continue
        if context_tokens is None:
            context_tokens = _context_tokens(context_text)
        selected.add(_closest_candidate(candidates, context_tokens))
    return sorted(selected)

def augment_snippet(source, table, context_text, wrapping=True):
    """
    Make a snippet self-contained: wrap it if needed and, when it imports
    nothing, put the deduced import directives in front of it. A snippet
    that already carries imports comes back as parsed.
    """
    if not source or not source.strip():
        return source
    facets, outcome = parse_facets(source, wrapping)
    if facets.imports:
        return outcome.source
    names = deduce_imports(facets, table, context_text)
    if not names:
        return outcome.source
    header = ''.join(f"import {name};\n" for name in names)
    if outcome.wrapped:
        return f"{header}\n{outcome.source}"
    package = _PACKAGE_LINE.search(outcome.source)
    if package:
        end = package.end()
        prefix = outcome.source[:end] if outcome.source[:end].endswith('\n') else outcome.source[:end] + '\n'
        return f"{prefix}\n{header}{outcome.source[end:]}"
    return f"{header}\n{outcome.source}"
