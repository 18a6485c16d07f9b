
import os
import re
from os import path

__version__ = '0.1.dev0'

DATA_DIR_ENV = 'SODA_DATA_DIR'


def resolve_data_path(filename):
    """Return `filename` if it exists, otherwise try it relative to $SODA_DATA_DIR.

       The original name is returned when no candidate exists, so that callers
       report the path the user actually passed."""

    if path.exists(filename) or path.isabs(filename):
        return filename

    data_dir = os.environ.get(DATA_DIR_ENV)
    if data_dir:
        candidate = path.join(data_dir, filename)
        if path.exists(candidate):
            return candidate

    return filename


COMMENT_REGEX = re.compile(r'\s*\#.*$')

SECTION_REGEX = re.compile(r"""
^[ \t]*
\[ (?P<section> [A-Za-z0-9_.\-]+ ) \]       # a [section] header introduces a CSV block
[ \t]*$
""", re.X)

KV_REGEX = re.compile(r"""
^[ \t]*
(?P<key> [^\s=:\#]+ )                       # the key, anything up to a separator
(
    [ \t]* [=:] [ \t]*                      # either an explicit = or : separator
    |
    [ \t]+                                  # or plain white space (weight files)
)
(?P<value> .*? )                            # the value is taken verbatim (but stripped)
[ \t]*$
""", re.X)


def kv_parser_iterator(string, unmatched_cb=None):
    """
    Yields a tuple `(lineno, section, key, value)` for each entry in a flat key-value text.

    Outside of a section, each line is `key = value`, `key: value` or `key value`
    and `key` is a string. Lines after a `[section]` header are CSV rows, yielded
    with `key=None` and `value` as a list of stripped fields.

    :param string: the content of the config file
    :param unmatched_cb: callback for lines which are neither comments nor entries,
                         gets `(lineno, line)`. Without a callback they are ignored.
    """

    section = None

    for lineno, line in enumerate(string.splitlines(), 1):
        content = COMMENT_REGEX.sub('', line)

        if not content.strip():
            continue

        match = SECTION_REGEX.match(content)
        if match:
            section = match.group('section')
            continue

        if section is not None:
            yield (lineno, section, None, [f.strip() for f in content.split(',')])
            continue

        match = KV_REGEX.match(content)
        if match and match.group('value'):
            yield (lineno, None, match.group('key'), match.group('value'))
        elif unmatched_cb:
            unmatched_cb(lineno, line)
