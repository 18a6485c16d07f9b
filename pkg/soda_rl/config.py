"""Typed configuration objects from flat key-value text files"""

import dataclasses
import logging
import typing
from collections import OrderedDict

from . import kv_parser_iterator, resolve_data_path
from .errors import ConfigError

logger = logging.getLogger(__name__)  # pylint: disable=invalid-name

TRUE_STRINGS = {'1', 'true', 'yes', 'on'}
FALSE_STRINGS = {'0', 'false', 'no', 'off'}


def read_kv_file(filename):
    """Read a flat key-value file.

    Returns `(entries, sections)` where `entries` maps keys to raw string values
    and `sections` maps section names to lists of CSV rows."""

    filename = resolve_data_path(filename)

    try:
        with open(filename, 'r') as fhandle:
            content = fhandle.read()
    except (OSError, IOError) as exc:
        raise ConfigError("unable to read config file '{}': {}".format(filename, exc.strerror)) from exc

    return parse_kv_string(content, filename)


def parse_kv_string(content, source='<string>'):
    """Parse the content of a key-value file, see `read_kv_file`"""

    entries = OrderedDict()
    sections = OrderedDict()

    def unmatched(lineno, line):
        raise ConfigError("{}:{}: unable to parse line '{}'".format(source, lineno, line.strip()))

    for lineno, section, key, value in kv_parser_iterator(content, unmatched):
        if section is not None:
            sections.setdefault(section, []).append(value)
            continue

        if key in entries:
            raise ConfigError("{}:{}: duplicated key '{}'".format(source, lineno, key))

        entries[key] = value

    return entries, sections


def _coerce(value, typ, key):
    """Convert a raw string (or an already typed value) to the annotated type"""

    origin = getattr(typ, '__origin__', None)
    args = getattr(typ, '__args__', ())

    if origin is typing.Union:  # Optional[X]
        if value is None or (isinstance(value, str) and value.strip().lower() in ('', 'none')):
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(value, inner, key)

    if origin in (tuple, typing.Tuple):
        if isinstance(value, str):
            value = [v.strip() for v in value.split(',') if v.strip()]
        return tuple(_coerce(v, args[0], key) for v in value)

    try:
        if typ is bool:
            if isinstance(value, bool):
                return value
            lowered = str(value).strip().lower()
            if lowered in TRUE_STRINGS:
                return True
            if lowered in FALSE_STRINGS:
                return False
            raise ValueError(value)

        if typ is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)

        if typ is float:
            return float(value)

        if typ is str:
            return str(value)

    except (TypeError, ValueError):
        raise ConfigError("invalid value '{}' for '{}' (expected {})".format(value, key, typ.__name__))

    return value


def config_from_mapping(cls, mapping, source=None):
    """Instantiate the dataclass `cls` from a mapping of (possibly raw string) values"""

    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}

    unknown = set(mapping) - names
    if unknown:
        raise ConfigError("unknown configuration key(s) for {}{}: {}".format(
            cls.__name__, " in '{}'".format(source) if source else "", ', '.join(sorted(unknown))))

    kwargs = {k: _coerce(v, hints[k], k) for k, v in mapping.items()}

    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError("invalid {}: {}".format(cls.__name__, exc)) from exc


def load_config(cls, filename=None, overrides=None, aliases=None):
    """Load a config dataclass from an optional file, with overrides (e.g. CLI flags) on top.

    Overrides with value None are ignored, `aliases` renames file keys to field names."""

    mapping = OrderedDict()

    if filename:
        entries, sections = read_kv_file(filename)
        if sections:
            raise ConfigError("'{}': unexpected section(s) {}".format(filename, ', '.join(sections)))
        mapping.update(((aliases or {}).get(k, k), v) for k, v in entries.items())
        logger.debug("loaded %s from '%s'", cls.__name__, filename)

    if overrides:
        mapping.update({k: v for k, v in overrides.items() if v is not None})

    return config_from_mapping(cls, mapping, filename)


def config_to_mapping(config):
    """Flatten a config dataclass to string values, the inverse of `config_from_mapping`"""

    def fmt(value):
        if isinstance(value, tuple):
            return ','.join(fmt(v) for v in value)
        if isinstance(value, float):
            return repr(value)
        if value is None:
            return 'none'
        return str(value).lower() if isinstance(value, bool) else str(value)

    return OrderedDict((f.name, fmt(getattr(config, f.name)))
                       for f in dataclasses.fields(config) if f.init)


def write_config(config, filename):
    """Write a config dataclass as key-value text"""

    with open(filename, 'w') as fhandle:
        for key, value in config_to_mapping(config).items():
            fhandle.write("{} = {}\n".format(key, value))
