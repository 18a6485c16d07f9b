from dataclasses import dataclass
from os import path
from typing import Optional, Tuple

import pytest

from soda_rl import kv_parser_iterator, resolve_data_path
from soda_rl.behavior import read_distance_weights
from soda_rl.config import (
    config_from_mapping,
    config_to_mapping,
    load_config,
    parse_kv_string,
    read_kv_file,
    write_config,
    )
from soda_rl.errors import ConfigError
from soda_rl.ope import EvalConfig
from soda_rl.simulator import SimConfig, sim_schema
from soda_rl.training import TrainConfig

CONFIGS = path.join(path.dirname(__file__), path.pardir, 'configs')


@dataclass(frozen=True)
class ExampleConfig:
    rate: float = 0.5
    count: int = 3
    enabled: bool = True
    name: str = 'default'
    edges: Tuple[float, ...] = (0., 1.)
    limit: Optional[float] = None


def test_kv_parser_iterator():
    content = """
# a comment
rate = 0.1
count: 5   # trailing comment
weight 2.5

[block]
1, 2.0, 3
"""
    entries = list(kv_parser_iterator(content))

    assert entries == [
        (3, None, 'rate', '0.1'),
        (4, None, 'count', '5'),
        (5, None, 'weight', '2.5'),
        (8, 'block', None, ['1', '2.0', '3']),
        ]


def test_kv_parser_unmatched():
    unmatched = []
    list(kv_parser_iterator("rate =\n=5\n", lambda lineno, line: unmatched.append(lineno)))

    assert unmatched == [1, 2]


def test_parse_kv_string_errors():
    with pytest.raises(ConfigError, match='unable to parse'):
        parse_kv_string("rate =\n")

    with pytest.raises(ConfigError, match="duplicated key 'rate'"):
        parse_kv_string("rate = 1\nrate = 2\n")


def test_config_from_mapping():
    config = config_from_mapping(ExampleConfig, {
        'rate': '0.25', 'count': '7', 'enabled': 'no', 'edges': '1, 2, 4', 'limit': 'none'})

    assert config == ExampleConfig(rate=0.25, count=7, enabled=False, edges=(1., 2., 4.), limit=None)


@pytest.mark.parametrize('mapping', [
    {'rate': 'fast'},
    {'count': '2.5'},
    {'enabled': 'maybe'},
    {'unknown_key': '1'},
    ])
def test_config_from_mapping_errors(mapping):
    with pytest.raises(ConfigError):
        config_from_mapping(ExampleConfig, mapping)


def test_load_config(tmp_path):
    filename = tmp_path / 'example.cfg'
    filename.write_text("rate = 0.75\nalias_name: custom\n")

    config = load_config(ExampleConfig, str(filename), {'count': 9, 'rate': None},
                         aliases={'alias_name': 'name'})

    assert config == ExampleConfig(rate=0.75, count=9, name='custom')


def test_load_config_defaults():
    assert load_config(ExampleConfig) == ExampleConfig()


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match='unable to read'):
        load_config(ExampleConfig, str(tmp_path / 'missing.cfg'))


def test_load_config_rejects_sections(tmp_path):
    filename = tmp_path / 'example.cfg'
    filename.write_text("rate = 0.75\n[extra]\n1, 2\n")

    with pytest.raises(ConfigError, match='section'):
        load_config(ExampleConfig, str(filename))


def test_write_config(tmp_path):
    filename = str(tmp_path / 'example.cfg')
    config = ExampleConfig(rate=0.1, enabled=False, edges=(0.5, 2.), limit=3.)

    write_config(config, filename)

    entries, sections = read_kv_file(filename)
    assert not sections
    assert entries == config_to_mapping(config)
    assert load_config(ExampleConfig, filename) == config


def test_resolve_data_path(tmp_path, monkeypatch):
    (tmp_path / 'data.cfg').write_text("rate = 1\n")

    monkeypatch.setenv('SODA_DATA_DIR', str(tmp_path))
    assert resolve_data_path('data.cfg') == str(tmp_path / 'data.cfg')
    assert resolve_data_path('other.cfg') == 'other.cfg'

    monkeypatch.delenv('SODA_DATA_DIR')
    assert resolve_data_path('data.cfg') == 'data.cfg'


def test_shipped_configs():
    assert TrainConfig.from_file(path.join(CONFIGS, 'train.cfg')) == TrainConfig()
    assert EvalConfig.from_file(path.join(CONFIGS, 'eval.cfg')) == EvalConfig()

    sim = SimConfig.from_file(path.join(CONFIGS, 'sim.cfg'))
    assert sim == SimConfig()

    weights = read_distance_weights(path.join(CONFIGS, 'weights.txt'), sim_schema(sim))
    assert weights[:4].tolist() == [1., 0.05, 1., 2.] and weights[4:].tolist() == [1.] * 6
