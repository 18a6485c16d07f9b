import numpy as np
import pytest

from conftest import make_dataset

from soda_rl.datamodel import (
    INDICATOR,
    Dataset,
    Feature,
    HourlyRecord,
    RewardConfig,
    Schema,
    StateVector,
    Trajectory,
    action_components,
    compute_reward,
    compute_rewards,
    discretize_action,
    load_conversion_table,
    load_dataset,
    norepi_equivalent,
    population_medians,
    preprocess,
    save_dataset,
    split_dataset,
    DEFAULT_GRID,
    )
from soda_rl.errors import (
    ConfigError,
    DatasetFormatError,
    InvalidInputError,
    SchemaError,
    UnknownDrugError,
    )


@pytest.mark.parametrize('map_mmhg, expected', [
    (70., 1.),
    (65., 1.),
    (60., 0.85),
    (57.5, 0.725),
    (55., 0.6),
    (28., 0.),
    (20., 0.),
    ])
def test_reward_knots(map_mmhg, expected):
    assert compute_reward(map_mmhg) == pytest.approx(expected, abs=1e-12)


def test_reward_monotone():
    rewards = compute_rewards(np.linspace(10., 120., 1000))
    assert np.all(np.diff(rewards) >= 0.)
    assert rewards.min() == 0. and rewards.max() == 1.


@pytest.mark.parametrize('map_mmhg', [55., 58., 64.99])
def test_reward_urine_exemption(map_mmhg):
    assert compute_reward(map_mmhg, 30.) == 1.
    assert compute_reward(map_mmhg, 29.) < 1.


def test_reward_urine_exemption_needs_moderate_map():
    assert compute_reward(50., 100.) == pytest.approx(0.6 * 22. / 27.)
    # missing urine output never exempts
    assert compute_reward(58., float('nan')) == pytest.approx(compute_reward(58.))


@pytest.mark.parametrize('map_mmhg', [0., -5., float('nan')])
def test_reward_invalid_map(map_mmhg):
    with pytest.raises(InvalidInputError):
        compute_reward(map_mmhg)


def test_reward_config_validation():
    with pytest.raises(ConfigError):
        RewardConfig(knot_maps=(28., 60., 55., 65.))
    with pytest.raises(ConfigError):
        RewardConfig(knot_rewards=(0., 0.9, 0.85, 1.))


@pytest.mark.parametrize('fluid, vaso, expected', [
    (0., 0., 0),
    (199.9, 0., 0),
    (200., 0., 1),
    (250., 0., 1),
    (1500., 0., 3),
    (0., 3., 4),
    (0., 5., 8),
    (600., 20., 14),
    (5000., 500., 19),
    ])
def test_discretize_action(fluid, vaso, expected):
    assert discretize_action(fluid, vaso) == expected


def test_discretize_action_invalid():
    with pytest.raises(InvalidInputError):
        discretize_action(-1., 0.)
    with pytest.raises(InvalidInputError):
        discretize_action(0., float('inf'))


def test_action_components():
    assert action_components(0) == (0, 0)
    assert action_components(19) == (4, 3)
    assert action_components(6) == (1, 2)

    with pytest.raises(InvalidInputError):
        action_components(20)


def test_action_describe():
    assert DEFAULT_GRID.describe(0) == "vaso 0 / fluid [0,200)"
    assert DEFAULT_GRID.describe(5) == "vaso (0,5) / fluid [200,500)"
    assert DEFAULT_GRID.describe(19) == "vaso [40,150) / fluid [1000,2000)"


def test_norepi_equivalent():
    assert norepi_equivalent('norepinephrine', 8., 80.) == pytest.approx(0.1)
    assert norepi_equivalent('Dopamine', 10., 100.) == pytest.approx(0.001)

    with pytest.raises(UnknownDrugError) as excinfo:
        norepi_equivalent('milrinone', 1., 70.)
    assert isinstance(excinfo.value, KeyError)
    assert 'milrinone' in str(excinfo.value)


def test_conversion_table_file(tmp_path):
    table_fn = tmp_path / 'conv.cfg'
    table_fn.write_text("dopamine = 0.02\nvasopressin: 2.5\n")

    table = load_conversion_table(str(table_fn))
    assert table['dopamine'] == 0.02
    assert table['norepinephrine'] == 1.

    table_fn.write_text("norepinephrine = 2\n")
    with pytest.raises(ConfigError):
        load_conversion_table(str(table_fn))


def test_trajectory_validation():
    states = np.zeros((3, 2))

    with pytest.raises(InvalidInputError):
        Trajectory('a', states, [0, 1, 20], [0., 0., 0.])
    with pytest.raises(InvalidInputError):
        Trajectory('a', states, [0, 1, 2], [0., 1.5, 0.])
    with pytest.raises(InvalidInputError):
        Trajectory('a', states, [0, 1], [0., 0.])
    with pytest.raises(InvalidInputError):
        Trajectory('a', np.zeros((73, 2)), np.zeros(73, dtype=int), np.zeros(73))


def test_trajectory_immutable():
    traj = Trajectory('a', np.zeros((2, 2)), [0, 1], [0., 1.])

    with pytest.raises(ValueError):
        traj.states[0, 0] = 1.

    assert [t.t for t in traj.transitions] == [1, 2]


def test_state_vector_schema():
    schema = Schema((Feature('map', 'mmHg'), Feature('map_measured', kind=INDICATOR, source='map')))

    StateVector(np.array([60., 1.]), schema)

    with pytest.raises(SchemaError):
        StateVector(np.array([60., 0.5]), schema)
    with pytest.raises(SchemaError):
        StateVector(np.array([np.nan, 1.]), schema)
    with pytest.raises(SchemaError):
        StateVector(np.array([60.]), schema)


def test_dataset_duplicate_stay():
    traj = Trajectory('a', np.zeros((1, 3)), [0], [0.])

    with pytest.raises(SchemaError):
        Dataset((traj, traj), Schema.continuous(['x', 'y', 'z']))


def test_dataset_arrays(random_dataset):
    arrays = random_dataset.arrays

    assert random_dataset.n_transitions == 37
    assert list(arrays.offsets[:4]) == [0, 5, 8, 15]
    assert list(arrays.t[:7]) == [1, 2, 3, 4, 5, 1, 2]
    assert list(arrays.trajectory[4:6]) == [0, 1]
    np.testing.assert_array_equal(arrays.states[5], random_dataset.trajectories[1].states[0])


def test_dataset_roundtrip(tmp_path, random_dataset):
    filename = str(tmp_path / 'data.jsonl')
    save_dataset(random_dataset.with_split('test'), filename)

    loaded = load_dataset(filename)

    assert loaded.split == 'test'
    assert loaded.equals(random_dataset.with_split('test'))


def test_dataset_empty_roundtrip(tmp_path):
    filename = str(tmp_path / 'empty.jsonl')
    save_dataset(make_dataset([]), filename)

    assert len(load_dataset(filename)) == 0


def _write_lines(tmp_path, lines):
    filename = tmp_path / 'data.jsonl'
    filename.write_text('\n'.join(lines) + '\n')
    return str(filename)


HEADER = '{"schema": [{"name": "x"}], "split": "train"}'


def test_load_dataset_leading_blank_line(tmp_path):
    filename = _write_lines(tmp_path, [
        '',
        HEADER,
        '{"stay_id": "a", "t": 1, "state": [1.0], "action": 3, "reward": 0.5}',
        ])

    dataset = load_dataset(filename)
    assert len(dataset) == 1 and dataset.trajectories[0].actions[0] == 3


@pytest.mark.parametrize('bad_line, message', [
    ('{"stay_id": "a", "t": 2, "state": [1.0], "action": 3, "reward": 0.5', 'invalid JSON'),
    ('{"stay_id": "a", "t": 2, "state": [1.0], "action": 21, "reward": 0.5}', 'invalid action id'),
    ('{"stay_id": "a", "t": 2, "state": [1.0, 2.0], "action": 3, "reward": 0.5}', 'state must be'),
    ('{"stay_id": "a", "t": 3, "state": [1.0], "action": 3, "reward": 0.5}', 'expected t=2'),
    ('{"stay_id": "a", "t": 2, "state": [1.0], "action": 3}', 'missing field'),
    ])
def test_load_dataset_errors(tmp_path, bad_line, message):
    filename = _write_lines(tmp_path, [
        HEADER,
        '{"stay_id": "a", "t": 1, "state": [1.0], "action": 3, "reward": 0.5}',
        bad_line,
        ])

    with pytest.raises(DatasetFormatError) as excinfo:
        load_dataset(filename)

    assert excinfo.value.lineno == 3
    assert str(excinfo.value).startswith('line 3:')
    assert message in str(excinfo.value)


def test_load_dataset_interleaved_stays(tmp_path):
    filename = _write_lines(tmp_path, [
        HEADER,
        '{"stay_id": "a", "t": 1, "state": [1.0], "action": 3, "reward": 0.5}',
        '{"stay_id": "b", "t": 1, "state": [1.0], "action": 3, "reward": 0.5}',
        '{"stay_id": "a", "t": 2, "state": [1.0], "action": 3, "reward": 0.5}',
        ])

    with pytest.raises(DatasetFormatError, match='duplicated stay_id'):
        load_dataset(filename)


def test_split_dataset():
    dataset = make_dataset([3] * 10)
    splits = split_dataset(dataset, seed=3)

    assert [len(splits[s]) for s in ('train', 'validation', 'test')] == [7, 1, 2]
    assert splits['test'].split == 'test'

    ids = [i for s in splits.values() for i in s.stay_ids]
    assert sorted(ids) == sorted(dataset.stay_ids)

    again = split_dataset(dataset, seed=3)
    assert again['train'].stay_ids == splits['train'].stay_ids

    with pytest.raises(InvalidInputError):
        split_dataset(dataset, (0.5, 0.1, 0.1))


PREPROCESS_SCHEMA = Schema((
    Feature('map', 'mmHg'),
    Feature('urine_output', 'mL/h'),
    Feature('lactate', 'mmol/L'),
    Feature('lactate_measured', kind=INDICATOR, source='lactate', window=1),
    Feature('hours_since_admit'),
    Feature('fluid_total_8h'),
    ))


def _records():
    return [
        HourlyRecord('s1', 1, {'map': [60., 58.], 'urine_output': 10.}),
        HourlyRecord('s1', 2, {'map': 55., 'lactate': 3.}, fluid_ml=300.),
        HourlyRecord('s1', 3, {}, vaso_rate=7.),
        ]


def test_preprocess():
    traj = preprocess(_records(), PREPROCESS_SCHEMA, medians={'lactate': 1.5, 'urine_output': 40.})

    np.testing.assert_allclose(traj.states, [
        [58., 10., 1.5, 0., 1., 0.],
        [55., 10., 3., 1., 2., 0.],
        [55., 10., 3., 0., 3., 300.],
        ])
    assert list(traj.actions) == [0, 1, 8]
    np.testing.assert_allclose(traj.rewards, [0.6, 0.6, 0.6])


def test_preprocess_reward_uses_next_hour():
    records = [
        HourlyRecord('s1', 1, {'map': 50.}),
        HourlyRecord('s1', 2, {'map': 70.}),
        ]
    schema = Schema.continuous(['map'])

    traj = preprocess(records, schema)
    np.testing.assert_allclose(traj.rewards, [1., 1.])


def test_preprocess_errors():
    with pytest.raises(SchemaError):
        preprocess([HourlyRecord('s1', 1, {'map': 60., 'heart_rate': 80.})], Schema.continuous(['map']))
    with pytest.raises(SchemaError):
        preprocess([HourlyRecord('s1', 1, {'map': 60.})], Schema.continuous(['map', 'lactate']))
    with pytest.raises(InvalidInputError):
        preprocess([], Schema.continuous(['map']))
    with pytest.raises(InvalidInputError):
        preprocess([HourlyRecord('s1', 2, {'map': 60.})], Schema.continuous(['map']))


def test_population_medians():
    medians = population_medians(_records())
    assert medians == {'map': 58., 'urine_output': 10., 'lactate': 3.}
