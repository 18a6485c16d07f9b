"""Trajectories, the fluid/vasopressor action grid, the MAP reward and ingestion of hourly records"""

import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Mapping, NamedTuple, Optional, Tuple

import numpy as np

from . import resolve_data_path
from .config import load_config, read_kv_file
from .errors import (
    ConfigError,
    DatasetFormatError,
    InvalidInputError,
    SchemaError,
    UnknownDrugError,
    )
from .tools.norepi import DEFAULT_CONVERSION_TABLE

logger = logging.getLogger(__name__)  # pylint: disable=invalid-name

MAX_HOURS = 72

SPLITS = ('train', 'validation', 'test')

CONTINUOUS = 'continuous'
INDICATOR = 'indicator'

# blood pressures are aggregated to the worst (minimum) value within an hour
MIN_AGGREGATED = frozenset(['map', 'sbp', 'dbp'])

MAP_FEATURE = 'map'
URINE_FEATURE = 'urine_output'


# ---------------------------------------------------------------------------
# action grid

@dataclass(frozen=True)
class ActionGrid:
    """Fluid bolus (mL within an hour) x vasopressor (mcg/kg, norepinephrine equivalents) grid.

    Fluid bins are [e0,e1), [e1,e2), ...; the first vasopressor bin is exactly
    zero, the remaining ones are (0,e1), [e1,e2), ... Values above the top
    edge are clamped into the top bin."""

    fluid_edges: Tuple[float, ...] = (0., 200., 500., 1000., 2000.)
    vaso_edges: Tuple[float, ...] = (0., 5., 15., 40., 150.)

    def __post_init__(self):
        for name, edges in (('fluid_edges', self.fluid_edges), ('vaso_edges', self.vaso_edges)):
            if edges[0] != 0. or any(b <= a for a, b in zip(edges, edges[1:])):
                raise ConfigError("{} must start at 0 and be strictly increasing".format(name))

    @property
    def n_fluid(self):
        return len(self.fluid_edges) - 1

    @property
    def n_vaso(self):
        # the exact-zero bin plus one bin per range
        return len(self.vaso_edges)

    @property
    def n_actions(self):
        return self.n_fluid * self.n_vaso

    def fluid_bins(self, fluid_ml):
        fluid_ml = np.asarray(fluid_ml, dtype=float)
        return np.searchsorted(np.asarray(self.fluid_edges[1:-1]), fluid_ml, side='right')

    def vaso_bins(self, vaso_rate):
        vaso_rate = np.asarray(vaso_rate, dtype=float)
        nonzero = 1 + np.searchsorted(np.asarray(self.vaso_edges[1:-1]), vaso_rate, side='right')
        return np.where(vaso_rate > 0., nonzero, 0)

    def action_id(self, vaso_bin, fluid_bin):
        return vaso_bin * self.n_fluid + fluid_bin

    def describe(self, action_id):
        """Human readable label of an action, e.g. 'vaso (0,5) / fluid [200,500)'"""

        vaso_bin, fluid_bin = action_components(action_id, self)

        if vaso_bin == 0:
            vaso = "vaso 0"
        elif vaso_bin == 1:
            vaso = "vaso (0,{:g})".format(self.vaso_edges[1])
        else:
            vaso = "vaso [{:g},{:g})".format(self.vaso_edges[vaso_bin - 1], self.vaso_edges[vaso_bin])

        fluid = "fluid [{:g},{:g})".format(self.fluid_edges[fluid_bin], self.fluid_edges[fluid_bin + 1])

        return "{} / {}".format(vaso, fluid)


DEFAULT_GRID = ActionGrid()
N_ACTIONS = DEFAULT_GRID.n_actions


def discretize_actions(fluid_ml, vaso_rate, grid=DEFAULT_GRID):
    """Vectorized `discretize_action`, returns an integer array of action ids"""

    fluid_ml = np.asarray(fluid_ml, dtype=float)
    vaso_rate = np.asarray(vaso_rate, dtype=float)

    if np.any(~np.isfinite(fluid_ml)) or np.any(~np.isfinite(vaso_rate)):
        raise InvalidInputError("fluid and vasopressor amounts must be finite")
    if np.any(fluid_ml < 0.) or np.any(vaso_rate < 0.):
        raise InvalidInputError("fluid and vasopressor amounts must be non-negative")

    return grid.action_id(grid.vaso_bins(vaso_rate), grid.fluid_bins(fluid_ml)).astype(int)


def discretize_action(fluid_ml, vaso_rate, grid=DEFAULT_GRID):
    """Map an hourly fluid bolus volume and vasopressor dose to an action id"""
    return int(discretize_actions(fluid_ml, vaso_rate, grid))


def action_components(action_id, grid=DEFAULT_GRID):
    """Split an action id into `(vaso bin index, fluid bin index)`"""

    if isinstance(action_id, bool) or int(action_id) != action_id or not 0 <= action_id < grid.n_actions:
        raise InvalidInputError("invalid action id: {}".format(action_id))

    return divmod(int(action_id), grid.n_fluid)


# ---------------------------------------------------------------------------
# reward

@dataclass(frozen=True)
class RewardConfig:
    """Piecewise linear MAP reward, knots are given as parallel MAP/reward lists"""

    knot_maps: Tuple[float, ...] = (28., 55., 60., 65.)
    knot_rewards: Tuple[float, ...] = (0., 0.6, 0.85, 1.)
    map_floor: float = 28.
    map_ceiling: float = 65.
    urine_exemption_threshold: float = 30.
    urine_exempt_map_floor: float = 55.

    def __post_init__(self):
        maps, rewards = self.knot_maps, self.knot_rewards

        if len(maps) != len(rewards) or len(maps) < 2:
            raise ConfigError("knot_maps and knot_rewards must have the same length (at least 2)")
        if any(b <= a for a, b in zip(maps, maps[1:])):
            raise ConfigError("knot MAP values must be strictly increasing")
        if any(b < a for a, b in zip(rewards, rewards[1:])):
            raise ConfigError("knot rewards must be nondecreasing in MAP")
        if any(not 0. <= r <= 1. for r in rewards):
            raise ConfigError("knot rewards must be within [0,1]")
        if (maps[0], rewards[0]) != (self.map_floor, 0.) or (maps[-1], rewards[-1]) != (self.map_ceiling, 1.):
            raise ConfigError("the first and last knots must be ({}, 0) and ({}, 1)".format(
                self.map_floor, self.map_ceiling))

    @property
    def knots(self):
        return list(zip(self.knot_maps, self.knot_rewards))

    @classmethod
    def from_file(cls, filename=None, **overrides):
        return load_config(cls, filename, overrides)


def compute_rewards(map_mmhg, urine_ml_per_hour=None, config=RewardConfig()):
    """Vectorized `compute_reward`; missing urine output is given as None or NaN"""

    map_mmhg = np.asarray(map_mmhg, dtype=float)

    if np.any(~(map_mmhg > 0.)):
        raise InvalidInputError("MAP must be positive")

    reward = np.interp(map_mmhg, config.knot_maps, config.knot_rewards)

    if urine_ml_per_hour is not None:
        urine = np.asarray(urine_ml_per_hour, dtype=float)
        with np.errstate(invalid='ignore'):
            exempt = (urine >= config.urine_exemption_threshold) & (map_mmhg >= config.urine_exempt_map_floor)
        reward = np.where(exempt, 1., reward)

    return reward


def compute_reward(map_mmhg, urine_ml_per_hour=None, config=RewardConfig()):
    """Reward in [0,1] for the given MAP, with the urine output exemption for moderately low MAP"""
    return float(compute_rewards(map_mmhg, urine_ml_per_hour, config))


# ---------------------------------------------------------------------------
# norepinephrine equivalents

def load_conversion_table(filename=None):
    """Read a `drug = factor` table, norepinephrine is pinned to 1"""

    if not filename:
        return dict(DEFAULT_CONVERSION_TABLE)

    entries, _ = read_kv_file(filename)

    try:
        table = {k.lower(): float(v) for k, v in entries.items()}
    except ValueError as exc:
        raise ConfigError("'{}': invalid conversion factor: {}".format(filename, exc)) from exc

    if table.setdefault('norepinephrine', 1.) != 1.:
        raise ConfigError("'{}': the norepinephrine factor must be 1".format(filename))

    if any(f < 0. for f in table.values()):
        raise ConfigError("'{}': conversion factors must be non-negative".format(filename))

    return table


def norepi_equivalent(drug, rate, weight_kg, table=None):
    """Convert a vasopressor rate to norepinephrine-equivalent mcg/kg"""

    table = DEFAULT_CONVERSION_TABLE if table is None else table

    try:
        factor = table[drug.lower()]
    except KeyError:
        raise UnknownDrugError("unknown vasopressor '{}' (known: {})".format(drug, ', '.join(sorted(table))))

    if rate < 0.:
        raise InvalidInputError("vasopressor rate must be non-negative")
    if weight_kg <= 0.:
        raise InvalidInputError("body weight must be positive")

    return rate * factor / weight_kg


# ---------------------------------------------------------------------------
# states, trajectories, datasets

@dataclass(frozen=True)
class Feature:
    """A state feature. Indicators flag whether `source` was measured within the last `window` hours"""

    name: str
    unit: str = ''
    kind: str = CONTINUOUS
    source: Optional[str] = None
    window: int = 1

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, INDICATOR):
            raise SchemaError("feature '{}': unknown kind '{}'".format(self.name, self.kind))
        if self.window < 1:
            raise SchemaError("feature '{}': window must be at least one hour".format(self.name))

    def to_json(self):
        data = {'name': self.name, 'unit': self.unit, 'kind': self.kind}
        if self.kind == INDICATOR:
            data.update(source=self.source, window=self.window)
        return data

    @classmethod
    def from_json(cls, data):
        return cls(name=data['name'], unit=data.get('unit', ''), kind=data.get('kind', CONTINUOUS),
                   source=data.get('source'), window=int(data.get('window', 1)))


@dataclass(frozen=True)
class Schema:
    features: Tuple[Feature, ...] = ()

    @property
    def names(self):
        return [f.name for f in self.features]

    @property
    def dim(self):
        return len(self.features)

    @cached_property
    def indicator_mask(self):
        return np.array([f.kind == INDICATOR for f in self.features], dtype=bool)

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError("feature '{}' not in schema".format(name))

    def validate_states(self, states):
        """Check a (..., D) array: matching dimension, all finite, indicators in {0,1}"""

        states = np.asarray(states, dtype=float)

        if states.shape[-1:] != (self.dim,):
            raise SchemaError("state dimension {} does not match schema dimension {}".format(
                states.shape[-1] if states.ndim else 0, self.dim))
        if not np.all(np.isfinite(states)):
            raise SchemaError("states must not contain missing or non-finite values")

        indicators = states[..., self.indicator_mask]
        if np.any((indicators != 0.) & (indicators != 1.)):
            raise SchemaError("indicator features must be exactly 0 or 1")

        return states

    def to_json(self):
        return [f.to_json() for f in self.features]

    @classmethod
    def from_json(cls, data):
        return cls(tuple(Feature.from_json(f) for f in data))

    @classmethod
    def continuous(cls, names, unit=''):
        return cls(tuple(Feature(n, unit) for n in names))


@dataclass(frozen=True, eq=False)
class StateVector:
    features: np.ndarray
    schema: Schema

    def __post_init__(self):
        states = np.array(self.schema.validate_states(self.features), dtype=float)
        states.setflags(write=False)
        object.__setattr__(self, 'features', states)


class Transition(NamedTuple):
    t: int
    state: np.ndarray
    action: int
    reward: float


def _frozen(array, dtype):
    array = np.array(array, dtype=dtype)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One stay: hourly states (T x D), action ids (T) and rewards (T), t = 1..T"""

    stay_id: str
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'states', _frozen(self.states, float))
        object.__setattr__(self, 'actions', _frozen(self.actions, int))
        object.__setattr__(self, 'rewards', _frozen(self.rewards, float))

        length = len(self.actions)

        if length < 1:
            raise InvalidInputError("trajectory '{}' is empty".format(self.stay_id))
        if length > MAX_HOURS:
            raise InvalidInputError("trajectory '{}' is longer than {} hours".format(self.stay_id, MAX_HOURS))
        if self.states.ndim != 2 or len(self.states) != length or len(self.rewards) != length:
            raise InvalidInputError("trajectory '{}': states, actions and rewards differ in length".format(
                self.stay_id))
        if np.any((self.actions < 0) | (self.actions >= N_ACTIONS)):
            raise InvalidInputError("trajectory '{}': action ids must be within 0..{}".format(
                self.stay_id, N_ACTIONS - 1))
        if np.any(~((self.rewards >= 0.) & (self.rewards <= 1.))):
            raise InvalidInputError("trajectory '{}': rewards must be within [0,1]".format(self.stay_id))

    def __len__(self):
        return len(self.actions)

    @property
    def transitions(self):
        return tuple(Transition(t + 1, self.states[t], int(self.actions[t]), float(self.rewards[t]))
                     for t in range(len(self)))

    def equals(self, other):
        return (self.stay_id == other.stay_id
                and np.array_equal(self.states, other.states)
                and np.array_equal(self.actions, other.actions)
                and np.array_equal(self.rewards, other.rewards))


class TransitionArrays(NamedTuple):
    """All transitions of a dataset flattened in trajectory order"""

    states: np.ndarray       # (N, D)
    actions: np.ndarray      # (N,)
    rewards: np.ndarray      # (N,)
    trajectory: np.ndarray   # (N,) index of the owning trajectory
    t: np.ndarray            # (N,) 1-based hour
    offsets: np.ndarray      # (n_trajectories + 1,) start of each trajectory


@dataclass(frozen=True, eq=False)
class Dataset:
    trajectories: Tuple[Trajectory, ...]
    schema: Schema
    split: str = 'train'

    def __post_init__(self):
        object.__setattr__(self, 'trajectories', tuple(self.trajectories))

        if self.split not in SPLITS:
            raise SchemaError("unknown split tag '{}'".format(self.split))

        seen = set()
        for traj in self.trajectories:
            if traj.stay_id in seen:
                raise SchemaError("duplicated stay_id '{}'".format(traj.stay_id))
            seen.add(traj.stay_id)
            self.schema.validate_states(traj.states)

    def __len__(self):
        return len(self.trajectories)

    @property
    def n_transitions(self):
        return sum(len(t) for t in self.trajectories)

    @cached_property
    def arrays(self):
        lengths = np.array([len(t) for t in self.trajectories], dtype=int)
        offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(int)

        if len(self.trajectories):
            states = np.concatenate([t.states for t in self.trajectories])
            actions = np.concatenate([t.actions for t in self.trajectories])
            rewards = np.concatenate([t.rewards for t in self.trajectories])
        else:
            states = np.zeros((0, self.schema.dim))
            actions = np.zeros(0, dtype=int)
            rewards = np.zeros(0)

        trajectory = np.repeat(np.arange(len(self.trajectories)), lengths)
        hours = np.arange(len(actions)) - offsets[trajectory] + 1 if len(actions) else np.zeros(0, dtype=int)

        return TransitionArrays(states, actions, rewards, trajectory, hours, offsets)

    @property
    def stay_ids(self):
        return [t.stay_id for t in self.trajectories]

    def subset(self, indices, split=None):
        return Dataset(tuple(self.trajectories[i] for i in indices), self.schema, split or self.split)

    def with_split(self, split):
        return Dataset(self.trajectories, self.schema, split)

    def equals(self, other):
        return (self.schema == other.schema and self.split == other.split and len(self) == len(other)
                and all(a.equals(b) for a, b in zip(self.trajectories, other.trajectories)))


def split_dataset(dataset, fractions=(0.7, 0.1, 0.2), seed=0):
    """Deterministic trajectory-level split into train/validation/test datasets"""

    if len(fractions) != len(SPLITS) or any(f < 0. for f in fractions) or not math.isclose(sum(fractions), 1.):
        raise InvalidInputError("split fractions must be {} non-negative values summing to 1".format(len(SPLITS)))

    order = np.random.default_rng(seed).permutation(len(dataset))
    bounds = np.round(np.cumsum(fractions) * len(dataset)).astype(int)
    starts = np.concatenate([[0], bounds[:-1]])

    return {split: dataset.subset(sorted(order[s:e]), split)
            for split, s, e in zip(SPLITS, starts, bounds)}


# ---------------------------------------------------------------------------
# JSON-Lines storage

def save_dataset(dataset, filename):
    """Write the dataset as JSON-Lines: a schema header followed by one line per transition"""

    with open(filename, 'w') as fhandle:
        fhandle.write(json.dumps({'schema': dataset.schema.to_json(), 'split': dataset.split}) + '\n')

        for traj in dataset.trajectories:
            for t in range(len(traj)):
                fhandle.write(json.dumps({
                    'stay_id': traj.stay_id,
                    't': t + 1,
                    'state': traj.states[t].tolist(),
                    'action': int(traj.actions[t]),
                    'reward': float(traj.rewards[t]),
                    }) + '\n')

    logger.info("saved %d trajectories to '%s'", len(dataset), filename)


def _parse_transition(lineno, obj, dim):
    if not isinstance(obj, dict):
        raise DatasetFormatError(lineno, "expected a JSON object")

    missing = {'stay_id', 't', 'state', 'action', 'reward'} - set(obj)
    if missing:
        raise DatasetFormatError(lineno, "missing field(s): {}".format(', '.join(sorted(missing))))

    stay_id, hour, state, action, reward = (obj[k] for k in ('stay_id', 't', 'state', 'action', 'reward'))

    def is_int(value):
        return isinstance(value, int) and not isinstance(value, bool)

    def is_number(value):
        return isinstance(value, (int, float)) and not isinstance(value, bool)

    if not isinstance(stay_id, str):
        raise DatasetFormatError(lineno, "stay_id must be a string")
    if not is_int(hour) or not 1 <= hour <= MAX_HOURS:
        raise DatasetFormatError(lineno, "t must be an integer within 1..{}".format(MAX_HOURS))
    if not is_int(action) or not 0 <= action < N_ACTIONS:
        raise DatasetFormatError(lineno, "invalid action id {!r}".format(action))
    if not is_number(reward) or not 0. <= reward <= 1.:
        raise DatasetFormatError(lineno, "reward must be a number within [0,1]")
    if not isinstance(state, list) or len(state) != dim or not all(is_number(v) for v in state):
        raise DatasetFormatError(lineno, "state must be an array of {} numbers".format(dim))

    return stay_id, hour, state, action, reward


def load_dataset(filename):
    """Read a JSON-Lines trajectory file written by `save_dataset`"""

    filename = resolve_data_path(filename)

    schema = Schema()
    split = 'train'
    trajectories = []
    current = None  # (stay_id, states, actions, rewards)
    finished = set()
    header_seen = False

    def flush():
        if current is not None:
            stay_id, states, actions, rewards = current
            trajectories.append(Trajectory(stay_id, np.array(states, dtype=float).reshape(-1, schema.dim),
                                           actions, rewards))
            finished.add(stay_id)

    with open(filename, 'r') as fhandle:
        for lineno, line in enumerate(fhandle, 1):
            if not line.strip():
                continue

            try:
                obj = json.loads(line)
            except ValueError as exc:
                raise DatasetFormatError(lineno, "invalid JSON: {}".format(exc)) from exc

            if not header_seen:
                header_seen = True
                if not isinstance(obj, dict) or 'schema' not in obj:
                    raise DatasetFormatError(lineno, "expected a header object with a 'schema' key")
                try:
                    schema = Schema.from_json(obj['schema'])
                except (KeyError, TypeError, ValueError, SchemaError) as exc:
                    raise DatasetFormatError(lineno, "invalid schema: {}".format(exc)) from exc
                split = obj.get('split', 'train')
                if split not in SPLITS:
                    raise DatasetFormatError(lineno, "unknown split tag '{}'".format(split))
                continue

            stay_id, hour, state, action, reward = _parse_transition(lineno, obj, schema.dim)

            if current is None or current[0] != stay_id:
                if stay_id in finished:
                    raise DatasetFormatError(lineno, "duplicated stay_id '{}'".format(stay_id))
                flush()
                current = (stay_id, [], [], [])

            if hour != len(current[2]) + 1:
                raise DatasetFormatError(lineno, "stay '{}': expected t={}, got t={}".format(
                    stay_id, len(current[2]) + 1, hour))

            current[1].append(state)
            current[2].append(action)
            current[3].append(reward)

        flush()

    try:
        dataset = Dataset(tuple(trajectories), schema, split)
    except SchemaError as exc:
        raise SchemaError("'{}': {}".format(filename, exc)) from exc

    logger.info("loaded %d trajectories (%d transitions) from '%s'",
                len(dataset), dataset.n_transitions, filename)

    return dataset


# ---------------------------------------------------------------------------
# preprocessing of raw hourly records

@dataclass(frozen=True)
class HourlyRecord:
    """Raw measurements of one stay-hour.

    `measurements` maps variable names to a value, a chronological list of
    values (several measurements within the hour) or None."""

    stay_id: str
    hour: int
    measurements: Mapping[str, Any] = field(default_factory=dict)
    fluid_ml: float = 0.
    vaso_rate: float = 0.

    def __post_init__(self):
        if not 1 <= self.hour <= MAX_HOURS:
            raise InvalidInputError("hour index must be within 1..{}, got {}".format(MAX_HOURS, self.hour))
        if not self.fluid_ml >= 0. or not self.vaso_rate >= 0.:
            raise InvalidInputError("fluid and vasopressor amounts must be non-negative")

    def observed(self):
        """Yield `(variable, [values])` for every variable with at least one finite value"""

        for name, value in self.measurements.items():
            values = value if isinstance(value, (list, tuple)) else [value]
            values = [float(v) for v in values if v is not None and math.isfinite(float(v))]
            if values:
                yield name.lower(), values


def population_medians(records):
    """Median of every observed variable over a cohort of hourly records"""

    values = {}
    for record in records:
        for name, observed in record.observed():
            values.setdefault(name, []).extend(observed)

    return {name: float(np.median(v)) for name, v in values.items()}


DERIVED_FEATURES = ('hours_since_admit', 'fluid_total_8h', 'vaso_total_8h')


def _derived_value(name, hour, fluids, vasos, grid):
    """Features computed from the intervention history, or None for measured variables"""

    history = slice(max(0, hour - 1 - 8), hour - 1)  # the 8 hours before the current one

    if name == 'hours_since_admit':
        return float(hour)
    if name == 'fluid_total_8h':
        return float(sum(fluids[history]))
    if name == 'vaso_total_8h':
        return float(sum(vasos[history]))

    for prefix, amounts, bins in (('prev_vaso_bin_', vasos, grid.vaso_bins),
                                  ('prev_fluid_bin_', fluids, grid.fluid_bins)):
        if name.startswith(prefix):
            if hour == 1:
                return 0.
            return float(int(bins(amounts[hour - 2])) == int(name[len(prefix):]))

    return None


def _is_derived(name):
    return name in DERIVED_FEATURES or name.startswith(('prev_vaso_bin_', 'prev_fluid_bin_'))


def preprocess(records, schema, reward_config=RewardConfig(), medians=None, grid=DEFAULT_GRID):
    """Turn the hourly records of one stay into a trajectory.

    Within an hour the most recent value of a variable is used, except for the
    blood pressures which take the minimum. Observed variables are carried
    forward, never-observed ones are imputed with the population median.
    The reward of hour t is computed from the MAP and urine output of hour t+1
    (the outcome of the hour-t action), the last hour uses its own values."""

    records = list(records)
    medians = {k.lower(): v for k, v in (medians or {}).items()}

    if not records:
        raise InvalidInputError("no records to preprocess")

    stay_id = records[0].stay_id
    if any(r.stay_id != stay_id for r in records):
        raise InvalidInputError("records of more than one stay given")

    hours = [r.hour for r in records]
    if hours != list(range(1, len(records) + 1)):
        raise InvalidInputError("stay '{}': records must cover hours 1..T, one per hour".format(stay_id))

    names = [n.lower() for n in schema.names]
    sources = {f.source.lower() for f in schema.features if f.kind == INDICATOR and f.source}
    known = set(names) | sources

    if MAP_FEATURE not in names:
        raise SchemaError("schema has no '{}' feature, which the reward requires".format(MAP_FEATURE))

    fluids = np.array([r.fluid_ml for r in records], dtype=float)
    vasos = np.array([r.vaso_rate for r in records], dtype=float)

    last_value = {}
    last_hour = {}
    hourly_urine = []
    states = np.zeros((len(records), schema.dim))

    for row, record in enumerate(records):
        urine = None

        for name, values in record.observed():
            if name not in known:
                raise SchemaError("stay '{}', hour {}: variable '{}' is not part of the schema".format(
                    stay_id, record.hour, name))

            last_value[name] = min(values) if name in MIN_AGGREGATED else values[-1]
            last_hour[name] = record.hour

            if name == URINE_FEATURE:
                urine = last_value[name]

        hourly_urine.append(np.nan if urine is None else urine)

        for col, feature in enumerate(schema.features):
            name = feature.name.lower()

            if feature.kind == INDICATOR:
                source = (feature.source or name).lower()
                measured = last_hour.get(source)
                states[row, col] = float(measured is not None and measured > record.hour - feature.window)
                continue

            derived = _derived_value(name, record.hour, fluids, vasos, grid)
            if derived is not None:
                states[row, col] = derived
            elif name in last_value:
                states[row, col] = last_value[name]
            elif name in medians:
                states[row, col] = medians[name]
            else:
                raise SchemaError("no population median available to impute '{}'".format(feature.name))

    schema.validate_states(states)

    map_col = names.index(MAP_FEATURE)
    outcome = np.concatenate([np.arange(1, len(records)), [len(records) - 1]])
    rewards = compute_rewards(states[outcome, map_col], np.array(hourly_urine)[outcome], reward_config)
    actions = discretize_actions(fluids, vasos, grid)

    return Trajectory(stay_id, states, actions, rewards)
