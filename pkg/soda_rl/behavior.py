"""Clinician behavior policy by weighted k-nearest-neighbor action counting, and the safety masks derived from it"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import FrozenSet

import numpy as np

from . import resolve_data_path
from .config import read_kv_file
from .datamodel import N_ACTIONS, StateVector
from .errors import ConfigError, DatasetFormatError, InvalidInputError

logger = logging.getLogger(__name__)  # pylint: disable=invalid-name

DEFAULT_K = 100

# upper bound of the (queries x references) distance block held in memory at once
MAX_BLOCK_ENTRIES = 1 << 22

MASK_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class BehaviorModel:
    """Reference transitions of the training split, queried by weighted Euclidean
       distance on standardized features"""

    states: np.ndarray
    actions: np.ndarray
    k: int
    distance_weights: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    stay_ids: np.ndarray
    hours: np.ndarray
    n_actions: int = N_ACTIONS

    @property
    def n_references(self):
        return len(self.actions)

    @cached_property
    def _embedded(self):
        return self.embed(self.states)

    @cached_property
    def _sq_norms(self):
        return np.einsum('ij,ij->i', self._embedded, self._embedded)

    @cached_property
    def _onehot(self):
        return np.eye(self.n_actions)[self.actions]

    @cached_property
    def _keys(self):
        return {(s, int(h)): i for i, (s, h) in enumerate(zip(self.stay_ids.tolist(), self.hours))}

    def embed(self, states):
        """Standardize and scale by sqrt(weight) so that plain Euclidean distance is the weighted one"""
        return (np.asarray(states, dtype=float) - self.mean) / self.scale * np.sqrt(self.distance_weights)

    def reference_index(self, stay_id, hour):
        return self._keys.get((stay_id, int(hour)), -1)

    def _block_counts(self, queries, exclude):
        embedded = self.embed(queries)
        dist = (np.einsum('ij,ij->i', embedded, embedded)[:, None] + self._sq_norms[None, :]
                - 2. * embedded @ self._embedded.T)
        np.maximum(dist, 0., out=dist)

        rows = np.flatnonzero(exclude >= 0)
        dist[rows, exclude[rows]] = np.inf

        # the k-th smallest distance, ties broken by reference insertion order
        kth = np.partition(dist, self.k - 1, axis=1)[:, self.k - 1:self.k]
        closer = dist < kth
        tied = dist == kth
        needed = self.k - closer.sum(axis=1, keepdims=True)
        selected = closer | (tied & (np.cumsum(tied, axis=1) <= needed))
        # with k == n an excluded query only has n-1 neighbors
        selected[rows, exclude[rows]] = False

        return np.rint(selected @ self._onehot).astype(int)

    def neighbor_counts(self, queries, exclude=None, threads=1):
        """Action counts among the k nearest reference transitions of each query state.

        :param queries: (m, D) array of states
        :param exclude: optional (m,) reference indices to drop from the respective
                        neighbor list (-1 for none); with k equal to the number of
                        references such rows count only the remaining n-1 neighbors
        :param threads: number of worker threads scanning query blocks
        """

        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        exclude = np.full(len(queries), -1, dtype=int) if exclude is None else np.asarray(exclude, dtype=int)

        if queries.shape[1] != self.states.shape[1]:
            raise InvalidInputError("query dimension {} does not match the reference dimension {}".format(
                queries.shape[1], self.states.shape[1]))

        block = max(1, MAX_BLOCK_ENTRIES // max(1, self.n_references))
        starts = range(0, len(queries), block)

        def work(start):
            return self._block_counts(queries[start:start + block], exclude[start:start + block])

        if threads > 1 and len(starts) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                blocks = list(pool.map(work, starts))
        else:
            blocks = [work(s) for s in starts]

        if not blocks:
            return np.zeros((0, self.n_actions), dtype=int)

        return np.vstack(blocks)


def read_distance_weights(filename, schema):
    """Read a `feature_name weight` file, features not listed get weight 1"""

    entries, _ = read_kv_file(filename)
    weights = np.ones(schema.dim)

    for name, value in entries.items():
        try:
            weights[schema.names.index(name)] = float(value)
        except ValueError:
            raise ConfigError("'{}': unknown feature or invalid weight in '{} {}'".format(filename, name, value))

    return weights


def fit_behavior(dataset, k=DEFAULT_K, distance_weights=None):
    """Build the kNN behavior model from all transitions of `dataset`"""

    arrays = dataset.arrays
    n_references = len(arrays.actions)

    if n_references == 0:
        raise InvalidInputError("cannot fit a behavior model on an empty dataset")
    if not 1 <= k <= n_references:
        raise ConfigError("k={} must be within 1..{} (number of reference transitions)".format(k, n_references))

    if distance_weights is None:
        distance_weights = np.ones(dataset.schema.dim)
    elif isinstance(distance_weights, dict):
        unknown = set(distance_weights) - set(dataset.schema.names)
        if unknown:
            raise ConfigError("distance weights for unknown feature(s): {}".format(', '.join(sorted(unknown))))
        distance_weights = np.array([float(distance_weights.get(n, 1.)) for n in dataset.schema.names])

    distance_weights = np.asarray(distance_weights, dtype=float)

    if distance_weights.shape != (dataset.schema.dim,):
        raise ConfigError("expected {} distance weights, got {}".format(dataset.schema.dim, distance_weights.size))
    if np.any(~(distance_weights >= 0.)) or not np.any(distance_weights > 0.):
        raise ConfigError("distance weights must be non-negative with at least one positive weight")

    mean = arrays.states.mean(axis=0)
    scale = arrays.states.std(axis=0)
    scale[scale == 0.] = 1.

    stay_ids = np.array([dataset.trajectories[i].stay_id for i in arrays.trajectory], dtype=str)

    model = BehaviorModel(states=arrays.states, actions=arrays.actions, k=int(k),
                          distance_weights=distance_weights, mean=mean, scale=scale,
                          stay_ids=stay_ids, hours=arrays.t)

    logger.info("fitted behavior model on %d reference transitions (k=%d)", n_references, k)

    return model


def _as_array(state):
    return state.features if isinstance(state, StateVector) else np.asarray(state, dtype=float)


def _query_counts(model, state, exclude_self):
    state = _as_array(state)
    exclude = -1

    if exclude_self:
        matches = np.flatnonzero(np.all(model.states == state, axis=1))
        if len(matches):
            exclude = int(matches[0])

    return model.neighbor_counts(state[None, :], np.array([exclude]))[0]


def normalize_counts(counts):
    """Neighbor counts to distributions, each row over the neighbors it actually has"""

    counts = np.asarray(counts, dtype=float)
    return counts / np.maximum(counts.sum(axis=-1, keepdims=True), 1.)


def behavior_probs(model, state, exclude_self=False):
    """Empirical action distribution among the k nearest reference states.

    With `exclude_self`, the first reference transition identical to the query
    is removed from its own neighbor list."""

    return normalize_counts(_query_counts(model, state, exclude_self))


@dataclass(frozen=True)
class SafetyMask:
    allowed: FrozenSet[int]
    epsilon: float

    def __post_init__(self):
        if not self.allowed:
            raise InvalidInputError("a safety mask must allow at least one action")

    def as_array(self, n_actions=N_ACTIONS):
        mask = np.zeros(n_actions, dtype=bool)
        mask[list(self.allowed)] = True
        return mask

    @property
    def bits(self):
        return sum(1 << a for a in self.allowed)


def count_threshold(epsilon, k):
    """Minimum neighbor count for an action to be allowed, `round(ε·k)` and at least one"""

    if not 0. < epsilon < 1.:
        raise InvalidInputError("epsilon must be within (0,1), got {}".format(epsilon))

    return max(1, int(np.floor(epsilon * k + 0.5)))


def masks_from_counts(counts, epsilon, k):
    """Boolean (N, A) masks; rows with no action above the threshold fall back to the argmax"""

    counts = np.atleast_2d(counts)
    masks = counts >= count_threshold(epsilon, k)

    empty = ~masks.any(axis=1)
    if np.any(empty):
        masks[np.flatnonzero(empty), np.argmax(counts[empty], axis=1)] = True

    return masks


def safety_mask(model, state, epsilon, exclude_self=False):
    counts = _query_counts(model, state, exclude_self)
    mask = masks_from_counts(counts, epsilon, model.k)[0]
    return SafetyMask(frozenset(int(a) for a in np.flatnonzero(mask)), epsilon)


def apply_masks(probs, masks):
    """Zero the masked-out entries and renormalize each row over its allowed actions.

    Rows with (almost) no mass inside the mask become uniform over the mask."""

    probs = np.asarray(probs, dtype=float)
    masks = np.asarray(masks, dtype=bool)

    masked = np.where(masks, probs, 0.)
    total = masked.sum(axis=-1, keepdims=True)
    uniform = masks / np.maximum(masks.sum(axis=-1, keepdims=True), 1)

    return np.where(total < MASK_FLOOR, uniform, masked / np.maximum(total, MASK_FLOOR))


def apply_mask(probs, mask):
    """Renormalize a single distribution over the actions allowed by `mask`"""

    if isinstance(mask, SafetyMask):
        mask = mask.as_array(len(probs))

    return apply_masks(probs, mask)


@dataclass(frozen=True, eq=False)
class BehaviorTable:
    """Neighbor counts for every transition of a dataset, in dataset order"""

    counts: np.ndarray
    k: int

    @property
    def probs(self):
        return normalize_counts(self.counts)

    def masks(self, epsilon=None):
        """Safety masks at `epsilon`, all actions allowed for None"""

        if epsilon is None:
            return np.ones(self.counts.shape, dtype=bool)
        return masks_from_counts(self.counts, epsilon, self.k)

    def masked_probs(self, epsilon=None):
        return apply_masks(self.probs, self.masks(epsilon))


def behavior_table(model, dataset, exclude_self=False, threads=1):
    """Neighbor counts for all transitions of `dataset`.

    With `exclude_self`, transitions that are part of the reference set (same
    stay and hour) are removed from their own neighbor lists."""

    arrays = dataset.arrays
    exclude = None

    if exclude_self:
        exclude = np.array([model.reference_index(dataset.trajectories[i].stay_id, h)
                            for i, h in zip(arrays.trajectory, arrays.t)], dtype=int)

    counts = model.neighbor_counts(arrays.states, exclude, threads)
    logger.info("computed behavior neighbor counts for %d transitions", len(counts))

    return BehaviorTable(counts, model.k)


# ---------------------------------------------------------------------------
# storage

def save_behavior(model, filename):
    with open(filename, 'wb') as fhandle:
        np.savez_compressed(
            fhandle, states=model.states, actions=model.actions, k=np.array(model.k),
            distance_weights=model.distance_weights, mean=model.mean, scale=model.scale,
            stay_ids=model.stay_ids, hours=model.hours, n_actions=np.array(model.n_actions))

    logger.info("saved behavior model to '%s'", filename)


def load_behavior(filename):
    with np.load(resolve_data_path(filename), allow_pickle=False) as data:
        return BehaviorModel(
            states=data['states'], actions=data['actions'], k=int(data['k']),
            distance_weights=data['distance_weights'], mean=data['mean'], scale=data['scale'],
            stay_ids=data['stay_ids'], hours=data['hours'], n_actions=int(data['n_actions']))


def write_mask_cache(table, dataset, epsilon, filename):
    """JSON-Lines cache: a header, then per transition its allowed-action bitmask and neighbor counts"""

    masks = table.masks(epsilon)
    arrays = dataset.arrays
    weights = 1 << np.arange(masks.shape[1])

    with open(filename, 'w') as fhandle:
        fhandle.write(json.dumps({'k': table.k, 'epsilon': epsilon, 'n': len(table.counts)}) + '\n')

        for index, (mask, counts) in enumerate(zip(masks, table.counts)):
            fhandle.write(json.dumps({
                'index': index,
                'stay_id': dataset.trajectories[arrays.trajectory[index]].stay_id,
                't': int(arrays.t[index]),
                'mask': int(weights[mask].sum()),
                'counts': counts.tolist(),
                }) + '\n')


def read_mask_cache(filename):
    """Read a mask cache, returns `(table, epsilon)`"""

    counts = []

    with open(resolve_data_path(filename), 'r') as fhandle:
        try:
            header = json.loads(fhandle.readline())
            k, epsilon = int(header['k']), header['epsilon']
        except (ValueError, KeyError, TypeError) as exc:
            raise DatasetFormatError(1, "invalid mask cache header: {}".format(exc)) from exc

        for lineno, line in enumerate(fhandle, 2):
            try:
                row = json.loads(line)
                if row['index'] != len(counts):
                    raise ValueError("expected index {}".format(len(counts)))
                counts.append(row['counts'])
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetFormatError(lineno, "invalid mask cache entry: {}".format(exc)) from exc

    return BehaviorTable(np.array(counts, dtype=int).reshape(-1, N_ACTIONS), k), epsilon
