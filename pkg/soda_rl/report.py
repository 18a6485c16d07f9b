"""Average action distributions over state subsets and the states where the policies disagree most"""

import logging
from typing import NamedTuple

import numpy as np

from .datamodel import MAP_FEATURE, action_components
from .errors import InvalidInputError, SchemaError
from .tools.divergence import symkl

logger = logging.getLogger(__name__)  # pylint: disable=invalid-name

LACTATE_FEATURE = 'lactate'
LACTATE_THRESHOLD = 2.
LOW_MAP_THRESHOLD = 55.

FILTERS = ('all', 'fluid-taken', 'vaso-taken', 'lactate>2', 'MAP<55')

# output file stem per filter
FILTER_STEMS = {
    'all': 'all',
    'fluid-taken': 'fluid_taken',
    'vaso-taken': 'vaso_taken',
    'lactate>2': 'lactate_gt_2',
    'MAP<55': 'map_lt_55',
    }


def _feature_values(dataset, name):
    try:
        return dataset.arrays.states[:, dataset.schema.index(name)]
    except SchemaError:
        logger.warning("feature '%s' is not part of the schema, the filter selects no states", name)
        return None


def select_transitions(dataset, name):
    """Boolean selection of the dataset transitions matching filter `name`"""

    arrays = dataset.arrays

    if name == 'all':
        return np.ones(len(arrays.actions), dtype=bool)

    if name in ('fluid-taken', 'vaso-taken'):
        components = np.array([action_components(a) for a in arrays.actions], dtype=int).reshape(-1, 2)
        return components[:, 1 if name == 'fluid-taken' else 0] > 0

    if name == 'lactate>2':
        values = _feature_values(dataset, LACTATE_FEATURE)
        return values > LACTATE_THRESHOLD if values is not None else np.zeros(len(arrays.actions), dtype=bool)

    if name == 'MAP<55':
        values = _feature_values(dataset, MAP_FEATURE)
        return values < LOW_MAP_THRESHOLD if values is not None else np.zeros(len(arrays.actions), dtype=bool)

    raise InvalidInputError("unknown filter '{}', expected one of {}".format(name, ', '.join(FILTERS)))


def average_action_probs(probs, selection):
    """Mean distribution over the selected rows, None for an empty selection"""

    if not np.any(selection):
        return None
    return np.asarray(probs)[selection].mean(axis=0)


def per_state_diversity(agent_probs):
    """Mean symKL over all pairs of agents, per state"""

    if len(agent_probs) < 2:
        raise InvalidInputError("per-state diversity needs at least two agents")

    pairs = [symkl(agent_probs[i], agent_probs[j])
             for i in range(len(agent_probs)) for j in range(i + 1, len(agent_probs))]
    return np.mean(pairs, axis=0)


class DiverseState(NamedTuple):
    index: int
    diversity: float


def top_diverse_states(agent_probs, top):
    """The `top` transitions with the largest per-state diversity, sorted nonincreasing (ties by index)"""

    diversity = per_state_diversity(agent_probs)
    order = np.argsort(-diversity, kind='stable')[:top]
    return [DiverseState(int(i), float(diversity[i])) for i in order]
