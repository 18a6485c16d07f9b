"""Feedforward softmax policies (three weight matrices, ReLU hidden layers) and their safety-masked distributions"""

import json
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import resolve_data_path
from .behavior import SafetyMask
from .datamodel import DEFAULT_GRID, N_ACTIONS, ActionGrid, Schema, StateVector
from .errors import InvalidInputError, SchemaError

logger = logging.getLogger(__name__)  # pylint: disable=invalid-name

HIDDEN = 128
ACTIVATION = 'relu'

CHECKPOINT_FORMAT = 'soda-rl-policy-collection'
CHECKPOINT_VERSION = 1

PARAM_NAMES = ('W1', 'b1', 'W2', 'b2', 'W3', 'b3')


@dataclass(eq=False)
class PolicyParams:
    """Weights W1 (D x H), W2 (H x H), W3 (H x A) and biases b1, b2, b3"""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    activation: str = ACTIVATION
    seed: Optional[int] = None

    def __post_init__(self):
        if self.activation != ACTIVATION:
            raise InvalidInputError("unsupported activation '{}'".format(self.activation))

        shapes = [(self.input_dim, self.hidden), (self.hidden,), (self.hidden, self.hidden), (self.hidden,),
                  (self.hidden, self.n_actions), (self.n_actions,)]
        for name, array, shape in zip(PARAM_NAMES, self.arrays, shapes):
            if array.shape != shape:
                raise InvalidInputError("parameter {} has shape {}, expected {}".format(name, array.shape, shape))
            if not np.all(np.isfinite(array)):
                raise InvalidInputError("parameter {} has non-finite entries".format(name))

    @property
    def arrays(self):
        return [self.W1, self.b1, self.W2, self.b2, self.W3, self.b3]

    @property
    def input_dim(self):
        return self.W1.shape[0]

    @property
    def hidden(self):
        return self.W1.shape[1]

    @property
    def n_actions(self):
        return self.W3.shape[1]

    def copy(self):
        return PolicyParams(*[a.copy() for a in self.arrays], activation=self.activation, seed=self.seed)

    def squared_norm(self):
        return float(sum(np.sum(a * a) for a in self.arrays))


def init_params(seed, input_dim, hidden=HIDDEN, n_actions=N_ACTIONS):
    """Glorot-uniform weights, zero biases, deterministic for a fixed seed"""

    if input_dim < 1:
        raise InvalidInputError("input dimension must be at least 1")

    rng = np.random.default_rng(seed)

    def glorot(fan_in, fan_out):
        limit = np.sqrt(6. / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    return PolicyParams(
        W1=glorot(input_dim, hidden), b1=np.zeros(hidden),
        W2=glorot(hidden, hidden), b2=np.zeros(hidden),
        W3=glorot(hidden, n_actions), b3=np.zeros(n_actions),
        seed=seed)


def _as_states(params, state):
    states = state.features if isinstance(state, StateVector) else np.asarray(state, dtype=float)

    if states.shape[-1:] != (params.input_dim,):
        raise InvalidInputError("state dimension {} does not match the policy input dimension {}".format(
            states.shape[-1] if states.ndim else 0, params.input_dim))
    if not np.all(np.isfinite(states)):
        raise InvalidInputError("states must be finite")

    return states


def forward_pass(params, states):
    """Logits for a (B, D) batch, plus the activations needed by `backward`"""

    pre1 = states @ params.W1 + params.b1
    h1 = np.maximum(pre1, 0.)
    pre2 = h1 @ params.W2 + params.b2
    h2 = np.maximum(pre2, 0.)
    logits = h2 @ params.W3 + params.b3

    return logits, (states, pre1, h1, pre2, h2)


def backward(params, cache, dlogits):
    """Gradients of the parameters (in `PARAM_NAMES` order) given dLoss/dlogits"""

    states, pre1, h1, pre2, h2 = cache

    dW3 = h2.T @ dlogits
    db3 = dlogits.sum(axis=0)
    dpre2 = (dlogits @ params.W3.T) * (pre2 > 0.)
    dW2 = h1.T @ dpre2
    db2 = dpre2.sum(axis=0)
    dpre1 = (dpre2 @ params.W2.T) * (pre1 > 0.)
    dW1 = states.T @ dpre1
    db1 = dpre1.sum(axis=0)

    return [dW1, db1, dW2, db2, dW3, db3]


def softmax(logits):
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def masked_softmax(logits, masks):
    """Softmax restricted to the allowed actions, exactly zero elsewhere"""

    masks = np.asarray(masks, dtype=bool)
    if not np.all(masks.any(axis=-1)):
        raise InvalidInputError("every safety mask must allow at least one action")

    return softmax(np.where(masks, logits, -np.inf))


def softmax_backward(probs, dprobs):
    """dLoss/dlogits from dLoss/dprobs for a (masked) softmax, masked entries have zero probability"""
    return probs * (dprobs - np.sum(probs * dprobs, axis=-1, keepdims=True))


def forward(params, state):
    """Action distribution for one state (D,) or a batch (B, D)"""

    states = _as_states(params, state)
    logits, _ = forward_pass(params, np.atleast_2d(states))
    probs = softmax(logits)

    return probs[0] if states.ndim == 1 else probs


def masked_forward(params, state, mask):
    """Action distribution renormalized over the actions allowed by `mask`"""

    states = _as_states(params, state)
    if isinstance(mask, SafetyMask):
        mask = mask.as_array(params.n_actions)

    logits, _ = forward_pass(params, np.atleast_2d(states))
    probs = masked_softmax(logits, np.atleast_2d(mask))

    return probs[0] if states.ndim == 1 else probs


@dataclass(eq=False)
class PolicyCollection:
    """K policies sharing input schema and action grid.

    `safety_epsilon` is the behavior threshold the collection was trained with
    (None when trained without the safety constraint); it decides whether the
    deployed distributions are masked."""

    policies: List[PolicyParams]
    schema: Schema
    grid: ActionGrid = DEFAULT_GRID
    safety_epsilon: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.policies:
            raise InvalidInputError("a policy collection needs at least one policy")
        if any(p.input_dim != self.schema.dim for p in self.policies):
            raise SchemaError("all policies must take {} inputs".format(self.schema.dim))
        if any(p.n_actions != self.grid.n_actions for p in self.policies):
            raise SchemaError("all policies must have {} outputs".format(self.grid.n_actions))

    def __len__(self):
        return len(self.policies)

    @property
    def safe(self):
        return self.safety_epsilon is not None

    def action_probs(self, index, states, masks=None):
        """Deployed distribution of policy `index`: masked when the collection is safe"""

        params = self.policies[index]

        if self.safe:
            if masks is None:
                raise InvalidInputError("safety masks required for a collection trained with safety")
            return masked_forward(params, states, masks)

        return forward(params, states)

    def squared_norm(self):
        return sum(p.squared_norm() for p in self.policies)

    def copy(self):
        return PolicyCollection([p.copy() for p in self.policies], self.schema, self.grid,
                                self.safety_epsilon, dict(self.metadata))


def init_collection(schema, n_policies, seed, hidden=HIDDEN, safety_epsilon=None):
    """K independently initialized policies, policy i seeded with (seed, i)"""

    policies = [init_params(np.random.SeedSequence([seed, i]), schema.dim, hidden)
                for i in range(n_policies)]
    for policy in policies:
        policy.seed = seed

    return PolicyCollection(policies, schema, safety_epsilon=safety_epsilon)


# ---------------------------------------------------------------------------
# checkpoints

def _params_to_json(params):
    return {
        'activation': params.activation,
        'seed': params.seed,
        'shapes': {n: list(a.shape) for n, a in zip(PARAM_NAMES, params.arrays)},
        'payload': {n: a.ravel().tolist() for n, a in zip(PARAM_NAMES, params.arrays)},
        }


def _params_from_json(data):
    arrays = {n: np.array(data['payload'][n], dtype=float).reshape(data['shapes'][n]) for n in PARAM_NAMES}
    return PolicyParams(activation=data['activation'], seed=data.get('seed'), **arrays)


def collection_to_json(collection, extra=None):
    data = {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'schema': collection.schema.to_json(),
        'grid': {'fluid_edges': list(collection.grid.fluid_edges),
                 'vaso_edges': list(collection.grid.vaso_edges)},
        'safety_epsilon': collection.safety_epsilon,
        'metadata': collection.metadata,
        'policies': [_params_to_json(p) for p in collection.policies],
        }

    if extra:
        data.update(extra)

    return data


def collection_from_json(data):
    if data.get('format') != CHECKPOINT_FORMAT:
        raise InvalidInputError("not a policy collection checkpoint")
    if data.get('version') != CHECKPOINT_VERSION:
        raise InvalidInputError("unsupported checkpoint version {}".format(data.get('version')))

    grid = ActionGrid(tuple(data['grid']['fluid_edges']), tuple(data['grid']['vaso_edges']))

    return PolicyCollection([_params_from_json(p) for p in data['policies']],
                            Schema.from_json(data['schema']), grid,
                            data.get('safety_epsilon'), data.get('metadata', {}))


def save_collection(collection, filename, extra=None):
    """Write a versioned JSON checkpoint (exact float round trip), `extra` keys are stored alongside"""

    with open(filename, 'w') as fhandle:
        json.dump(collection_to_json(collection, extra), fhandle)

    logger.info("saved %d policies to '%s'", len(collection), filename)


def load_collection(filename):
    """Returns `(collection, raw checkpoint dict)`"""

    with open(resolve_data_path(filename), 'r') as fhandle:
        data = json.load(fhandle)

    return collection_from_json(data), data
