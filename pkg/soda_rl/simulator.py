"""Synthetic hypotension-like MDP with a three-style behavior mixture and a Monte-Carlo value oracle.

State coordinates: MAP (mmHg), urine output (mL/h), lactate (mmol/L), a
"style" covariate steering which treatment style is used, and further latent
covariates. Every coordinate reverts towards its baseline with rate `drift`;
actions raise MAP (saturating once MAP is high) and urine output.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .behavior import masks_from_counts
from .config import config_from_mapping, read_kv_file
from .datamodel import (
    DEFAULT_GRID,
    MAX_HOURS,
    N_ACTIONS,
    Dataset,
    Feature,
    RewardConfig,
    Schema,
    Trajectory,
    compute_rewards,
    )
from .errors import ConfigError, InvalidInputError
from .policy import softmax
from .tools.divergence import symkl

logger = logging.getLogger(__name__)  # pylint: disable=invalid-name

MAP_COORD = 0
URINE_COORD = 1
LACTATE_COORD = 2
STYLE_COORD = 3

STYLES = ('fluid-heavy', 'vaso-heavy', 'mixed')

# (fluid preference, vasopressor preference) per style
STYLE_PREFERENCES = np.array([[0.6, -1.2], [-1.2, 0.5], [0., 0.]])
# direction in which the style covariate moves each style's logit
STYLE_DIRECTIONS = np.array([1., -1., 0.])

ACTION_COST = 0.3

MAP_RANGE = (20., 160.)
MIN_LACTATE = 0.1

# rollouts per independently seeded chunk of `mc_value`
MC_CHUNK = 2000

FLUID_BINS = np.arange(N_ACTIONS) % DEFAULT_GRID.n_fluid
VASO_BINS = np.arange(N_ACTIONS) // DEFAULT_GRID.n_fluid

DEFAULT_MAP_EFFECTS = tuple(float(v) for v in 1.0 * FLUID_BINS + 1.5 * VASO_BINS)
DEFAULT_URINE_EFFECTS = tuple(float(v) for v in np.array([0., 5., 10., 20.])[FLUID_BINS])


@dataclass(frozen=True)
class SimConfig:
    state_dim: int = 10
    horizon: int = 24
    drift: float = 0.1
    map_noise: float = 2.0
    urine_noise: float = 10.0
    noise_scale: float = 0.3
    baseline_map: float = 65.
    baseline_urine: float = 50.
    baseline_lactate: float = 2.
    lactate_coupling: float = 0.5
    saturation_map: float = 75.
    saturation_width: float = 4.
    initial_map: float = 58.
    initial_map_sd: float = 6.
    initial_urine: float = 40.
    initial_urine_sd: float = 15.
    initial_lactate: float = 2.5
    initial_lactate_sd: float = 1.
    map_effects: Tuple[float, ...] = DEFAULT_MAP_EFFECTS
    urine_effects: Tuple[float, ...] = DEFAULT_URINE_EFFECTS
    style_strength: float = 1.5
    style_prior: Tuple[float, ...] = (1., 1., 1.)
    aggressiveness: float = 0.5
    discharge_prob: float = 0.
    seed: int = 0

    def __post_init__(self):
        if self.state_dim < STYLE_COORD + 1:
            raise ConfigError("state_dim must be at least {}".format(STYLE_COORD + 1))
        if not 1 <= self.horizon <= MAX_HOURS:
            raise ConfigError("horizon must be within 1..{}".format(MAX_HOURS))
        if len(self.map_effects) != N_ACTIONS or len(self.urine_effects) != N_ACTIONS:
            raise ConfigError("action effects must be given for all {} actions".format(N_ACTIONS))
        if min(self.map_noise, self.urine_noise, self.noise_scale,
               self.initial_map_sd, self.initial_urine_sd, self.initial_lactate_sd) < 0.:
            raise ConfigError("noise scales must be non-negative")
        if len(self.style_prior) != len(STYLES) or min(self.style_prior) < 0. or sum(self.style_prior) <= 0.:
            raise ConfigError("style_prior needs {} non-negative weights, not all zero".format(len(STYLES)))
        if not 0. <= self.discharge_prob < 1.:
            raise ConfigError("discharge_prob must be within [0,1)")
        if self.saturation_width <= 0.:
            raise ConfigError("saturation_width must be positive")

    @classmethod
    def from_mapping(cls, mapping, source=None):
        return config_from_mapping(cls, mapping, source)

    @classmethod
    def from_file(cls, filename=None, **overrides):
        """Key-value file with an optional `[action_effects]` block of `action, map_effect, urine_effect` rows"""

        mapping, sections = {}, {}
        if filename:
            mapping, sections = read_kv_file(filename)
            mapping = dict(mapping)

        unknown = set(sections) - {'action_effects'}
        if unknown:
            raise ConfigError("'{}': unknown section(s) {}".format(filename, ', '.join(sorted(unknown))))

        if 'action_effects' in sections:
            mapping.update(_parse_action_effects(sections['action_effects'], filename))

        mapping.update({k: v for k, v in overrides.items() if v is not None})

        return cls.from_mapping(mapping, filename)


def _parse_action_effects(rows, source):
    map_effects = [None] * N_ACTIONS
    urine_effects = [None] * N_ACTIONS

    for row in rows:
        try:
            action, map_effect, urine_effect = row
            action = int(action)
            if map_effects[action] is not None:
                raise ValueError("action {} given twice".format(action))
            map_effects[action], urine_effects[action] = float(map_effect), float(urine_effect)
        except (ValueError, IndexError) as exc:
            raise ConfigError("'{}': invalid action effect row {}: {}".format(source, row, exc)) from exc

    if None in map_effects:
        raise ConfigError("'{}': action effects missing for action(s) {}".format(
            source, ', '.join(str(a) for a, v in enumerate(map_effects) if v is None)))

    return {'map_effects': tuple(map_effects), 'urine_effects': tuple(urine_effects)}


def sim_schema(config):
    names = [('map', 'mmHg'), ('urine_output', 'mL/h'), ('lactate', 'mmol/L'), ('style_covariate', '')]
    names += [('x{}'.format(i), '') for i in range(STYLE_COORD + 1, config.state_dim)]
    return Schema(tuple(Feature(n, u) for n, u in names))


# ---------------------------------------------------------------------------
# behavior mixture

def _as_states(config, state):
    states = np.atleast_2d(np.asarray(state, dtype=float))
    if states.shape[1] != config.state_dim:
        raise InvalidInputError("state dimension {} does not match state_dim {}".format(
            states.shape[1], config.state_dim))
    return states


def style_weights(config, states):
    """(N, 3) mixture weights, a softmax of the style covariate and the prior"""

    states = _as_states(config, states)
    with np.errstate(divide='ignore'):
        log_prior = np.log(np.asarray(config.style_prior, dtype=float))
    return softmax(log_prior + config.style_strength * np.outer(states[:, STYLE_COORD], STYLE_DIRECTIONS))


def style_probs(config, states, style):
    """(N, 20) action distribution of one pure style, more aggressive the lower the MAP"""

    states = _as_states(config, states)
    severity = np.clip((config.baseline_map - states[:, MAP_COORD]) / 5., 0., 3.)
    fluid_pref, vaso_pref = STYLE_PREFERENCES[style]

    logits = (fluid_pref * FLUID_BINS + vaso_pref * VASO_BINS - ACTION_COST * (FLUID_BINS + VASO_BINS)
              + config.aggressiveness * np.outer(severity, FLUID_BINS + VASO_BINS))

    return softmax(logits)


def true_behavior_probs(config, state):
    """Exact behavior mixture distribution for a state (D,) or a batch (N, D)"""

    states = _as_states(config, state)
    weights = style_weights(config, states)
    probs = sum(weights[:, [s]] * style_probs(config, states, s) for s in range(len(STYLES)))

    return probs[0] if np.ndim(state) == 1 else probs


class GroundTruthPolicy:
    """Closed-form map from states (N, D) to action distributions (N, 20)"""

    def __init__(self, func, name='custom'):
        self.func = func
        self.name = name

    def __call__(self, states):
        return self.probs(states)

    def __repr__(self):
        return "GroundTruthPolicy({})".format(self.name)

    def probs(self, states):
        probs = np.asarray(self.func(np.atleast_2d(states)), dtype=float)

        if probs.shape[-1] != N_ACTIONS or np.any(probs < 0.) or not np.allclose(probs.sum(axis=-1), 1.):
            raise InvalidInputError("policy '{}' did not return valid distributions".format(self.name))

        return probs

    @classmethod
    def behavior(cls, config):
        return cls(lambda states: true_behavior_probs(config, states), 'behavior')

    @classmethod
    def style(cls, config, style):
        index = STYLES.index(style) if isinstance(style, str) else int(style)
        return cls(lambda states: style_probs(config, states, index), STYLES[index])

    @classmethod
    def tilted(cls, config, beta, score=None):
        """Behavior reweighted by exp(β·score[a]), by default towards more intense treatment"""

        score = (FLUID_BINS + VASO_BINS) / 7. if score is None else np.asarray(score, dtype=float)

        def func(states):
            probs = true_behavior_probs(config, states) * np.exp(beta * score)
            return probs / probs.sum(axis=1, keepdims=True)

        return cls(func, 'tilted({:g})'.format(beta))

    @classmethod
    def from_callable(cls, func, name='custom'):
        return cls(func, name)

    @classmethod
    def from_learned(cls, collection, index, behavior_model=None):
        """Deployed distribution of a learned policy, masks from `behavior_model` for safe collections"""

        if collection.safe and behavior_model is None:
            raise InvalidInputError("a behavior model is required to mask a policy trained with safety")

        def func(states):
            masks = None
            if collection.safe:
                masks = masks_from_counts(behavior_model.neighbor_counts(states),
                                          collection.safety_epsilon, behavior_model.k)
            return collection.action_probs(index, states, masks)

        return cls(func, 'learned[{}]'.format(index))


def nearest_style(policy_probs, config, states):
    """Index of the pure style closest to the given distributions by mean symKL, plus all distances"""

    distances = np.array([symkl(style_probs(config, states, s), policy_probs).mean() for s in range(len(STYLES))])
    return int(np.argmin(distances)), distances


# ---------------------------------------------------------------------------
# dynamics

def initial_states(config, n, rng):
    states = np.empty((n, config.state_dim))
    noise = rng.standard_normal((n, config.state_dim))

    states[:, MAP_COORD] = config.initial_map + config.initial_map_sd * noise[:, MAP_COORD]
    states[:, URINE_COORD] = config.initial_urine + config.initial_urine_sd * noise[:, URINE_COORD]
    states[:, LACTATE_COORD] = config.initial_lactate + config.initial_lactate_sd * noise[:, LACTATE_COORD]
    states[:, STYLE_COORD:] = noise[:, STYLE_COORD:]

    return _clip(states)


def _clip(states):
    states[:, MAP_COORD] = np.clip(states[:, MAP_COORD], *MAP_RANGE)
    states[:, URINE_COORD] = np.maximum(states[:, URINE_COORD], 0.)
    states[:, LACTATE_COORD] = np.maximum(states[:, LACTATE_COORD], MIN_LACTATE)
    return states


def step(config, states, actions, rng):
    """Next states after taking `actions` in `states`"""

    noise = rng.standard_normal(states.shape)
    nxt = states.copy()

    map_, urine, lactate = states[:, MAP_COORD], states[:, URINE_COORD], states[:, LACTATE_COORD]
    response = 1. / (1. + np.exp((map_ - config.saturation_map) / config.saturation_width))

    nxt[:, MAP_COORD] = (map_ + config.drift * (config.baseline_map - map_)
                         - config.lactate_coupling * config.drift * (lactate - config.baseline_lactate)
                         + response * np.asarray(config.map_effects)[actions]
                         + config.map_noise * noise[:, MAP_COORD])
    nxt[:, URINE_COORD] = (urine + config.drift * (config.baseline_urine - urine)
                           + np.asarray(config.urine_effects)[actions]
                           + config.urine_noise * noise[:, URINE_COORD])
    nxt[:, LACTATE_COORD] = (lactate + config.drift * (config.baseline_lactate - lactate)
                             + config.noise_scale * noise[:, LACTATE_COORD])
    nxt[:, STYLE_COORD:] = ((1. - config.drift) * states[:, STYLE_COORD:]
                            + config.noise_scale * noise[:, STYLE_COORD:])

    return _clip(nxt)


def sample_actions(probs, rng):
    cumulative = np.cumsum(probs, axis=1)
    cumulative[:, -1] = 1.
    return (rng.random(len(probs))[:, None] < cumulative).argmax(axis=1)


def rollout(config, policy, n, rng, reward_config=RewardConfig()):
    """Simulate `n` trajectories under `policy`.

    Returns padded `(states (n,T,D), actions (n,T), rewards (n,T), lengths (n,))`;
    the reward of hour t is computed from the state reached after its action."""

    horizon = config.horizon
    states = initial_states(config, n, rng)

    all_states = np.zeros((n, horizon, config.state_dim))
    actions = np.zeros((n, horizon), dtype=int)
    rewards = np.zeros((n, horizon))
    lengths = np.zeros(n, dtype=int)
    alive = np.ones(n, dtype=bool)

    for hour in range(horizon):
        all_states[:, hour] = states
        actions[:, hour] = sample_actions(policy(states), rng)
        states = step(config, states, actions[:, hour], rng)
        rewards[:, hour] = compute_rewards(states[:, MAP_COORD], states[:, URINE_COORD], reward_config)

        lengths += alive
        alive &= rng.random(n) >= config.discharge_prob

    return all_states, actions, rewards, lengths


def simulate_dataset(config, n_trajectories, seed=None, split='train', policy=None):
    """Dataset of trajectories under the behavior mixture (or `policy`), deterministic for a fixed seed"""

    if n_trajectories < 0:
        raise InvalidInputError("number of trajectories must be non-negative")

    rng = np.random.default_rng(config.seed if seed is None else seed)
    policy = policy or GroundTruthPolicy.behavior(config)
    schema = sim_schema(config)

    if n_trajectories == 0:
        return Dataset((), schema, split)

    states, actions, rewards, lengths = rollout(config, policy, n_trajectories, rng)

    trajectories = tuple(
        Trajectory('sim-{:06d}'.format(i), states[i, :length], actions[i, :length], rewards[i, :length])
        for i, length in enumerate(lengths))

    logger.info("simulated %d trajectories (%d transitions)", n_trajectories, int(lengths.sum()))

    return Dataset(trajectories, schema, split)


def discounted_returns(rewards, lengths, gamma):
    discounts = gamma ** np.arange(1, rewards.shape[1] + 1)
    alive = np.arange(rewards.shape[1])[None, :] < lengths[:, None]
    return np.sum(np.where(alive, rewards, 0.) * discounts, axis=1)


def mc_value(policy, config, n_rollouts, gamma=0.99, seed=0, threads=1):
    """Monte-Carlo estimate of the policy value with on-policy rollouts, returns `(mean, standard error)`.

    Rollouts run in chunks with seeds derived from `(seed, chunk)`, so the
    estimate does not depend on `threads`."""

    if n_rollouts < 1:
        raise InvalidInputError("n_rollouts must be at least 1")

    chunks = [(i, min(MC_CHUNK, n_rollouts - start)) for i, start in enumerate(range(0, n_rollouts, MC_CHUNK))]

    def work(chunk):
        index, size = chunk
        _, _, rewards, lengths = rollout(config, policy, size, np.random.default_rng([seed, index]))
        return discounted_returns(rewards, lengths, gamma)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            returns = np.concatenate(list(pool.map(work, chunks)))
    else:
        returns = np.concatenate([work(c) for c in chunks])

    stderr = float(np.std(returns, ddof=1) / np.sqrt(n_rollouts)) if n_rollouts > 1 else 0.

    return float(np.mean(returns)), stderr
