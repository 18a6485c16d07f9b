"""Off-policy evaluation: per-decision importance weights, CWPDIS, effective sample size and the per-policy metric suite"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .behavior import BehaviorModel, BehaviorTable, apply_masks, behavior_table, normalize_counts
from .config import load_config
from .errors import ConfigError, InvalidInputError
from .policy import PolicyParams, forward, masked_forward
from .tools.divergence import PROB_CLAMP, cross_entropy, symkl

logger = logging.getLogger(__name__)  # pylint: disable=invalid-name

TABLE_COLUMNS = (
    "CWPDIS Value",
    "CE w/ Beh. Actions",
    "SymKL w/ Beh. Action Probabilities",
    "ESS",
    "SymKL btw pairs",
    "# Unseen Actions",
    "Kept",
    )


@dataclass(frozen=True)
class EvalConfig:
    gamma: float = 0.99
    ess_threshold: float = 50.
    unseen_prob_threshold: float = 0.01

    def __post_init__(self):
        if not 0. < self.gamma <= 1.:
            raise ConfigError("gamma must be within (0,1]")
        if self.ess_threshold <= 0. or self.unseen_prob_threshold <= 0.:
            raise ConfigError("thresholds must be positive")

    @classmethod
    def from_file(cls, filename=None, **overrides):
        return load_config(cls, filename, overrides)


@dataclass
class Diagnostics:
    """Counters of the degenerate cases the estimators skip or clamp"""

    clamped_behavior: int = 0
    zero_weight_steps: int = 0
    zero_ess: int = 0

    def merge(self, other):
        self.clamped_behavior += other.clamped_behavior
        self.zero_weight_steps += other.zero_weight_steps
        self.zero_ess += other.zero_ess


@dataclass
class OPEResult:
    value: float
    ess: float
    per_t_weight_sums: np.ndarray
    kept: bool
    unseen_action_count: int = 0
    ce_vs_behavior: float = math.nan
    symkl_vs_behavior: float = math.nan
    # mean symKL to the other kept policies, None when undefined
    pairwise_symkl: Optional[float] = None


# ---------------------------------------------------------------------------
# array level

def taken_ratios(target_taken, behavior_taken, diagnostics=None):
    """π(a_t|s_t)/π_beh(a_t|s_t), zero behavior probabilities clamped at 1e-8"""

    behavior_taken = np.asarray(behavior_taken, dtype=float)
    zero = behavior_taken <= 0.

    if np.any(zero):
        logger.warning("%d taken actions have zero behavior probability, clamped to %g",
                       int(zero.sum()), PROB_CLAMP)
        if diagnostics is not None:
            diagnostics.clamped_behavior += int(zero.sum())

    return np.asarray(target_taken, dtype=float) / np.maximum(behavior_taken, PROB_CLAMP)


def per_decision_weights(ratios, offsets):
    """Running products ρ_nt as a padded (n_trajectories, T_max) array and the alive-at-t mask.

    Past the end of a trajectory its weight stays at the final value."""

    offsets = np.asarray(offsets, dtype=int)
    lengths = np.diff(offsets)
    n_traj = len(lengths)
    horizon = int(lengths.max()) if n_traj else 0

    owner = np.repeat(np.arange(n_traj), lengths)
    cols = np.arange(offsets[-1]) - offsets[owner]

    padded = np.ones((n_traj, horizon))
    padded[owner, cols] = ratios
    alive = np.zeros((n_traj, horizon), dtype=bool)
    alive[owner, cols] = True

    return np.cumprod(padded, axis=1), alive


def pad_rewards(rewards, offsets):
    offsets = np.asarray(offsets, dtype=int)
    lengths = np.diff(offsets)
    owner = np.repeat(np.arange(len(lengths)), lengths)

    padded = np.zeros((len(lengths), int(lengths.max()) if len(lengths) else 0))
    padded[owner, np.arange(offsets[-1]) - offsets[owner]] = rewards
    return padded


def cwpdis(weights, rewards, alive, gamma, diagnostics=None):
    """Σ_t γ^t (Σ_n r_nt ρ_nt)/(Σ_n ρ_nt) over trajectories alive at t, t starting at 1.

    Returns `(value, per-t weight sums)`; steps with a zero weight sum contribute 0."""

    weights = np.where(alive, weights, 0.)
    sums = weights.sum(axis=0)
    numerators = (weights * rewards).sum(axis=0)

    degenerate = sums <= 0.
    if diagnostics is not None:
        diagnostics.zero_weight_steps += int(degenerate.sum())

    discounts = gamma ** np.arange(1, len(sums) + 1)
    terms = np.divide(numerators, sums, out=np.zeros_like(sums), where=~degenerate)

    return float(np.sum(discounts * terms)), sums


def ess(final_weights, diagnostics=None):
    """Kish effective sample size (Σρ)²/Σρ²"""

    final_weights = np.asarray(final_weights, dtype=float)
    squares = np.sum(final_weights ** 2)

    if squares <= 0.:
        logger.warning("all importance weights are zero, ESS is 0")
        if diagnostics is not None:
            diagnostics.zero_ess += 1
        return 0.

    return float(np.sum(final_weights) ** 2 / squares)


def final_weights(weights, offsets):
    lengths = np.diff(np.asarray(offsets, dtype=int))
    return weights[np.arange(len(lengths)), lengths - 1]


# ---------------------------------------------------------------------------
# dataset level

def _policy_probs(policy, states, masks=None):
    """Distributions of a PolicyParams (masked when `masks` is given) or of a callable states -> probs"""

    if isinstance(policy, PolicyParams):
        return masked_forward(policy, states, masks) if masks is not None else forward(policy, states)

    probs = np.asarray(policy(states), dtype=float)
    return apply_masks(probs, masks) if masks is not None else probs


def _behavior_probs(behavior, dataset):
    if isinstance(behavior, BehaviorModel):
        return behavior_table(behavior, dataset).probs
    if isinstance(behavior, BehaviorTable):
        return behavior.probs
    return np.asarray(behavior, dtype=float)


def importance_weights(policy, behavior, trajectory, masks=None, diagnostics=None):
    """ρ_1..ρ_T of one trajectory.

    :param behavior: BehaviorModel (the trajectory's states are queried) or (T, A) behavior probabilities
    """

    if isinstance(behavior, BehaviorModel):
        behavior = normalize_counts(behavior.neighbor_counts(trajectory.states))

    rows = np.arange(len(trajectory))
    target = _policy_probs(policy, trajectory.states, masks)[rows, trajectory.actions]
    ratios = taken_ratios(target, np.asarray(behavior)[rows, trajectory.actions], diagnostics)

    return np.cumprod(ratios)


def cwpdis_from_probs(target_probs, behavior_probs_, dataset, eval_config=EvalConfig(), diagnostics=None):
    """CWPDIS value and ESS from per-transition (N, A) target and behavior distributions"""

    if len(dataset) == 0:
        raise InvalidInputError("cannot evaluate on an empty dataset")

    arrays = dataset.arrays
    rows = np.arange(len(arrays.actions))

    ratios = taken_ratios(target_probs[rows, arrays.actions], behavior_probs_[rows, arrays.actions], diagnostics)
    weights, alive = per_decision_weights(ratios, arrays.offsets)
    value, sums = cwpdis(weights, pad_rewards(arrays.rewards, arrays.offsets), alive, eval_config.gamma,
                         diagnostics)
    size = ess(final_weights(weights, arrays.offsets), diagnostics)

    return OPEResult(value, size, sums, size >= eval_config.ess_threshold)


def cwpdis_value(policy, behavior, dataset, eval_config=EvalConfig(), masks=None, diagnostics=None):
    """CWPDIS estimate of `policy` on `dataset`.

    :param behavior: BehaviorModel, BehaviorTable aligned to `dataset` or (N, A) probabilities
    :param masks: (N, A) safety masks applied to the policy, None for the unmasked policy
    """

    target = _policy_probs(policy, dataset.arrays.states, masks)
    return cwpdis_from_probs(target, _behavior_probs(behavior, dataset), dataset, eval_config, diagnostics).value


def empirical_behavior_value(dataset, gamma=0.99):
    """Mean discounted return Σ_t γ^t r_t of the logged trajectories"""

    if len(dataset) == 0:
        raise InvalidInputError("cannot evaluate on an empty dataset")

    return float(np.mean([np.sum(gamma ** np.arange(1, len(t) + 1) * t.rewards) for t in dataset.trajectories]))


def unseen_action_count(probs, counts, threshold=0.01):
    """Number of (state, action) pairs with probability above `threshold` on an action no neighbor took"""
    return int(np.sum((np.asarray(probs) > threshold) & (np.asarray(counts) == 0)))


@dataclass
class CollectionEvaluation:
    """Per-policy results plus the pairwise symKL matrix (NaN outside kept pairs)"""

    results: List[OPEResult]
    pairwise: np.ndarray
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    def __len__(self):
        return len(self.results)

    def __iter__(self):
        return iter(self.results)

    def __getitem__(self, index):
        return self.results[index]

    @property
    def kept(self):
        return [i for i, r in enumerate(self.results) if r.kept]


def evaluate_collection(collection, behavior, dataset, eval_config=EvalConfig(), masks=None, threads=1):
    """Full metric suite for every policy of a collection.

    :param behavior: BehaviorModel or a BehaviorTable aligned to `dataset`
    :param masks: safety masks of the dataset states, by default derived from the
                  behavior counts at the collection's training epsilon
    """

    table = behavior_table(behavior, dataset, threads=threads) if isinstance(behavior, BehaviorModel) else behavior
    arrays = dataset.arrays

    if masks is None:
        masks = table.masks(collection.safety_epsilon)

    reference = table.masked_probs(collection.safety_epsilon)
    diagnostics = Diagnostics()
    results, deployed = [], []

    for index in range(len(collection)):
        probs = collection.action_probs(index, arrays.states, masks)
        result = cwpdis_from_probs(probs, table.probs, dataset, eval_config, diagnostics)

        result.ce_vs_behavior = float(cross_entropy(probs, arrays.actions).mean())
        result.symkl_vs_behavior = float(symkl(reference, probs).mean())
        result.unseen_action_count = unseen_action_count(probs, table.counts, eval_config.unseen_prob_threshold)

        logger.info("policy %d: CWPDIS %.4f, ESS %.1f%s", index, result.value, result.ess,
                    "" if result.kept else " (pruned)")

        results.append(result)
        deployed.append(probs)

    kept = [i for i, r in enumerate(results) if r.kept]
    pairwise = np.full((len(collection), len(collection)), np.nan)

    for pos, i in enumerate(kept):
        pairwise[i, i] = 0.
        for j in kept[pos + 1:]:
            pairwise[i, j] = pairwise[j, i] = float(symkl(deployed[i], deployed[j]).mean())

    if len(kept) > 1:
        for i in kept:
            results[i].pairwise_symkl = float(np.sum(pairwise[i, kept]) / (len(kept) - 1))

    return CollectionEvaluation(results, pairwise, diagnostics)


def _mean_std(values):
    if not values:
        return None
    return float(np.mean(values)), float(np.std(values))


def collection_summary(evaluation):
    """Mean and standard deviation of every metric over the kept policies, keyed by table column"""

    kept = [evaluation.results[i] for i in evaluation.kept]
    pairs = [evaluation.pairwise[i, j] for n, i in enumerate(evaluation.kept) for j in evaluation.kept[n + 1:]]

    return {
        TABLE_COLUMNS[0]: _mean_std([r.value for r in kept]),
        TABLE_COLUMNS[1]: _mean_std([r.ce_vs_behavior for r in kept]),
        TABLE_COLUMNS[2]: _mean_std([r.symkl_vs_behavior for r in kept]),
        TABLE_COLUMNS[3]: _mean_std([r.ess for r in kept]),
        TABLE_COLUMNS[4]: _mean_std(pairs),
        TABLE_COLUMNS[5]: _mean_std([r.unseen_action_count for r in kept]),
        TABLE_COLUMNS[6]: len(kept),
        }


def result_row(result):
    """Table cells of one policy, undefined values as empty strings"""

    return [repr(result.value), repr(result.ce_vs_behavior), repr(result.symkl_vs_behavior), repr(result.ess),
            '' if result.pairwise_symkl is None else repr(result.pairwise_symkl),
            str(result.unseen_action_count), 'true' if result.kept else 'false']
