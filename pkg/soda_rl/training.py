"""Joint optimization of a policy collection: quality to the behavior policy, pairwise diversity, safety masks.

The minimized objective is

    quality − λ·diversity + l2·‖θ‖²

so that diversity between the policies is rewarded. Gradients are derived by
hand through the masked softmax and the clamped CE/KL terms, the update is Adam.
"""

import csv
import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np

from .behavior import BehaviorModel, apply_masks, behavior_table
from .config import config_from_mapping, config_to_mapping, load_config
from .errors import ConfigError, InvalidInputError, TrainingError
from .ope import EvalConfig, cwpdis_from_probs
from .policy import (
    HIDDEN,
    backward,
    forward_pass,
    init_collection,
    load_collection,
    masked_softmax,
    save_collection,
    softmax_backward,
    )
from .tools.divergence import PROB_CLAMP, cross_entropy, symkl, symkl_grad

logger = logging.getLogger(__name__)  # pylint: disable=invalid-name

QUALITY_KINDS = ('CE', 'symKL', 'none')

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# probability an allowed-only policy may leak onto masked actions
SAFETY_TOLERANCE = 1e-12

# config file keys which are not valid Python identifiers
CONFIG_ALIASES = {'lambda': 'lambda_', 'K': 'n_policies'}

LAMBDA_GRID = (1., 0.4, 0.1, 0.01, 0.001)
EPSILON_GRID = (0.01, 0.03, 0.05)


@dataclass(frozen=True)
class TrainConfig:
    lambda_: float = 0.4
    epsilon: float = 0.03
    quality_kind: str = 'symKL'
    use_safety: bool = True
    use_diversity: bool = True
    learning_rate: float = 0.001
    batch_size: int = 100
    l2_coeff: float = 1e-6
    n_policies: int = 4
    epochs: int = 30
    seed: int = 0
    hidden: int = HIDDEN

    def __post_init__(self):
        kinds = {k.lower(): k for k in QUALITY_KINDS}
        if self.quality_kind.lower() not in kinds:
            raise ConfigError("quality_kind must be one of {}".format(', '.join(QUALITY_KINDS)))
        object.__setattr__(self, 'quality_kind', kinds[self.quality_kind.lower()])

        if self.lambda_ < 0.:
            raise ConfigError("lambda must be non-negative")
        if not 0. < self.epsilon < 1.:
            raise ConfigError("epsilon must be within (0,1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.n_policies < 1:
            raise ConfigError("the collection needs at least one policy")
        if self.learning_rate <= 0. or self.l2_coeff < 0. or self.epochs < 0 or self.hidden < 1:
            raise ConfigError("learning_rate must be positive; l2_coeff, epochs non-negative; hidden positive")

    @property
    def safety_epsilon(self):
        return self.epsilon if self.use_safety else None

    @classmethod
    def from_mapping(cls, mapping, source=None):
        return config_from_mapping(cls, {CONFIG_ALIASES.get(k, k): v for k, v in mapping.items()}, source)

    @classmethod
    def from_file(cls, filename=None, **overrides):
        return load_config(cls, filename, overrides, CONFIG_ALIASES)


@dataclass(frozen=True)
class LossBreakdown:
    quality: float
    diversity: float
    l2: float
    total: float
    masked_taken: int = 0


class Batch(NamedTuple):
    """States of one training step with their taken actions, masks and behavior distributions"""

    states: np.ndarray
    actions: np.ndarray
    masks: np.ndarray
    behavior: Optional[np.ndarray] = None


def _outputs(collection, batch):
    """Masked probabilities and backprop caches of every policy"""

    outputs = []
    for params in collection.policies:
        logits, cache = forward_pass(params, batch.states)
        outputs.append((masked_softmax(logits, batch.masks), cache))
    return outputs


def _ce_terms(probs, batch):
    allowed = batch.masks[np.arange(len(batch.actions)), batch.actions]
    return cross_entropy(probs, batch.actions), int(np.sum(~allowed))


def quality_loss_ce(collection, batch):
    """Mean over policies and transitions of −ln π_i(a_t|s_t), probabilities clamped at 1e-8"""

    losses = [_ce_terms(p, batch)[0].mean() for p, _ in _outputs(collection, batch)]
    return float(np.mean(losses))


def _masked_behavior(batch):
    if batch.behavior is None:
        raise InvalidInputError("behavior probabilities required for the symKL quality loss")
    return apply_masks(batch.behavior, batch.masks)


def quality_loss_symkl(collection, batch):
    """Mean over policies and states of symKL(masked behavior, masked policy)"""

    behavior = _masked_behavior(batch)
    losses = [symkl(behavior, p).mean() for p, _ in _outputs(collection, batch)]
    return float(np.mean(losses))


def pairwise_symkl(probs_i, probs_j):
    """Mean over states of the symmetric KL between two (masked) policies' distributions"""
    return float(symkl(probs_i, probs_j).mean())


def _diversity(probs):
    n_policies = len(probs)

    if n_policies < 2:
        return 0., {}

    pairs = {(i, j): pairwise_symkl(probs[i], probs[j])
             for i in range(n_policies) for j in range(i + 1, n_policies)}

    return 2. / (n_policies * (n_policies - 1)) * sum(pairs.values()), pairs


def diversity_loss(collection, batch):
    """Average pairwise symKL over all unordered pairs of the collection"""

    if len(collection) < 2:
        logger.warning("diversity of a collection with a single policy is 0")
        return 0.

    return _diversity([p for p, _ in _outputs(collection, batch)])[0]


def objective(collection, batch, config, with_grads=True):
    """Loss breakdown and (optionally) per-policy gradients in `PARAM_NAMES` order"""

    outputs = _outputs(collection, batch)
    probs = [p for p, _ in outputs]
    n_policies = len(probs)
    n_states = len(batch.states)

    if config.use_safety:
        for p in probs:
            if np.any(p[~batch.masks] > SAFETY_TOLERANCE):
                raise TrainingError("policy assigns probability to a masked action")

    dprobs = [np.zeros_like(p) for p in probs]
    masked_taken = 0

    if config.quality_kind == 'CE':
        rows = np.arange(n_states)
        values = []
        for p, dp in zip(probs, dprobs):
            ce, masked_taken = _ce_terms(p, batch)
            values.append(ce.mean())
            taken = p[rows, batch.actions]
            active = taken > PROB_CLAMP
            dp[rows[active], batch.actions[active]] = -1. / (n_policies * n_states * taken[active])
        quality = float(np.mean(values))

    elif config.quality_kind == 'symKL':
        behavior = _masked_behavior(batch)
        values = []
        for p, dp in zip(probs, dprobs):
            values.append(symkl(behavior, p).mean())
            dp += symkl_grad(behavior, p) / (n_policies * n_states)
        quality = float(np.mean(values))

    else:
        quality = 0.

    diversity, pairs = _diversity(probs)

    if config.use_diversity and n_policies > 1 and config.lambda_ > 0.:
        scale = -config.lambda_ * 2. / (n_policies * (n_policies - 1)) / n_states
        for (i, j) in pairs:
            dprobs[i] += scale * symkl_grad(probs[j], probs[i])
            dprobs[j] += scale * symkl_grad(probs[i], probs[j])

    l2 = config.l2_coeff * collection.squared_norm()
    total = quality - (config.lambda_ * diversity if config.use_diversity else 0.) + l2

    losses = LossBreakdown(quality, diversity, l2, total, masked_taken)

    if not with_grads:
        return losses, None

    grads = []
    for params, (p, cache), dp in zip(collection.policies, outputs, dprobs):
        pgrads = backward(params, cache, softmax_backward(p, dp))
        grads.append([g + 2. * config.l2_coeff * a for g, a in zip(pgrads, params.arrays)])

    return losses, grads


def total_objective(collection, batch, config):
    return objective(collection, batch, config, with_grads=False)[0]


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, collection):
        return cls([[np.zeros_like(a) for a in p.arrays] for p in collection.policies],
                   [[np.zeros_like(a) for a in p.arrays] for p in collection.policies])

    def to_json(self):
        return {'step': self.step,
                'm': [[a.ravel().tolist() for a in p] for p in self.m],
                'v': [[a.ravel().tolist() for a in p] for p in self.v]}

    @classmethod
    def from_json(cls, data, collection):
        def unflatten(values):
            return [[np.array(flat, dtype=float).reshape(a.shape) for flat, a in zip(policy, params.arrays)]
                    for policy, params in zip(values, collection.policies)]
        return cls(unflatten(data['m']), unflatten(data['v']), int(data['step']))


def grad_step(collection, batch, config, optimizer, epoch=None, step=None):
    """One Adam update of every policy (in place), returns `(collection, losses)`"""

    losses, grads = objective(collection, batch, config)

    if not np.isfinite(losses.total) or not all(np.all(np.isfinite(g)) for pg in grads for g in pg):
        raise TrainingError("non-finite loss or gradient (losses: {})".format(losses), epoch, step)

    optimizer.step += 1
    correction1 = 1. - ADAM_BETA1 ** optimizer.step
    correction2 = 1. - ADAM_BETA2 ** optimizer.step

    for params, pgrads, pm, pv in zip(collection.policies, grads, optimizer.m, optimizer.v):
        for array, grad, m, v in zip(params.arrays, pgrads, pm, pv):
            m *= ADAM_BETA1
            m += (1. - ADAM_BETA1) * grad
            v *= ADAM_BETA2
            v += (1. - ADAM_BETA2) * grad * grad
            array -= config.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + ADAM_EPS)

    return collection, losses


@dataclass
class EpochRecord:
    epoch: int
    losses: LossBreakdown
    val_ess: List[float] = field(default_factory=list)
    val_cwpdis: List[float] = field(default_factory=list)


def epoch_batches(dataset, batch_size, seed, epoch):
    """Transition indices of each batch of shuffled whole trajectories"""

    offsets = dataset.arrays.offsets
    order = np.random.default_rng([seed, epoch]).permutation(len(dataset))

    for start in range(0, len(order), batch_size):
        chosen = order[start:start + batch_size]
        yield np.concatenate([np.arange(offsets[i], offsets[i + 1]) for i in chosen])


def make_batch(dataset, table, config, indices):
    arrays = dataset.arrays
    masks = table.masks(config.safety_epsilon)
    return Batch(arrays.states[indices], arrays.actions[indices], masks[indices],
                 table.probs[indices] if config.quality_kind == 'symKL' else None)


def validation_metrics(collection, dataset, table, eval_config):
    """Per-policy (ESS, CWPDIS value) on a held-out split"""

    masks = table.masks(collection.safety_epsilon)
    results = [cwpdis_from_probs(collection.action_probs(i, dataset.arrays.states, masks),
                                 table.probs, dataset, eval_config)
               for i in range(len(collection))]
    return [r.ess for r in results], [r.value for r in results]


def train(dataset, config, behavior, validation=None, eval_config=None,
          collection=None, optimizer=None, start_epoch=0, epoch_callback=None, threads=1):
    """Train a policy collection.

    :param behavior: BehaviorModel fitted on `dataset` (neighbor lists exclude the
                     transition itself) or a precomputed BehaviorTable aligned to `dataset`
    :param validation: optional `(dataset, BehaviorTable)` for per-epoch ESS/CWPDIS
    :param collection, optimizer, start_epoch: state to resume from
    :param epoch_callback: called as `callback(epoch, collection, optimizer, history)` after each epoch
    :returns: `(collection, history)`
    """

    if len(dataset) == 0:
        raise InvalidInputError("cannot train on an empty dataset")

    table = behavior_table(behavior, dataset, exclude_self=True, threads=threads) \
        if isinstance(behavior, BehaviorModel) else behavior

    if len(table.counts) != dataset.n_transitions:
        raise InvalidInputError("behavior table does not match the training dataset")

    eval_config = eval_config or EvalConfig()

    if collection is None:
        collection = init_collection(dataset.schema, config.n_policies, config.seed, config.hidden,
                                     config.safety_epsilon)
        collection.metadata.update(train_config=dict(config_to_mapping(config)))
    if optimizer is None:
        optimizer = AdamState.zeros_like(collection)

    if config.use_diversity and len(collection) < 2:
        logger.warning("diversity requested for a collection with a single policy, the term is 0")

    history = []

    for epoch in range(start_epoch, config.epochs):
        step_losses = []

        for step, indices in enumerate(epoch_batches(dataset, config.batch_size, config.seed, epoch)):
            batch = make_batch(dataset, table, config, indices)
            collection, losses = grad_step(collection, batch, config, optimizer, epoch, step)
            step_losses.append(losses)

        mean = LossBreakdown(*[float(np.mean([getattr(l, f) for l in step_losses]))
                               for f in ('quality', 'diversity', 'l2', 'total')],
                             masked_taken=sum(l.masked_taken for l in step_losses))

        if mean.masked_taken:
            logger.warning("epoch %d: %d taken actions were outside the safety mask (clamped CE)",
                           epoch, mean.masked_taken)

        record = EpochRecord(epoch, mean)
        if validation is not None:
            record.val_ess, record.val_cwpdis = validation_metrics(collection, validation[0], validation[1],
                                                                   eval_config)
        history.append(record)

        logger.info("epoch %d: quality %.5f, diversity %.5f, l2 %.3g, total %.5f",
                    epoch, mean.quality, mean.diversity, mean.l2, mean.total)

        if epoch_callback:
            epoch_callback(epoch, collection, optimizer, history)

    return collection, history


# ---------------------------------------------------------------------------
# checkpoints and history

def history_header(n_policies):
    return (['epoch', 'quality', 'diversity', 'l2', 'total']
            + ['val_ess_{}'.format(i) for i in range(n_policies)]
            + ['val_cwpdis_{}'.format(i) for i in range(n_policies)])


def history_rows(history, n_policies):
    for record in history:
        yield ([record.epoch, repr(record.losses.quality), repr(record.losses.diversity),
                repr(record.losses.l2), repr(record.losses.total)]
               + [repr(v) for v in record.val_ess] + [''] * (n_policies - len(record.val_ess))
               + [repr(v) for v in record.val_cwpdis] + [''] * (n_policies - len(record.val_cwpdis)))


def write_history(history, n_policies, filename, append=False):
    with open(filename, 'a' if append else 'w', newline='') as fhandle:
        writer = csv.writer(fhandle, lineterminator='\n')
        if not append:
            writer.writerow(history_header(n_policies))
        writer.writerows(history_rows(history, n_policies))


def save_training_checkpoint(collection, optimizer, epoch, config, filename, history=()):
    """Store parameters, Adam moments, the number of completed epochs and the history rows so far"""

    save_collection(collection, filename, extra={
        'epochs_completed': epoch,
        'history': [list(map(str, row)) for row in history],
        'train_config': dict(config_to_mapping(config)),
        'optimizer': optimizer.to_json(),
        })


class Checkpoint(NamedTuple):
    collection: object
    optimizer: AdamState
    epochs_completed: int
    config: TrainConfig
    history: list


def load_training_checkpoint(filename):
    collection, data = load_collection(filename)

    try:
        optimizer = AdamState.from_json(data['optimizer'], collection)
        config = TrainConfig.from_mapping(data['train_config'], filename)
        return Checkpoint(collection, optimizer, int(data['epochs_completed']), config, data.get('history', []))
    except KeyError as exc:
        raise InvalidInputError("'{}' is not a training checkpoint (missing {})".format(filename, exc)) from exc
