import numpy as np
import pytest

from conftest import make_dataset

from soda_rl.behavior import behavior_table, fit_behavior
from soda_rl.datamodel import Dataset, Schema, Trajectory
from soda_rl.errors import ConfigError, InvalidInputError
from soda_rl.ope import (
    TABLE_COLUMNS,
    Diagnostics,
    EvalConfig,
    collection_summary,
    cwpdis_from_probs,
    cwpdis_value,
    empirical_behavior_value,
    ess,
    evaluate_collection,
    importance_weights,
    per_decision_weights,
    result_row,
    unseen_action_count,
    )
from soda_rl.policy import init_collection
from soda_rl.simulator import GroundTruthPolicy, SimConfig, mc_value, simulate_dataset, true_behavior_probs


def reward_dataset(rewards, actions=0):
    """One trajectory per reward list, all taking `actions`"""

    trajectories = tuple(Trajectory('stay-{}'.format(i), np.zeros((len(r), 1)), np.full(len(r), actions), r)
                         for i, r in enumerate(rewards))
    return Dataset(trajectories, Schema.continuous(['x']))


def uniform(states):
    return np.full((len(states), 20), 0.05)


def test_eval_config():
    assert EvalConfig() == EvalConfig(gamma=0.99, ess_threshold=50., unseen_prob_threshold=0.01)

    with pytest.raises(ConfigError):
        EvalConfig(gamma=0.)
    with pytest.raises(ConfigError):
        EvalConfig(ess_threshold=0.)


@pytest.mark.parametrize('weights, expected', [
    (np.ones(100), 100.),
    ([2., 1., 1.], 16. / 6.),
    ([1.] + [0.] * 9, 1.),
    ([3.5] * 7, 7.),
    ])
def test_ess(weights, expected):
    assert ess(weights) == pytest.approx(expected, rel=1e-12)


def test_ess_all_zero():
    diagnostics = Diagnostics()

    assert ess(np.zeros(5), diagnostics) == 0.
    assert diagnostics.zero_ess == 1


def test_ess_bounds():
    weights = np.random.default_rng(0).exponential(size=(20, 30))
    for row in weights:
        assert 1. <= ess(row) <= 30.


def test_importance_weights():
    traj = Trajectory('a', np.zeros((3, 1)), [2, 5, 2], [0., 0., 0.])
    behavior = np.full((3, 20), 0.05)

    np.testing.assert_allclose(importance_weights(uniform, behavior, traj), [1., 1., 1.])

    def zero_on_five(states):
        probs = np.full((len(states), 20), 1. / 19.)
        probs[:, 5] = 0.
        return probs

    weights = importance_weights(zero_on_five, behavior, traj)
    assert weights[0] > 0. and weights[1] == 0. and weights[2] == 0.


@pytest.mark.parametrize('lengths', [[4, 4, 4], [3, 3, 3]])
def test_importance_weights_fitted_behavior_model(lengths):
    # trajectories as long as the state dimension must not be mistaken for a single state
    dataset = make_dataset(lengths, dim=3)
    model = fit_behavior(dataset, k=3)
    traj = dataset.trajectories[0]

    expected = np.cumprod(0.05 / behavior_table(model, dataset).probs[np.arange(len(traj)), traj.actions])

    np.testing.assert_allclose(importance_weights(uniform, model, traj), expected)


def test_importance_weights_single_step():
    traj = Trajectory('a', np.zeros((1, 1)), [4], [0.])
    target = np.zeros(20)
    target[4], target[0] = 0.6, 0.4
    behavior = np.zeros((1, 20))
    behavior[0, 4], behavior[0, 1] = 0.3, 0.7

    weights = importance_weights(lambda s: np.tile(target, (len(s), 1)), behavior, traj)
    assert weights == pytest.approx([2.])


def test_importance_weights_zero_behavior_clamped():
    traj = Trajectory('a', np.zeros((2, 1)), [1, 1], [0., 0.])
    behavior = np.zeros((2, 20))
    behavior[:, 0] = 1.
    diagnostics = Diagnostics()

    weights = importance_weights(uniform, behavior, traj, diagnostics=diagnostics)

    assert diagnostics.clamped_behavior == 2
    assert weights[0] == pytest.approx(0.05 / 1e-8)


def test_per_decision_weights_frozen_after_end():
    weights, alive = per_decision_weights(np.array([2., 0.5, 3.]), np.array([0, 2, 3]))

    np.testing.assert_allclose(weights, [[2., 1.], [3., 3.]])
    np.testing.assert_array_equal(alive, [[True, True], [True, False]])


def test_cwpdis_weights_cancel():
    dataset = reward_dataset([[1., 1., 1.]] * 3)
    probs = np.full((9, 20), 0.05)

    result = cwpdis_from_probs(probs, probs, dataset, EvalConfig(gamma=0.5))

    assert result.value == pytest.approx(0.875, abs=1e-12)
    assert result.ess == pytest.approx(3.)
    np.testing.assert_allclose(result.per_t_weight_sums, [3., 3., 3.])


def test_cwpdis_single_trajectory():
    dataset = make_dataset([6], seed=4)
    rng = np.random.default_rng(4)
    target = rng.dirichlet(np.ones(20), size=6)
    behavior = rng.dirichlet(np.ones(20), size=6)
    rewards = dataset.trajectories[0].rewards

    result = cwpdis_from_probs(target, behavior, dataset, EvalConfig(gamma=0.9))

    assert result.value == pytest.approx(np.sum(0.9 ** np.arange(1, 7) * rewards), rel=1e-12)
    assert result.ess == pytest.approx(1.)


def test_cwpdis_alive_at_t():
    dataset = reward_dataset([[0.2], [0.6, 1.]])
    probs = np.full((3, 20), 0.05)

    value = cwpdis_value(uniform, probs, dataset, EvalConfig(gamma=0.5))

    assert value == pytest.approx(0.5 * 0.4 + 0.25 * 1.)


def test_cwpdis_reward_scaling():
    rng = np.random.default_rng(6)
    lengths = [4, 7, 2, 7, 5]
    rewards = [rng.uniform(size=n) for n in lengths]
    actions = rng.integers(0, 20, size=sum(lengths))

    def build(scale):
        offsets = np.cumsum([0] + lengths)
        return Dataset(tuple(Trajectory('s{}'.format(i), np.zeros((n, 1)), actions[offsets[i]:offsets[i + 1]],
                                        rewards[i] * scale)
                             for i, n in enumerate(lengths)), Schema.continuous(['x']))

    target = rng.dirichlet(np.ones(20), size=sum(lengths))
    behavior = rng.dirichlet(np.ones(20), size=sum(lengths))

    full = cwpdis_from_probs(target, behavior, build(1.)).value
    half = cwpdis_from_probs(target, behavior, build(0.5)).value

    assert half == pytest.approx(0.5 * full, rel=1e-12)


def test_cwpdis_zero_weight_steps():
    dataset = reward_dataset([[1., 1.], [0.5, 0.5]], actions=3)
    target = np.zeros((4, 20))
    target[:, 0] = 1.
    diagnostics = Diagnostics()

    result = cwpdis_from_probs(target, np.full((4, 20), 0.05), dataset, diagnostics=diagnostics)

    assert result.value == 0. and result.ess == 0. and not result.kept
    assert diagnostics.zero_weight_steps == 2
    assert diagnostics.zero_ess == 1


def test_cwpdis_empty_dataset():
    with pytest.raises(InvalidInputError):
        cwpdis_from_probs(np.zeros((0, 20)), np.zeros((0, 20)), make_dataset([]))


def test_empirical_behavior_value():
    assert empirical_behavior_value(reward_dataset([[1.] * 72]), 0.99) == \
        pytest.approx(0.99 * (1. - 0.99 ** 72) / 0.01, rel=1e-12)
    assert empirical_behavior_value(reward_dataset([[1.] * 72]), 0.99) == pytest.approx(50.986, abs=1e-3)
    assert empirical_behavior_value(reward_dataset([[1.]]), 0.99) == pytest.approx(0.99)
    assert empirical_behavior_value(reward_dataset([[0., 0.], [0.]]), 0.99) == 0.

    with pytest.raises(InvalidInputError):
        empirical_behavior_value(make_dataset([]))


def test_policy_equal_to_behavior_matches_empirical_value(sim_test_dataset):
    model = fit_behavior(sim_test_dataset, k=10)
    table = behavior_table(model, sim_test_dataset)

    result = cwpdis_from_probs(table.probs, table.probs, sim_test_dataset)

    assert result.value == pytest.approx(empirical_behavior_value(sim_test_dataset), abs=1e-9)
    assert result.ess == pytest.approx(len(sim_test_dataset))


def test_unseen_action_count():
    probs = np.array([[0.5, 0.5, 0.], [0.98, 0.005, 0.015]])
    counts = np.array([[3, 0, 0], [5, 0, 0]])

    assert unseen_action_count(probs, counts) == 2
    assert unseen_action_count(probs, counts, threshold=0.4) == 1


def test_evaluate_collection(sim_dataset, sim_test_dataset):
    model = fit_behavior(sim_dataset, k=20)
    table = behavior_table(model, sim_test_dataset)
    config = EvalConfig(ess_threshold=1.)

    safe = init_collection(sim_dataset.schema, 3, seed=2, hidden=8, safety_epsilon=0.03)
    evaluation = evaluate_collection(safe, model, sim_test_dataset, config)

    assert len(evaluation) == 3
    for result in evaluation:
        assert result.unseen_action_count == 0
        assert np.isfinite(result.value)
        assert result.ce_vs_behavior > 0. and result.symkl_vs_behavior > 0.

    assert evaluation.kept == [i for i, r in enumerate(evaluation) if r.ess >= 1.]
    if len(evaluation.kept) > 1:
        i, j = evaluation.kept[:2]
        assert evaluation.pairwise[i, j] == evaluation.pairwise[j, i] > 0.

    unsafe = init_collection(sim_dataset.schema, 2, seed=2, hidden=8)
    results = evaluate_collection(unsafe, table, sim_test_dataset, config)
    assert results[0].unseen_action_count > 0


def test_evaluate_collection_pruning(sim_dataset, sim_test_dataset):
    model = fit_behavior(sim_dataset, k=20)
    collection = init_collection(sim_dataset.schema, 2, seed=2, hidden=8)

    evaluation = evaluate_collection(collection, model, sim_test_dataset, EvalConfig(ess_threshold=1e6))

    assert evaluation.kept == []
    assert all(r.pairwise_symkl is None for r in evaluation)
    assert np.all(np.isnan(evaluation.pairwise))

    summary = collection_summary(evaluation)
    assert summary['Kept'] == 0
    assert all(summary[c] is None for c in TABLE_COLUMNS[:-1])


def test_collection_summary_and_rows(sim_dataset, sim_test_dataset):
    model = fit_behavior(sim_dataset, k=20)
    collection = init_collection(sim_dataset.schema, 3, seed=4, hidden=8)
    evaluation = evaluate_collection(collection, model, sim_test_dataset, EvalConfig(ess_threshold=1e-9))

    assert evaluation.kept == [0, 1, 2]
    summary = collection_summary(evaluation)

    assert summary['Kept'] == 3
    mean, std = summary['CWPDIS Value']
    assert mean == pytest.approx(np.mean([r.value for r in evaluation]))
    assert std == pytest.approx(np.std([r.value for r in evaluation]))
    assert summary['SymKL btw pairs'][0] == pytest.approx(
        np.mean([evaluation.pairwise[0, 1], evaluation.pairwise[0, 2], evaluation.pairwise[1, 2]]))

    row = result_row(evaluation[0])
    assert len(row) == len(TABLE_COLUMNS)
    assert row[-1] == 'true'
    assert float(row[0]) == evaluation[0].value
    assert all(isinstance(cell, str) for cell in row)


@pytest.mark.slow
def test_cwpdis_error_shrinks_with_data():
    config = SimConfig()
    target = GroundTruthPolicy.tilted(config, 0.5)
    oracle, _ = mc_value(target, config, 20000, seed=4, threads=4)
    data = simulate_dataset(config, 20000, seed=300)

    def mean_error(size):
        errors = []
        for start in range(0, 4 * size, size):
            subset = data.subset(range(start, start + size))
            states = subset.arrays.states
            result = cwpdis_from_probs(target(states), true_behavior_probs(config, states), subset)
            errors.append(abs(result.value - oracle))
        return np.mean(errors)

    assert mean_error(5000) < mean_error(500)
