import numpy as np
import pytest
from hypothesis import given, strategies as st

from cubeshap import games
from cubeshap.errors import TooManyPlayers, ValidationError

from oracles import brute_shapley


def two_player():
    return games.FunctionGame(2, lambda s: {frozenset(): 0, frozenset({0}): 1, frozenset({1}): 2}.get(s, 4))


@st.composite
def tables(draw, max_n=5):
    n = draw(st.integers(1, max_n))
    vals = draw(st.lists(st.floats(-100, 100), min_size=1 << n, max_size=1 << n))
    vals[0] = 0.0
    return np.array(vals)


def test_two_player_example_all_solvers():
    g = two_player()
    np.testing.assert_allclose(games.exact_shapley(g), [1.5, 2.5])
    np.testing.assert_allclose(games.kernel_shapley(g, 2, seed=0), [1.5, 2.5])
    np.testing.assert_allclose(games.permutation_shapley(g, 4000, seed=0), [1.5, 2.5], atol=0.05)


def test_single_player_games():
    g = games.FunctionGame(1, lambda s: 7.0 if s else 0.0)
    assert games.exact_shapley(g)[0] == 7.0
    assert games.permutation_shapley(g, 3, seed=1)[0] == 7.0
    assert games.kernel_shapley(g, 10, seed=1)[0] == 7.0


@given(tables())
def test_exact_matches_permutation_average(table):
    g = games.TableGame(table)
    n = g.n_players
    oracle = brute_shapley(lambda s: table[sum(1 << i for i in s)], n)
    np.testing.assert_allclose(games.exact_shapley(g), oracle, atol=1e-9)


@given(tables())
def test_exhaustive_kernel_equals_exact(table):
    g = games.TableGame(table)
    k = (1 << g.n_players) - 2
    np.testing.assert_allclose(games.kernel_shapley(g, max(k, 1), seed=0), games.exact_shapley(g), atol=1e-8)


def test_permutation_is_deterministic_per_seed():
    g = games.TableGame(np.random.default_rng(3).normal(size=64))
    a = games.permutation_shapley(g, 100, seed=5, key=(1,))
    b = games.permutation_shapley(g, 100, seed=5, key=(1,))
    c = games.permutation_shapley(g, 100, seed=6, key=(1,))
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_kernel_recovers_additive_game_when_sampling():
    rng = np.random.default_rng(0)
    a = rng.normal(size=12)
    g = games.FunctionGame(12, lambda s: float(sum(a[i] for i in s)))
    np.testing.assert_allclose(games.kernel_shapley(g, 200, seed=1), a, atol=1e-8)


def test_guards():
    with pytest.raises(TooManyPlayers):
        games.exact_shapley(games.FunctionGame(21, lambda s: 0.0))
    with pytest.raises(ValidationError):
        games.permutation_shapley(two_player(), 0, seed=0)
    with pytest.raises(ValidationError):
        games.kernel_shapley(games.FunctionGame(12, lambda s: 0.0), 5, seed=0)
    with pytest.raises(ValidationError):
        games.TableGame(np.zeros(3))


def test_weights_sum_to_one_over_subsets():
    from math import comb

    for n in range(1, 9):
        w = games.shapley_weights(n)
        assert sum(comb(n - 1, s) * w[s] for s in range(n)) == pytest.approx(1.0)
