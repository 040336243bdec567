import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuronshap.exact import ExactCapError, all_values, shapley_by_permutations, shapley_by_subsets
from neuronshap.game_core import Coalition, GameSpec, PlayerSet
from neuronshap.games import TableOracle, make_additive, make_glove, make_random_table, make_sum, make_unanimity, make_weighted_voting

ROUTES = [shapley_by_subsets, shapley_by_permutations]


def table_game(values):
    return GameSpec(PlayerSet(int(np.log2(len(values)))), TableOracle(np.asarray(values, dtype=float)))


def hand_shapley(game):
    """Independent oracle: rational arithmetic over all orderings."""
    n = game.n
    table = [Fraction(game.evaluate(Coalition(n, b))) for b in range(1 << n)]
    phi = [Fraction(0)] * n
    perms = list(itertools.permutations(range(n)))
    for perm in perms:
        bits = 0
        for i in perm:
            phi[i] += table[bits | 1 << i] - table[bits]
            bits |= 1 << i
    return [float(p / len(perms)) for p in phi]


tables = st.integers(1, 6).flatmap(
    lambda n: st.lists(st.floats(-1, 1, allow_nan=False), min_size=1 << n, max_size=1 << n)
)


class TestKnownValues:
    @pytest.mark.parametrize("route", ROUTES)
    def test_glove(self, route):
        assert np.allclose(route(make_glove(2)), [2 / 3, 1 / 6, 1 / 6], rtol=0, atol=1e-12)

    @pytest.mark.parametrize("route", ROUTES)
    def test_voting(self, route):
        assert np.allclose(route(make_weighted_voting(51, [49, 49, 2])), [1 / 3] * 3, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("route", ROUTES)
    def test_additive(self, route):
        assert np.allclose(route(make_additive([0.2, 0.3, 0.5])), [0.2, 0.3, 0.5], rtol=0, atol=1e-12)

    def test_single_player(self):
        game = table_game([0.25, 0.75])
        assert shapley_by_permutations(game).tolist() == [0.5]

    def test_unanimity_pair(self):
        assert np.allclose(shapley_by_permutations(make_unanimity(3, [0, 1])), [0.5, 0.5, 0], rtol=0, atol=1e-12)

    def test_hand_oracle_on_random_games(self):
        for seed in range(5):
            game = make_random_table(5, seed=seed)
            assert np.allclose(shapley_by_subsets(game), hand_shapley(game), rtol=0, atol=1e-12)


class TestCaps:
    def test_subset_cap(self):
        with pytest.raises(ExactCapError, match="21"):
            shapley_by_subsets(make_additive([0.0] * 21))

    def test_permutation_cap(self):
        with pytest.raises(ExactCapError):
            shapley_by_permutations(make_additive([0.0] * 9))

    def test_all_values_order(self):
        vals = all_values(make_glove(2))
        assert vals.tolist() == [0, 0, 0, 1, 0, 1, 0, 1]


class TestAxioms:
    @settings(max_examples=60, deadline=None)
    @given(tables)
    def test_routes_agree(self, values):
        game = table_game(values)
        assert np.allclose(shapley_by_subsets(game), shapley_by_permutations(game), rtol=0, atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(tables)
    def test_efficiency(self, values):
        game = table_game(values)
        for route in ROUTES:
            assert abs(np.sum(route(game)) - (values[-1] - values[0])) <= 1e-12

    @settings(max_examples=40, deadline=None)
    @given(tables, st.data())
    def test_null_player(self, values, data):
        n = int(np.log2(len(values)))
        null = data.draw(st.integers(0, n))
        # insert a player that never changes V
        ext = [values[(b & ((1 << null) - 1)) | ((b >> (null + 1)) << null)] for b in range(1 << (n + 1))]
        game = table_game(ext)
        for route in ROUTES:
            assert route(game)[null] == 0.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 7), st.integers(0, 10_000), st.data())
    def test_symmetry(self, n, seed, data):
        i = data.draw(st.integers(0, n - 1))
        j = data.draw(st.integers(0, n - 1).filter(lambda x: x != i))
        raw = np.random.default_rng(seed).uniform(-1, 1, 1 << n)

        def swap(b):
            bi, bj = b >> i & 1, b >> j & 1
            b &= ~((1 << i) | (1 << j))
            return b | bi << j | bj << i

        sym = np.array([raw[b] + raw[swap(b)] for b in range(1 << n)])
        game = table_game(sym)
        for route in ROUTES:
            phi = route(game)
            assert abs(phi[i] - phi[j]) <= 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 7), st.integers(0, 10_000), st.integers(0, 10_000))
    def test_additivity(self, n, s1, s2):
        g1, g2 = make_random_table(n, seed=s1), make_random_table(n, seed=s2)
        both = make_sum(g1, g2)
        for route in ROUTES:
            assert np.allclose(route(both), route(g1) + route(g2), rtol=0, atol=1e-12)
