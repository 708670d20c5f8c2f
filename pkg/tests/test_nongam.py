import numpy as np
import pytest

from cubeshap.cube import MeasureColumn, RecordStore, build_observation_matrix, partition_store
from cubeshap.errors import EngineMismatch, TooManyPlayers, ValidationError
from cubeshap.expr import MeasureSpec
from cubeshap.gam import EngineConfig, GamGame, ReferenceSpec, shapley_exact
from cubeshap.model import CoalitionMask, CubePredicate
from cubeshap.nongam import NonGamGame, attribute_nongam, build_coalition_dataset, set_function_nongam

from oracles import brute_shapley

DAU = MeasureSpec.from_text("dau", {"dau": "count_distinct(user)"})


def dau_toy():
    # reference: p1 viewed by u1, p2 by u2; target: p1 by nobody, p2 by u2
    records = [
        {"t": "r", "page": "p1", "user": "u1"},
        {"t": "r", "page": "p2", "user": "u2"},
        {"t": "t", "page": "p2", "user": "u2"},
    ]
    store = RecordStore.from_records(records, "t", ["page"], ["user"])
    part = partition_store(store, CubePredicate.wildcard(["page"]), ["page"])
    return NonGamGame(store, part, DAU, "t", "r")


def test_dau_toy_set_function():
    game = dau_toy()
    assert set_function_nongam(game, CoalitionMask.of_cells((2, 1), [(0, 0)])) == -1
    assert set_function_nongam(game, CoalitionMask.of_cells((2, 1), [(1, 0)])) == 0
    assert set_function_nongam(game, CoalitionMask.full((2, 1))) == -1
    assert set_function_nongam(game, CoalitionMask.empty((2, 1))) == 0


def test_dau_toy_attribution():
    c = attribute_nongam(dau_toy(), prune=False)
    np.testing.assert_array_equal(c.values, [[-1.0], [0.0]])
    assert c.method == "nongam-exact" and c.residual == 0
    pruned = attribute_nongam(dau_toy())
    np.testing.assert_array_equal(pruned.values, c.values)


def test_coalition_dataset():
    game = dau_toy()
    store = game.store
    everything = build_coalition_dataset(game, np.ones((2, 1), bool), 0)
    assert sorted(store.timesteps[everything.index]) == ["t"]
    nothing = build_coalition_dataset(game, np.zeros((2, 1), bool), 0)
    assert sorted(store.timesteps[nothing.index]) == ["r", "r"]
    only_p1 = build_coalition_dataset(game, np.array([[True], [False]]), 0)
    assert [(store.timesteps[i], store.attributes["page"][i]) for i in only_p1.index] == [("r", "p2")]


def random_store(rng, p_vals, q_vals, n=60, labels=("r", "t")):
    g = rng.choice(p_vals, size=n)
    ts = rng.choice(labels, size=n)
    measures = {f"v{j}": rng.integers(-5, 10, size=n).astype(float) for j in range(len(q_vals))}
    return RecordStore(ts, {"g": g}, measures)


def test_identical_timesteps_give_zero():
    rng = np.random.default_rng(0)
    base = random_store(rng, ["a", "b"], [0], labels=("r",))
    doubled = RecordStore(
        np.concatenate([base.timesteps, np.full(len(base), "t")]),
        {"g": np.concatenate([base.attributes["g"]] * 2)},
        {"v0": np.concatenate([base.column("v0").numbers] * 2)},
    )
    spec = MeasureSpec.from_text("s / c", {"s": "sum(v0)", "c": "count(v0)"})
    part = partition_store(doubled, CubePredicate.wildcard(["g"]), ["g"])
    c = attribute_nongam(NonGamGame(doubled, part, spec, "t", "r"))
    assert not c.values.any()


def test_pruned_cells_get_zero_by_brute_force():
    rng = np.random.default_rng(3)
    users = rng.integers(0, 30, size=40)
    pages = rng.choice(["a", "b", "c"], size=40)
    ts = np.array(["r"] * 20 + ["t"] * 20)
    # make page c identical between the two time steps
    keep_c = pages[:20] == "c"
    pages[20:][keep_c] = "c"
    users[20:][keep_c] = users[:20][keep_c]
    pages[20:][~keep_c & (pages[20:] == "c")] = "a"
    store = RecordStore(ts, {"page": pages}, {"user": MeasureColumn.from_codes("user", users)})
    part = partition_store(store, CubePredicate.wildcard(["page"]), ["page"])
    game = NonGamGame(store, part, DAU, "t", "r")
    assert game.dummy_cells()[2, 0]
    oracle = brute_shapley(lambda s: game.worth(np.isin(np.arange(3), list(s)).reshape(3, 1)), 3)
    np.testing.assert_allclose(attribute_nongam(game).values.ravel(), oracle, atol=1e-12)


def test_equals_gam_pipeline_for_additive_spec():
    rng = np.random.default_rng(5)
    store = random_store(rng, ["a", "b", "c"], [0, 1])
    spec = MeasureSpec.from_text("v0 * v1 / n", {"v0": "sum(v0)", "v1": "sum(v1)", "n": "count(v0)"})
    part = partition_store(store, CubePredicate.wildcard(["g"]), ["g"])
    xt = build_observation_matrix(store, part, spec, "t")
    xr = build_observation_matrix(store, part, spec, "r")
    gam = shapley_exact(GamGame(xt, xr, spec))
    ng = attribute_nongam(NonGamGame(store, part, spec, "t", "r"))
    np.testing.assert_allclose(ng.values, gam.values, atol=1e-9)


def test_expected_mode_and_permutation():
    rng = np.random.default_rng(6)
    store = random_store(rng, ["a", "b"], [0], labels=("r1", "r2", "t"))
    spec = MeasureSpec.from_text("u", {"u": "count_distinct(v0)"})
    part = partition_store(store, CubePredicate.wildcard(["g"]), ["g"])
    game = NonGamGame(store, part, spec, "t", "r1")
    avg = attribute_nongam(game, ref=ReferenceSpec.expected(["r1", "r2"]))
    each = [attribute_nongam(game.with_reference(r)).values for r in ("r1", "r2")]
    np.testing.assert_allclose(avg.values, np.mean(each, axis=0))
    perm = attribute_nongam(game, EngineConfig(engine="permutation", samples=500, seed=1))
    assert perm.method == "nongam-permutation"
    assert abs(perm.residual) < 1e-9


def test_guards():
    game = dau_toy()
    with pytest.raises(EngineMismatch):
        attribute_nongam(game, EngineConfig(engine="kernel"))
    with pytest.raises(EngineMismatch):
        attribute_nongam(game, EngineConfig(engine="exact", scope="rows-only"))
    with pytest.raises(ValidationError):
        NonGamGame(game.store, game.part, DAU, "t", "t")
    with pytest.raises(ValidationError):
        set_function_nongam(game, np.ones((3, 1), bool))
    rng = np.random.default_rng(1)
    pages = [f"p{i:02d}" for i in range(21)]
    store = RecordStore(
        ["r"] * 21 + ["t"] * 21,
        {"page": pages * 2},
        {"user": MeasureColumn.from_codes("user", rng.permutation(42))},
    )
    part = partition_store(store, CubePredicate.wildcard(["page"]), ["page"])
    with pytest.raises(TooManyPlayers):
        attribute_nongam(NonGamGame(store, part, DAU, "t", "r"))
