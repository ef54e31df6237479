import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mocahesp.encode import (
    Exp3State,
    exp3_eta,
    exp3_probabilities,
    exp3_reward,
    exp3_update,
    fit_encoder,
    fit_ordinal,
    fit_target,
    normalize_values,
)
from mocahesp.space import Dataset, MixedSpace, VariableSpec

from oracles import target_table_oracle


def abc_space():
    return MixedSpace((VariableSpec.categorical(["A", "B", "C"]),))


def test_ordinal_declared_order():
    enc = fit_ordinal(abc_space())
    np.testing.assert_array_equal(enc.tables[0], [0, 1, 2])
    np.testing.assert_array_equal(fit_ordinal(MixedSpace.categorical(1, 2)).tables[0], [0, 1])


def test_ordinal_ackley_grid():
    levels = np.linspace(-32.768, 32.768, 11)
    sp = MixedSpace(tuple(VariableSpec.ordinal(levels) for _ in range(20)))
    enc = fit_ordinal(sp)
    assert len(enc.tables) == 20
    for t in enc.tables:
        np.testing.assert_array_equal(t, np.arange(11))


def test_ordinal_needs_combinatorial():
    with pytest.raises(ValueError):
        fit_ordinal(MixedSpace((VariableSpec.continuous(0, 1),)))


def test_target_hand_example():
    sp = MixedSpace((VariableSpec.categorical(["A", "B"]),))
    data = Dataset([[0], [0], [1]], [0.0, 2.0, 4.0])
    enc = fit_target(sp, data, m=1.0)
    np.testing.assert_allclose(enc.tables[0], [4 / 3, 3.0], rtol=0, atol=1e-15)
    np.testing.assert_allclose(enc.encode([1.0]), [3.0])


def test_target_unobserved_maps_to_mean():
    data = Dataset([[0], [0], [1]], [0.0, 2.0, 4.0])
    enc = fit_target(abc_space(), data, m=1.0)
    assert enc.tables[0][2] == pytest.approx(2.0)


def test_target_large_counts_approach_group_means():
    sp = MixedSpace((VariableSpec.categorical(["A", "B"]),))
    n = 100000
    data = Dataset(np.r_[np.zeros(n), np.ones(n)][:, None], np.r_[np.zeros(n), np.full(n, 10.0)])
    enc = fit_target(sp, data, m=1.0)
    np.testing.assert_allclose(enc.tables[0], [0.0, 10.0], atol=1e-3)


def test_target_rejects_empty():
    with pytest.raises(ValueError):
        fit_target(abc_space(), Dataset.empty(1))


def test_target_collisions_are_separated():
    sp = MixedSpace((VariableSpec.categorical(["A", "B", "C"]),))
    data = Dataset([[0], [1]], [1.0, 1.0])
    enc = fit_target(sp, data)
    assert len(np.unique(enc.tables[0])) == 3
    for z in ([0.0], [1.0], [2.0]):
        np.testing.assert_array_equal(enc.decode(enc.encode(z)), z)


def test_target_randomized_against_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        c = int(rng.integers(2, 6))
        n = int(rng.integers(1, 12))
        m = float(rng.choice([0.0, 0.5, 1.0, 3.0]))
        cats = rng.integers(0, c, n)
        ys = rng.normal(size=n)
        sp = MixedSpace.categorical(1, c)
        enc = fit_target(sp, Dataset(cats[:, None], ys), m)
        want = target_table_oracle(cats.tolist(), ys.tolist(), c, m)
        if len(set(want)) == c:
            np.testing.assert_allclose(enc.tables[0], want, rtol=0, atol=1e-12)


def test_target_m_zero_gives_group_means():
    rng = np.random.default_rng(2)
    cats = np.r_[np.arange(4), rng.integers(0, 4, 30)]
    ys = rng.normal(size=len(cats))
    enc = fit_target(MixedSpace.categorical(1, 4), Dataset(cats[:, None], ys), m=0.0)
    means = [ys[cats == c].mean() for c in range(4)]
    np.testing.assert_allclose(enc.tables[0], means, atol=1e-12)


def test_encode_passthrough_and_ordinal_point():
    sp = MixedSpace((VariableSpec.categorical(["A", "B"]), VariableSpec.continuous(0, 1)))
    enc = fit_ordinal(sp)
    np.testing.assert_array_equal(enc.encode([0.0, 0.5]), [0.0, 0.5])
    with pytest.raises(ValueError):
        enc.encode([2.0, 0.5])


def test_decode_nearest_and_ties():
    enc = fit_ordinal(MixedSpace.categorical(1, 2))
    assert enc.decode([0.4])[0] == 0
    assert enc.decode([0.6])[0] == 1
    assert enc.decode([0.5])[0] == 0
    with pytest.raises(ValueError):
        enc.decode([np.nan])


def test_decode_clamps_continuous():
    sp = MixedSpace((VariableSpec.continuous(0, 1), VariableSpec.categorical("xy")))
    enc = fit_ordinal(sp)
    np.testing.assert_array_equal(enc.decode([3.0, 7.0]), [1.0, 1.0])


def test_unit_view_round_trip():
    sp = MixedSpace((VariableSpec.continuous(-2, 2), VariableSpec.categorical("abc")))
    enc = fit_ordinal(sp)
    u = enc.encode_unit([[-2.0, 0.0], [2.0, 2.0]])
    np.testing.assert_allclose(u, [[0.0, 1 / 6], [1.0, 5 / 6]])
    np.testing.assert_array_equal(enc.decode_unit(u), [[-2.0, 0.0], [2.0, 2.0]])


def _mixed():
    return MixedSpace((
        VariableSpec.continuous(-1, 3),
        VariableSpec.categorical(range(5)),
        VariableSpec.ordinal([0.1, 0.2, 0.3]),
        VariableSpec.categorical("ab"),
    ))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip_property(seed):
    rng = np.random.default_rng(seed)
    sp = _mixed()
    data_pts = sp.sample(8, rng)
    data = Dataset(data_pts, rng.normal(size=8))
    Z = sp.sample(50, rng)
    for variant in ("ordinal", "target"):
        enc = fit_encoder(variant, sp, data)
        np.testing.assert_array_equal(enc.decode(enc.encode(Z)), Z)
        np.testing.assert_array_equal(enc.decode_unit(enc.encode_unit(Z)), Z)


def test_fit_is_deterministic():
    rng = np.random.default_rng(0)
    sp = _mixed()
    data = Dataset(sp.sample(10, rng), rng.normal(size=10))
    a, b = fit_target(sp, data), fit_target(sp, data)
    for ta, tb in zip(a.tables, b.tables):
        np.testing.assert_array_equal(ta, tb)


# --------------------------------------------------------------------------- EXP3


def test_probabilities_examples():
    assert np.allclose(exp3_probabilities(Exp3State((1.0, 1.0), 0.3, 0, 4)), [0.5, 0.5])
    np.testing.assert_allclose(exp3_probabilities(Exp3State((1.0, 3.0), 0.0, 0, 4)), [0.25, 0.75], atol=1e-15)
    np.testing.assert_allclose(exp3_probabilities(Exp3State((1.0, 3.0), 1.0, 0, 4)), [0.5, 0.5], atol=1e-15)


def test_state_validation():
    with pytest.raises(ValueError):
        Exp3State((1.0, 0.0), 0.1, 0, 4)
    with pytest.raises(ValueError):
        Exp3State((1.0, np.inf), 0.1, 0, 4)
    with pytest.raises(ValueError):
        Exp3State((1.0, 1.0), 1.5, 0, 4)
    with pytest.raises(ValueError):
        Exp3State((1.0, 1.0), 0.5, 2, 4)


def test_normalization_example():
    np.testing.assert_allclose(normalize_values([2, 4, 6]), [1.0, 0.5, 0.0])
    np.testing.assert_array_equal(normalize_values([3, 3]), [0.0, 0.0])


def test_reward_is_one_with_global_min():
    assert exp3_reward([5.0, 1.0], [3.0, 1.0, 5.0, 9.0]) == 1.0
    assert exp3_reward([9.0], [3.0, 1.0, 9.0]) == 0.0


def test_constant_history_gives_no_update():
    st_ = Exp3State((1.0, 2.0), 0.3, 1, 4)
    new, _ = exp3_update(st_, [1.0, 1.0], [1.0, 1.0, 1.0], np.random.default_rng(0))
    assert new.weights == st_.weights


def test_eta_zero_never_changes():
    rng = np.random.default_rng(0)
    st_ = Exp3State((1.0, 1.0), 0.0, 0, 4)
    p0 = exp3_probabilities(st_)
    for _ in range(20):
        st_, _ = exp3_update(st_, rng.normal(size=3), rng.normal(size=10), rng)
        assert st_.weights == (1.0, 1.0)
        np.testing.assert_array_equal(exp3_probabilities(st_), p0)


def test_update_only_touches_chosen_weight():
    st_ = Exp3State((1.0, 2.0, 3.0), 0.2, 1, 4)
    new, nxt = exp3_update(st_, [0.0], [0.0, 1.0, 2.0], np.random.default_rng(0))
    assert new.weights[0] == 1.0 and new.weights[2] == 3.0
    p = exp3_probabilities(st_)[1]
    assert new.weights[1] == pytest.approx(2.0 * math.exp(0.2 * (1.0 / p) / 3))
    assert new.action == nxt


def test_single_arm_always_zero():
    rng = np.random.default_rng(0)
    st_ = Exp3State.initial(1, 0.0, 4, rng)
    for _ in range(10):
        st_, a = exp3_update(st_, rng.normal(size=2), rng.normal(size=6), rng)
        assert a == 0


def test_eta_corrected_constant():
    want = min(1.0, math.sqrt(2 * math.log(2) / ((math.e - 1) * 100)))
    assert abs(exp3_eta(2, 100) - want) <= 1e-12
    assert exp3_eta(3, 1) == 1.0
