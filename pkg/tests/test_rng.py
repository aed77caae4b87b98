import numpy as np
import pytest

from ctxfill.rng import RngState


def test_uniform_deterministic_per_seed():
    a = RngState(42).uniform((1, 1, 2, 2))
    b = RngState(42).uniform((1, 1, 2, 2))
    np.testing.assert_array_equal(a, b)
    assert a.shape == (1, 1, 2, 2)
    assert np.all((a >= 0.0) & (a < 1.0))


def test_uniform_empty_interval_rejected():
    with pytest.raises(ValueError):
        RngState(42).uniform((2, 2), 0.5, 0.5)


def test_different_seeds_differ():
    a = RngState(42).uniform((1, 1, 2, 2))
    b = RngState(43).uniform((1, 1, 2, 2))
    assert not np.array_equal(a, b)


def test_counter_advances_between_draws():
    state = RngState(42)
    a = state.uniform((4,))
    b = state.uniform((4,))
    assert state.counter == 2
    assert not np.array_equal(a, b)


def test_replay_from_saved_state():
    state = RngState(7)
    state.uniform((3,))
    saved = state.clone()
    a = state.normal((2, 2))
    b = saved.normal((2, 2))
    np.testing.assert_array_equal(a, b)


def test_normal_zero_std_is_constant():
    out = RngState(0).normal((2, 2), mean=3.0, std=0.0)
    np.testing.assert_array_equal(out, np.full((2, 2), 3.0))


def test_normal_negative_std_rejected():
    with pytest.raises(ValueError):
        RngState(0).normal((2,), 0.0, -1.0)


def test_normal_large_sample_statistics():
    samples = RngState(42).normal((100_000,), 0.0, 1.0)
    assert abs(samples.mean()) < 0.02
    assert abs(samples.std() - 1.0) < 0.02


def test_normal_shape_arithmetic():
    assert RngState(0).normal((2, 3, 4, 4)).size == 96


def test_zero_extent_yields_empty():
    assert RngState(0).uniform((0, 1, 2, 2)).size == 0


def test_children_are_independent_and_stable():
    parent = RngState(99)
    c1 = parent.child(1)
    c2 = parent.child(2)
    again = parent.child(1)
    assert (c1.seed, c1.counter) == (again.seed, again.counter)
    assert c1.seed != c2.seed
    assert not np.array_equal(c1.uniform((8,)), c2.uniform((8,)))
