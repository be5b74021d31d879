from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from edmil.data import (DemoDataset, drop_next_states, generate_demonstrations, load_dataset, save_dataset,
                        split_dataset, strip_actions)
from edmil.env import build_chain, build_gridworld
from edmil.errors import ParseError
from edmil.policy import TablePolicy
from edmil.solver import expected_return, soft_policy_from_q, soft_value_iteration

from helpers import dataset_from_arrays

FIXTURES = Path(__file__).parent / "fixtures"


def _same(a, b):
    assert a.header == b.header
    assert len(a.trajectories) == len(b.trajectories)
    for ta, tb in zip(a.trajectories, b.trajectories):
        assert len(ta) == len(tb)
        for x, y in zip(ta.transitions, tb.transitions):
            assert x.state.tobytes() == y.state.tobytes()
            assert x.action == y.action and x.done == y.done
            if x.next_state is None:
                assert y.next_state is None
            else:
                assert x.next_state.tobytes() == y.next_state.tobytes()


# generation

def test_single_trajectory_reproducible():
    mdp = build_chain(4, terminal_end=True)
    a = generate_demonstrations(mdp, lambda o, g: 0, 1, seed=3, reference_episodes=5)
    b = generate_demonstrations(mdp, lambda o, g: 0, 1, seed=3, reference_episodes=5)
    assert len(a.trajectories) == 1 and len(a) == 3
    _same(a, b)


@pytest.mark.parametrize("n", [1, 3, 7, 10, 15])
def test_header_counts(n):
    mdp = build_gridworld(3, 3)
    ds = generate_demonstrations(mdp, TablePolicy(np.full((9, 4), 0.25)), n, seed=0, reference_episodes=3)
    assert ds.header.n_trajectories == len(ds.trajectories) == n
    assert len(ds.header.episode_returns) == n


def test_expert_beats_random():
    mdp = build_gridworld(5, 5)
    pi = soft_policy_from_q(soft_value_iteration(mdp))
    assert expected_return(mdp, pi) > expected_return(mdp, np.full((25, 4), 0.25))
    ds = generate_demonstrations(mdp, TablePolicy(pi), 1, seed=0, reference_episodes=200)
    assert ds.header.demo_return > ds.header.random_return


def test_generation_bit_reproducible(tmp_path):
    mdp = build_gridworld(3, 3)
    pol = TablePolicy(soft_policy_from_q(soft_value_iteration(mdp)))
    for i, seed in enumerate((5, 5)):
        save_dataset(generate_demonstrations(mdp, pol, 2, seed, reference_episodes=20), tmp_path / f"d{i}")
    for ext in ("header", "transitions"):
        assert (tmp_path / f"d0.{ext}").read_bytes() == (tmp_path / f"d1.{ext}").read_bytes()


# serialization

@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 30), st.booleans())
def test_round_trip_is_identity(tmp_path_factory, seed, dim, n, triples):
    g = np.random.default_rng(seed)
    states = g.normal(size=(n, dim)) * 10.0 ** g.integers(-20, 20, size=(n, dim))
    nxt = g.normal(size=(n, dim)) if triples else None
    ds = dataset_from_arrays(states, g.integers(0, 3, n), nxt, g.random(n) < 0.2, n_actions=3,
                             gamma=float(g.random()), episode_len=int(g.integers(1, n + 1)))
    ds.header.demo_return, ds.header.random_return = float(g.normal()), float(g.normal())
    prefix = tmp_path_factory.mktemp("rt") / "ds"
    save_dataset(ds, prefix)
    _same(ds, load_dataset(prefix))


def test_fixture_fields():
    ds = load_dataset(FIXTURES / "tiny")
    h = ds.header
    assert (h.env, h.state_dim, h.n_actions, h.gamma, h.seed) == ("fixture", 2, 3, 0.5, 7)
    assert (h.demonstrator, h.demo_return, h.random_return) == ("hand", 2.0, -1.5)
    t0, t1 = ds.trajectories[0].transitions
    np.testing.assert_array_equal(t0.state, [0.25, -1.0])
    assert t0.action == 2 and not t0.done
    np.testing.assert_array_equal(t0.next_state, [0.5, 0.0])
    np.testing.assert_array_equal(t1.next_state, [0.001, 3.0])
    assert t1.done and t1.action == 0
    assert ds.trajectories[0].ret == 2.0


def _copy_fixture(tmp_path, transitions=None, header=None):
    (tmp_path / "x.header").write_text(header or (FIXTURES / "tiny.header").read_text())
    (tmp_path / "x.transitions").write_text(transitions if transitions is not None
                                            else (FIXTURES / "tiny.transitions").read_text())
    return tmp_path / "x"


def test_truncated_file_names_last_valid_line(tmp_path):
    text = (FIXTURES / "tiny.transitions").read_text()
    with pytest.raises(ParseError, match="last valid line 1"):
        load_dataset(_copy_fixture(tmp_path, text[:-8]))


def test_missing_record_detected(tmp_path):
    text = (FIXTURES / "tiny.transitions").read_text().splitlines(keepends=True)[0]
    with pytest.raises(ParseError, match="after line 1"):
        load_dataset(_copy_fixture(tmp_path, text))


def test_version_mismatch(tmp_path):
    header = (FIXTURES / "tiny.header").read_text().replace("format_version = 1", "format_version = 9")
    with pytest.raises(ParseError, match="version"):
        load_dataset(_copy_fixture(tmp_path, header=header))


def test_dimension_mismatch(tmp_path):
    header = (FIXTURES / "tiny.header").read_text().replace("state_dim = 2", "state_dim = 3")
    with pytest.raises(ParseError) as info:
        load_dataset(_copy_fixture(tmp_path, header=header))
    assert info.value.line == 1


def test_malformed_value(tmp_path):
    text = "0,0,0.25,-1,2,0.5,0,0\n0,1,0.5,zero,0,1e-3,3,1\n"
    with pytest.raises(ParseError, match="line 2"):
        load_dataset(_copy_fixture(tmp_path, text))


def test_action_out_of_range(tmp_path):
    text = "0,0,0.25,-1,5,0.5,0,0\n0,1,0.5,0,0,1e-3,3,1\n"
    with pytest.raises(ParseError, match="out of range"):
        load_dataset(_copy_fixture(tmp_path, text))


# derived views

def test_strip_empty():
    ds = dataset_from_arrays(np.zeros((0, 3)), np.zeros(0, int), n_actions=2)
    assert strip_actions(ds).shape == (0, 3)


def test_strip_is_projection(rng):
    states = rng.normal(size=(12, 2))
    ds = dataset_from_arrays(states, rng.integers(0, 2, 12), states, episode_len=5)
    out = strip_actions(ds)
    assert len(out) == len(ds) == 12
    np.testing.assert_array_equal(out, states)
    out[:] = 0
    assert ds.trajectories[0].transitions[0].state[0] == states[0, 0]


def test_pair_only_round_trip(tmp_path, rng):
    ds = drop_next_states(dataset_from_arrays(rng.normal(size=(4, 2)), [0, 1, 0, 1], rng.normal(size=(4, 2))))
    save_dataset(ds, tmp_path / "p")
    back = load_dataset(tmp_path / "p")
    assert not back.header.has_next_state
    assert back.arrays()[2] is None


def test_split(rng):
    ds = dataset_from_arrays(rng.normal(size=(9, 2)), rng.integers(0, 2, 9), episode_len=3)
    a, b = split_dataset(ds, 1)
    assert (a.header.n_trajectories, b.header.n_trajectories) == (1, 2)
    assert len(a) + len(b) == len(ds)
    assert isinstance(a, DemoDataset)
