"""Small builders shared by the test modules."""

import numpy as np

from edmil.data import DatasetHeader, DemoDataset
from edmil.env import Trajectory, Transition


def dataset_from_arrays(states, actions, next_states=None, done=None, n_actions=None, gamma=0.9,
                        episode_len=None):
    """Pack transition arrays into a DemoDataset, cutting episodes every ``episode_len`` rows."""
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.int64)
    n = len(states)
    done = np.zeros(n, bool) if done is None else np.asarray(done, bool)
    episode_len = episode_len or max(n, 1)
    trajs = []
    for start in range(0, n, episode_len):
        rows = range(start, min(n, start + episode_len))
        trs = [Transition(states[i], int(actions[i]),
                          None if next_states is None else np.asarray(next_states[i], dtype=np.float64),
                          bool(done[i])) for i in rows]
        trajs.append(Trajectory(trs, float(len(trs)), ()))
    header = DatasetHeader(env="synthetic", state_dim=states.shape[1],
                           n_actions=int(n_actions or actions.max() + 1), gamma=gamma,
                           n_trajectories=len(trajs), has_next_state=next_states is not None,
                           demo_return=1.0, random_return=0.0,
                           episode_returns=tuple(t.ret for t in trajs))
    return DemoDataset(header, trajs)


def random_dataset(rng, n=40, dim=3, n_actions=3, triples=True):
    states = rng.normal(size=(n, dim))
    nxt = rng.normal(size=(n, dim)) if triples else None
    done = rng.random(n) < 0.1
    return dataset_from_arrays(states, rng.integers(0, n_actions, n), nxt, done, n_actions,
                               episode_len=10)
