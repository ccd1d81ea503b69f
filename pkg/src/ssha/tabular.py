"""Tabular stand-ins for the env and the Q-network.

``ToyMDP`` has the attention env's action layout and reward structure but
integer observations, so the trainer's loop can be checked against an exact
value-iteration solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import Transition
from .synthdata import Label


@dataclass(frozen=True)
class ToyState:
    sid: int
    step: int
    label: Label


class ToyMDP:
    """Deterministic MDP over ``n_states`` with region/classify actions.

    ``next_state[s][i]`` is the successor of region action ``i``; classify
    actions end the episode with ``+r_correct`` / ``r_incorrect`` depending on
    the episode label.
    """

    def __init__(self, next_state, steps, start: int = 0, label=Label.VIOLENT,
                 n_max_steps: int = 5, r_correct: float = 1.0, r_incorrect: float = -1.0,
                 r_region: float = 0.5):
        self.next_state = [list(row) for row in next_state]
        self.steps = list(steps)
        self.start = start
        self.label = Label.parse(label)
        self.n_max_steps = n_max_steps
        self.n_regions = len(self.next_state[0])
        self.r_correct, self.r_incorrect, self.r_region = r_correct, r_incorrect, r_region

    @property
    def n_states(self) -> int:
        return len(self.steps)

    @property
    def n_actions(self) -> int:
        return self.n_regions + 2

    @property
    def q_min(self) -> float:
        return self.r_incorrect

    @property
    def q_max(self) -> float:
        return self.r_correct + (self.n_max_steps - 1) * self.r_region

    def reset(self, clip=None, clip_id=None):
        s = ToyState(self.start, self.steps[self.start], self.label)
        return s, s.sid

    def observe(self, state: ToyState) -> int:
        return state.sid

    def action_mask(self, state: ToyState) -> np.ndarray:
        mask = np.ones(self.n_actions, dtype=bool)
        if state.step >= self.n_max_steps - 1:
            mask[:self.n_regions] = False
        return mask

    def step(self, state: ToyState, a: int):
        a = int(a)
        if a >= self.n_regions:
            r = self.r_correct if a - self.n_regions == int(state.label) else self.r_incorrect
            return Transition(state, a, None, r, True, state.label), None
        if not self.action_mask(state)[a]:
            raise ValueError(f"region action {a} is not allowed at step {state.step}")
        nxt_id = self.next_state[state.sid][a]
        nxt = ToyState(nxt_id, self.steps[nxt_id], state.label)
        return Transition(state, a, nxt, self.r_region, False, state.label), nxt


def eight_state_mdp() -> ToyMDP:
    """Branching chain: s0 -> {s1,s2} -> {s3,s4} -> {s5,s6} -> s7, two region
    actions, label violent."""
    nxt = [
        [1, 2],
        [3, 4],
        [4, 3],
        [5, 6],
        [6, 5],
        [7, 7],
        [7, 7],
        [7, 7],  # never taken: region actions are masked at the last step
    ]
    steps = [0, 1, 1, 2, 2, 3, 3, 4]
    return ToyMDP(nxt, steps)


def value_iteration(mdp: ToyMDP, gamma: float, tol: float = 1e-12, max_iter: int = 10_000) -> np.ndarray:
    """Fixed point of ``Q(s,a) = r + gamma * max_{valid a'} Q(s',a')``; masked
    entries are left at NaN."""
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iter):
        new = np.full_like(q, np.nan)
        for s in range(mdp.n_states):
            st = ToyState(s, mdp.steps[s], mdp.label)
            mask = mdp.action_mask(st)
            for a in np.flatnonzero(mask):
                tr, nxt = mdp.step(st, a)
                if tr.done:
                    new[s, a] = tr.reward
                else:
                    nm = mdp.action_mask(nxt)
                    new[s, a] = tr.reward + gamma * np.nanmax(np.where(nm, q[nxt.sid], np.nan))
        delta = np.nanmax(np.abs(np.nan_to_num(new) - np.nan_to_num(q)))
        q = np.nan_to_num(new, nan=0.0)
        if delta < tol:
            break
    for s in range(mdp.n_states):
        q[s, ~mdp.action_mask(ToyState(s, mdp.steps[s], mdp.label))] = np.nan
    return q


class TableAgent:
    """Q-table with a lagged target table; updates move each entry toward its
    target by ``lr`` (duplicate entries in a batch are averaged)."""

    def __init__(self, n_states: int, n_actions: int, lr: float = 0.1):
        self.table = np.zeros((n_states, n_actions))
        self.target = self.table.copy()
        self.lr = lr

    def q(self, observations):
        return self.table[np.asarray(observations, dtype=int)]

    def q_target(self, observations):
        return self.target[np.asarray(observations, dtype=int)]

    def update(self, observations, sample_idx, action_idx, targets) -> float:
        obs = np.asarray(observations, dtype=int)
        s = obs[np.asarray(sample_idx, dtype=int)]
        a = np.asarray(action_idx, dtype=int)
        y = np.asarray(targets, dtype=np.float64)
        err = y - self.table[s, a]
        loss = float(np.mean(err ** 2))
        delta = np.zeros_like(self.table)
        count = np.zeros_like(self.table)
        np.add.at(delta, (s, a), err)
        np.add.at(count, (s, a), 1.0)
        hit = count > 0
        self.table[hit] += self.lr * delta[hit] / count[hit]
        return loss

    def sync(self) -> None:
        self.target = self.table.copy()
