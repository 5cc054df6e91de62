"""cDFA-augmented environments: the dummy pretraining MDP and Letterworld.

Both share the same termination rule: +1 once every member DFA sits in an
accepting state, -1 as soon as some member is trapped in a rejecting sink,
and 0 at the horizon. Rewards are only ever emitted on the terminal step.
"""
from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .automata import Cdfa, advance, encode, is_accepting, is_rejecting, monolithic

DUMMY_HORIZON = 100
LETTER_HORIZON = 75
GRID = 7
NUM_LETTERS = 12
NULL_SYMBOL = NUM_LETTERS  # empty cells; every DFA stutters on it

UP, DOWN, LEFT, RIGHT = range(4)
MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}
ACTION_NAMES = ("up", "down", "left", "right")


class EpisodeDone(RuntimeError):
    """Stepping an environment whose episode already ended."""


def cdfa_digest(cdfa: Cdfa) -> str:
    return hashlib.sha1(encode(cdfa).encode()).hexdigest()[:16]


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


@dataclass
class AugmentedState:
    cdfa: Cdfa
    steps: int = 0
    accepted: bool = False
    rejected: bool = False
    timeout: bool = False

    @property
    def done(self) -> bool:
        return self.accepted or self.rejected or self.timeout

    @property
    def outcome(self) -> str:
        if self.accepted:
            return "accepted"
        if self.rejected:
            return "rejected"
        return "timeout" if self.timeout else "running"


def _settle(state: AugmentedState, horizon: int) -> float:
    """Set done flags after a transition and return the terminal reward."""
    if is_accepting(state.cdfa):
        state.accepted = True
        return 1.0
    if is_rejecting(state.cdfa):
        state.rejected = True
        return -1.0
    if state.steps >= horizon:
        state.timeout = True
    return 0.0


class _TaskEnv:
    horizon: int
    state: AugmentedState

    record_trace = False

    def _begin(self, cdfa: Cdfa) -> float:
        self.state = AugmentedState(cdfa)
        self.trace: list[dict] = []
        return _settle(self.state, self.horizon)

    def _apply(self, action: int, symbol: Optional[int]) -> StepResult:
        st = self.state
        if st.done:
            raise EpisodeDone(f"episode already ended ({st.outcome}); call reset()")
        if symbol is not None:
            st.cdfa = advance(st.cdfa, symbol)
        st.steps += 1
        reward = _settle(st, self.horizon)
        if self.record_trace:
            self.trace.append({
                "step": st.steps, "action": int(action),
                "symbol": None if symbol is None else int(symbol),
                "cdfa": cdfa_digest(st.cdfa), "reward": reward, "done": st.done,
            })
        return StepResult(self.observe(), reward, st.done, {"cdfa": st.cdfa, "outcome": st.outcome})

    def observe(self) -> np.ndarray:
        raise NotImplementedError

    def trace_jsonl(self) -> str:
        return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in self.trace)


class DummyEnv(_TaskEnv):
    """Single-state MDP whose actions are the task symbols themselves."""

    obs_shape = None

    def __init__(self, sampler: Callable[[np.random.Generator], Cdfa], rng: np.random.Generator,
                 horizon: int = DUMMY_HORIZON):
        self.sampler, self.rng, self.horizon = sampler, rng, horizon
        self.num_actions: Optional[int] = None

    def reset(self, cdfa: Optional[Cdfa] = None) -> StepResult:
        cdfa = self.sampler(self.rng) if cdfa is None else cdfa
        self.num_actions = cdfa.alphabet_size
        reward = self._begin(cdfa)
        return StepResult(self.observe(), reward, self.state.done,
                          {"cdfa": cdfa, "outcome": self.state.outcome})

    def step(self, action: int) -> StepResult:
        if not 0 <= action < self.state.cdfa.alphabet_size:
            raise ValueError(f"action {action} outside alphabet [0, {self.state.cdfa.alphabet_size})")
        return self._apply(action, action)

    def observe(self) -> np.ndarray:
        return np.zeros(0)


@dataclass
class LetterLayout:
    """7x7 grid; ``letters[r, c]`` is a letter index or -1 for an empty cell."""

    letters: np.ndarray
    agent: tuple[int, int]
    num_letters: int = NUM_LETTERS
    copies: Optional[int] = 2

    def __post_init__(self):
        self.letters = np.asarray(self.letters, dtype=np.int64)
        r, c = self.agent
        h, w = self.letters.shape
        if not (0 <= r < h and 0 <= c < w):
            raise ValueError(f"agent position {self.agent} outside the {h}x{w} grid")
        if self.copies is not None:
            counts = np.bincount(self.letters[self.letters >= 0], minlength=self.num_letters)
            if counts.size != self.num_letters or np.any(counts != self.copies):
                raise ValueError(f"each of {self.num_letters} letters must appear exactly {self.copies} times")

    @classmethod
    def random(cls, rng: np.random.Generator, free_start: bool = True) -> "LetterLayout":
        cells = rng.permutation(GRID * GRID)
        letters = -np.ones(GRID * GRID, dtype=np.int64)
        letters[cells[: 2 * NUM_LETTERS]] = np.repeat(np.arange(NUM_LETTERS), 2)
        pool = cells[2 * NUM_LETTERS:] if free_start else cells
        start = int(pool[rng.integers(pool.size)])
        return cls(letters.reshape(GRID, GRID), divmod(start, GRID))

    def to_dict(self) -> dict:
        return {"letters": self.letters.tolist(), "agent": list(self.agent)}

    @classmethod
    def from_dict(cls, doc: dict) -> "LetterLayout":
        return cls(np.array(doc["letters"]), tuple(doc["agent"]))


def move(pos: tuple[int, int], action: int, shape=(GRID, GRID)) -> tuple[int, int]:
    dr, dc = MOVES[action]
    return min(max(pos[0] + dr, 0), shape[0] - 1), min(max(pos[1] + dc, 0), shape[1] - 1)


class LetterEnv(_TaskEnv):
    """Letterworld: moving onto a lettered cell feeds that letter to the task."""

    num_actions = 4
    obs_shape = (GRID, GRID, NUM_LETTERS + 1)

    def __init__(self, sampler: Callable[[np.random.Generator], Cdfa], rng: np.random.Generator,
                 horizon: int = LETTER_HORIZON, resample_layout: bool = True,
                 free_start: bool = True, layout: Optional[LetterLayout] = None):
        self.sampler, self.rng, self.horizon = sampler, rng, horizon
        self.resample_layout, self.free_start = resample_layout, free_start
        self.fixed_layout = layout
        self.layout: Optional[LetterLayout] = None

    def reset(self, cdfa: Optional[Cdfa] = None) -> StepResult:
        if self.fixed_layout is not None:
            self.layout = LetterLayout(self.fixed_layout.letters.copy(), self.fixed_layout.agent,
                                       self.fixed_layout.num_letters, self.fixed_layout.copies)
        elif self.layout is None or self.resample_layout:
            self.layout = LetterLayout.random(self.rng, self.free_start)
        else:
            flat = self.layout.letters.reshape(-1)
            pool = np.flatnonzero(flat < 0) if self.free_start else np.arange(flat.size)
            self.layout.agent = divmod(int(pool[self.rng.integers(pool.size)]), self.layout.letters.shape[1])
        self._start = self.layout.agent
        cdfa = self.sampler(self.rng) if cdfa is None else cdfa
        if cdfa.alphabet_size != self.layout.num_letters:
            raise ValueError(
                f"task alphabet {cdfa.alphabet_size} != {self.layout.num_letters} letters")
        reward = self._begin(cdfa)
        return StepResult(self.observe(), reward, self.state.done,
                          {"cdfa": cdfa, "outcome": self.state.outcome})

    def label(self, pos: tuple[int, int]) -> int:
        letter = int(self.layout.letters[pos])
        return NULL_SYMBOL if letter < 0 else letter

    def step(self, action: int) -> StepResult:
        if action not in MOVES:
            raise ValueError(f"action {action} is not one of {ACTION_NAMES}")
        if self.state.done:
            raise EpisodeDone(f"episode already ended ({self.state.outcome}); call reset()")
        self.layout.agent = move(self.layout.agent, action, self.layout.letters.shape)
        symbol = self.label(self.layout.agent)
        return self._apply(action, None if symbol == NULL_SYMBOL else symbol)

    def observe(self) -> np.ndarray:
        return observe_layout(self.layout)

    def replay_record(self) -> dict:
        return {"layout": {"letters": self.layout.letters.tolist(), "agent": list(self._start)}}


def observe_layout(layout: LetterLayout) -> np.ndarray:
    h, w = layout.letters.shape
    obs = np.zeros((h, w, layout.num_letters + 1))
    rows, cols = np.nonzero(layout.letters >= 0)
    obs[rows, cols, layout.letters[rows, cols]] = 1.0
    obs[layout.agent[0], layout.agent[1], layout.num_letters] = 1.0
    return obs


def bfs_oracle(layout: LetterLayout, cdfa: Cdfa) -> Optional[int]:
    """Fewest moves from the layout's agent cell to task acceptance, or None.

    Searches the product of grid cells and monolithic-DFA states; rejecting
    sinks are dead ends.
    """
    dfa = monolithic(cdfa)
    if dfa.initial in dfa.accepting:
        return 0
    h, w = layout.letters.shape
    start = (layout.agent, dfa.initial)
    dist = {start: 0}
    queue = deque([start])
    while queue:
        (pos, q) = node = queue.popleft()
        for a in MOVES:
            nxt = move(pos, a, (h, w))
            letter = int(layout.letters[nxt])
            q2 = q if letter < 0 else dfa.transitions[q][letter]
            if q2 in dfa.accepting:
                return dist[node] + 1
            if all(d == q2 for d in dfa.transitions[q2]):
                continue
            key = (nxt, q2)
            if key not in dist:
                dist[key] = dist[node] + 1
                queue.append(key)
    return None
