"""Canonical DFAs and conjunctive compositions of DFAs (cDFAs).

States are integers ``0..num_states-1`` and symbols are integers
``0..alphabet_size-1``; environments own the mapping from letters to symbols.
Every value here is immutable, and every DFA returned by :func:`minimize` is in
canonical form (BFS order from the initial state, symbols as tie-breaker), so
two minimized DFAs are equal iff they accept the same language.
"""
from __future__ import annotations

import enum
import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Iterator, Sequence


class AutomatonError(ValueError):
    """Raised for malformed automata or out-of-range symbols/states."""


class StateClass(enum.Enum):
    PLAIN = "plain"
    ACCEPTING_SINK = "accepting_sink"
    REJECTING_SINK = "rejecting_sink"
    ACCEPTING_NONSINK = "accepting_nonsink"


@dataclass(frozen=True)
class Dfa:
    """A total DFA. ``transitions[q][s]`` is the successor of ``q`` on ``s``."""

    alphabet_size: int
    transitions: tuple[tuple[int, ...], ...]
    initial: int
    accepting: frozenset[int]
    _hash: int = field(default=0, init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.transitions)
        if self.alphabet_size < 1:
            raise AutomatonError(f"alphabet_size must be positive, got {self.alphabet_size}")
        if n < 1:
            raise AutomatonError("a DFA needs at least one state")
        for q, row in enumerate(self.transitions):
            if len(row) != self.alphabet_size:
                raise AutomatonError(f"state {q} has {len(row)} transitions, expected {self.alphabet_size}")
            for dst in row:
                if not 0 <= dst < n:
                    raise AutomatonError(f"transition from {q} leads to missing state {dst}")
        if not 0 <= self.initial < n:
            raise AutomatonError(f"initial state {self.initial} out of range [0, {n})")
        bad = [q for q in self.accepting if not 0 <= q < n]
        if bad:
            raise AutomatonError(f"accepting states {sorted(bad)} out of range [0, {n})")
        object.__setattr__(self, "accepting", frozenset(self.accepting))
        object.__setattr__(
            self, "_hash",
            hash((self.alphabet_size, self.transitions, self.initial, self.accepting)),
        )

    def __hash__(self):
        return self._hash

    @property
    def num_states(self) -> int:
        return len(self.transitions)

    @classmethod
    def from_edges(
        cls,
        alphabet_size: int,
        num_states: int,
        initial: int,
        accepting: Iterable[int],
        edges: Iterable[tuple[int, int, int]],
    ) -> "Dfa":
        """Build a DFA from ``(src, symbol, dst)`` triples; omitted pairs stutter."""
        table = [[q] * alphabet_size for q in range(num_states)]
        for src, sym, dst in edges:
            if not 0 <= src < num_states or not 0 <= dst < num_states:
                raise AutomatonError(f"edge ({src}, {sym}, {dst}) references a missing state")
            if not 0 <= sym < alphabet_size:
                raise AutomatonError(f"edge ({src}, {sym}, {dst}) uses symbol outside [0, {alphabet_size})")
            table[src][sym] = dst
        return cls(alphabet_size, tuple(map(tuple, table)), initial, frozenset(accepting))

    def step(self, q: int, symbol: int) -> int:
        return self.transitions[q][symbol]

    def with_initial(self, q: int) -> "Dfa":
        return Dfa(self.alphabet_size, self.transitions, q, self.accepting)

    def edges(self) -> Iterator[tuple[int, int, int]]:
        """Non-stuttering transitions as ``(src, symbol, dst)``."""
        for q, row in enumerate(self.transitions):
            for s, dst in enumerate(row):
                if dst != q:
                    yield q, s, dst

    def is_trivial(self) -> bool:
        return self.num_states == 1

    def to_dict(self) -> dict:
        return {
            "alphabet_size": self.alphabet_size,
            "states": self.num_states,
            "initial": self.initial,
            "accepting": sorted(self.accepting),
            "transitions": [list(e) for e in self.edges()],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Dfa":
        expected = {"alphabet_size", "states", "initial", "accepting", "transitions"}
        if set(doc) != expected:
            raise AutomatonError(f"DFA document keys {sorted(doc)} != {sorted(expected)}")
        return cls.from_edges(
            doc["alphabet_size"], doc["states"], doc["initial"], doc["accepting"],
            (tuple(t) for t in doc["transitions"]),
        )


@dataclass(frozen=True)
class Cdfa:
    """A conjunction of DFAs over a shared alphabet; member order is kept."""

    members: tuple[Dfa, ...]

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise AutomatonError("a cDFA needs at least one member")
        sizes = {d.alphabet_size for d in members}
        if len(sizes) != 1:
            raise AutomatonError(f"cDFA members disagree on alphabet_size: {sorted(sizes)}")
        object.__setattr__(self, "members", members)

    @property
    def alphabet_size(self) -> int:
        return self.members[0].alphabet_size

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def to_list(self) -> list[dict]:
        return [d.to_dict() for d in self.members]

    @classmethod
    def from_list(cls, docs: Sequence[dict]) -> "Cdfa":
        return cls(tuple(Dfa.from_dict(d) for d in docs))


def encode(obj: Dfa | Cdfa) -> str:
    """Serialize to the JSON interchange format (compact, key order fixed)."""
    doc = obj.to_dict() if isinstance(obj, Dfa) else obj.to_list()
    return json.dumps(doc, separators=(",", ":"))


def decode(text: str) -> Dfa | Cdfa:
    doc = json.loads(text)
    if isinstance(doc, list):
        return Cdfa.from_list(doc)
    return Dfa.from_dict(doc)


def _check_symbol(alphabet_size: int, symbol: int):
    if not 0 <= symbol < alphabet_size:
        raise AutomatonError(f"symbol {symbol} outside alphabet [0, {alphabet_size})")


def run(dfa: Dfa, word: Iterable[int], start: int | None = None) -> int:
    q = dfa.initial if start is None else start
    table = dfa.transitions
    for s in word:
        _check_symbol(dfa.alphabet_size, s)
        q = table[q][s]
    return q


def accepts(dfa: Dfa, word: Iterable[int]) -> bool:
    return run(dfa, word) in dfa.accepting


def reachable_states(dfa: Dfa) -> list[int]:
    """States reachable from the initial state, in canonical BFS order."""
    seen = {dfa.initial}
    order = [dfa.initial]
    queue = deque(order)
    while queue:
        q = queue.popleft()
        for dst in dfa.transitions[q]:
            if dst not in seen:
                seen.add(dst)
                order.append(dst)
                queue.append(dst)
    return order


def _hopcroft(dfa: Dfa, states: list[int]) -> dict[int, int]:
    """Partition refinement over ``states``; returns state -> block id."""
    k = dfa.alphabet_size
    table = dfa.transitions
    inverse: list[dict[int, list[int]]] = [dict() for _ in range(k)]
    for q in states:
        for s, dst in enumerate(table[q]):
            inverse[s].setdefault(dst, []).append(q)

    acc = [q for q in states if q in dfa.accepting]
    rej = [q for q in states if q not in dfa.accepting]
    blocks: list[set[int]] = [set(b) for b in (acc, rej) if b]
    block_of = {}
    for i, b in enumerate(blocks):
        for q in b:
            block_of[q] = i
    worklist = set(range(len(blocks)))

    while worklist:
        splitter = list(blocks[worklist.pop()])
        for s in range(k):
            inv = inverse[s]
            touched: dict[int, set[int]] = {}
            for dst in splitter:
                for q in inv.get(dst, ()):
                    touched.setdefault(block_of[q], set()).add(q)
            for b, inside in touched.items():
                block = blocks[b]
                if len(inside) == len(block):
                    continue
                outside = block - inside
                blocks[b] = inside
                new = len(blocks)
                blocks.append(outside)
                for q in outside:
                    block_of[q] = new
                if b in worklist:
                    worklist.add(new)
                else:
                    worklist.add(b if len(inside) <= len(outside) else new)
    return block_of


def _quotient(dfa: Dfa, block_of: dict[int, int]) -> Dfa:
    """Collapse blocks and renumber in BFS order from the initial block."""
    rep: dict[int, int] = {}
    for q, b in block_of.items():
        rep.setdefault(b, q)
    start = block_of[dfa.initial]
    index = {start: 0}
    order = [start]
    queue = deque(order)
    while queue:
        b = queue.popleft()
        for dst in dfa.transitions[rep[b]]:
            nb = block_of[dst]
            if nb not in index:
                index[nb] = len(order)
                order.append(nb)
                queue.append(nb)
    table = tuple(
        tuple(index[block_of[dst]] for dst in dfa.transitions[rep[b]]) for b in order
    )
    accepting = frozenset(index[b] for b in order if rep[b] in dfa.accepting)
    return Dfa(dfa.alphabet_size, table, 0, accepting)


@lru_cache(maxsize=200_000)
def minimize(dfa: Dfa) -> Dfa:
    """Prune unreachable states, merge equivalent ones, canonicalize numbering."""
    states = reachable_states(dfa)
    return _quotient(dfa, _hopcroft(dfa, states))


def minimize_table_filling(dfa: Dfa) -> Dfa:
    """Quadratic pair-marking minimization; an independent check on :func:`minimize`."""
    states = reachable_states(dfa)
    table = dfa.transitions
    pairs = list(itertools.combinations(states, 2))
    marked = {(p, q) for p, q in pairs if (p in dfa.accepting) != (q in dfa.accepting)}
    changed = True
    while changed:
        changed = False
        for p, q in pairs:
            if (p, q) in marked:
                continue
            for s in range(dfa.alphabet_size):
                a, b = table[p][s], table[q][s]
                if a != b and ((a, b) in marked or (b, a) in marked):
                    marked.add((p, q))
                    changed = True
                    break
    block_of = {}
    for q in states:
        block_of[q] = q
        for p in states:
            if p == q:
                break
            if (p, q) not in marked and block_of[p] == p:
                block_of[q] = p
                break
    return _quotient(dfa, block_of)


def conjunction(a: Dfa, b: Dfa) -> Dfa:
    """Minimized product automaton accepting the intersection of both languages."""
    if a.alphabet_size != b.alphabet_size:
        raise AutomatonError(
            f"alphabet mismatch: {a.alphabet_size} vs {b.alphabet_size}"
        )
    start = (a.initial, b.initial)
    index = {start: 0}
    order = [start]
    rows = []
    i = 0
    while i < len(order):
        p, q = order[i]
        row = []
        for s in range(a.alphabet_size):
            nxt = (a.transitions[p][s], b.transitions[q][s])
            j = index.get(nxt)
            if j is None:
                j = index[nxt] = len(order)
                order.append(nxt)
            row.append(j)
        rows.append(tuple(row))
        i += 1
    accepting = frozenset(
        j for j, (p, q) in enumerate(order) if p in a.accepting and q in b.accepting
    )
    return minimize(Dfa(a.alphabet_size, tuple(rows), 0, accepting))


def monolithic(cdfa: Cdfa) -> Dfa:
    result = minimize(cdfa.members[0])
    for d in cdfa.members[1:]:
        result = conjunction(result, d)
    return result


@lru_cache(maxsize=200_000)
def advance_dfa(dfa: Dfa, symbol: int) -> Dfa:
    _check_symbol(dfa.alphabet_size, symbol)
    return minimize(dfa.with_initial(dfa.transitions[dfa.initial][symbol]))


def advance(cdfa: Cdfa, symbol: int) -> Cdfa:
    """Feed one symbol to every member, then re-minimize each member."""
    _check_symbol(cdfa.alphabet_size, symbol)
    return Cdfa(tuple(advance_dfa(d, symbol) for d in cdfa.members))


def classify_state(dfa: Dfa, q: int) -> StateClass:
    if not 0 <= q < dfa.num_states:
        raise AutomatonError(f"state {q} out of range [0, {dfa.num_states})")
    sink = all(dst == q for dst in dfa.transitions[q])
    if q in dfa.accepting:
        return StateClass.ACCEPTING_SINK if sink else StateClass.ACCEPTING_NONSINK
    return StateClass.REJECTING_SINK if sink else StateClass.PLAIN


def is_accepting(cdfa: Cdfa) -> bool:
    """Every member currently sits in an accepting state."""
    return all(d.initial in d.accepting for d in cdfa.members)


def is_rejecting(cdfa: Cdfa) -> bool:
    """Some member is stuck in a rejecting sink."""
    return any(
        classify_state(d, d.initial) is StateClass.REJECTING_SINK for d in cdfa.members
    )


def language_up_to(dfa: Dfa, max_len: int) -> set[tuple[int, ...]]:
    """All accepted words of length <= max_len, by explicit enumeration."""
    words = set()
    for n in range(max_len + 1):
        for w in itertools.product(range(dfa.alphabet_size), repeat=n):
            if accepts(dfa, w):
                words.add(w)
    return words


def shortest_accepted_word(dfa: Dfa) -> tuple[int, ...] | None:
    """BFS for a shortest accepted word; ``None`` when the language is empty."""
    parent: dict[int, tuple[int, int] | None] = {dfa.initial: None}
    queue = deque([dfa.initial])
    while queue:
        q = queue.popleft()
        if q in dfa.accepting:
            word = []
            while parent[q] is not None:
                q, s = parent[q]
                word.append(s)
            return tuple(reversed(word))
        for s, dst in enumerate(dfa.transitions[q]):
            if dst not in parent:
                parent[dst] = (q, s)
                queue.append(dst)
    return None


def one_state(alphabet_size: int, accepting: bool) -> Dfa:
    return Dfa(alphabet_size, ((0,) * alphabet_size,), 0, frozenset({0} if accepting else ()))
