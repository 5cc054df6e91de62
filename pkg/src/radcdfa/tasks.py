"""Task samplers: sequential reach-avoid (SRA), RAD, and the named classes.

A task spec string looks like ``cRAR.1.2.1.3``: class RAR, task length drawn
uniformly from 1..2, number of conjuncts uniformly from 1..3. The leading
``c`` keeps the composition; without it the sampled cDFA is collapsed into
its monolithic DFA. ``cRAD``/``RAD`` and ``NT-cRAD``/``NT-RAD`` select the
truncated and untruncated RAD distributions.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .automata import Cdfa, Dfa, minimize, monolithic

CLASSES = ("R", "RA", "RAR", "PARITY", "RAD", "NT_RAD")

GRAMMAR = (
    "c?<CLASS>.<len_min>.<len_max>.<conj_min>.<conj_max> with CLASS in R|RA|RAR|PARITY, "
    "c?<CLASS>.<len_max>.<conj_max> (minimums default to 1), "
    "or one of cRAD, RAD, NT-cRAD, NT-RAD"
)


class TaskSpecError(ValueError):
    pass


@dataclass(frozen=True)
class RadConfig:
    alphabet_size: int = 12
    p_n: float = 0.5
    p_k: float = 0.5
    mutations: int = 5
    stutter_prob: float = 0.9
    max_conjuncts: Optional[int] = 5
    max_states: Optional[int] = 10

    def __post_init__(self):
        for name in ("p_n", "p_k"):
            p = getattr(self, name)
            if not 0.0 < p < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {p}")
        if not 0.0 <= self.stutter_prob <= 1.0:
            raise ValueError(f"stutter_prob must lie in [0, 1], got {self.stutter_prob}")
        if self.mutations < 0:
            raise ValueError(f"mutations must be >= 0, got {self.mutations}")
        if self.max_conjuncts is not None and self.max_conjuncts < 1:
            raise ValueError("max_conjuncts must be >= 1 when set")
        if self.max_states is not None and self.max_states < 3:
            raise ValueError("max_states must be >= 3 when set (a chain of length 1 has 3 states)")
        if self.alphabet_size < 2:
            raise ValueError("alphabet_size must be >= 2 so reach and avoid symbols differ")

    def untruncated(self) -> "RadConfig":
        return replace(self, max_conjuncts=None, max_states=None)


@dataclass(frozen=True)
class TaskSpec:
    class_id: str
    task_len_min: int = 1
    task_len_max: int = 1
    conj_min: int = 1
    conj_max: int = 1
    compositional: bool = True

    def __post_init__(self):
        if self.class_id not in CLASSES:
            raise TaskSpecError(f"unknown class {self.class_id!r}; expected one of {CLASSES}")
        if not 1 <= self.task_len_min <= self.task_len_max:
            raise TaskSpecError(f"bad task length range {self.task_len_min}..{self.task_len_max}")
        if not 1 <= self.conj_min <= self.conj_max:
            raise TaskSpecError(f"bad conjunct range {self.conj_min}..{self.conj_max}")

    @property
    def is_rad(self) -> bool:
        return self.class_id in ("RAD", "NT_RAD")

    def __str__(self):
        prefix = "c" if self.compositional else ""
        if self.class_id == "NT_RAD":
            return f"NT-{prefix}RAD"
        if self.class_id == "RAD":
            return f"{prefix}RAD"
        name = "Parity" if self.class_id == "PARITY" else self.class_id
        return (f"{prefix}{name}.{self.task_len_min}.{self.task_len_max}"
                f".{self.conj_min}.{self.conj_max}")


_SPEC_RE = re.compile(r"^(c?)(RAR|RA|R|PARITY|Parity|parity)\.(\d+)\.(\d+)(?:\.(\d+)\.(\d+))?$")
_RAD_RE = re.compile(r"^(NT[-_])?(c?)RAD$")


def parse_spec(text: str) -> TaskSpec:
    text = text.strip()
    m = _RAD_RE.match(text)
    if m:
        return TaskSpec("NT_RAD" if m.group(1) else "RAD", compositional=bool(m.group(2)))
    m = _SPEC_RE.match(text)
    if not m:
        raise TaskSpecError(f"cannot parse task spec {text!r}; expected {GRAMMAR}")
    comp, cls = bool(m.group(1)), m.group(2).upper()
    if m.group(5) is None:
        lo_k, hi_k, lo_n, hi_n = 1, int(m.group(3)), 1, int(m.group(4))
    else:
        lo_k, hi_k, lo_n, hi_n = (int(m.group(i)) for i in range(3, 7))
    return TaskSpec(cls, lo_k, hi_k, lo_n, hi_n, compositional=comp)


def _geometric(rng: np.random.Generator, p: float, cap: Optional[int]) -> int:
    # support starts at 1; truncation conditions on the cap by rejection
    while True:
        x = int(rng.geometric(p))
        if cap is None or x <= cap:
            return x


def _chain(alphabet_size: int, k: int, levels) -> Dfa:
    """Chain q0..q_{k-1} -> q_k (accepting sink) with q_{k+1} the rejecting sink.

    ``levels[i]`` is ``(reach_symbols, avoid_symbols)`` for chain state i.
    """
    edges = []
    for i, (reach, avoid) in enumerate(levels):
        edges += [(i, s, i + 1) for s in reach]
        edges += [(i, s, k + 1) for s in avoid]
    return Dfa.from_edges(alphabet_size, k + 2, 0, [k], edges)


def sample_sra(k: int, cfg: RadConfig, rng: np.random.Generator) -> Dfa:
    """Sequential reach-avoid chain of length ``k`` (``k + 2`` states, minimized).

    A zero-length chain would start in its accepting state, which is trivial;
    it is lengthened to one level.
    """
    if cfg.alphabet_size < 2:
        raise ValueError("alphabet_size must be >= 2 so reach and avoid symbols differ")
    k = max(k, 1)
    levels = []
    for _ in range(k):
        reach_sym, avoid_sym = (int(s) for s in rng.choice(cfg.alphabet_size, 2, replace=False))
        reach, avoid = [reach_sym], [avoid_sym]
        for s in range(cfg.alphabet_size):
            if s in (reach_sym, avoid_sym):
                continue
            if rng.random() >= cfg.stutter_prob:
                (reach if rng.random() < 0.5 else avoid).append(s)
        levels.append((reach, avoid))
    dfa = minimize(_chain(cfg.alphabet_size, k, levels))
    assert not dfa.is_trivial()
    return dfa


def mutate(dfa: Dfa, rng: np.random.Generator) -> Dfa:
    """Redirect one uniformly drawn transition, sink the accepting states, minimize.

    Returns the input unchanged if the result collapses to a one-state DFA.
    """
    n, k = dfa.num_states, dfa.alphabet_size
    q, s, q2 = int(rng.integers(n)), int(rng.integers(k)), int(rng.integers(n))
    table = [list(row) for row in dfa.transitions]
    table[q][s] = q2
    for f in dfa.accepting:
        table[f] = [f] * k
    out = minimize(Dfa(k, tuple(map(tuple, table)), dfa.initial, dfa.accepting))
    return dfa if out.is_trivial() else out


def _max_chain(cfg: RadConfig) -> Optional[int]:
    return None if cfg.max_states is None else cfg.max_states - 2


def sample_rad_dfa(cfg: RadConfig, rng: np.random.Generator) -> Dfa:
    dfa = sample_sra(_geometric(rng, cfg.p_k, _max_chain(cfg)), cfg, rng)
    for _ in range(cfg.mutations):
        dfa = mutate(dfa, rng)
    return dfa


def sample_rad_cdfa(cfg: RadConfig, rng: np.random.Generator) -> Cdfa:
    n = _geometric(rng, cfg.p_n, cfg.max_conjuncts)
    return Cdfa(tuple(sample_rad_dfa(cfg, rng) for _ in range(n)))


def _distinct(rng: np.random.Generator, alphabet_size: int, count: int) -> list[int]:
    return [int(s) for s in rng.choice(alphabet_size, count, replace=False)]


def reach_dfa(alphabet_size: int, symbols: list[int]) -> Dfa:
    """Visit ``symbols`` in order; everything else stutters."""
    k = len(symbols)
    edges = [(i, s, i + 1) for i, s in enumerate(symbols)]
    return minimize(Dfa.from_edges(alphabet_size, k + 1, 0, [k], edges))


def reach_avoid_dfa(alphabet_size: int, levels: list[tuple[int, int]]) -> Dfa:
    """One ``(reach, avoid)`` pair per level; avoiding sends to a rejecting sink."""
    k = len(levels)
    return minimize(_chain(alphabet_size, k, [([r], [a]) for r, a in levels]))


def redemption_dfa(alphabet_size: int, levels: list[tuple[int, int, int]]) -> Dfa:
    """Reach-avoid with redemption: ``(reach, avoid, back)`` per level.

    The avoid symbol at chain state ``i`` moves to a trap state from which
    ``back`` returns to state ``i``. Parity is the case ``back == avoid``.
    """
    k = len(levels)
    edges = []
    for i, (r, a, b) in enumerate(levels):
        trap = k + 1 + i
        edges += [(i, r, i + 1), (i, a, trap), (trap, b, i)]
    return minimize(Dfa.from_edges(alphabet_size, 2 * k + 1, 0, [k], edges))


def sample_member(class_id: str, k: int, alphabet_size: int, rng: np.random.Generator) -> Dfa:
    if class_id == "R":
        if k > alphabet_size:
            raise TaskSpecError(f"R task of length {k} needs {k} distinct symbols, alphabet has {alphabet_size}")
        return reach_dfa(alphabet_size, _distinct(rng, alphabet_size, k))
    if class_id == "RA":
        return reach_avoid_dfa(
            alphabet_size, [tuple(_distinct(rng, alphabet_size, 2)) for _ in range(k)])
    if class_id == "RAR":
        if alphabet_size < 3:
            raise TaskSpecError("RAR needs an alphabet of at least 3 symbols")
        return redemption_dfa(
            alphabet_size, [tuple(_distinct(rng, alphabet_size, 3)) for _ in range(k)])
    if class_id == "PARITY":
        levels = []
        for _ in range(k):
            r, a = _distinct(rng, alphabet_size, 2)
            levels.append((r, a, a))
        return redemption_dfa(alphabet_size, levels)
    raise TaskSpecError(f"no member sampler for class {class_id!r}")


def sample_class(
    spec: TaskSpec,
    rng: np.random.Generator,
    alphabet_size: int = 12,
    rad: Optional[RadConfig] = None,
) -> Cdfa:
    """Sample a cDFA from ``spec``; non-compositional specs yield a 1-member cDFA."""
    if spec.is_rad:
        cfg = rad if rad is not None else RadConfig(alphabet_size=alphabet_size)
        if spec.class_id == "NT_RAD":
            cfg = cfg.untruncated()
        cdfa = sample_rad_cdfa(cfg, rng)
    else:
        n = int(rng.integers(spec.conj_min, spec.conj_max + 1))
        members = []
        for _ in range(n):
            k = int(rng.integers(spec.task_len_min, spec.task_len_max + 1))
            members.append(sample_member(spec.class_id, k, alphabet_size, rng))
        cdfa = Cdfa(tuple(members))
    if not spec.compositional:
        cdfa = Cdfa((monolithic(cdfa),))
    return cdfa


def truncated_geometric_pmf(p: float, cap: int) -> np.ndarray:
    """pmf over 1..cap of a 1-based geometric conditioned on ``x <= cap``."""
    x = np.arange(1, cap + 1)
    w = p * (1 - p) ** (x - 1)
    return w / w.sum()


def stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for worker ``index`` under root ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
