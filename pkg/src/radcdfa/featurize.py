"""Graph featurization of cDFAs for the message-passing encoder.

Each member DFA becomes a subgraph with one node per state and one node per
(src, dst) pair of distinct states connected by some symbol. Edges point
against the transition direction (dst -> transition -> src) so messages flow
toward the initial state, every node carries a self-loop, and each member's
initial-state node feeds a shared AND node.

Feature columns: ``[is_initial, is_accepting, is_rejecting_sink, is_and,
symbol_0, ..., symbol_{k-1}]``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .automata import Cdfa, Dfa, StateClass, classify_state

INITIAL, ACCEPTING, REJECTING, AND = range(4)
ROLE_DIM = 4

STATE, TRANSITION, AND_KIND = "state", "transition", "and"


@dataclass(frozen=True, eq=False)
class FeatGraph:
    node_features: np.ndarray  # (num_nodes, 4 + alphabet_size), 0/1 floats
    edges: np.ndarray  # (num_edges, 2) int64, rows are (src, dst)
    node_kind: tuple[str, ...]
    and_node: int  # -1 for a bare member subgraph

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.node_features.shape[1]

    @property
    def alphabet_size(self) -> int:
        return self.feature_dim - ROLE_DIM

    def in_degree(self, v: int) -> int:
        return int(np.count_nonzero(self.edges[:, 1] == v))

    def to_csv(self) -> tuple[str, str]:
        """Node table and edge list as CSV text."""
        nodes = io.StringIO()
        w = csv.writer(nodes, lineterminator="\n")
        w.writerow(["index", "kind", "features"])
        for i, (kind, row) in enumerate(zip(self.node_kind, self.node_features)):
            w.writerow([i, kind, "".join(str(int(b)) for b in row)])
        edges = io.StringIO()
        w = csv.writer(edges, lineterminator="\n")
        w.writerow(["src", "dst"])
        w.writerows(self.edges.tolist())
        return nodes.getvalue(), edges.getvalue()


def _member_parts(dfa: Dfa):
    k = dfa.alphabet_size
    n = dfa.num_states
    groups: dict[tuple[int, int], list[int]] = {}
    for q, s, dst in dfa.edges():
        groups.setdefault((q, dst), []).append(s)
    pairs = sorted(groups)
    feats = np.zeros((n + len(pairs), ROLE_DIM + k))
    kinds = [STATE] * n + [TRANSITION] * len(pairs)
    feats[dfa.initial, INITIAL] = 1.0
    for q in range(n):
        if q in dfa.accepting:
            feats[q, ACCEPTING] = 1.0
        elif classify_state(dfa, q) is StateClass.REJECTING_SINK:
            feats[q, REJECTING] = 1.0
    edges = [(v, v) for v in range(n + len(pairs))]
    for t, (src, dst) in enumerate(pairs):
        node = n + t
        feats[node, ROLE_DIM + np.asarray(groups[(src, dst)])] = 1.0
        edges.append((dst, node))
        edges.append((node, src))
    return feats, edges, kinds


def featurize_dfa(dfa: Dfa) -> FeatGraph:
    feats, edges, kinds = _member_parts(dfa)
    return FeatGraph(_frozen(feats), _frozen(np.array(edges, dtype=np.int64)), tuple(kinds), -1)


@lru_cache(maxsize=100_000)
def featurize_cdfa(cdfa: Cdfa) -> FeatGraph:
    k = cdfa.alphabet_size
    blocks, edge_list, kinds, initials = [], [], [], []
    offset = 0
    for dfa in cdfa.members:
        feats, edges, kd = _member_parts(dfa)
        blocks.append(feats)
        edge_list.extend((u + offset, v + offset) for u, v in edges)
        kinds.extend(kd)
        initials.append(dfa.initial + offset)
        offset += feats.shape[0]
    and_row = np.zeros((1, ROLE_DIM + k))
    and_row[0, AND] = 1.0
    blocks.append(and_row)
    kinds.append(AND_KIND)
    and_node = offset
    edge_list.extend((q, and_node) for q in initials)
    edge_list.append((and_node, and_node))
    return FeatGraph(
        _frozen(np.concatenate(blocks)),
        _frozen(np.array(edge_list, dtype=np.int64)),
        tuple(kinds),
        and_node,
    )


def _reconstruct(g: FeatGraph, nodes: list[int]) -> Dfa:
    states = [v for v in nodes if g.node_kind[v] == STATE]
    index = {v: i for i, v in enumerate(states)}
    k = g.alphabet_size
    table = [[q] * k for q in range(len(states))]
    into: dict[int, int] = {}
    out_of: dict[int, int] = {}
    for u, v in g.edges.tolist():
        if u == v:
            continue
        if g.node_kind[v] == TRANSITION and u in index:
            into[v] = index[u]  # dst state -> transition node
        elif g.node_kind[u] == TRANSITION and v in index:
            out_of[u] = index[v]  # transition node -> src state
    for t, dst in into.items():
        src = out_of[t]
        for s in np.flatnonzero(g.node_features[t, ROLE_DIM:]):
            table[src][int(s)] = dst
    initial = next(index[v] for v in states if g.node_features[v, INITIAL])
    accepting = [index[v] for v in states if g.node_features[v, ACCEPTING]]
    return Dfa(k, tuple(map(tuple, table)), initial, frozenset(accepting))


def reconstruct_dfa(g: FeatGraph) -> Dfa:
    """Recover the transition table of a single-member graph (state numbering kept)."""
    return _reconstruct(g, [v for v in range(g.num_nodes) if g.node_kind[v] != AND_KIND])


def reconstruct_cdfa(g: FeatGraph) -> list[Dfa]:
    """Recover every member of a cDFA graph, in member order.

    Members are the connected components once the AND node is removed; each
    minimized member is connected because all its states are reachable.
    """
    keep = np.array([k != AND_KIND for k in g.node_kind])
    e = g.edges[keep[g.edges[:, 0]] & keep[g.edges[:, 1]]]
    adj = sparse.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(g.num_nodes,) * 2)
    _, labels = connected_components(adj, directed=True, connection="weak")
    groups: dict[int, list[int]] = {}
    for v in np.flatnonzero(keep):
        groups.setdefault(int(labels[v]), []).append(int(v))
    return [_reconstruct(g, nodes) for nodes in sorted(groups.values())]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a
