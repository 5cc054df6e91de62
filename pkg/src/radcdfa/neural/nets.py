"""GATv2 cDFA encoder, observation encoders, and actor/critic heads."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Segments, Tensor
from .params import ParamStore
from ..featurize import FeatGraph


def init_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_glorot(rng: np.random.Generator, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (shape[-2] + shape[-1]))
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int, rng, bias: bool = True):
        self.weight = store.create(f"{name}.weight", init_uniform(rng, (n_in, n_out), n_in))
        self.bias = store.create(f"{name}.bias", init_uniform(rng, (n_out,), n_in)) if bias else None

    def __call__(self, x) -> Tensor:
        y = ad.matmul(x, self.weight)
        return y if self.bias is None else ad.add(y, self.bias)


class MLP:
    """Stack of linear layers with an activation between (not after) them."""

    def __init__(self, store, name, sizes: Sequence[int], rng, activation=ad.relu, final_activation=False):
        self.layers = [Linear(store, f"{name}.{i}", a, b, rng) for i, (a, b) in enumerate(zip(sizes, sizes[1:]))]
        self.activation = activation
        self.final_activation = final_activation

    def __call__(self, x) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1 or self.final_activation:
                x = self.activation(x)
        return x


@dataclass
class GraphBatch:
    """Disjoint union of featurized graphs, edges sorted by destination."""

    features: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    segments: Segments
    src_scatter: object  # sparse (num_nodes, num_edges) incidence of src
    and_nodes: np.ndarray  # one row index per graph

    @classmethod
    def from_graphs(cls, graphs: Sequence[FeatGraph]) -> "GraphBatch":
        sizes = np.array([g.num_nodes for g in graphs])
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        edges = np.concatenate([g.edges + off for g, off in zip(graphs, offsets)])
        order = np.argsort(edges[:, 1], kind="stable")
        edges = edges[order]
        total = int(sizes.sum())
        return cls(
            features=np.concatenate([g.node_features for g in graphs]),
            src=edges[:, 0].copy(),
            dst=edges[:, 1].copy(),
            segments=Segments(edges[:, 1], total),
            src_scatter=ad.scatter_matrix(edges[:, 0], total),
            and_nodes=np.array([g.and_node for g in graphs]) + offsets,
        )

    @property
    def num_graphs(self) -> int:
        return len(self.and_nodes)


class GATv2Encoder:
    """Shared-weight GATv2 message passing; returns the AND-node vector per graph.

    Each round, for an edge u -> v with per-head vectors ``W_src h_v`` and
    ``W_tgt h_u``, the score is ``a . LeakyReLU(W_src h_v + W_tgt h_u)``; scores
    are normalized over v's incoming edges and v receives the weighted sum of
    ``W_tgt h_u``. Heads are concatenated back to ``hidden`` width.

    With ``reinject`` the maps read ``[h, h0]``, the current state next to the
    projected input features, instead of ``h`` alone.
    """

    def __init__(self, store: ParamStore, name: str, feature_dim: int, rng,
                 hidden: int = 32, heads: int = 4, rounds: int = 8, negative_slope: float = 0.2,
                 reinject: bool = True):
        if hidden % heads:
            raise ValueError(f"hidden={hidden} is not divisible by heads={heads}")
        self.name = name
        self.feature_dim, self.hidden, self.heads, self.rounds = feature_dim, hidden, heads, rounds
        self.head_dim = hidden // heads
        self.slope = negative_slope
        self.reinject = reinject
        self.proj = Linear(store, f"{name}.proj", feature_dim, hidden, rng)
        n_in = 2 * hidden if reinject else hidden
        # variance-preserving init: eight linear rounds otherwise shrink the embedding ~100x
        self.w_src = store.create(f"{name}.w_src", init_glorot(rng, (n_in, hidden)))
        self.w_tgt = store.create(f"{name}.w_tgt", init_glorot(rng, (n_in, hidden)))
        self.att = store.create(f"{name}.att", init_glorot(rng, (heads, self.head_dim)))

    def node_states(self, batch: GraphBatch) -> Tensor:
        if batch.features.shape[1] != self.feature_dim:
            raise ad.ShapeError(
                f"graph feature_dim {batch.features.shape[1]} != encoder input {self.feature_dim}")
        e = batch.src.size
        h0 = h = self.proj(Tensor(batch.features))
        for _ in range(self.rounds):
            h = self._round(ad.concat([h, h0], axis=1) if self.reinject else h, batch, e)
        return h

    def _round(self, h: Tensor, batch: GraphBatch, e: int) -> Tensor:
        hs = ad.matmul(h, self.w_src)
        ht = ad.matmul(h, self.w_tgt)
        msg = ad.gather_rows(ht, batch.src, batch.src_scatter)
        z = ad.leaky_relu(ad.add(ad.gather_rows(hs, batch.dst, batch.segments.matrix), msg), self.slope)
        scores = ad.head_scores(ad.reshape(z, (e, self.heads, self.head_dim)), self.att)
        alpha = ad.segment_softmax(scores, batch.segments)
        return ad.segment_sum(ad.head_weight(msg, alpha), batch.segments)

    def __call__(self, batch: GraphBatch) -> Tensor:
        return ad.gather_rows(self.node_states(batch), batch.and_nodes)


class ConvEncoder:
    """Stacked valid 2x2 stride-1 convolutions with ReLU, flattened."""

    def __init__(self, store: ParamStore, name: str, in_shape, rng,
                 channels: Sequence[int] = (16, 32, 64), kernel: int = 2):
        h, w, c = in_shape
        self.weights, self.biases = [], []
        for i, cout in enumerate(channels):
            fan_in = kernel * kernel * c
            self.weights.append(store.create(f"{name}.{i}.weight", init_uniform(rng, (kernel, kernel, c, cout), fan_in)))
            self.biases.append(store.create(f"{name}.{i}.bias", init_uniform(rng, (cout,), fan_in)))
            h, w, c = h - kernel + 1, w - kernel + 1, cout
        self.out_shape = (h, w, c)
        self.out_dim = h * w * c

    def __call__(self, x) -> Tensor:
        x = ad.as_tensor(x)
        for wt, b in zip(self.weights, self.biases):
            x = ad.relu(ad.conv2d(x, wt, b))
        return ad.reshape(x, (x.shape[0], self.out_dim))


@dataclass
class AgentSpec:
    feature_dim: int
    num_actions: int
    obs_shape: Optional[tuple] = None  # None: the task embedding is the whole input
    pretraining_heads: bool = False  # single linear actor/critic
    hidden: int = 32
    heads: int = 4
    rounds: int = 8
    reinject: bool = True


class Agent:
    """cDFA encoder + optional observation encoder + actor and critic heads.

    Parameter names are prefixed ``encoder.``, ``obs.``, ``actor.``, ``critic.``
    so that the encoder can be checkpointed, frozen, or swapped on its own.
    """

    def __init__(self, spec: AgentSpec, seed: int):
        rng = np.random.default_rng(seed)
        self.spec = spec
        self.store = ParamStore()
        self.encoder = GATv2Encoder(self.store, "encoder", spec.feature_dim, rng,
                                    spec.hidden, spec.heads, spec.rounds, reinject=spec.reinject)
        self.obs_net = None
        in_dim = spec.hidden
        if spec.obs_shape is not None:
            self.obs_net = ConvEncoder(self.store, "obs", spec.obs_shape, rng)
            in_dim += self.obs_net.out_dim
        if spec.pretraining_heads:
            self.actor = MLP(self.store, "actor", [in_dim, spec.num_actions], rng)
            self.critic = MLP(self.store, "critic", [in_dim, 1], rng)
        else:
            self.actor = MLP(self.store, "actor", [in_dim, 64, 64, 64, spec.num_actions], rng, ad.relu)
            self.critic = MLP(self.store, "critic", [in_dim, 64, 64, 1], rng, ad.tanh)

    @property
    def encoder_frozen(self) -> bool:
        return any(n.startswith("encoder.") for n in self.store.frozen)

    def freeze_encoder(self):
        self.store.freeze("encoder.")

    def embed(self, graphs: GraphBatch) -> Tensor:
        return self.encoder(graphs)

    def heads(self, embedding, obs: Optional[np.ndarray] = None) -> tuple[Tensor, Tensor]:
        """Log-probabilities over actions and state values from a task embedding."""
        x = ad.as_tensor(embedding)
        if self.obs_net is not None:
            x = ad.concat([self.obs_net(obs), x], axis=1)
        logp = ad.log_softmax(self.actor(x), axis=1)
        value = ad.reshape(self.critic(x), (x.shape[0],))
        return logp, value

    def __call__(self, graphs: GraphBatch, obs: Optional[np.ndarray] = None):
        return self.heads(self.embed(graphs), obs)
