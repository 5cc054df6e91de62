"""Finite-difference gradient checks for the autodiff ops and networks."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def numeric_grad(f: Callable[[], float], x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of ``f`` with respect to ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], seed: int = 0,
          eps: float = 1e-6) -> float:
    """Max relative error between autodiff and central-difference gradients.

    Non-scalar outputs are reduced by a fixed random projection so every
    output component contributes.
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    out_shape = fn(*[Tensor(a) for a in arrays]).shape
    proj = np.random.default_rng(seed).normal(size=out_shape)

    def loss_value() -> float:
        with ad.no_grad():
            return float(np.sum(fn(*[Tensor(a) for a in arrays]).data * proj))

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    ad.backward(ad.sum(ad.mul(fn(*leaves), proj)))
    worst = 0.0
    for leaf, arr in zip(leaves, arrays):
        worst = max(worst, relative_error(leaf.grad, numeric_grad(loss_value, arr, eps)))
    return worst


def check_params(loss_fn: Callable[[], Tensor], store, names: Sequence[str] | None = None,
                 eps: float = 1e-6, max_entries: int | None = None, seed: int = 0) -> float:
    """Compare gradients of a scalar loss w.r.t. named parameters of a store.

    ``max_entries`` limits the number of coordinates probed per parameter.
    """
    names = list(names) if names is not None else [n for n, _ in store.trainable()]
    store.zero_grad()
    ad.backward(loss_fn())
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in names:
        t = store[n]
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        analytic = t.grad.reshape(-1)[idx]
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            with ad.no_grad():
                flat[i] = orig + eps
                hi = float(loss_fn().data)
                flat[i] = orig - eps
                lo = float(loss_fn().data)
            flat[i] = orig
            numeric[j] = (hi - lo) / (2 * eps)
        worst = max(worst, relative_error(analytic, numeric))
    store.zero_grad()
    return worst


def _away_from_kinks(rng, shape, kinks=(0.0,), margin=0.05):
    x = rng.normal(size=shape)
    for k in kinks:
        near = np.abs(x - k) < margin
        x[near] += np.sign(x[near] - k + 1e-12) * 2 * margin
    return x


def op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[..., Tensor], list[np.ndarray]]]:
    """One small differentiable case per primitive op."""
    seg = ad.Segments(np.array([0, 0, 1, 2, 2, 2]), 3)
    rows = np.array([2, 0, 2, 1])
    cols = np.array([1, 0, 2])
    n = rng.normal
    return {
        "add": (ad.add, [n(size=(3, 4)), n(size=(4,))]),
        "sub": (ad.sub, [n(size=(3, 4)), n(size=(3, 1))]),
        "mul": (ad.mul, [n(size=(3, 4)), n(size=(3, 4))]),
        "neg": (ad.neg, [n(size=(5,))]),
        "matmul": (ad.matmul, [n(size=(2, 3, 4)), n(size=(4, 5))]),
        "sum": (lambda a: ad.sum(a, axis=1), [n(size=(3, 4))]),
        "mean": (lambda a: ad.mean(a, axis=0), [n(size=(3, 4))]),
        "exp": (ad.exp, [n(size=(3, 4))]),
        "log": (ad.log, [rng.uniform(0.5, 2.0, size=(3, 4))]),
        "square": (ad.square, [n(size=(3, 4))]),
        "relu": (ad.relu, [_away_from_kinks(rng, (3, 4))]),
        "leaky_relu": (ad.leaky_relu, [_away_from_kinks(rng, (3, 4))]),
        "tanh": (ad.tanh, [n(size=(3, 4))]),
        "clip": (lambda a: ad.clip(a, -0.5, 0.5), [_away_from_kinks(rng, (3, 4), (-0.5, 0.5))]),
        "minimum": (ad.minimum, [n(size=(3, 4)), n(size=(3, 4)) + 0.3]),
        "reshape": (lambda a: ad.reshape(a, (4, 3)), [n(size=(3, 4))]),
        "index": (lambda a: ad.index(a, np.array([0, 2, 0])), [n(size=(3, 4))]),
        "gather_rows": (lambda a: ad.gather_rows(a, rows), [n(size=(3, 4))]),
        "head_scores": (ad.head_scores, [n(size=(5, 2, 3)), n(size=(2, 3))]),
        "head_weight": (ad.head_weight, [n(size=(5, 6)), n(size=(5, 2))]),
        "pick": (lambda a: ad.pick(a, cols), [n(size=(3, 4))]),
        "concat": (lambda a, b: ad.concat([a, b], axis=1), [n(size=(3, 2)), n(size=(3, 4))]),
        "log_softmax": (ad.log_softmax, [n(size=(3, 5))]),
        "segment_sum": (lambda a: ad.segment_sum(a, seg), [n(size=(6, 2))]),
        "segment_softmax": (lambda a: ad.segment_softmax(a, seg), [n(size=(6, 2))]),
        "conv2d": (ad.conv2d, [n(size=(2, 4, 4, 3)), n(size=(2, 2, 3, 5)), n(size=(5,))]),
    }


def composite_loss(agent, graphs, obs, actions, targets) -> Callable[[], Tensor]:
    """A PPO-shaped scalar: log-likelihood of actions plus squared value error."""
    from .nets import GraphBatch

    batch = GraphBatch.from_graphs(graphs)

    def loss() -> Tensor:
        logp, value = agent(batch, obs)
        return ad.add(ad.neg(ad.mean(ad.pick(logp, actions))),
                      ad.mean(ad.square(ad.sub(value, targets))))

    return loss


def run_suite(seed: int = 0, max_entries: int = 6) -> dict[str, float]:
    """Relative error for every primitive op and for the full agent composites."""
    from ..tasks import RadConfig, sample_rad_cdfa
    from ..featurize import featurize_cdfa
    from .nets import Agent, AgentSpec

    rng = np.random.default_rng(seed)
    errors = {name: check(fn, inputs, seed) for name, (fn, inputs) in op_cases(rng).items()}
    cfg = RadConfig(alphabet_size=4, max_conjuncts=2, max_states=5)
    graphs = [featurize_cdfa(sample_rad_cdfa(cfg, rng)) for _ in range(3)]
    small = dict(hidden=8, heads=2, rounds=3)
    for name, spec, obs in (
        ("agent.pretraining", AgentSpec(8, 4, pretraining_heads=True, **small), None),
        ("agent.literal", AgentSpec(8, 4, pretraining_heads=True, reinject=False, **small), None),
        ("agent.letterworld", AgentSpec(8, 4, obs_shape=(4, 4, 2), **small),
         (rng.random((3, 4, 4, 2)) < 0.3).astype(float)),
    ):
        agent = Agent(spec, seed)
        loss = composite_loss(agent, graphs, obs, rng.integers(4, size=3), rng.normal(size=3))
        errors[name] = check_params(loss, agent.store, eps=1e-6, max_entries=max_entries, seed=seed)
    return errors
