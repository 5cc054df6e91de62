"""Named parameter storage, checkpoints, and the RMSprop update."""
from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor

CHECKPOINT_FORMAT = "radcdfa-params"
CHECKPOINT_VERSION = 1


class ParamStore:
    """Ordered mapping of parameter name -> leaf :class:`Tensor`."""

    def __init__(self):
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.frozen: set[str] = set()

    def create(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already exists")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.params if n.startswith(prefix)]

    def freeze(self, prefix: str):
        """Stop gradient flow into every parameter under ``prefix``."""
        for n in self.names(prefix):
            self.frozen.add(n)
            self.params[n].requires_grad = False
            self.params[n].grad = None

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self.params.items() if n not in self.frozen]

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def num_values(self) -> int:
        return int(np.sum([t.size for t in self.params.values()]))

    def to_bytes(self, prefix: str = "") -> bytes:
        names = self.names(prefix)
        header = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "params": [{"name": n, "shape": list(self.params[n].shape)} for n in names],
        }
        body = b"".join(
            np.ascontiguousarray(self.params[n].data, dtype="<f8").tobytes() for n in names
        )
        return json.dumps(header, separators=(",", ":")).encode() + b"\n" + body

    def load_bytes(self, blob: bytes, prefix: str = "", strict: bool = True):
        """Copy values from a checkpoint into existing parameters.

        With ``prefix``, only checkpoint entries under it are loaded.
        """
        entries = read_checkpoint(blob)
        wanted = {n: a for n, a in entries.items() if n.startswith(prefix)}
        missing = [n for n in self.names(prefix) if n not in wanted]
        if strict and missing:
            raise KeyError(f"checkpoint lacks parameters: {missing}")
        for n, arr in wanted.items():
            if n not in self.params:
                if strict:
                    raise KeyError(f"checkpoint has unknown parameter {n!r}")
                continue
            if arr.shape != self.params[n].shape:
                raise ValueError(f"{n}: checkpoint shape {arr.shape} != {self.params[n].shape}")
            self.params[n].data = arr.copy()

    def save(self, path, prefix: str = ""):
        Path(path).write_bytes(self.to_bytes(prefix))

    def load(self, path, prefix: str = "", strict: bool = True):
        self.load_bytes(Path(path).read_bytes(), prefix, strict)


def read_checkpoint(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    head, _, body = blob.partition(b"\n")
    header = json.loads(head)
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a parameter checkpoint (format={header.get('format')!r})")
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')}")
    out = OrderedDict()
    offset = 0
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=offset).reshape(shape)
        out[entry["name"]] = arr.astype(np.float64)
        offset += 8 * count
    if offset != len(body):
        raise ValueError("checkpoint body length does not match its header")
    return out


@dataclass
class RMSprop:
    """RMSprop with global-norm gradient clipping applied first."""

    lr: float
    alpha: float = 0.99
    eps: float = 1e-8
    max_grad_norm: float = 0.5

    def __post_init__(self):
        self.square_avg: dict[str, np.ndarray] = {}

    def step(self, store: ParamStore) -> float:
        """Update trainable parameters in place; returns the pre-clip gradient norm."""
        named = [(n, t) for n, t in store.trainable() if t.grad is not None]
        bad = [n for n, t in named if not np.all(np.isfinite(t.grad))]
        if bad:
            raise FloatingPointError(f"non-finite gradients in {bad}")
        norm = global_norm([t.grad for _, t in named])
        grads = [t.grad for _, t in named]
        if self.max_grad_norm is not None:
            grads = clip_by_global_norm(grads, self.max_grad_norm)
        for (n, t), g in zip(named, grads):
            v = self.square_avg.get(n)
            if v is None:
                v = np.zeros_like(t.data)
            v = self.alpha * v + (1.0 - self.alpha) * g * g
            self.square_avg[n] = v
            t.data = t.data - self.lr * g / (np.sqrt(v) + self.eps)
        return norm


def global_norm(grads: list[np.ndarray]) -> float:
    return float(np.sqrt(np.sum([np.sum(g * g) for g in grads]))) if grads else 0.0


def clip_by_global_norm(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    norm = global_norm(grads)
    if norm <= max_norm:
        return list(grads)
    scale = max_norm / (norm + 1e-6)
    return [g * scale for g in grads]
