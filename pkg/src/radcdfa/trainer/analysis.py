"""Embedding-space analysis: per-class samples, two variants, similarity matrices."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..automata import Cdfa, advance, advance_dfa, conjunction, monolithic, shortest_accepted_word
from ..featurize import featurize_cdfa
from ..neural import autodiff as ad
from ..neural.nets import GraphBatch
from ..tasks import RadConfig, parse_spec, sample_class

log = logging.getLogger(__name__)


def collapse2(cdfa: Cdfa, rng: np.random.Generator) -> Optional[Cdfa]:
    """Replace two random members by their minimized conjunction (None if < 2 members)."""
    if len(cdfa) < 2:
        return None
    i, j = sorted(rng.choice(len(cdfa), size=2, replace=False).tolist())
    rest = [d for k, d in enumerate(cdfa.members) if k not in (i, j)]
    return Cdfa((conjunction(cdfa.members[i], cdfa.members[j]), *rest))


def moving_symbols(cdfa: Cdfa) -> list[int]:
    """Symbols that change the current state of at least one member."""
    return [s for s in range(cdfa.alphabet_size)
            if any(advance_dfa(d, s) != d for d in cdfa.members)]


def advance1(cdfa: Cdfa, rng: np.random.Generator) -> Optional[tuple[int, Cdfa]]:
    """Advance on a uniformly chosen non-stuttering symbol; None when every symbol stutters."""
    symbols = moving_symbols(cdfa)
    if not symbols:
        return None
    s = symbols[int(rng.integers(len(symbols)))]
    return s, advance(cdfa, s)


def accepting_variant(cdfa: Cdfa) -> Optional[Cdfa]:
    """Advance along a shortest satisfying word, landing in an accepting cDFA."""
    word = shortest_accepted_word(monolithic(cdfa))
    if word is None:
        return None
    for s in word:
        cdfa = advance(cdfa, s)
    return cdfa


def embed(agent, cdfas: Sequence[Cdfa], batch_size: int = 256) -> np.ndarray:
    out = []
    with ad.no_grad():
        for start in range(0, len(cdfas), batch_size):
            chunk = cdfas[start:start + batch_size]
            out.append(agent.embed(GraphBatch.from_graphs([featurize_cdfa(c) for c in chunk])).data)
    return np.concatenate(out) if out else np.zeros((0, agent.spec.hidden))


def cosine_matrix(x: np.ndarray, y: Optional[np.ndarray] = None) -> np.ndarray:
    y = x if y is None else y
    xn = x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)
    yn = y / np.maximum(np.linalg.norm(y, axis=1, keepdims=True), 1e-12)
    return np.clip(xn @ yn.T, -1.0, 1.0)


def euclidean_matrix(x: np.ndarray, y: Optional[np.ndarray] = None) -> np.ndarray:
    y = x if y is None else y
    d2 = (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * x @ y.T
    d = np.sqrt(np.maximum(d2, 0.0))
    if y is x:
        np.fill_diagonal(d, 0.0)
    return d


def mean_offdiag(m: np.ndarray) -> float:
    n = m.shape[0]
    return float((m.sum() - np.trace(m)) / (n * (n - 1)))


@dataclass
class EmbeddingAnalysis:
    labels: list[str]  # class spec per row
    variants: list[str]  # "sample", "collapse2", "advance1"
    origin: list[int]  # row index of the sample a variant was derived from (self for samples)
    cdfas: list[Cdfa]
    embeddings: np.ndarray
    cosine: np.ndarray
    euclidean: np.ndarray

    def pairs(self) -> list[tuple[int, int, str]]:
        """(sample row, variant row, variant kind) for every derived variant."""
        return [(o, i, v) for i, (o, v) in enumerate(zip(self.origin, self.variants)) if v != "sample"]

    def _row_names(self) -> list[str]:
        return [f"{i}:{lab}:{var}" for i, (lab, var) in enumerate(zip(self.labels, self.variants))]

    def to_csv(self) -> dict[str, str]:
        names = self._row_names()
        out = {}
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "class", "variant", "origin", *[f"e{j}" for j in range(self.embeddings.shape[1])]])
        for i, row in enumerate(self.embeddings):
            w.writerow([i, self.labels[i], self.variants[i], self.origin[i], *[repr(float(v)) for v in row]])
        out["embeddings.csv"] = buf.getvalue()
        for key, mat in (("cosine.csv", self.cosine), ("euclidean.csv", self.euclidean)):
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["", *names])
            for name, row in zip(names, mat):
                w.writerow([name, *[repr(float(v)) for v in row]])
            out[key] = buf.getvalue()
        return out

    def write(self, out_dir: Path):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, text in self.to_csv().items():
            (out_dir / name).write_text(text)


def analyze_embeddings(agent, classes: Sequence[str], samples_per_class: int, seed: int = 0,
                       alphabet_size: int = 12, rad: Optional[RadConfig] = None,
                       variants: bool = True) -> EmbeddingAnalysis:
    rng = np.random.default_rng(seed)
    labels, kinds, origin, cdfas = [], [], [], []
    for cls in classes:
        spec = parse_spec(cls)
        for _ in range(samples_per_class):
            c = sample_class(spec, rng, alphabet_size=alphabet_size, rad=rad)
            row = len(cdfas)
            labels.append(cls); kinds.append("sample"); origin.append(row); cdfas.append(c)
            if not variants:
                continue
            collapsed = collapse2(c, rng)
            if collapsed is None:
                log.info("collapse2 skipped for %s row %d: single member", cls, row)
            else:
                labels.append(cls); kinds.append("collapse2"); origin.append(row); cdfas.append(collapsed)
            moved = advance1(c, rng)
            if moved is None:
                log.info("advance1 skipped for %s row %d: every symbol stutters", cls, row)
            else:
                labels.append(cls); kinds.append("advance1"); origin.append(row); cdfas.append(moved[1])
    emb = embed(agent, cdfas)
    return EmbeddingAnalysis(labels, kinds, origin, cdfas, emb, cosine_matrix(emb), euclidean_matrix(emb))


def acceptance_gap(agent, samples: Sequence[Cdfa]) -> dict:
    """Cosine cohesion of accepting cDFAs versus their similarity to non-accepting ones.

    Accepting cDFAs are derived from ``samples`` by advancing along a shortest
    satisfying word; the non-accepting set is ``samples`` itself.
    """
    accepting = [a for a in (accepting_variant(c) for c in samples) if a is not None]
    ea, en = embed(agent, accepting), embed(agent, list(samples))
    within = mean_offdiag(cosine_matrix(ea))
    across = float(cosine_matrix(ea, en).mean())
    return {"within_accepting": within, "accepting_vs_other": across, "gap": within - across,
            "num_accepting": len(accepting)}
