"""Acceptance criteria, one test each.

Criteria 6 to 10 need trained agents. Each training run is cached under
``runs/acceptance/<name>-<config hash>/`` (override the root with
``RADCDFA_ACCEPTANCE_DIR``); a missing cache entry is trained on the spot,
which takes hours on one CPU. Evaluations always run live from the cached
checkpoints.
"""
import hashlib
import itertools
import json
import os
import time
from collections import deque
from pathlib import Path

import numpy as np
import pytest

from radcdfa.automata import Cdfa, Dfa, accepts, minimize, monolithic
from radcdfa.envs import GRID, LetterLayout, bfs_oracle
from radcdfa.featurize import featurize_cdfa, reconstruct_cdfa
from radcdfa.neural.gradcheck import run_suite
from radcdfa.tasks import RadConfig, parse_spec, reach_dfa, sample_class, sample_rad_cdfa
from radcdfa.trainer import TrainConfig, build_agent, evaluate, pretrain, train
from radcdfa.trainer.analysis import acceptance_gap

ROOT = Path(os.environ.get("RADCDFA_ACCEPTANCE_DIR", Path(__file__).resolve().parents[1] / "runs" / "acceptance"))
REPORT: list[str] = []


def report(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    REPORT.append(line)
    print(line)
    return passed


# -- independent oracles ---------------------------------------------------------

def random_dfa(rng, max_states, alphabet):
    n = int(rng.integers(1, max_states + 1))
    table = tuple(tuple(int(x) for x in rng.integers(n, size=alphabet)) for _ in range(n))
    acc = frozenset(int(q) for q in np.flatnonzero(rng.random(n) < 0.4))
    return Dfa(alphabet, table, int(rng.integers(n)), acc)


def step(d, q, s):
    return d.transitions[q][s]


def first_disagreement(a, p, b, q):
    """Shortest word on which a from p and b from q disagree (product BFS), or None."""
    seen = {(p, q): ()}
    queue = deque([(p, q)])
    while queue:
        x, y = queue.popleft()
        if (x in a.accepting) != (y in b.accepting):
            return seen[(x, y)]
        for s in range(a.alphabet_size):
            nxt = (step(a, x, s), step(b, y, s))
            if nxt not in seen:
                seen[nxt] = seen[(x, y)] + (s,)
                queue.append(nxt)
    return None


def replay(d, word):
    q = d.initial
    for s in word:
        q = d.transitions[q][s]
    return q in d.accepting


def isomorphic(a, b):
    """Reachable parts of a and b match under a state bijection found by BFS."""
    if a.alphabet_size != b.alphabet_size:
        return False
    fwd, back = {a.initial: b.initial}, {b.initial: a.initial}
    queue = deque([a.initial])
    while queue:
        x = queue.popleft()
        y = fwd[x]
        if (x in a.accepting) != (y in b.accepting):
            return False
        for s in range(a.alphabet_size):
            x2, y2 = step(a, x, s), step(b, y, s)
            if x2 in fwd or y2 in back:
                if fwd.get(x2) != y2 or back.get(y2) != x2:
                    return False
            else:
                fwd[x2], back[y2] = y2, x2
                queue.append(x2)
    return True


# -- cached training runs --------------------------------------------------------

def run_dir(name, cfg, extra=None):
    doc = json.dumps({"cfg": cfg.to_dict(), "extra": extra}, sort_keys=True, default=str)
    return ROOT / f"{name}-{hashlib.sha256(doc.encode()).hexdigest()[:10]}"


def read_curve(path):
    return [json.loads(line) for line in (path / "metrics.jsonl").read_text().splitlines()]


def cached_pretrain(name, cfg):
    out = run_dir(name, cfg)
    if not (out / "agent.ckpt").exists():
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        pretrain(cfg, out)
        (out / "wallclock.json").write_text(json.dumps({"seconds": time.perf_counter() - t0}))
    agent = build_agent(cfg)
    agent.store.load(out / "agent.ckpt")
    return agent, out


def cached_train(name, cfg, extra=None, **kw):
    out = run_dir(name, cfg, extra)
    if not (out / "agent.ckpt").exists():
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        result = train(cfg, metrics_path=out / "metrics.jsonl", **kw)
        (out / "wallclock.json").write_text(json.dumps({"seconds": time.perf_counter() - t0}))
        result.agent.store.save(out / "agent.ckpt")
    agent = build_agent(cfg)
    agent.store.load(out / "agent.ckpt")
    return agent, out


# reduced RAD in the dummy MDP
REDUCED = dict(alphabet_size=8, rad_max_conjuncts=2, rad_max_states=6)
PRETRAIN = TrainConfig.for_env("dummy", **REDUCED, total_steps=2_000_000, eval_every=50,
                               eval_episodes=200, seed=0)
# the same recipe over Letterworld's 12 letters, for transfer
PRETRAIN12 = PRETRAIN.replace(alphabet_size=12)


@pytest.fixture(scope="module")
def pretrained():
    return cached_pretrain("pretrain-a8", PRETRAIN)


@pytest.fixture(scope="module")
def pretrained12():
    return cached_pretrain("pretrain-a12", PRETRAIN12)


# -- criteria --------------------------------------------------------------------

def test_c01_minimization():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    bad_lang = bad_min = 0
    for _ in range(1000):
        d = random_dfa(rng, 8, int(rng.integers(1, 5)))
        m = minimize(d)
        if first_disagreement(d, d.initial, m, m.initial) is not None:
            bad_lang += 1
        # exhaustive words up to 2n where that is small enough, product BFS covers the rest
        horizon = 2 * d.num_states
        while d.alphabet_size ** horizon > 4096:
            horizon -= 1
        for length in range(horizon + 1):
            for w in itertools.product(range(d.alphabet_size), repeat=length):
                if replay(d, w) != replay(m, w):
                    bad_lang += 1
                    break
        pairs = itertools.combinations(range(m.num_states), 2)
        if any(first_disagreement(m, p, m, q) is None for p, q in pairs):
            bad_min += 1
    seconds = time.perf_counter() - t0
    ok = bad_lang == 0 and bad_min == 0 and seconds < 60
    report(1, ok, f"1000 DFAs: {bad_lang} language mismatches, {bad_min} with equivalent states, {seconds:.1f}s")
    assert ok


def test_c02_conjunction_semantics():
    rng = np.random.default_rng(102)
    mismatches = 0
    for _ in range(500):
        k = int(rng.integers(1, 4))
        members = tuple(random_dfa(rng, 5, k) for _ in range(int(rng.integers(1, 4))))
        mono = monolithic(Cdfa(members))
        for length in range(7):
            for w in itertools.product(range(k), repeat=length):
                if accepts(mono, w) != all(replay(d, w) for d in members):
                    mismatches += 1
    report(2, mismatches == 0, f"500 cDFAs, all words up to length 6: {mismatches} mismatches")
    assert mismatches == 0


def test_c03_rad_distribution():
    rng = np.random.default_rng(103)
    cfg = RadConfig(alphabet_size=12)
    counts = np.zeros(6)
    over = 0
    for _ in range(20_000):
        c = sample_rad_cdfa(cfg, rng)
        counts[min(len(c), 5)] += 1
        over += len(c) > 5 or any(d.num_states > 10 for d in c)
    emp = counts[1:] / counts.sum()
    geo = 0.5 ** np.arange(1, 6)
    tv = 0.5 * np.abs(emp - geo / geo.sum()).sum()
    ok = over == 0 and tv <= 0.03
    report(3, ok, f"20000 samples: {over} over the caps, member-count TV {tv:.4f}")
    assert ok


def test_c04_featurization():
    rng = np.random.default_rng(104)
    cfg = RadConfig(alphabet_size=6)
    failures = []
    for i in range(500):
        c = sample_rad_cdfa(cfg, rng)
        g = featurize_cdfa(c)
        edges = g.edges.tolist()
        if sum(v == g.and_node for _, v in edges) != len(c) + 1:
            failures.append((i, "and degree"))
        if {u for u, v in edges if u == v} != set(range(g.num_nodes)):
            failures.append((i, "self loops"))
        rebuilt = reconstruct_cdfa(g)
        if len(rebuilt) != len(c) or not all(isomorphic(a, b) for a, b in zip(rebuilt, c.members)):
            failures.append((i, "reconstruction"))
    report(4, not failures, f"500 cDFAs: {len(failures)} failures {failures[:3]}")
    assert not failures


def test_c05_gradients():
    errors = run_suite(seed=0)
    worst = max(errors, key=errors.get)
    composites = sorted(k for k in errors if k.startswith("agent."))
    ok = errors[worst] < 1e-4 and len(composites) == 3
    report(5, ok, f"{len(errors)} checks incl. {composites}; max rel err {errors[worst]:.2e} ({worst})")
    assert ok


def test_c06_scaled_pretraining(pretrained):
    agent, out = pretrained
    curve = read_curve(out)
    final = evaluate(agent, PRETRAIN, episodes=1000, seed=606)
    sampled = evaluate(agent, PRETRAIN, episodes=1000, seed=606, greedy=False)
    hours = json.loads((out / "wallclock.json").read_text())["seconds"] / 3600
    steps = curve[-1]["step"]
    late = [r["satisfaction_rate"] for r in curve[-20:] if r["satisfaction_rate"] is not None]
    ok = final.satisfaction >= 0.90 and steps <= 2_000_000 and hours < 6
    report(6, ok, f"greedy {final.satisfaction:.3f} (mean steps {final.mean_steps:.2f}), sampled "
                  f"{sampled.satisfaction:.3f}, training-curve tail {np.mean(late):.3f}, "
                  f"{steps} steps, {hours:.2f} h")
    assert ok


@pytest.mark.parametrize("spec", ["cRA.1.3.1.2", "Parity.1.2.1.2"])
def test_c07_zero_shot(pretrained, spec):
    agent, _ = pretrained
    res = evaluate(agent, PRETRAIN, task=spec, episodes=500, seed=707)
    ok = res.satisfaction >= 0.80
    report(7, ok, f"{spec}: zero-shot satisfaction {res.satisfaction:.3f} over 500 episodes")
    assert ok


LETTER = TrainConfig.for_env("letter", task="cR.1.2.1.2", total_steps=1_000_000, eval_every=100,
                             eval_episodes=50)


def test_c08_pretraining_helps(pretrained12):
    _, pre_dir = pretrained12
    ckpt = str(pre_dir / "encoder.ckpt")
    sat = {"pretrained_frozen": [], "fresh": []}
    sampled = {mode: [] for mode in sat}
    for mode, seed in itertools.product(sat, range(3)):
        cfg = LETTER.replace(seed=seed, encoder_mode=mode,
                             encoder_checkpoint=ckpt if mode != "fresh" else None)
        agent, _ = cached_train(f"letter-{mode}-s{seed}", cfg)
        sat[mode].append(evaluate(agent, cfg, episodes=200, seed=808).satisfaction)
        sampled[mode].append(evaluate(agent, cfg, episodes=200, seed=808, greedy=False).satisfaction)
    frozen, fresh = np.mean(sat["pretrained_frozen"]), np.mean(sat["fresh"])
    ok = frozen >= fresh + 0.15
    report(8, ok, f"greedy frozen {frozen:.3f} {np.round(sat['pretrained_frozen'], 3).tolist()} vs fresh "
                  f"{fresh:.3f} {np.round(sat['fresh'], 3).tolist()}; sampled actions: frozen "
                  f"{np.mean(sampled['pretrained_frozen']):.3f} vs fresh {np.mean(sampled['fresh']):.3f}")
    assert ok


def test_c09_accepting_cluster(pretrained):
    agent, _ = pretrained
    rng = np.random.default_rng(909)
    samples = [sample_class(parse_spec("cRAD"), rng, alphabet_size=8, rad=PRETRAIN.rad()) for _ in range(200)]
    gap = acceptance_gap(agent, samples)
    ok = gap["num_accepting"] == 200 and gap["gap"] >= 0.1
    report(9, ok, f"within-accepting cosine {gap['within_accepting']:.3f}, accepting vs other "
                  f"{gap['accepting_vs_other']:.3f}, gap {gap['gap']:.3f}")
    assert ok


ORANGE, GREEN = 0, 1


def two_orange_layout():
    letters = -np.ones((GRID, GRID), dtype=np.int64)
    letters[3, 2] = letters[3, 6] = ORANGE
    letters[0, 6] = letters[6, 6] = GREEN
    return LetterLayout(letters, (3, 3), copies=None)


def test_c10_non_myopia(pretrained12):
    layout = two_orange_layout()
    task = Cdfa((reach_dfa(12, [ORANGE, GREEN]),))
    optimum = bfs_oracle(layout, task)
    # the near orange costs 1 + 7 steps, the far one 3 + 3
    assert optimum == 6
    _, pre_dir = pretrained12
    cfg = TrainConfig.for_env("letter", encoder_mode="pretrained_frozen", total_steps=300_000,
                              encoder_checkpoint=str(pre_dir / "encoder.ckpt"), eval_every=50,
                              eval_episodes=20, seed=0)
    agent, _ = cached_train("two-orange", cfg, extra="orange-then-green", layout=layout,
                            sampler=lambda rng: task)
    res = evaluate(agent, cfg, episodes=50, seed=1010, layout=layout, sampler=lambda rng: task)
    ok = res.satisfaction == 1.0 and res.mean_steps <= 1.1 * optimum
    report(10, ok, f"mean episode length {res.mean_steps:.2f} vs optimum {optimum} "
                   f"(satisfaction {res.satisfaction:.2f})")
    assert ok
