import itertools
import json

import numpy as np
import pytest

import radcdfa.trainer.ppo as ppo
from radcdfa.automata import Cdfa, Dfa, accepts, advance, is_accepting, language_up_to, monolithic
from radcdfa.envs import DummyEnv
from radcdfa.featurize import featurize_cdfa
from radcdfa.neural import autodiff as ad
from radcdfa.neural.nets import GraphBatch
from radcdfa.neural.params import read_checkpoint
from radcdfa.tasks import parse_spec, reach_avoid_dfa, sample_class
from radcdfa.trainer import ConfigError, TrainConfig, Workers, evaluate, gae, pretrain, run_episodes, train
from radcdfa.trainer.analysis import (
    acceptance_gap, accepting_variant, advance1, analyze_embeddings, collapse2, cosine_matrix,
    euclidean_matrix, mean_offdiag, moving_symbols,
)


def direct_gae(rewards, values, dones, last, gamma, lam):
    """Advantages as explicit truncated sums of discounted TD errors."""
    t_len = len(rewards)
    nxt = np.append(values[1:], last)
    delta = rewards + gamma * nxt * (1 - dones) - values
    adv = np.zeros(t_len)
    for t in range(t_len):
        coef = 1.0
        for s in range(t, t_len):
            adv[t] += coef * delta[s]
            if dones[s]:
                break
            coef *= gamma * lam
    return adv


def test_gae_lambda_zero_is_td_error():
    r, v = np.array([0.0, 1.0, 0.0]), np.array([0.5, 0.2, 0.1])
    d = np.array([0.0, 1.0, 0.0])
    adv, ret = gae(r, v, d, 0.3, 0.9, 0.0)
    np.testing.assert_allclose(adv, [0.9 * 0.2 - 0.5, 1.0 - 0.2, 0.9 * 0.3 - 0.1])
    np.testing.assert_allclose(ret, adv + v)


def test_gae_lambda_one_is_discounted_return():
    r = np.array([0.0, 0.0, 1.0, 0.0])
    v = np.array([0.1, 0.2, 0.3, 0.4])
    adv, ret = gae(r, v, np.zeros(4), 2.0, 0.5, 1.0)
    np.testing.assert_allclose(ret, [0.25 + 0.125, 0.5 + 0.25, 1.0 + 0.5, 1.0])


def test_gae_matches_direct_sum():
    rng = np.random.default_rng(0)
    for _ in range(50):
        t_len = int(rng.integers(1, 20))
        r, v = rng.normal(size=t_len), rng.normal(size=t_len)
        d = (rng.random(t_len) < 0.2).astype(float)
        last, gamma, lam = rng.normal(), rng.uniform(0.5, 1), rng.uniform(0, 1)
        adv, _ = gae(r, v, d, last, gamma, lam)
        assert np.max(np.abs(adv - direct_gae(r, v, d, last, gamma, lam))) < 1e-10


def test_gae_is_per_worker():
    rng = np.random.default_rng(1)
    r, v, d = rng.normal(size=(6, 3)), rng.normal(size=(6, 3)), (rng.random((6, 3)) < 0.3) * 1.0
    last = rng.normal(size=3)
    adv, _ = gae(r, v, d, last, 0.9, 0.5)
    for w in range(3):
        np.testing.assert_allclose(adv[:, w], direct_gae(r[:, w], v[:, w], d[:, w], last[w], 0.9, 0.5))


def test_gae_shape_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        gae(np.zeros(3), np.zeros(4), np.zeros(3), 0.0, 0.9, 0.5)


def test_config_defaults_and_errors():
    d = TrainConfig.for_env("dummy")
    assert (d.learning_rate, d.batch_size, d.epochs, d.discount, d.gae_lambda, d.clip_eps) == (
        0.001, 1024, 2, 0.9, 0.5, 0.1)
    lw = TrainConfig.for_env("letter")
    assert (lw.learning_rate, lw.batch_size, lw.epochs, lw.discount, lw.gae_lambda, lw.clip_eps) == (
        0.0003, 32, 4, 0.94, 0.95, 0.2)
    assert lw.entropy_coef == d.entropy_coef == 0.01
    assert lw.rmsprop_alpha == 0.99 and lw.max_grad_norm == 0.5 and lw.value_loss_coef == 0.5
    with pytest.raises(ConfigError, match="bogus"):
        TrainConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError, match="encoder_checkpoint"):
        TrainConfig(encoder_mode="pretrained")
    with pytest.raises(ConfigError):
        TrainConfig(env="zones")
    assert TrainConfig.from_dict(d.to_dict()) == d


def tiny(**kw):
    base = dict(alphabet_size=4, rad_max_conjuncts=2, rad_max_states=4, workers=2, rollout_len=16,
                batch_size=16, total_steps=64, eval_every=0, seed=3)
    return TrainConfig.for_env("dummy", **{**base, **kw})


def test_bandit_learns_the_right_symbol(monkeypatch):
    # symbol 0 accepts, symbol 1 rejects
    task = Cdfa((Dfa.from_edges(2, 3, 0, [1], [(0, 0, 1), (0, 1, 2)]),))
    monkeypatch.setattr(ppo, "make_sampler", lambda *a, **k: (lambda rng: task))
    cfg = TrainConfig.for_env("dummy", alphabet_size=2, workers=8, rollout_len=8, batch_size=64,
                              total_steps=64 * 150, eval_every=0)
    agent = train(cfg).agent
    with ad.no_grad():
        logp, _ = agent(GraphBatch.from_graphs([featurize_cdfa(task)]))
    assert np.exp(logp.data[0, 0]) > 0.95


def test_training_is_reproducible():
    a, b = train(tiny()), train(tiny())
    assert a.curve == b.curve or [
        {k: v for k, v in r.items() if k != "seconds"} for r in a.curve
    ] == [{k: v for k, v in r.items() if k != "seconds"} for r in b.curve]
    assert a.agent.store.to_bytes() == b.agent.store.to_bytes()
    c = train(tiny(seed=4))
    assert c.agent.store.to_bytes() != a.agent.store.to_bytes()


def test_zero_steps_leaves_initialization(tmp_path):
    cfg = tiny(total_steps=0)
    res = pretrain(cfg, tmp_path)
    assert res.steps == 0 and res.curve == []
    assert (tmp_path / "agent.ckpt").read_bytes() == ppo.build_agent(cfg).store.to_bytes()


def test_pretrain_outputs(tmp_path):
    res = pretrain(tiny(), tmp_path)
    records = [json.loads(line) for line in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    assert len(records) == len(res.curve) == 2
    for key in ("update", "step", "mean_return", "satisfaction_rate", "mean_episode_length",
                "policy_loss", "value_loss", "entropy"):
        assert key in records[0]
    names = list(read_checkpoint((tmp_path / "encoder.ckpt").read_bytes()))
    assert names and all(n.startswith("encoder.") for n in names)


def test_frozen_encoder_is_untouched(tmp_path):
    pretrain(tiny(), tmp_path)
    ckpt = str(tmp_path / "encoder.ckpt")
    cfg = tiny(encoder_mode="pretrained_frozen", encoder_checkpoint=ckpt, seed=5)
    res = train(cfg)
    assert res.agent.store.to_bytes("encoder.") == (tmp_path / "encoder.ckpt").read_bytes()
    moved = train(tiny(encoder_mode="pretrained", encoder_checkpoint=ckpt, seed=5))
    assert moved.agent.store.to_bytes("encoder.") != (tmp_path / "encoder.ckpt").read_bytes()


def test_frozen_letterworld_run(tmp_path):
    pretrain(tiny(alphabet_size=12), tmp_path)
    cfg = TrainConfig.for_env("letter", task="cR.1.1.1.1", encoder_mode="pretrained_frozen",
                              encoder_checkpoint=str(tmp_path / "encoder.ckpt"), workers=2,
                              rollout_len=8, total_steps=32, eval_every=2, eval_episodes=4)
    res = train(cfg)
    assert res.steps == 32 and "eval_satisfaction" in res.curve[-1]
    assert res.agent.store.to_bytes("encoder.") == (tmp_path / "encoder.ckpt").read_bytes()


def test_workers_record_instant_outcomes(monkeypatch):
    from radcdfa.automata import one_state
    done = Cdfa((one_state(4, True),))
    live = Cdfa((reach_avoid_dfa(4, [(0, 1)]),))
    seq = itertools.chain([done, live, done], itertools.repeat(live))
    monkeypatch.setattr(ppo, "make_sampler", lambda *a, **k: (lambda rng: next(seq)))
    w = Workers(tiny(workers=2))
    assert [o for o, _, _ in w.drain()] == ["accepted", "accepted"]
    w.step(np.array([0, 1]))
    assert sorted(o for o, _, _ in w.drain()) == ["accepted", "rejected"]


def absorption(dfa, horizon):
    """P(accepted within horizon) and E[steps] for uniformly random symbols."""
    n, k = dfa.num_states, dfa.alphabet_size
    p = np.zeros((n, n))
    for q in range(n):
        for s in range(k):
            p[q, dfa.transitions[q][s]] += 1.0 / k
    sink = [q for q in range(n) if q in dfa.accepting or all(d == q for d in dfa.transitions[q])]
    dist = np.zeros(n)
    dist[dfa.initial] = 1.0
    steps = 0.0
    for _ in range(horizon):
        live = dist.copy()
        live[sink] = 0.0
        steps += live.sum()
        dist = dist - live + live @ p
    return dist[list(dfa.accepting)].sum(), steps


def uniform_policy(seed, k):
    rng = np.random.default_rng(seed)
    return lambda envs: rng.integers(k, size=len(envs))


def test_random_policy_matches_absorption_oracle():
    # one-level reach over 8 symbols: each step hits the target with probability 1/8
    cfg = TrainConfig.for_env("dummy", task="cR.1.1", alphabet_size=8, horizon=10)
    res = evaluate(uniform_policy(0, 8), cfg, episodes=3000, seed=1)
    sat = 1 - (7 / 8) ** 10
    se = np.sqrt(sat * (1 - sat) / 3000)
    assert abs(res.satisfaction - sat) < 4 * se
    assert abs(res.mean_steps - 8 * sat) < 0.25


def test_random_policy_per_task_oracle():
    tasks = []

    def recording(rng):
        tasks.append(sample_class(parse_spec("cRA.1.2.1.2"), rng, alphabet_size=6))
        return tasks[-1]

    envs = [DummyEnv(recording, np.random.default_rng(i), horizon=6) for i in range(1500)]
    res = run_episodes(uniform_policy(2, 6), envs, seed=0)
    probs = np.array([absorption(monolithic(t), 6)[0] for t in tasks])
    se = np.sqrt(np.sum(probs * (1 - probs))) / len(probs)
    assert len(tasks) == 1500
    assert abs(res.satisfaction - probs.mean()) < 4 * se


def test_evaluate_is_deterministic():
    cfg = tiny()
    agent = ppo.build_agent(cfg)
    a = evaluate(agent, cfg, episodes=20, seed=7, greedy=False)
    b = evaluate(agent, cfg, episodes=20, seed=7, greedy=False)
    assert a == b
    assert sum(a.outcomes.values()) == 20


def two_member(seed=0):
    return sample_class(parse_spec("cRA.1.2.2.2"), np.random.default_rng(seed), alphabet_size=6)


def test_collapse2_preserves_language():
    rng = np.random.default_rng(0)
    for seed in range(10):
        c = sample_class(parse_spec("cRA.1.2.2.3"), np.random.default_rng(seed), alphabet_size=6)
        out = collapse2(c, rng)
        assert len(out) == len(c) - 1
        assert monolithic(out) == monolithic(c)
    assert collapse2(Cdfa(c.members[:1]), rng) is None


def test_advance1_is_a_real_move():
    rng = np.random.default_rng(1)
    c = two_member()
    s, out = advance1(c, rng)
    assert s in moving_symbols(c)
    assert out == advance(c, s) and out != c
    for w in language_up_to(monolithic(out), 3):
        assert accepts(monolithic(c), (s, *w))


def test_accepting_variant():
    c = two_member(2)
    assert is_accepting(accepting_variant(c))


def test_similarity_identities():
    x = np.random.default_rng(0).normal(size=(5, 4))
    cos, euc = cosine_matrix(x), euclidean_matrix(x)
    np.testing.assert_allclose(np.diag(cos), 1.0)
    np.testing.assert_allclose(cos, cos.T)
    assert np.all(np.diag(euc) == 0.0)
    np.testing.assert_allclose(euc[1, 2], np.linalg.norm(x[1] - x[2]))
    np.testing.assert_allclose(cosine_matrix(2 * x), cos)
    assert mean_offdiag(np.ones((3, 3))) == 1.0


def test_analysis_tables(tmp_path):
    agent = ppo.build_agent(tiny(alphabet_size=6))
    res = analyze_embeddings(agent, ["cRA.1.2.2.2", "cR.1.2.1.1"], 3, seed=0, alphabet_size=6)
    assert res.embeddings.shape == (len(res.labels), 32)
    kinds = {v for _, _, v in res.pairs()}
    assert kinds == {"collapse2", "advance1"}
    assert all(res.labels[o] == res.labels[i] for o, i, _ in res.pairs())
    res.write(tmp_path)
    for name in ("embeddings.csv", "cosine.csv", "euclidean.csv"):
        assert len((tmp_path / name).read_text().splitlines()) == len(res.labels) + 1
    gap = acceptance_gap(agent, [two_member(s) for s in range(5)])
    assert gap["num_accepting"] == 5
    assert gap["gap"] == pytest.approx(gap["within_accepting"] - gap["accepting_vs_other"])
