"""Command-line entry point: ``radcdfa <subcommand> ...``.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .automata import AutomatonError, Cdfa, decode, encode
from .featurize import featurize_cdfa
from .neural.nets import Agent, AgentSpec
from .neural.params import read_checkpoint
from .tasks import TaskSpecError, parse_spec, sample_class
from .trainer import analysis
from .trainer.config import ConfigError, TrainConfig
from .trainer.ppo import agent_spec, evaluate, pretrain, train

log = logging.getLogger("radcdfa")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parse_value(text: str):
    return yaml.safe_load(text)


def load_config(path: Optional[str], overrides: Sequence[str], env: Optional[str] = None,
                **fixed) -> TrainConfig:
    doc = {"env": env} if env else {}
    if path:
        loaded = yaml.safe_load(Path(path).read_text())
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"{path}: expected a mapping at the top level")
        doc.update(loaded or {})
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        doc[key.strip()] = _parse_value(value)
    for key, value in fixed.items():
        if value is not None:
            doc[key] = value
    try:
        return TrainConfig.from_dict(doc)
    except TypeError as exc:  # wrong value types surface here
        raise ConfigError(str(exc)) from None


def make_run_dir(root: str, seed: int, explicit: Optional[str]) -> Path:
    if explicit:
        path = Path(explicit)
    else:
        path = Path(root) / f"{time.strftime('%Y%m%d-%H%M%S')}-seed{seed}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_config(run_dir: Path, cfg: TrainConfig, **extra):
    doc = {**cfg.to_dict(), **extra} if extra else cfg.to_dict()
    (run_dir / "config.yaml").write_text(yaml.safe_dump(doc, sort_keys=True))


def load_agent(run_dir: Path) -> tuple[Agent, TrainConfig]:
    doc = yaml.safe_load((run_dir / "config.yaml").read_text())
    cfg = TrainConfig.from_dict(doc)
    agent = Agent(agent_spec(cfg), seed=cfg.seed)
    agent.store.load(run_dir / "agent.ckpt")
    return agent, cfg


def load_encoder(path: str) -> Agent:
    """An agent shell around an encoder checkpoint (heads stay at initialization)."""
    entries = read_checkpoint(Path(path).read_bytes())
    try:
        feature_dim, hidden = entries["encoder.proj.weight"].shape
        heads = entries["encoder.att"].shape[0]
        reinject = entries["encoder.w_src"].shape[0] == 2 * hidden
    except KeyError:
        raise ConfigError(f"{path}: not an encoder checkpoint") from None
    agent = Agent(AgentSpec(feature_dim, feature_dim - 4, pretraining_heads=True,
                            hidden=hidden, heads=heads, reinject=reinject), seed=0)
    agent.store.load(path, prefix="encoder.", strict=False)
    return agent


def _write_or_print(text: str, out: Optional[str]):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_sample(args) -> int:
    spec = parse_spec(args.spec)
    rng = np.random.default_rng(args.seed)
    lines = [encode(sample_class(spec, rng, alphabet_size=args.alphabet_size)) + "\n"
             for _ in range(args.count)]
    _write_or_print("".join(lines), args.out)
    return 0


def _read_cdfas(path: str) -> list[Cdfa]:
    out = []
    for i, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip():
            continue
        obj = decode(line)
        if not isinstance(obj, Cdfa):
            obj = Cdfa((obj,))
        out.append(obj)
    return out


def cmd_featurize(args) -> int:
    cdfas = _read_cdfas(args.input)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, c in enumerate(cdfas):
        nodes, edges = featurize_cdfa(c).to_csv()
        (out / f"{i:05d}.nodes.csv").write_text(nodes)
        (out / f"{i:05d}.edges.csv").write_text(edges)
    print(f"featurized {len(cdfas)} cDFA(s) into {out}")
    return 0


def _train_common(args, env: str) -> int:
    cfg = load_config(args.config, args.set, env=env, seed=args.seed)
    if cfg.env != env:
        raise ConfigError(f"env: this subcommand needs env={env!r}, config says {cfg.env!r}")
    run_dir = make_run_dir(args.runs_root, cfg.seed, args.run_dir)
    write_config(run_dir, cfg)
    if env == "dummy":
        result = pretrain(cfg, run_dir)
    else:
        result = train(cfg, metrics_path=run_dir / "metrics.jsonl")
        result.agent.store.save(run_dir / "agent.ckpt")
    last = result.curve[-1] if result.curve else {}
    print(json.dumps({"run_dir": str(run_dir), "steps": result.steps,
                      "final": {k: last.get(k) for k in ("satisfaction_rate", "eval_satisfaction")}}))
    return 0


def cmd_pretrain(args) -> int:
    return _train_common(args, "dummy")


def cmd_train(args) -> int:
    return _train_common(args, "letter")


def cmd_eval(args) -> int:
    agent, cfg = load_agent(Path(args.run))
    if args.horizon:
        cfg = cfg.replace(horizon=args.horizon)
    res = evaluate(agent, cfg, task=args.spec or cfg.task, episodes=args.episodes, seed=args.seed,
                   greedy=not args.stochastic)
    report = {"spec": args.spec or cfg.task, "seed": args.seed, **res.to_dict()}
    _write_or_print(json.dumps(report, sort_keys=True) + "\n", args.out)
    return 0


def cmd_embed(args) -> int:
    agent = load_encoder(args.encoder)
    alphabet = agent.spec.feature_dim - 4
    if args.input:
        cdfas = _read_cdfas(args.input)
    else:
        spec = parse_spec(args.spec)
        rng = np.random.default_rng(args.seed)
        cdfas = [sample_class(spec, rng, alphabet_size=alphabet) for _ in range(args.count)]
    emb = analysis.embed(agent, cdfas)
    rows = ["index,cdfa," + ",".join(f"e{j}" for j in range(emb.shape[1]))]
    for i, (c, e) in enumerate(zip(cdfas, emb)):
        rows.append(f"{i},\"{encode(c).replace(chr(34), chr(34) * 2)}\"," + ",".join(repr(float(v)) for v in e))
    _write_or_print("\n".join(rows) + "\n", args.out)
    return 0


def cmd_analyze(args) -> int:
    agent = load_encoder(args.encoder)
    result = analysis.analyze_embeddings(agent, args.classes, args.samples, seed=args.seed,
                                         alphabet_size=agent.spec.feature_dim - 4)
    run_dir = make_run_dir(args.runs_root, args.seed, args.run_dir)
    (run_dir / "config.yaml").write_text(yaml.safe_dump(
        {"encoder": str(args.encoder), "classes": list(args.classes), "samples": args.samples,
         "seed": args.seed}, sort_keys=True))
    result.write(run_dir)
    print(json.dumps({"run_dir": str(run_dir), "rows": len(result.labels),
                      "variants": len(result.pairs())}))
    return 0


def cmd_gradcheck(args) -> int:
    from .neural.gradcheck import run_suite

    errors = run_suite(seed=args.seed)
    worst = max(errors, key=errors.get)
    for name, err in errors.items():
        log.info("%-20s %.3e", name, err)
    print(f"max relative error {errors[worst]:.3e} ({worst})")
    return 0 if errors[worst] < args.tolerance else 2


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="radcdfa", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sample", help="sample cDFAs from a task class as JSON lines")
    s.add_argument("--spec", required=True)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--alphabet-size", type=int, default=12)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_sample)

    s = sub.add_parser("featurize", help="write node/edge CSVs for each cDFA in a JSONL file")
    s.add_argument("--input", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(fn=cmd_featurize)

    for name, fn, helptext in (("pretrain", cmd_pretrain, "pretrain the encoder in the dummy MDP"),
                               ("train", cmd_train, "train a policy in Letterworld")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", help="YAML file with TrainConfig keys")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        s.add_argument("--seed", type=int)
        s.add_argument("--runs-root", default="runs")
        s.add_argument("--run-dir")
        s.set_defaults(fn=fn)

    s = sub.add_parser("eval", help="evaluate a trained run on a task class")
    s.add_argument("--run", required=True, help="run directory with config.yaml and agent.ckpt")
    s.add_argument("--spec")
    s.add_argument("--episodes", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--horizon", type=int)
    s.add_argument("--stochastic", action="store_true", help="sample actions instead of argmax")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("embed", help="embed cDFAs with a pretrained encoder (CSV)")
    s.add_argument("--encoder", required=True)
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--input")
    src.add_argument("--spec")
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_embed)

    s = sub.add_parser("analyze", help="embedding tables and similarity matrices with variants")
    s.add_argument("--encoder", required=True)
    s.add_argument("--classes", nargs="+", required=True)
    s.add_argument("--samples", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--runs-root", default="runs")
    s.add_argument("--run-dir")
    s.set_defaults(fn=cmd_analyze)

    s = sub.add_parser("gradcheck", help="finite-difference checks of every op and the agent")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tolerance", type=float, default=1e-4)
    s.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, TaskSpecError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (AutomatonError, FloatingPointError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
