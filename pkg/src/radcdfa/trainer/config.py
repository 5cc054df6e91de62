"""Training configuration with per-environment defaults."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

from ..tasks import RadConfig, parse_spec

ENCODER_MODES = ("fresh", "pretrained", "pretrained_frozen")
ENVS = ("dummy", "letter")

# PPO hyperparameters per environment
ENV_DEFAULTS = {
    "dummy": dict(learning_rate=0.001, batch_size=1024, epochs=2, discount=0.9,
                  entropy_coef=0.01, gae_lambda=0.5, clip_eps=0.1),
    "letter": dict(learning_rate=0.0003, batch_size=32, epochs=4, discount=0.94,
                   entropy_coef=0.01, gae_lambda=0.95, clip_eps=0.2),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    env: str = "dummy"
    task: str = "cRAD"
    encoder_mode: str = "fresh"
    encoder_checkpoint: Optional[str] = None
    encoder_reinject: bool = True  # feed projected input features into every round
    total_steps: int = 10_000_000
    workers: int = 8
    rollout_len: int = 128
    seed: int = 0

    learning_rate: float = 0.001
    batch_size: int = 1024
    epochs: int = 2
    discount: float = 0.9
    entropy_coef: float = 0.01
    gae_lambda: float = 0.5
    clip_eps: float = 0.1
    rmsprop_alpha: float = 0.99
    max_grad_norm: float = 0.5
    value_loss_coef: float = 0.5
    normalize_advantages: bool = False  # per-minibatch standardization

    alphabet_size: int = 12
    horizon: Optional[int] = None  # None: environment default
    rad_p_n: float = 0.5
    rad_p_k: float = 0.5
    rad_mutations: int = 5
    rad_stutter_prob: float = 0.9
    rad_max_conjuncts: Optional[int] = 5
    rad_max_states: Optional[int] = 10

    eval_every: int = 10  # updates between evaluations; 0 disables
    eval_episodes: int = 200
    target_satisfaction: Optional[float] = None  # stop once an evaluation reaches it
    resample_layout: bool = True
    free_start: bool = True

    def __post_init__(self):
        if self.env not in ENVS:
            raise ConfigError(f"env: expected one of {ENVS}, got {self.env!r}")
        if self.encoder_mode not in ENCODER_MODES:
            raise ConfigError(f"encoder_mode: expected one of {ENCODER_MODES}, got {self.encoder_mode!r}")
        if self.encoder_mode != "fresh" and not self.encoder_checkpoint:
            raise ConfigError(f"encoder_checkpoint: required for encoder_mode={self.encoder_mode!r}")
        for name in ("workers", "rollout_len", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1")
        if self.total_steps < 0:
            raise ConfigError("total_steps: must be >= 0")
        parse_spec(self.task)
        self.rad()

    @classmethod
    def for_env(cls, env: str, **overrides) -> "TrainConfig":
        if env not in ENV_DEFAULTS:
            raise ConfigError(f"env: expected one of {ENVS}, got {env!r}")
        return cls.from_dict({"env": env, **ENV_DEFAULTS[env], **overrides})

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        env = doc.get("env", "dummy")
        base = dict(ENV_DEFAULTS.get(env, {}))
        base.update(doc)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    def rad(self) -> RadConfig:
        return RadConfig(
            alphabet_size=self.alphabet_size, p_n=self.rad_p_n, p_k=self.rad_p_k,
            mutations=self.rad_mutations, stutter_prob=self.rad_stutter_prob,
            max_conjuncts=self.rad_max_conjuncts, max_states=self.rad_max_states,
        )
