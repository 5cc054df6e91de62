"""PPO training, evaluation, and embedding analysis."""
from .config import ENCODER_MODES, ENV_DEFAULTS, ConfigError, TrainConfig
from .ppo import (EvalResult, TrainResult, Workers, act, build_agent, collect, evaluate, gae,
                  make_env, make_sampler, ppo_update, pretrain, run_episodes, train)
