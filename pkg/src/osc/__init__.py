"""osc: a multi-agent collaboration engine.

Agents keep learned latent models of their collaborators, measure cognitive
gaps against their own state, and pick structured communication actions with a
reinforcement-learned policy. Everything trains end to end with PPO against
deterministic synthetic tasks.

Typical entry points:

    from osc import ModelBundle, RunConfig
    from osc.rl.trainer import train
    from osc.drivers import evaluate

or the `osc` command-line tool.
"""

from .model import ModelBundle
from .runcfg import RunConfig, load_config, save_config

__version__ = "0.1.0"

__all__ = ["ModelBundle", "RunConfig", "load_config", "save_config", "__version__"]
